import os
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aquarius import catalog as C
from aquarius.flow_table import CounterDelta, Sample
from aquarius.store import (HEADER_BYTES, Action, InactiveEgressError, RegionConfig, RegionError, VipRegion,
                            counter_payload_bytes, layout_size, reservoir_area_bytes)
from aquarius.stress import run_stress


def test_default_layout_arithmetic():
    cfg = RegionConfig()
    assert counter_payload_bytes(cfg) == 6144
    assert reservoir_area_bytes(cfg) == 851_968
    assert cfg.bitindex_bytes == 8
    assert cfg.block_size == 13_488
    assert layout_size(cfg) == HEADER_BYTES + 8 + 64 * 13_488 == 863_256


def test_create_open_roundtrip(tmp_path):
    p = tmp_path / "r.bin"
    with VipRegion.create(RegionConfig(N=5, k=4), p) as r:
        r.add_egress(3)
        r.apply_emission(CounterDelta(3, C.N_SYN, 7))
        r.publish_counters(3)
    assert open(p, "rb").read(4) == b"AQRS"
    with VipRegion.open(p) as r:
        assert r.config == RegionConfig(N=5, k=4)
        assert r.active_egresses() == [3]
        assert r.read_latest(3).counters[C.N_SYN] == 7


def test_open_rejects_garbage(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"NOPE" + bytes(100))
    with pytest.raises(RegionError):
        VipRegion.open(p)
    p.write_bytes(b"AQ")
    with pytest.raises(RegionError):
        VipRegion.open(p)


def test_publish_then_read(region):
    region.add_egress(0)
    region.apply_emission(CounterDelta(0, C.N_FLOW_ON, 4))
    region.apply_emission(Sample(0, C.FLOW_DURATION, 1.5, 0.25))
    assert region.read_latest(0).seq == 0
    assert region.publish_counters(0) == 1
    fr = region.read_latest(0, now=2.0)
    assert fr.counters[0] == 4 and fr.seq == 1 and fr.frame_ts == 2.0
    res = fr.samples[C.FLOW_DURATION]
    assert ((res[:, 0] == 1.5) & (res[:, 1] == 0.25)).sum() == 1


def test_published_frame_is_a_snapshot(region):
    region.add_egress(1)
    region.apply_emission(CounterDelta(1, C.N_PACKET, 1))
    region.publish_counters(1)
    region.apply_emission(CounterDelta(1, C.N_PACKET, 1))
    assert region.read_latest(1).counters[C.N_PACKET] == 1
    assert region.cached_counter(1, C.N_PACKET) == 2


def test_multibuffer_round_robin(region):
    region.add_egress(0)
    for expect in ([1, 0, 0], [1, 2, 0], [1, 2, 3], [4, 2, 3], [4, 5, 3]):
        region.publish_counters(0)
        assert region.counter_seqs(0) == expect


def test_counter_wraps_at_32_bits(region):
    region.add_egress(0)
    region.apply_emission(CounterDelta(0, C.N_BYTE, 0xFFFFFFFF))
    region.apply_emission(CounterDelta(0, C.N_BYTE, 2))
    assert region.cached_counter(0, C.N_BYTE) == 1
    region.apply_emission(CounterDelta(0, C.N_FLOW_ON, -1))
    assert region.cached_counter(0, C.N_FLOW_ON) == 0xFFFFFFFF


def test_inactive_egress(region):
    with pytest.raises(InactiveEgressError):
        region.read_latest(2)
    with pytest.raises(InactiveEgressError):
        region.publish_counters(2)
    assert region.apply_emission(CounterDelta(2, 0, 1)) is False
    assert region.dropped == 1
    with pytest.raises(IndexError):
        region.add_egress(64)
    region.add_egress(2)
    with pytest.raises(RegionError):
        region.add_egress(2)


def test_add_egress_zeroes_block(region):
    region.add_egress(0)
    region.apply_emission(CounterDelta(0, C.N_SYN, 9))
    region.publish_counters(0)
    region.remove_egress(0)
    region.add_egress(0)
    assert region.read_latest(0).seq == 0
    assert region.cached_counter(0, C.N_SYN) == 0


def test_actions_fixed_point(region):
    region.add_egress(4)
    assert region.read_action(4).weight_value == 1.0
    region.push_action(4, Action.from_weight(4, 2.5, aux=7))
    a = region.read_action(4)
    assert a.weight == int(2.5 * 65536) and a.aux == 7
    assert Action.from_weight(0, 1e-9).weight == 1  # never zero
    assert region.action_seqs(4) == [1, 0, 0]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.integers(0, 129)), max_size=60))
def test_bit_index_matches_set_model(tmp_path_factory, ops):
    path = tmp_path_factory.mktemp("bits") / "r.bin"
    model = set()
    with VipRegion.create(RegionConfig(N=130, k=2), path) as r:
        for add, i in ops:
            if add and i not in model:
                r.add_egress(i)
                model.add(i)
            elif not add and i in model:
                r.remove_egress(i)
                model.discard(i)
            assert r.active_egresses() == sorted(model)
            assert r.bit_index == sum(1 << j for j in model)
            assert all(r.is_active(j) == (j in model) for j in (0, 63, 64, 127, 128, 129))
        words = np.frombuffer(open(path, "rb").read()[HEADER_BYTES:HEADER_BYTES + 24], dtype="<u8")
    assert sum(int(w) << (64 * k) for k, w in enumerate(words)) == sum(1 << j for j in model)


# -- interleaving model of the multi-buffer protocol --------------------------

def _writer(mem, m, width, n_pub):
    for p in range(1, n_pub + 1):
        seqs = [mem[b][0] for b in range(m)]
        newest = max(range(m), key=seqs.__getitem__)
        nxt = (newest + 1) % m if seqs[newest] else 0
        mem[nxt][0] = 0
        yield
        for j in range(width):
            mem[nxt][1 + j] = p * (j + 1)
            yield
        mem[nxt][0] = max(seqs) + 1
        yield


def _reader(mem, m, width, out, recheck):
    while True:
        seqs = []
        for b in range(m):  # one load per buffer, switchable in between
            seqs.append(mem[b][0])
            yield
        buf = max(range(m), key=seqs.__getitem__)
        if seqs[buf] == 0:
            out.append(None)
            continue
        copy = []
        for j in range(width):
            copy.append(mem[buf][1 + j])
            yield
        if not recheck or mem[buf][0] == seqs[buf]:
            out.append(copy)
        yield


def _schedule(seed, recheck, m=3, width=4, n_pub=30):
    rnd = random.Random(seed)
    mem = [[0] * (1 + width) for _ in range(m)]
    out = []
    w, r = _writer(mem, m, width, n_pub), _reader(mem, m, width, out, recheck)
    bias = rnd.random()
    alive = True
    while alive:
        if rnd.random() < bias:
            alive = next(w, "end") != "end"
        else:
            next(r)
    torn = sum(1 for c in out if c is not None and c != [c[0] * (j + 1) for j in range(width)])
    return torn, len(out)


def test_model_check_reader_never_torn():
    assert sum(_schedule(s, True)[0] for s in range(3000)) == 0


def test_model_check_without_recheck_tears():
    # the re-check is what makes the property hold
    assert sum(_schedule(s, False)[0] for s in range(3000)) > 0


def test_two_thread_stress_small():
    rep = run_stress(100_000, chunk=1)
    assert rep.torn == 0 and rep.reads > 0


def test_stress_negative_control_detects_tears():
    rep = run_stress(100_000, chunk=1, checked=False)
    assert rep.torn > 0
