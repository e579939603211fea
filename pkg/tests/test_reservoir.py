import numpy as np
import pytest
from scipy import stats

from aquarius.reservoir import RandomWords, Reservoir


def test_newest_sample_always_present():
    r = Reservoir(8, RandomWords(1))
    for t in range(1, 200):
        r.insert(float(t), float(-t))
        assert (r.slots[:, 0] == t).any()


def test_slot_selection_uniform_chi_square():
    k = 128
    r = Reservoir(k, RandomWords(7))
    counts = np.bincount([r.insert(0.0, 0.0) for _ in range(k * 2000)], minlength=k)
    assert stats.chisquare(counts).pvalue > 1e-3


def test_index_multiply_shift_bounds():
    rw = RandomWords(3)
    for k in (1, 2, 3, 127, 128, 1000):
        idx = [rw.index(k) for _ in range(500)]
        assert min(idx) >= 0 and max(idx) < k


def survival_rates(js, k=128, trials=200_000, seed=11):
    # slot of insert t survives j later inserts iff none of them reuse it
    r = Reservoir(k, RandomWords(seed))
    slots = np.array([r.insert(0.0, 0.0) for _ in range(trials + max(js))])
    gap = np.full(len(slots), np.iinfo(np.int64).max)
    last = {}
    for t in range(len(slots) - 1, -1, -1):
        s = int(slots[t])
        if s in last:
            gap[t] = last[s] - t
        last[s] = t
    g = gap[:trials]
    return {j: float(np.mean(g > j)) for j in js}


def test_survival_law_short_run():
    k = 16
    got = survival_rates([1, 16, 32], k=k, trials=50_000)
    for j, p in got.items():
        assert p == pytest.approx((1 - 1 / k) ** j, rel=0.05)


def test_region_reservoirs_reproducible(tmp_path):
    from aquarius.store import RegionConfig, VipRegion
    from aquarius.flow_table import Sample

    out = []
    for name in ("a.bin", "b.bin"):
        with VipRegion.create(RegionConfig(N=2, k=8), tmp_path / name, seed=5) as r:
            r.add_egress(0)
            for t in range(50):
                r.apply_emission(Sample(0, 0, t * 0.1, float(t)))
            out.append(r.read_latest(0).samples.tobytes())
    assert out[0] == out[1]


def test_bad_buffer_rejected():
    with pytest.raises(ValueError):
        Reservoir(4, buffer=np.zeros((3, 2), dtype="<f4"))
    with pytest.raises(ValueError):
        Reservoir(0)
