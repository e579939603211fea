import numpy as np
import pytest

from aquarius import catalog as C
from aquarius.apps.datapath import DataPlane
from aquarius.apps.features import (FeatureMatrix, build_feature_rows, decayed_mean, extract,
                                    feature_columns, signal_stats)
from aquarius.store import ObservationFrame
from conftest import one_flow


def test_column_layout():
    cols = feature_columns()
    assert len(cols) == C.N_FEATURES == 73
    assert cols[:2] == ["d_n_flow_on", "d_n_flow_total"]
    assert cols[8:13] == [f"flow_duration_{s}" for s in C.STATS]


def test_decayed_mean_weights_recent_samples():
    assert decayed_mean([0.0, 1.0], [0.0, 10.0], 1.0, 1e-3) == pytest.approx(10.0)
    assert decayed_mean([1.0, 1.0], [2.0, 4.0], 1.0, 0.5) == pytest.approx(3.0)


def test_signal_stats():
    assert signal_stats([], [], 1.0, 0.5) == (0.0,) * 5
    mean, std, p50, p90, ewm = signal_stats([0.1] * 4, [1, 2, 3, 4], 1.0, 0.5)
    assert (mean, p50) == (2.5, 2.5) and std == pytest.approx(np.std([1, 2, 3, 4]))
    assert p90 == pytest.approx(3.7) and ewm == pytest.approx(2.5)


def test_one_flow_trace_counts_one_flow(region):
    fm, frames, dp = extract(one_flow(t0=0.1), region, window=1.0)
    last = frames[0][-1]
    assert last.counters[C.N_FLOW_TOTAL] == 1 and last.counters[C.N_FLOW_ON] == 0
    assert len(fm) == 1
    row = dict(zip(fm.columns, fm.values[0]))
    assert row["d_n_flow_total"] == 1 and row["d_n_syn"] == 1 and row["d_n_packet"] == 7
    assert row["flow_duration_mean"] == pytest.approx(0.02, rel=1e-5)
    assert fm.valid[0, C.FLOW_DURATION] and not fm.valid[0, C.SYN_GAP]


def test_empty_trace_gives_no_rows(region):
    fm, frames, dp = extract([], region, window=1.0)
    assert len(fm) == 0 and fm.shape == (0, 73)
    assert region.active_egresses() == []


def test_gauge_delta_keeps_sign():
    z = np.zeros((13, 4, 2), dtype=np.float32)
    a = ObservationFrame(0, 1, np.array([5, 0, 0, 0, 0, 0, 0, 0], dtype=np.uint32), z, 0.0)
    b = ObservationFrame(0, 2, np.array([2, 0, 0, 0, 0, 0, 0, 0], dtype=np.uint32), z, 1.0)
    fm = build_feature_rows({0: [a, b]}, 1.0)
    assert fm.values[0, C.N_FLOW_ON] == -3


def test_select_signals_and_csv_roundtrip(tmp_path, region):
    evs = one_flow(0.1) + one_flow(1.2, sport=41000)
    fm, _, _ = extract(evs, region, window=1.0)
    sub = fm.select_signals(["flow_duration"])
    assert sub.columns == [f"d_{c}" for c in C.COUNTERS] + [f"flow_duration_{s}" for s in C.STATS]
    with pytest.raises(KeyError):
        fm.select_signals(["nope"])
    p = tmp_path / "f.csv"
    fm.to_csv(p, labels=["x"] * len(fm))
    back, labels = FeatureMatrix.from_csv(p)
    assert labels == ["x"] * len(fm)
    assert np.array_equal(back.values, fm.values) and back.columns == fm.columns
    assert np.array_equal(back.valid, fm.valid) and np.array_equal(back.egress, fm.egress)


def test_dataplane_activates_egress_and_sweeps(region):
    dp = DataPlane(region, expire_every=1.0)
    for ev in one_flow(0.1, egress=3)[:3]:
        dp.process(ev)
    assert region.active_egresses() == [3]
    dp.tick(0.5)
    assert region.read_latest(3).counters[C.N_FLOW_ON] == 1
    dp.table.conn_timeout = 1.0
    dp.tick(5.0)
    assert region.read_latest(3).counters[C.N_FLOW_ON] == 0
