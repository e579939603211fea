import csv
import math
import random

import pytest

from aquarius.apps.autoscale import (DOWN, HOLD, UP, AutoscaleConfig, AutoscaleState, OraclePredictor,
                                     autoscale_step, downscale, in_band_share, run_autoscaler, step_load_spec,
                                     train_linreg, training_spec, upscale)
from aquarius.traffic import ConfigError, WorkloadSpec


def reference_controller(S, predictions, n_min=8, n_max=14, lo=0.7, hi=0.8, cool=8, skip=0):
    """Direct transcription of the scaling rule over a sequence of steps.

    ``predictions`` yields one {server: cpu} mapping per step; returns the
    decision and fleet after every step. ``skip`` is a cool-down already
    pending when the sequence starts.
    """
    out = []
    for y in predictions:
        if skip:
            skip -= 1
            out.append(("hold", list(S)))
            continue
        delta = 0
        threshold = math.ceil(len(S) / 3)
        for s in S:
            if y[s] < lo:
                delta += 1
            elif y[s] > hi:
                delta -= 1
        decision = "hold"
        if delta > threshold and len(S) > n_min:
            S = sorted(S)[:-1]
            skip = cool
            decision = "down"
        elif delta < -threshold and len(S) < n_max:
            S = sorted(S + [min(set(range(len(S) + 1)) - set(S))])
            skip = cool
            decision = "up"
        out.append((decision, list(S)))
    return out


def random_predictions(rnd, steps, universe=14):
    # values clustered around the band edges so every branch is exercised
    for _ in range(steps):
        mode = rnd.random()
        base = 0.5 if mode < 0.35 else 0.95 if mode < 0.7 else 0.75
        yield {s: min(1.5, max(0.0, rnd.gauss(base, 0.12))) for s in range(universe)}


def test_worked_examples():
    cfg = AutoscaleConfig()
    st = AutoscaleState(S=list(range(9)))
    y = {s: 0.5 for s in range(5)} | {5: 0.9, 6: 0.75, 7: 0.75, 8: 0.75}
    assert autoscale_step(st, y, cfg) == DOWN and st.delta == 4 and st.threshold == 3
    assert st.S == list(range(8)) and st.skip == 8
    st = AutoscaleState(S=list(range(8)))
    assert autoscale_step(st, {s: 0.1 for s in range(8)}, cfg) == HOLD  # floor binds
    st = AutoscaleState(S=list(range(10)))
    assert autoscale_step(st, {s: 0.75 for s in range(10)}, cfg) == HOLD and st.delta == 0


def test_missing_prediction_raises():
    with pytest.raises(KeyError):
        autoscale_step(AutoscaleState(S=[0, 1]), {0: 0.5}, AutoscaleConfig(n_servers_min=1))


def test_cooldown_skips_evaluation():
    cfg = AutoscaleConfig()
    st = AutoscaleState(S=list(range(10)))
    high = {s: 1.0 for s in range(14)}
    assert autoscale_step(st, high, cfg) == UP
    for _ in range(8):
        assert autoscale_step(st, {}, cfg) == HOLD  # not even looked at
    assert autoscale_step(st, high, cfg) == UP


def test_scale_helpers():
    assert downscale([3, 0, 5]) == [0, 3]
    assert upscale([0, 1, 3]) == [0, 1, 2, 3]
    assert upscale([1, 2]) == [0, 1, 2]


@pytest.mark.parametrize("seed", range(10))
def test_agrees_with_reference_controller(seed):
    rnd = random.Random(seed)
    cfg = AutoscaleConfig()
    n0 = rnd.randint(8, 14)
    ys = list(random_predictions(rnd, 300))
    ref = reference_controller(list(range(n0)), ys)
    st = AutoscaleState.initial(cfg, n0)
    last = None
    for y, (dec, S) in zip(ys, ref):
        got = autoscale_step(st, {s: y[s] for s in st.S}, cfg)
        assert (got, st.S) == (dec, S)
        assert 8 <= len(st.S) <= 14
        if got != HOLD:
            if last is not None:
                assert st.step - last >= 9
            last = st.step


@pytest.mark.parametrize("bad", [dict(n_servers_min=0), dict(n_servers_min=14), dict(cpu_lo=0.9),
                                 dict(step=0), dict(cooldown=-1)])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        AutoscaleConfig(**bad)
    with pytest.raises(ConfigError):
        AutoscaleState.initial(AutoscaleConfig(), 20)


def constant_spec(load_servers, seconds=60.0, seed=0):
    return WorkloadSpec(load_servers / 0.01, 0.01, 500, 1, (1.0,), seconds, seed=seed)


def test_light_load_settles_at_minimum():
    res = run_autoscaler(constant_spec(4.0), "oracle", n_initial=12)
    sizes = [r.n_after for r in res.timeline]
    assert sizes[-1] == 8
    first_min = sizes.index(8)
    assert all(n == 8 for n in sizes[first_min:])
    assert res.events == 4


def test_step_up_triggers_upscale_quickly():
    spec = step_load_spec(seed=1, phases=(600.0, 1200.0), phase_s=20.0)
    res = run_autoscaler(spec, "oracle")
    cfg = res.cfg
    ups = [r for r in res.timeline if r.decision == UP]
    assert ups
    # the oracle sees the change horizon steps early
    assert ups[0].t <= 20.0 + (cfg.horizon + cfg.cooldown) * cfg.step


def test_oracle_prediction_value():
    spec = constant_spec(6.0)

    class FakeSim:
        cfg = AutoscaleConfig()

        class engine:
            servers = {i: type("S", (), {"capacity": 1.0})() for i in range(14)}

    y = OraclePredictor(spec)(FakeSim(), 0.0, list(range(8)))
    assert y[0] == pytest.approx(6.0 / 8)


def test_summary_and_csv(tmp_path):
    res = run_autoscaler(constant_spec(9.0, 20.0), "reactive")
    s = res.summary()
    assert {"events", "server_seconds", "steps", "in_band_share", "steady_steps"} <= set(s)
    assert s["server_seconds"] == pytest.approx(sum(len(r.S) for r in res.timeline) * 0.25)
    p = tmp_path / "tl.csv"
    res.to_csv(p)
    rows = list(csv.reader(open(p)))
    assert rows[0][:7] == ["step", "t", "n_servers", "decision", "delta", "threshold", "n_after"]
    assert len(rows) == len(res.timeline) + 1


def test_in_band_share_quorum():
    from aquarius.apps.autoscale import StepRecord
    import numpy as np
    tl = [StepRecord(1, 0.0, [0, 1, 2], {0: 0.7, 1: 0.8, 2: 0.1}, HOLD, 0, 1, 3),
          StepRecord(2, 0.25, [0, 1, 2], {0: 0.7, 1: 0.1, 2: 0.1}, HOLD, 0, 1, 3)]
    assert in_band_share(tl, np.array([True, True])) == 0.5


def test_linreg_predictor_trains_and_runs():
    pred, rep = train_linreg(training_spec(phase_s=6.0))
    assert rep["n_train"] > 0 and rep["test_mae"] < 0.3
    res = run_autoscaler(constant_spec(9.0, 15.0), pred)
    assert res.predictor == "linreg" and len(res.timeline) == 60
