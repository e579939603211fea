"""Threshold autoscaling driven by per-server CPU predictions.

Every step the controller counts under-loaded servers up and over-loaded
ones down; when the count clears a third of the fleet it removes or adds one
server and then sits out a cool-down. Removal drains: the server finishes
what it holds but gets no new flows.
"""

from __future__ import annotations

import csv
import math
import os
import tempfile
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..ml import LinearRegression, StandardScaler
from ..store import RegionConfig, VipRegion
from ..traffic import ConfigError, Engine, WorkloadSpec, ecmp_picker, make_servers, sample_flows
from .datapath import DataPlane
from .features import build_feature_rows

HOLD, UP, DOWN = "hold", "up", "down"
Y_CLAMP = (0.0, 1.5)
FRAME_KEEP = 17  # frames kept per egress; bounds the linreg window to 16 steps


@dataclass(frozen=True)
class AutoscaleConfig:
    n_servers_min: int = 8
    n_servers_max: int = 14
    cpu_lo: float = 0.70
    cpu_hi: float = 0.80
    step: float = 0.25
    horizon: int = 16
    cooldown: int = 8

    def __post_init__(self):
        if not 1 <= self.n_servers_min < self.n_servers_max:
            raise ConfigError("need 1 <= n_servers_min < n_servers_max")
        if not 0 <= self.cpu_lo < self.cpu_hi:
            raise ConfigError("need 0 <= cpu_lo < cpu_hi")
        if not self.step > 0:
            raise ConfigError("step must be positive")
        if self.horizon < 0 or self.cooldown < 0:
            raise ConfigError("horizon and cooldown must be non-negative")


@dataclass
class AutoscaleState:
    S: list
    step: int = 0
    last_scale_step: Optional[int] = None
    skip: int = 0
    delta: int = 0
    threshold: int = 0

    @classmethod
    def initial(cls, cfg: AutoscaleConfig, n: Optional[int] = None) -> "AutoscaleState":
        n = cfg.n_servers_min if n is None else n
        if not cfg.n_servers_min <= n <= cfg.n_servers_max:
            raise ConfigError(f"initial server count {n} outside [{cfg.n_servers_min}, {cfg.n_servers_max}]")
        return cls(S=list(range(n)))


def downscale(S: list) -> list:
    return sorted(S)[:-1]


def upscale(S: list) -> list:
    used = set(S)
    nxt = next(i for i in range(len(S) + 1) if i not in used)
    return sorted(S + [nxt])


def autoscale_step(state: AutoscaleState, y, cfg: AutoscaleConfig) -> str:
    """Advance the controller one step; mutates ``state`` and returns the decision.

    ``y`` maps every server in ``state.S`` to its predicted CPU fraction.
    """
    state.step += 1
    if state.skip > 0:
        state.skip -= 1
        return HOLD
    missing = [s for s in state.S if s not in y]
    if missing:
        raise KeyError(f"no prediction for servers {missing}")
    delta = 0
    for s in state.S:
        v = y[s]
        if v < cfg.cpu_lo:
            delta += 1
        elif v > cfg.cpu_hi:
            delta -= 1
    n = len(state.S)
    threshold = math.ceil(n / 3)
    state.delta, state.threshold = delta, threshold
    decision = HOLD
    if delta > threshold and n > cfg.n_servers_min:
        state.S = downscale(state.S)
        decision = DOWN
    elif delta < -threshold and n < cfg.n_servers_max:
        state.S = upscale(state.S)
        decision = UP
    if decision != HOLD:
        state.skip = cfg.cooldown
        state.last_scale_step = state.step
    return decision


def _clamp(v: float) -> float:
    return min(max(v, Y_CLAMP[0]), Y_CLAMP[1])


class OraclePredictor:
    """Scheduled offered load ``horizon`` steps ahead, spread evenly over S."""

    name = "oracle"

    def __init__(self, spec: WorkloadSpec):
        self.spec = spec

    def __call__(self, sim: "Simulation", now: float, S: list) -> dict:
        t = now + sim.cfg.horizon * sim.cfg.step
        cap = sum(sim.engine.servers[s].capacity for s in S)
        y = _clamp(self.spec.rate_at(t) * self.spec.mean_work / cap)
        return {s: y for s in S}


class ReactivePredictor:
    """Instantaneous CPU: each server's busy fraction over the last step."""

    name = "reactive"

    def __call__(self, sim: "Simulation", now: float, S: list) -> dict:
        return {s: _clamp(sim.busy_fraction(s, 1)) for s in S}


class HoldPredictor:
    """Reports every server inside the target band, so the fleet never changes."""

    name = "hold"

    def __call__(self, sim: "Simulation", now: float, S: list) -> dict:
        mid = (sim.cfg.cpu_lo + sim.cfg.cpu_hi) / 2
        return {s: mid for s in S}


class LinregPredictor:
    """Per-server linear model from a trailing feature row to future CPU.

    The row covers the last ``window`` seconds of one egress; the target is
    the server's mean CPU over the next ``horizon`` steps.
    """

    name = "linreg"

    def __init__(self, model: Optional[LinearRegression] = None, window: float = 1.0,
                 scaler: Optional[StandardScaler] = None):
        self.model = model
        self.window = window
        self.scaler = scaler

    def predict_rows(self, X) -> np.ndarray:
        if self.scaler is not None:
            X = self.scaler.transform(X)
        return np.clip(self.model.predict(X), *Y_CLAMP)

    def rows(self, sim: "Simulation", S: list):
        k = max(1, round(self.window / sim.cfg.step))
        if k >= FRAME_KEEP:
            raise ConfigError(f"feature window spans {k} steps; at most {FRAME_KEEP - 1} are kept")
        frames = {}
        for s in S:
            hist = sim.frame_history.get(s, [])
            if len(hist) > k:
                frames[s] = [hist[-1 - k], hist[-1]]
        return build_feature_rows(frames, self.window) if frames else None

    def __call__(self, sim: "Simulation", now: float, S: list) -> dict:
        if self.model is None:
            raise RuntimeError("linreg predictor is not trained")
        fm = self.rows(sim, S)
        y = {s: _clamp(sim.busy_fraction(s, sim.cfg.horizon)) for s in S}
        if fm is not None:
            for e, v in zip(fm.egress.tolist(), self.predict_rows(fm.values).tolist()):
                y[e] = v
        return y


class Simulation:
    """Engine, servers and (optionally) a data plane under one autoscaler."""

    def __init__(self, spec: WorkloadSpec, predictor, cfg: AutoscaleConfig, capacity: float = 1.0,
                 n_initial: Optional[int] = None, cpu_window: int = 16, with_features: bool = False,
                 region_path=None, recorder=None):
        self.spec = spec
        self.cfg = cfg
        self.predictor = predictor
        self.cpu_window = cpu_window
        self.recorder = recorder
        self.state = AutoscaleState.initial(cfg, n_initial)
        servers = make_servers([capacity] * cfg.n_servers_max)
        self.dp = None
        sink = None
        if with_features:
            region = VipRegion.create(RegionConfig(N=max(64, cfg.n_servers_max)), region_path, seed=spec.seed)
            self.dp = DataPlane(region)
            sink = self.dp.process
        self.engine = Engine(servers, picker=None, sink=sink, tick=cfg.step, on_tick=self._on_tick,
                             packets=with_features)
        self.engine.picker = ecmp_picker(self.engine.active)
        self.engine.set_active(self.state.S)
        self.frame_history: dict = {}
        self._busy = {s: [0.0] for s in self.engine.servers}
        self.timeline: list = []
        self.events = 0

    def busy_fraction(self, s: int, steps: int) -> float:
        hist = self._busy[s]
        steps = min(steps, len(hist) - 1)
        if steps <= 0:
            return 0.0
        return (hist[-1] - hist[-1 - steps]) / (steps * self.cfg.step)

    def _on_tick(self, engine: Engine, now: float) -> None:
        engine.sample_servers()
        for s, srv in engine.servers.items():
            self._busy[s].append(srv.busy_time)
        if self.dp is not None:
            self.dp.tick(now)
            for e in self.dp.region.active_egresses():
                hist = self.frame_history.get(e)
                if hist is None:
                    hist = self.frame_history[e] = deque(maxlen=FRAME_KEEP)
                hist.append(self.dp.region.read_latest(e, now))
        S = list(self.state.S)
        cpu = {s: self.busy_fraction(s, self.cpu_window) for s in S}
        if self.recorder is not None:
            self.recorder(self, now, S)
        y = self.predictor(self, now, S)
        decision = autoscale_step(self.state, y, self.cfg)
        if decision != HOLD:
            self.events += 1
            engine.set_active(self.state.S)
        self.timeline.append(StepRecord(self.state.step, now, S, cpu, decision, self.state.delta,
                                        self.state.threshold, len(self.state.S)))

    def run(self):
        self.engine.run(sample_flows(self.spec), until=self.spec.duration_s)
        if self.dp is not None:
            self.dp.region.close()
        return self


@dataclass
class StepRecord:
    step: int
    t: float
    S: list  # servers active while the step was evaluated
    cpu: dict  # true CPU of each server in S over the trailing cpu window
    decision: str
    delta: int
    threshold: int
    n_after: int


@dataclass
class AutoscaleResult:
    predictor: str
    timeline: list
    events: int
    server_seconds: float
    cfg: AutoscaleConfig
    in_band: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {"predictor": self.predictor, "events": self.events, "steps": len(self.timeline),
                "server_seconds": self.server_seconds, **self.in_band}

    def to_csv(self, path) -> None:
        n_max = self.cfg.n_servers_max
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "t", "n_servers", "decision", "delta", "threshold", "n_after"]
                       + [f"cpu_{i}" for i in range(n_max)])
            for r in self.timeline:
                cpu = [format(r.cpu[i], ".6f") if i in r.cpu else "" for i in range(n_max)]
                w.writerow([r.step, format(r.t, ".6f"), len(r.S), r.decision, r.delta, r.threshold,
                            r.n_after] + cpu)


def steady_mask(timeline, spec: WorkloadSpec, settle: float = 15.0) -> np.ndarray:
    """Steps at least ``settle`` seconds after the latest scheduled rate change."""
    changes = [t for t, _ in spec.rate_schedule or ((0.0, spec.arrival_rate),)]
    out = []
    for r in timeline:
        last = max(t for t in changes if t <= r.t)
        out.append(r.t - last >= settle)
    return np.array(out, dtype=bool)


def in_band_share(timeline, mask, lo: float = 0.65, hi: float = 0.85, quorum: float = 2 / 3) -> float:
    """Share of masked steps where at least ``quorum`` of servers sit in [lo, hi]."""
    hits = []
    for r, m in zip(timeline, mask):
        if m:
            inside = sum(lo <= v <= hi for v in r.cpu.values())
            hits.append(inside >= quorum * len(r.cpu))
    return float(np.mean(hits)) if hits else float("nan")


def run_autoscaler(spec: WorkloadSpec, predictor="oracle", cfg: Optional[AutoscaleConfig] = None,
                   capacity: float = 1.0, n_initial: Optional[int] = None, cpu_window: int = 16,
                   settle: float = 15.0) -> AutoscaleResult:
    """Simulate ``spec`` under the autoscaling controller; returns timeline and costs.

    ``predictor`` is ``"oracle"``, ``"reactive"``, a trained
    :class:`LinregPredictor` or any callable ``(sim, now, S) -> {server: y}``.
    """
    cfg = cfg or AutoscaleConfig()
    if predictor == "oracle":
        predictor = OraclePredictor(spec)
    elif predictor == "reactive":
        predictor = ReactivePredictor()
    elif isinstance(predictor, str):
        raise ConfigError(f"unknown predictor {predictor!r}")
    needs_features = isinstance(predictor, LinregPredictor)
    with tempfile.TemporaryDirectory(prefix="aquarius-as-") as tmp:
        sim = Simulation(spec, predictor, cfg, capacity, n_initial, cpu_window, needs_features,
                         os.path.join(tmp, "vip.bin")).run()
    tl = sim.timeline
    mask = steady_mask(tl, spec, settle)
    res = AutoscaleResult(getattr(predictor, "name", type(predictor).__name__), tl, sim.events,
                          float(sum(len(r.S) for r in tl) * cfg.step), cfg)
    res.in_band = {"steady_steps": int(mask.sum()), "in_band_share": in_band_share(tl, mask)}
    return res


def train_linreg(spec: WorkloadSpec, cfg: Optional[AutoscaleConfig] = None, capacity: float = 1.0,
                 window: float = 1.0, train_frac: float = 0.7):
    """Fit a :class:`LinregPredictor` on one simulated run.

    The fleet is held fixed so the run sweeps through under- and overload
    as the schedule dictates (see :func:`training_spec`). Rows at step t are labelled with the server's mean CPU over steps
    (t, t + horizon]; the first ``train_frac`` of time trains, the rest
    tests. Returns (predictor, report).
    """
    cfg = cfg or AutoscaleConfig()
    pred = LinregPredictor(window=window)
    rows: list = []

    def record(sim, now, S):
        fm = pred.rows(sim, S)
        if fm is not None:
            for e, row in zip(fm.egress.tolist(), fm.values):
                rows.append((sim.state.step, now, e, row))

    with tempfile.TemporaryDirectory(prefix="aquarius-lr-") as tmp:
        sim = Simulation(spec, HoldPredictor(), cfg, capacity, None, cfg.horizon, True,
                         os.path.join(tmp, "vip.bin"), recorder=record).run()
    X, y, t = [], [], []
    h = cfg.horizon
    for step, now, e, row in rows:
        hist = sim._busy[e]
        # _busy[e][j] is cumulative busy time after tick j; the row was built after tick `step + 1`
        j = step + 1
        if j + h < len(hist):
            X.append(row)
            y.append((hist[j + h] - hist[j]) / (h * cfg.step))
            t.append(now)
    if not X:
        raise RuntimeError("training run produced no labelled rows")
    X, y, t = np.array(X), np.array(y), np.array(t)
    cut = t[0] + train_frac * (t[-1] - t[0])
    tr, te = t <= cut, t > cut
    pred.scaler = StandardScaler().fit(X[tr])
    pred.model = LinearRegression().fit(pred.scaler.transform(X[tr]), y[tr])
    report = {"n_train": int(tr.sum()), "n_test": int(te.sum())}
    if te.any():
        err = pred.predict_rows(X[te]) - y[te]
        report["test_mae"] = float(np.abs(err).mean())
        report["test_rmse"] = float(np.sqrt((err ** 2).mean()))
    return pred, report


def training_spec(seed: int = 100, n_servers: int = 8, mean_work: float = 0.01,
                  loads=(0.4, 0.9, 0.6, 1.1, 0.75, 0.5, 1.0, 0.8), phase_s: float = 20.0) -> WorkloadSpec:
    """Load sweep for predictor training, as fractions of a fixed fleet's capacity."""
    rates = [round(f * n_servers / mean_work, 6) for f in loads]
    return step_load_spec(seed, rates, phase_s, mean_work)


def step_load_spec(seed: int = 0, phases=(600.0, 900.0, 750.0, 1050.0, 675.0), phase_s: float = 60.0,
                   mean_work: float = 0.01) -> WorkloadSpec:
    """The standard scenario: flow rate changes every ``phase_s`` seconds.

    With unit-capacity servers the default phases put 6.0, 9.0, 7.5, 10.5
    and 6.75 servers' worth of work on the fleet.
    """
    sched = tuple((i * phase_s, r) for i, r in enumerate(phases))
    return WorkloadSpec(phases[0], mean_work, 500, n_servers=1, server_capacities=(1.0,),
                        duration_s=phase_s * len(phases), seed=seed, rate_schedule=sched)
