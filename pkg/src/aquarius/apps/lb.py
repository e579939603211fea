"""Layer-4 load-balancing policies and a paired-replay benchmark.

RLB sends each new flow to the server minimising ``(l + 1) / w`` where ``l``
is the server's ongoing-flow counter and ``w`` a weight the control plane
refreshes every 250 ms from sampled flow durations. ECMP and the two WCMP
variants hash the flow instead.
"""

from __future__ import annotations

import csv
import os
import tempfile
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from .. import catalog as C
from ..hashing import fid_digest
from ..store import Action, RegionConfig, VipRegion
from ..traffic import ConfigError, Engine, WorkloadSpec, make_servers, sample_flows
from .datapath import DataPlane

VARIANTS = ("ecmp", "wcmp_static", "wcmp_active", "rlb")
WEIGHT_EPS = 1e-3


class NoActiveEgress(RuntimeError):
    pass


@dataclass(frozen=True)
class LbPolicy:
    variant: str
    weights: Optional[tuple] = None  # wcmp_static: one weight per server id
    poll_interval: float = 0.25  # wcmp_active
    refresh: float = 0.25  # rlb
    tau: float = 1.0  # rlb: decay constant of the duration mean
    name: Optional[str] = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown LB variant {self.variant!r}; expected one of {VARIANTS}")
        if self.variant == "wcmp_static":
            if not self.weights or any(not w > 0 for w in self.weights):
                raise ConfigError("wcmp_static needs positive weights")
        if not (self.poll_interval > 0 and self.refresh > 0 and self.tau > 0):
            raise ConfigError("poll_interval, refresh and tau must be positive")

    @property
    def label(self) -> str:
        return self.name or self.variant


def _weighted_hash(digest: int, active, weights) -> int:
    # map the top 53 bits of the flow hash onto the cumulative weight line
    u = (digest >> 11) / float(1 << 53)
    w = np.asarray([weights[i] for i in active], dtype=np.float64)
    total = w.sum()
    if not total > 0:
        raise ValueError("weights of active servers sum to zero")
    k = int(np.searchsorted(np.cumsum(w), u * total, side="right"))
    return active[min(k, len(active) - 1)]


def _exact(x):
    return x if isinstance(x, (int, Fraction)) else Fraction(x)


def rlb_choice(active, loads, weights) -> int:
    """argmin over ``active`` of (loads[i] + 1) / weights[i]; ties go to the lowest id.

    Scores are compared by exact cross-multiplication, so scaling every
    weight by the same factor can never change the answer.
    """
    best = None
    for i in sorted(active):
        w = _exact(weights[i])
        if not w > 0:
            raise ValueError(f"weight of server {i} must be positive")
        l1 = _exact(loads[i]) + 1
        if best is None or l1 * best[1] < best[0] * w:
            best = (l1, w, i)
    return best[2]


def lb_pick(policy: LbPolicy, fid, now: float = 0.0, active=None, loads=None, weights=None) -> int:
    """Choose the egress for a new flow.

    ``active`` lists the eligible server ids. ``loads`` and ``weights`` are
    indexable by server id: ongoing flows and current weights for RLB,
    polled weights for active WCMP (static WCMP uses the policy's own).
    """
    if not active:
        raise NoActiveEgress("no active egress to pick from")
    active = sorted(active)
    v = policy.variant
    if v == "ecmp":
        return active[fid_digest(fid) % len(active)]
    if v == "wcmp_static":
        return _weighted_hash(fid_digest(fid), active, policy.weights)
    if v == "wcmp_active":
        return _weighted_hash(fid_digest(fid), active, weights)
    if loads is None or weights is None:
        raise ValueError("rlb needs loads and weights")
    return rlb_choice(active, loads, weights)


def flow_duration_mean(frame, now: float, tau: float) -> Optional[float]:
    """Decayed mean of a frame's flow_duration samples, None when it has none."""
    s = frame.samples[C.FLOW_DURATION]
    ts = s[:, 0].astype(np.float64)
    vs = s[:, 1].astype(np.float64)
    keep = ~((ts == 0) & (vs == 0)) & (ts <= now)
    if not keep.any():
        return None
    w = np.exp(-(now - ts[keep]) / tau)
    if not w.sum() > 0:
        return None
    return float((w * vs[keep]).sum() / w.sum())


def rlb_refresh_weights(frames: dict, now: float, prev: Optional[dict] = None, tau: float = 1.0,
                        eps: float = WEIGHT_EPS):
    """New RLB weights from the latest frames; returns (weights, actions).

    Each sampled server gets 1 / (decayed mean flow duration + eps).
    Servers without samples keep their previous weight (1 if none); the
    fresh weights are first rescaled to the previous mean of the sampled
    servers so both groups share a scale, then all are normalised to mean 1.
    """
    prev = dict(prev or {})
    ids = sorted(frames)
    if not ids:
        return {}, []
    old = {i: prev.get(i, 1.0) for i in ids}
    raw = {}
    for i in ids:
        m = flow_duration_mean(frames[i], now, tau)
        if m is not None:
            raw[i] = 1.0 / (m + eps)
    new = dict(old)
    if raw:
        scale = np.mean([old[i] for i in raw]) / np.mean(list(raw.values()))
        for i, r in raw.items():
            new[i] = r * scale
        mean = float(np.mean([new[i] for i in ids]))
        new = {i: new[i] / mean for i in ids}
    return new, [Action.from_weight(i, new[i]) for i in ids]


class _Balancer:
    # picker plus periodic control work for one policy run

    def __init__(self, policy: LbPolicy, engine: Engine, region: Optional[VipRegion], dp: Optional[DataPlane]):
        self.policy = policy
        self.engine = engine
        self.region = region
        self.dp = dp
        self.polled = {i: 1.0 for i in engine.servers}
        self.weights: dict = {}
        self.shares = {i: 0 for i in engine.servers}

    def pick(self, fid, now):
        p = self.policy
        active = self.engine.active
        if p.variant == "rlb":
            r = self.region
            loads = {i: r.cached_counter(i, C.N_FLOW_ON) for i in active}
            weights = {i: r.read_action(i).weight for i in active}
            e = rlb_choice(active, loads, weights)
        else:
            e = lb_pick(p, fid, now, active, weights=self.polled)
        self.shares[e] += 1
        return e

    def tick(self, engine: Engine, now: float) -> None:
        p = self.policy
        if p.variant == "wcmp_active":
            engine.sample_servers()
            self.polled = {i: 1.0 / (len(s) + 1) for i, s in engine.servers.items()}
        elif p.variant == "rlb":
            self.dp.tick(now)
            frames = self.dp.frames(now)
            self.weights, actions = rlb_refresh_weights(frames, now, self.weights, p.tau)
            for a in actions:
                self.region.push_action(a.egress_id, a)


def run_policy(spec: WorkloadSpec, policy: LbPolicy, workdir=None):
    """Replay ``spec``'s flows under one policy; returns (records, shares)."""
    servers = make_servers(spec.server_capacities)
    needs_dp = policy.variant == "rlb"
    tick = {"wcmp_active": policy.poll_interval, "rlb": policy.refresh}.get(policy.variant)
    with tempfile.TemporaryDirectory(prefix="aquarius-lb-", dir=workdir) as tmp:
        region = dp = None
        if needs_dp:
            region = VipRegion.create(RegionConfig(N=max(64, len(servers))), os.path.join(tmp, "vip.bin"),
                                      seed=spec.seed)
            dp = DataPlane(region)
            for s in servers:
                dp.ensure_egress(s.id)
        engine = Engine(servers, picker=None, sink=dp.process if dp else None, tick=tick, packets=needs_dp)
        bal = _Balancer(policy, engine, region, dp)
        engine.picker = bal.pick
        engine.on_tick = bal.tick if tick else None
        try:
            records = engine.run(sample_flows(spec))
        finally:
            if region is not None:
                region.close()
    return records, bal.shares


def fct_summary(fcts) -> dict:
    f = np.asarray(fcts, dtype=np.float64)
    if f.size == 0:
        return {"n": 0, "mean": float("nan"), "p90": float("nan"), "p95": float("nan")}
    p90, p95 = np.percentile(f, [90, 95])
    return {"n": int(f.size), "mean": float(f.mean()), "p90": float(p90), "p95": float(p95)}


def share_ratio(shares: dict, capacities) -> float:
    """Mean flows per fast server over mean flows per slow server."""
    caps = np.asarray(capacities, dtype=np.float64)
    fast = [shares[i] for i in range(len(caps)) if caps[i] == caps.max()]
    slow = [shares[i] for i in range(len(caps)) if caps[i] == caps.min()]
    if not slow or np.mean(slow) == 0:
        return float("inf")
    return float(np.mean(fast) / np.mean(slow))


def default_policies(capacities) -> list:
    caps = tuple(float(c) for c in capacities)
    lo, hi = min(caps), max(caps)
    return [
        LbPolicy("ecmp"),
        LbPolicy("wcmp_static", weights=caps, name="wcmp_static"),
        # weights swapped between the capacity classes: the misconfigured baseline
        LbPolicy("wcmp_static", weights=tuple(lo + hi - c for c in caps), name="wcmp_misconfigured"),
        LbPolicy("wcmp_active"),
        LbPolicy("rlb"),
    ]


def bench_spec(seed: int = 0, load: float = 0.6, capacities=(2.0, 2.0, 1.0, 1.0), mean_work: float = 0.05,
               duration: float = 120.0) -> WorkloadSpec:
    """Heterogeneous fleet at offered ``load`` of its total capacity.

    The default 0.6 already runs the slow servers at 90% under an equal split.
    """
    rate = load * sum(capacities) / mean_work
    return WorkloadSpec(rate, mean_work, 500, n_servers=len(capacities), server_capacities=tuple(capacities),
                        duration_s=duration, seed=seed)


def run_lb_bench(spec: WorkloadSpec, policies=None, warmup: float = 0.0):
    """Paired replay: every policy sees the same flows; returns (summary, fct rows).

    Flows arriving before ``warmup`` seconds are left out of the FCT
    statistics (they still load the servers).
    """
    policies = policies or default_policies(spec.server_capacities)
    labels = [p.label for p in policies]
    if len(set(labels)) != len(labels):
        raise ConfigError("policy labels must be unique")
    summary, rows = {}, []
    for p in policies:
        records, shares = run_policy(spec, p)
        done = [r for r in records.values() if r.t_syn >= warmup and np.isfinite(r.t_fin)]
        st = fct_summary([r.fct for r in done])
        st["shares"] = {str(i): shares[i] for i in sorted(shares)}
        st["fast_slow_ratio"] = share_ratio(shares, spec.server_capacities)
        summary[p.label] = st
        rows.extend((p.label, r.idx, r.egress, r.t_syn, r.fct) for r in sorted(done, key=lambda r: r.idx))
    return summary, rows


def write_fct_csv(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy", "flow", "egress", "t_syn", "fct"])
        for label, idx, egress, t_syn, fct in rows:
            w.writerow([label, idx, egress, format(t_syn, ".9f"), format(fct, ".9f")])
