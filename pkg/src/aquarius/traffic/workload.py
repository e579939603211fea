"""Workload description and deterministic flow sampling.

All randomness comes from numpy's PCG64 bit generator seeded through
``SeedSequence(seed)``. Legitimate flows and flood flows draw from two spawned
child streams, so toggling the flood leaves the legitimate arrivals
unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math
from typing import Optional, Sequence

import numpy as np

from .model import ConfigError

MSS = 1460
FILE_SIZES = (100_000, 200_000, 500_000, 750_000, 1_000_000, 2_000_000, 5_000_000)
WINDOWS = (29200, 64240, 65535)

KIND_CPU = 0
KIND_IO = 1
KIND_FLOOD = 2


@dataclass(frozen=True)
class WorkloadSpec:
    arrival_rate: float
    mean_duration: float
    mean_size: float
    n_servers: int
    server_capacities: tuple
    duration_s: float
    seed: int = 0
    flood_rate: Optional[float] = None
    # fraction of legitimate flows that are IO-bound file transfers
    io_fraction: float = 0.0
    file_sizes: tuple = FILE_SIZES
    io_throughput: float = 2e6  # bytes per unit of work
    # piecewise-constant rate: ((t_start, rate), ...); overrides arrival_rate
    rate_schedule: Optional[tuple] = None
    base_rtt: float = 1e-4
    vip: int = 0x0A000001  # 10.0.0.1
    dport: int = 80

    def __post_init__(self):
        object.__setattr__(self, "server_capacities", tuple(float(c) for c in self.server_capacities))
        if self.rate_schedule is not None:
            object.__setattr__(self, "rate_schedule",
                               tuple((float(t), float(r)) for t, r in self.rate_schedule))
        self.validate()

    def validate(self):
        for name in ("arrival_rate", "mean_duration", "mean_size", "io_throughput", "base_rtt"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ConfigError(f"{name} must be positive, got {v!r}")
        if self.duration_s < 0:
            raise ConfigError("duration_s must be non-negative")
        if self.n_servers < 1 or self.n_servers != len(self.server_capacities):
            raise ConfigError("n_servers must equal len(server_capacities) and be >= 1")
        if any(c <= 0 for c in self.server_capacities):
            raise ConfigError("server capacities must be positive")
        if self.flood_rate is not None and not self.flood_rate > 0:
            raise ConfigError("flood_rate must be positive when given")
        if not 0.0 <= self.io_fraction <= 1.0:
            raise ConfigError("io_fraction must lie in [0, 1]")
        if self.rate_schedule is not None:
            starts = [t for t, _ in self.rate_schedule]
            if not starts or starts[0] != 0.0 or starts != sorted(starts):
                raise ConfigError("rate_schedule must start at 0 and be sorted")
            if any(r <= 0 for _, r in self.rate_schedule):
                raise ConfigError("scheduled rates must be positive")

    def segments(self):
        """(start, end, rate) covering [0, duration_s)."""
        sched = self.rate_schedule or ((0.0, self.arrival_rate),)
        out = []
        for i, (t0, r) in enumerate(sched):
            t1 = sched[i + 1][0] if i + 1 < len(sched) else self.duration_s
            t1 = min(t1, self.duration_s)
            if t1 > t0:
                out.append((t0, t1, r))
        return out

    def rate_at(self, t: float) -> float:
        rate = self.arrival_rate
        for t0, r in self.rate_schedule or ():
            if t >= t0:
                rate = r
        return rate

    @property
    def mean_work(self) -> float:
        io = float(np.mean(self.file_sizes)) / self.io_throughput
        return (1 - self.io_fraction) * self.mean_duration + self.io_fraction * io


@dataclass
class FlowBatch:
    """Struct-of-arrays view of sampled flows, sorted by arrival time."""

    t: np.ndarray
    src_ip: np.ndarray
    src_port: np.ndarray
    kind: np.ndarray
    work: np.ndarray
    size: np.ndarray
    response: np.ndarray
    rtt: np.ndarray
    win: np.ndarray
    isn: np.ndarray
    server_isn: np.ndarray
    vip: int = 0
    dport: int = 80

    def __len__(self):
        return len(self.t)

    @property
    def n_legit(self) -> int:
        return int(np.count_nonzero(self.kind != KIND_FLOOD))


def _poisson_times(rng, segments: Sequence) -> np.ndarray:
    chunks = []
    for t0, t1, rate in segments:
        expect = rate * (t1 - t0)
        n = int(expect + 10 * math.sqrt(expect) + 16)
        while True:
            gaps = rng.exponential(1.0 / rate, size=n)
            times = t0 + np.cumsum(gaps)
            if times[-1] >= t1:
                break
            n *= 2
        chunks.append(times[times < t1])
    if not chunks:
        return np.empty(0)
    return np.concatenate(chunks)


def sample_flows(spec: WorkloadSpec) -> FlowBatch:
    """Draw every flow of ``spec``; same spec, same batch, bit for bit."""
    legit_ss, flood_ss = np.random.SeedSequence(spec.seed).spawn(2)
    rng = np.random.Generator(np.random.PCG64(legit_ss))
    segs = spec.segments()
    t = _poisson_times(rng, segs)
    n = len(t)
    is_io = rng.random(n) < spec.io_fraction
    cpu_work = rng.exponential(spec.mean_duration, n)
    cpu_size = np.ceil(rng.exponential(spec.mean_size, n))
    files = np.asarray(spec.file_sizes, dtype=float)
    io_size = files[rng.integers(0, len(files), n)]
    size = np.where(is_io, io_size, cpu_size)
    size = np.maximum(size, 1).astype(np.int64)
    work = np.where(is_io, io_size / spec.io_throughput, cpu_work)
    work = np.maximum(work, 1e-9)
    # response bytes grow with the work done (PHP loop replies proportionally)
    response = np.where(is_io, io_size, np.ceil(cpu_work / spec.mean_duration * 8000)).astype(np.int64)
    rtt = spec.base_rtt * (1.0 + rng.exponential(1.0, n))
    win = np.asarray(WINDOWS)[rng.integers(0, len(WINDOWS), n)]
    src_ip = (0xAC100000 | rng.integers(0, 1 << 20, n)).astype(np.int64)  # 172.16.0.0/12
    src_port = rng.integers(1024, 65536, n)
    isn = rng.integers(0, 1 << 32, n, dtype=np.uint64).astype(np.int64)
    server_isn = rng.integers(0, 1 << 32, n, dtype=np.uint64).astype(np.int64)
    kind = np.where(is_io, KIND_IO, KIND_CPU)

    cols = dict(t=t, src_ip=src_ip, src_port=src_port, kind=kind, work=work, size=size,
                response=response, rtt=rtt, win=win, isn=isn, server_isn=server_isn)

    if spec.flood_rate:
        frng = np.random.Generator(np.random.PCG64(flood_ss))
        ft = _poisson_times(frng, [(0.0, spec.duration_s, spec.flood_rate)] if spec.duration_s > 0 else [])
        m = len(ft)
        flood = dict(
            t=ft,
            src_ip=frng.integers(0, 1 << 32, m, dtype=np.uint64).astype(np.int64),
            src_port=frng.integers(1024, 65536, m),
            kind=np.full(m, KIND_FLOOD),
            work=np.zeros(m), size=np.zeros(m, dtype=np.int64), response=np.zeros(m, dtype=np.int64),
            rtt=np.full(m, spec.base_rtt), win=np.full(m, 1024),
            isn=frng.integers(0, 1 << 32, m, dtype=np.uint64).astype(np.int64),
            server_isn=np.zeros(m, dtype=np.int64),
        )
        order = np.argsort(np.concatenate([t, ft]), kind="stable")
        cols = {k: np.concatenate([cols[k], flood[k]])[order] for k in cols}

    return FlowBatch(vip=spec.vip, dport=spec.dport, **cols)
