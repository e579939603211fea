"""Windowed 73-wide feature rows built from observation frames.

A row covers one egress over one window: the 8 counter deltas between the
frames at the window edges, then 5 statistics (mean, std, p50, p90 and an
exponentially decayed mean with time constant ``window / 2``) for each of
the 13 sampled signals over reservoir samples stamped inside the window.
Slots still holding the initial ``(0, 0)`` are treated as empty.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import csv
import math

import numpy as np

from .. import catalog as C
from ..flow_table import FlowTable
from ..store import RegionConfig, VipRegion
from .datapath import DataPlane

_M32 = 1 << 32


def feature_columns(signals=C.SIGNALS) -> list:
    cols = [f"d_{c}" for c in C.COUNTERS]
    for s in signals:
        cols.extend(f"{s}_{st}" for st in C.STATS)
    return cols


def decayed_mean(ts, values, now: float, tau: float) -> float:
    w = np.exp(-(now - np.asarray(ts, dtype=np.float64)) / tau)
    total = w.sum()
    return float((w * values).sum() / total) if total > 0 else 0.0


def signal_stats(ts, values, t_end: float, tau: float):
    """(mean, std, p50, p90, ewm) of one window's samples; zeros if empty."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return (0.0, 0.0, 0.0, 0.0, 0.0)
    p50, p90 = np.percentile(v, [50, 90])
    return (float(v.mean()), float(v.std()), float(p50), float(p90), decayed_mean(ts, v, t_end, tau))


@dataclass
class FeatureMatrix:
    values: np.ndarray
    columns: list
    egress: np.ndarray
    t_start: np.ndarray
    valid: np.ndarray  # (rows, n_signals) sample-presence flags
    signals: tuple = C.SIGNALS

    def __len__(self):
        return self.values.shape[0]

    @property
    def shape(self):
        return self.values.shape

    def select_signals(self, names) -> "FeatureMatrix":
        names = tuple(names)
        unknown = set(names) - set(self.signals)
        if unknown:
            raise KeyError(f"unknown signals: {sorted(unknown)}")
        keep = [self.columns.index(f"d_{c}") for c in C.COUNTERS]
        for s in names:
            keep.extend(self.columns.index(f"{s}_{st}") for st in C.STATS)
        vidx = [self.signals.index(s) for s in names]
        return FeatureMatrix(self.values[:, keep], [self.columns[i] for i in keep], self.egress,
                             self.t_start, self.valid[:, vidx], names)

    def take(self, rows) -> "FeatureMatrix":
        """Row subset by boolean mask or index array."""
        return FeatureMatrix(self.values[rows], list(self.columns), self.egress[rows],
                             self.t_start[rows], self.valid[rows], self.signals)

    @classmethod
    def concat(cls, mats) -> "FeatureMatrix":
        mats = list(mats)
        return cls(np.vstack([m.values for m in mats]), mats[0].columns,
                   np.concatenate([m.egress for m in mats]), np.concatenate([m.t_start for m in mats]),
                   np.vstack([m.valid for m in mats]), mats[0].signals)

    def to_csv(self, path, labels=None) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            head = ["egress", "t_start"] + list(self.columns) + [f"valid_{s}" for s in self.signals]
            if labels is not None:
                head.append("label")
            w.writerow(head)
            for r in range(len(self)):
                row = [int(self.egress[r]), repr(float(self.t_start[r]))]
                row += [repr(float(x)) for x in self.values[r]]
                row += [int(x) for x in self.valid[r]]
                if labels is not None:
                    row.append(labels[r])
                w.writerow(row)

    @classmethod
    def from_csv(cls, path):
        """Returns (matrix, labels or None)."""
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ValueError(f"{path}: empty feature file")
        head = rows[0]
        has_label = head[-1] == "label"
        vcols = [i for i, h in enumerate(head) if h.startswith("valid_")]
        fcols = [i for i, h in enumerate(head) if i >= 2 and not h.startswith("valid_") and h != "label"]
        body = rows[1:]
        values = np.array([[float(r[i]) for i in fcols] for r in body]).reshape(len(body), len(fcols))
        valid = np.array([[r[i] == "1" for i in vcols] for r in body], dtype=bool).reshape(len(body), len(vcols))
        signals = tuple(head[i][len("valid_"):] for i in vcols)
        labels = [r[-1] for r in body] if has_label else None
        return (cls(values, [head[i] for i in fcols], np.array([int(r[0]) for r in body], dtype=int),
                    np.array([float(r[1]) for r in body]), valid, signals), labels)


def build_feature_rows(frames: dict, window: float) -> FeatureMatrix:
    """One row per (egress, consecutive frame pair).

    ``frames`` maps egress id to frames in time order, one per window edge;
    frame timestamps and sample timestamps share the region's time base.
    """
    tau = window / 2.0
    n_sig = len(C.SIGNALS)
    values, egress, t_start, valid = [], [], [], []
    for e in sorted(frames):
        fl = frames[e]
        for a, b in zip(fl, fl[1:]):
            if b.frame_ts <= a.frame_ts:
                raise ValueError(f"frames for egress {e} are not time-ordered")
            row = [float((int(y) - int(x)) % _M32) for x, y in zip(a.counters, b.counters)]
            # n_flow_on is a gauge; keep its signed change
            d_on = row[C.N_FLOW_ON]
            if d_on >= _M32 // 2:
                row[C.N_FLOW_ON] = d_on - _M32
            flags = []
            for s in range(n_sig):
                ts = b.samples[s, :, 0].astype(np.float64)
                vs = b.samples[s, :, 1].astype(np.float64)
                keep = (ts >= a.frame_ts) & (ts < b.frame_ts) & ~((ts == 0) & (vs == 0))
                row.extend(signal_stats(ts[keep], vs[keep], b.frame_ts, tau))
                flags.append(bool(keep.any()))
            values.append(row)
            egress.append(e)
            t_start.append(a.frame_ts)
            valid.append(flags)
    cols = feature_columns()
    return FeatureMatrix(np.array(values, dtype=np.float64).reshape(len(values), len(cols)), cols,
                         np.array(egress, dtype=int), np.array(t_start, dtype=np.float64),
                         np.array(valid, dtype=bool).reshape(len(valid), n_sig))


def extract(events, region: VipRegion, window: float = 1.0, publish_interval: float = 0.25,
            table: FlowTable | None = None, until: float | None = None):
    """Run a trace through the data plane; returns (FeatureMatrix, frames, dataplane).

    Counters are published every ``publish_interval`` and a frame of every
    active egress is captured at each window edge, starting at t = 0.
    """
    if publish_interval <= 0 or window <= 0:
        raise ValueError("window and publish_interval must be positive")
    dp = DataPlane(region, table)
    frames: dict = {}
    per_window = max(1, round(window / publish_interval))
    step = 0
    last_ts = 0.0

    def advance():
        nonlocal step
        step += 1
        now = step * publish_interval
        dp.tick(now)
        if step % per_window == 0:
            for e, fr in dp.frames(now).items():
                lst = frames.setdefault(e, [])
                if not lst:
                    # block was zeroed when the egress became active
                    lst.append(_zero_frame(region.config, e, now - window))
                lst.append(fr)

    for e, fr in dp.frames(0.0).items():
        frames[e] = [fr]
    for ev in events:
        while ev.ts >= (step + 1) * publish_interval:
            advance()
        dp.process(ev)
        last_ts = ev.ts
    end = last_ts if until is None else until
    while step * publish_interval < end or step % per_window:
        advance()
    return build_feature_rows(frames, window), frames, dp


def _zero_frame(cfg: RegionConfig, e: int, ts: float):
    from ..store import ObservationFrame
    return ObservationFrame(e, 0, np.zeros(cfg.n_counters, dtype=np.uint32),
                            np.zeros((cfg.n_signals, cfg.k, 2), dtype=np.float32), ts)
