"""Per-VIP observation regions backed by a memory-mapped file.

Layout (little-endian, every offset a multiple of 4, blocks 8-aligned)::

    0   'AQRS'             magic
    4   u16                format version
    6   u8                 N, max egress count
    7   u8 n_counters, u8 n_signals, u8 m, u8 n_action_slots, u16 k, 3 pad
    16  ceil(N/64) x u64   bit-index header, bit i <=> egress i active
    ..  N x block

    block:
      counter cache        n_counters x u32   (data-plane private)
      counter multi-buffer m x (u32 seq, n_counters x u32)
      action multi-buffer  m x (u32 seq, n_action_slots x u32)
      reservoirs           n_signals x k x (f32 ts, f32 value)

A buffer whose seq is 0 is mid-copy. Writers fill the buffer after the
newest one (round robin), zeroing its seq first and stamping
``newest + 1`` last. Readers take the newest nonzero buffer, copy it, and
retry if its seq changed meanwhile, so a frame is never a blend of two
publishes. Exactly one writer per direction per egress.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import mmap
import os
import struct
import sys

import numpy as np

from . import catalog as C
from .flow_table import CounterDelta, Sample
from .reservoir import RandomWords, Reservoir

MAGIC = b"AQRS"
VERSION = 1
HEADER_BYTES = 16
UNIT_WEIGHT = 1 << 16
_HDR = struct.Struct("<4sHBBBBBH")
_M32 = 0xFFFFFFFF

if sys.byteorder != "little":  # memoryview casts below use native order
    raise ImportError("region access assumes a little-endian host")


class RegionError(Exception):
    pass


class InactiveEgressError(RegionError):
    pass


def _align8(n: int) -> int:
    return (n + 7) & ~7


@dataclass(frozen=True)
class RegionConfig:
    N: int = 64
    n_counters: int = len(C.COUNTERS)
    n_signals: int = len(C.SIGNALS)
    k: int = 128
    m: int = 3
    n_action_slots: int = 2

    def __post_init__(self):
        if not 1 <= self.N <= 255:
            raise ValueError("N must fit the one-byte header field (1..255)")
        for name in ("n_counters", "n_signals", "n_action_slots"):
            if not 1 <= getattr(self, name) <= 255:
                raise ValueError(f"{name} must lie in 1..255")
        if not 1 <= self.k <= 0xFFFF:
            raise ValueError("k must lie in 1..65535")
        if not 2 <= self.m <= 255:
            raise ValueError("multi-buffering needs m >= 2")

    @property
    def bitindex_bytes(self) -> int:
        return -(-self.N // 64) * 8

    @property
    def counter_mbuf_bytes(self) -> int:
        return self.m * (4 + 4 * self.n_counters)

    @property
    def action_mbuf_bytes(self) -> int:
        return self.m * (4 + 4 * self.n_action_slots)

    @property
    def reservoir_bytes(self) -> int:
        return self.n_signals * self.k * 8

    @property
    def block_size(self) -> int:
        return _align8(4 * self.n_counters + self.counter_mbuf_bytes + self.action_mbuf_bytes
                       + self.reservoir_bytes)


def layout_size(cfg: RegionConfig) -> int:
    return HEADER_BYTES + cfg.bitindex_bytes + cfg.N * cfg.block_size


def counter_payload_bytes(cfg: RegionConfig) -> int:
    """Counter multi-buffer payload over all egress blocks, seq words excluded."""
    return cfg.n_counters * 4 * cfg.m * cfg.N


def reservoir_area_bytes(cfg: RegionConfig) -> int:
    return cfg.reservoir_bytes * cfg.N


@dataclass(frozen=True)
class Action:
    egress_id: int
    weight: int = UNIT_WEIGHT  # 16.16 fixed point
    aux: int = 0

    @classmethod
    def from_weight(cls, egress_id: int, weight: float, aux: int = 0) -> "Action":
        return cls(egress_id, max(1, min(_M32, int(round(weight * UNIT_WEIGHT)))), aux)

    @property
    def weight_value(self) -> float:
        return self.weight / UNIT_WEIGHT


@dataclass
class ObservationFrame:
    egress_id: int
    seq: int
    counters: np.ndarray
    samples: np.ndarray  # (n_signals, k, 2) float32
    frame_ts: float = 0.0

    def counter(self, name: str) -> int:
        return int(self.counters[C.COUNTER_ID[name]])


class VipRegion:
    """One VIP's observation region; use :meth:`create` or :meth:`open`."""

    def __init__(self, path, cfg: RegionConfig, mm: mmap.mmap, fh, seed=None, t_origin: float = 0.0):
        self.path = os.fspath(path)
        self.config = cfg
        self.t_origin = t_origin
        self.dropped = 0
        self._fh = fh
        self._mm = mm
        self._u32 = np.frombuffer(mm, dtype="<u4")
        self._f32 = np.frombuffer(mm, dtype="<f4")
        self._bits = np.frombuffer(mm, dtype="<u8", count=cfg.bitindex_bytes // 8, offset=HEADER_BYTES)
        # scalar access through memoryviews is several times cheaper than numpy item access
        self._mv32 = memoryview(mm).cast("I")
        self._mvbits = memoryview(mm)[HEADER_BYTES:HEADER_BYTES + cfg.bitindex_bytes].cast("Q")
        self._rng = RandomWords(seed)
        self._reservoirs: dict = {}
        self._chunk = 0  # >0 splits payload copies (stress testing)
        self._touch = None  # optional callback(byte_offset, nbytes) for write accounting
        c = cfg.n_counters
        self._blk0 = (HEADER_BYTES + cfg.bitindex_bytes) // 4
        self._blkw = cfg.block_size // 4
        self._cmb = c  # word offset of counter multi-buffer inside a block
        self._cstride = 1 + c
        self._amb = c + cfg.m * (1 + c)
        self._astride = 1 + cfg.n_action_slots
        self._res = self._amb + cfg.m * self._astride

    # -- lifecycle -------------------------------------------------------
    @classmethod
    def create(cls, cfg: RegionConfig, path, seed=None, t_origin: float = 0.0) -> "VipRegion":
        size = layout_size(cfg)
        fh = open(path, "w+b")
        try:
            fh.truncate(size)
            fh.write(_HDR.pack(MAGIC, VERSION, cfg.N, cfg.n_counters, cfg.n_signals, cfg.m,
                               cfg.n_action_slots, cfg.k))
            fh.flush()
            mm = mmap.mmap(fh.fileno(), size)
        except OSError:
            fh.close()
            raise
        return cls(path, cfg, mm, fh, seed=seed, t_origin=t_origin)

    @classmethod
    def open(cls, path, seed=None, t_origin: float = 0.0) -> "VipRegion":
        fh = open(path, "r+b")
        head = fh.read(_HDR.size)
        if len(head) < _HDR.size:
            fh.close()
            raise RegionError(f"{path}: truncated header")
        magic, version, N, nc, ns, m, na, k = _HDR.unpack(head)
        if magic != MAGIC or version != VERSION:
            fh.close()
            raise RegionError(f"{path}: not a region file (magic={magic!r}, version={version})")
        cfg = RegionConfig(N=N, n_counters=nc, n_signals=ns, k=k, m=m, n_action_slots=na)
        size = os.fstat(fh.fileno()).st_size
        if size != layout_size(cfg):
            fh.close()
            raise RegionError(f"{path}: size {size} != expected {layout_size(cfg)}")
        mm = mmap.mmap(fh.fileno(), size)
        return cls(path, cfg, mm, fh, seed=seed, t_origin=t_origin)

    def close(self) -> None:
        if self._mm is None:
            return
        self._reservoirs.clear()
        self._mv32.release()
        self._mvbits.release()
        del self._u32, self._f32, self._bits
        self._mm.flush()
        self._mm.close()
        self._fh.close()
        self._mm = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    @property
    def size(self) -> int:
        return len(self._mm)

    # -- bit index -------------------------------------------------------
    def is_active(self, i: int) -> bool:
        return 0 <= i < self.config.N and bool((self._mvbits[i >> 6] >> (i & 63)) & 1)

    def _check_index(self, i):
        if not 0 <= i < self.config.N:
            raise IndexError(f"egress {i} outside 0..{self.config.N - 1}")

    def _set_bit(self, i: int, on: bool) -> None:
        w = self._mvbits[i >> 6]
        self._mvbits[i >> 6] = w | (1 << (i & 63)) if on else w & ~(1 << (i & 63))

    @property
    def bit_index(self) -> int:
        out = 0
        for wi, w in enumerate(self._bits.tolist()):
            out |= w << (64 * wi)
        return out

    def add_egress(self, i: int) -> None:
        self._check_index(i)
        if self.is_active(i):
            raise RegionError(f"egress {i} already active")
        base = self._blk0 + i * self._blkw
        self._u32[base:base + self._blkw] = 0
        self._reservoirs.pop(i, None)
        self._set_bit(i, True)

    def remove_egress(self, i: int) -> None:
        self._check_index(i)
        if not self.is_active(i):
            raise RegionError(f"egress {i} not active")
        self._set_bit(i, False)

    def active_egresses(self) -> list:
        out = []
        for wi, w in enumerate(self._bits.tolist()):
            while w:
                low = w & -w
                out.append(64 * wi + low.bit_length() - 1)
                w ^= low
        return out

    # -- data plane ------------------------------------------------------
    def _block(self, i: int) -> int:
        return self._blk0 + i * self._blkw

    def reservoir(self, i: int, signal_id: int) -> Reservoir:
        res = self._reservoirs.get(i)
        if res is None:
            cfg = self.config
            start = self._block(i) + self._res
            area = self._f32[start:start + cfg.n_signals * cfg.k * 2].reshape(cfg.n_signals, cfg.k, 2)
            res = self._reservoirs[i] = [Reservoir(cfg.k, self._rng, area[s]) for s in range(cfg.n_signals)]
        return res[signal_id]

    def apply_emission(self, em) -> bool:
        """Apply one flow-table emission; inactive egress drops it and returns False."""
        e = em.egress_id
        if not (0 <= e < self.config.N and (self._mvbits[e >> 6] >> (e & 63)) & 1):
            self.dropped += 1
            return False
        if type(em) is CounterDelta:
            off = self._blk0 + e * self._blkw + em.counter_id
            mv = self._mv32
            mv[off] = (mv[off] + em.delta) & _M32
            if self._touch:
                self._touch(4 * off, 4)
        else:
            r = self.reservoir(e, em.signal_id)
            slot = r.insert(em.ts - self.t_origin, em.value)
            if self._touch:
                self._touch(4 * (self._block(e) + self._res + 2 * (em.signal_id * self.config.k + slot)), 8)
        return True

    def counter_cache(self, i: int) -> np.ndarray:
        base = self._block(i)
        return self._u32[base:base + self.config.n_counters].copy()

    def set_counter_cache(self, i: int, values) -> None:
        """Overwrite egress ``i``'s counter cache (tools and tests)."""
        if not self.is_active(i):
            raise InactiveEgressError(f"egress {i} not active")
        base = self._block(i)
        self._u32[base:base + self.config.n_counters] = np.asarray(values, dtype=np.uint64) & _M32

    def cached_counter(self, i: int, counter_id: int) -> int:
        return self._mv32[self._block(i) + counter_id]

    def _newest(self, first: int, stride: int):
        m = self.config.m
        seqs = self._mv32[first:first + m * stride:stride].tolist()
        best = max(range(m), key=seqs.__getitem__)
        return best, seqs[best]

    def _publish(self, first: int, stride: int, payload) -> int:
        m = self.config.m
        buf, newest = self._newest(first, stride)
        nxt = (buf + 1) % m if newest else 0
        seq = (newest + 1) & _M32 or 1
        at = first + nxt * stride
        mv = self._mv32
        mv[at] = 0
        if self._chunk:
            # split copy: lets a stress test interleave a reader mid-copy
            for j in range(0, stride - 1, self._chunk):
                self._u32[at + 1 + j:at + 1 + min(j + self._chunk, stride - 1)] = payload[j:j + self._chunk]
        else:
            self._u32[at + 1:at + stride] = payload
        mv[at] = seq
        if self._touch:
            self._touch(4 * first, 4 * m * stride)
        return seq

    def _read(self, first: int, stride: int):
        u32 = self._u32
        while True:
            buf, seq = self._newest(first, stride)
            if seq == 0:
                return 0, np.zeros(stride - 1, dtype=np.uint32)
            at = first + buf * stride
            payload = np.array(u32[at + 1:at + stride])
            if self._mv32[at] == seq:
                return seq, payload

    def publish_counters(self, i: int) -> int:
        if not self.is_active(i):
            raise InactiveEgressError(f"egress {i} not active")
        base = self._block(i)
        c = self.config.n_counters
        return self._publish(base + self._cmb, self._cstride, self._u32[base:base + c])

    def read_latest(self, i: int, now: float = 0.0) -> ObservationFrame:
        if not self.is_active(i):
            raise InactiveEgressError(f"egress {i} not active")
        base = self._block(i)
        seq, counters = self._read(base + self._cmb, self._cstride)
        cfg = self.config
        start = base + self._res
        samples = self._f32[start:start + cfg.n_signals * cfg.k * 2].reshape(cfg.n_signals, cfg.k, 2).copy()
        return ObservationFrame(i, seq, counters, samples, now)

    def read_counters(self, i: int):
        """(seq, counters) of the newest publish, without reservoir copy."""
        return self._read(self._block(i) + self._cmb, self._cstride)

    # -- control plane ---------------------------------------------------
    def push_action(self, i: int, action: Action) -> int:
        if not self.is_active(i):
            raise InactiveEgressError(f"egress {i} not active")
        payload = np.zeros(self.config.n_action_slots, dtype=np.uint32)
        payload[0] = action.weight & _M32
        if self.config.n_action_slots > 1:
            payload[1] = action.aux & _M32
        return self._publish(self._block(i) + self._amb, self._astride, payload)

    def read_action(self, i: int) -> Action:
        if not self.is_active(i):
            raise InactiveEgressError(f"egress {i} not active")
        seq, payload = self._read(self._block(i) + self._amb, self._astride)
        if seq == 0:
            return Action(i)
        aux = int(payload[1]) if len(payload) > 1 else 0
        return Action(i, int(payload[0]), aux)

    def action_seqs(self, i: int) -> list:
        first = self._block(i) + self._amb
        return self._u32[first:first + self.config.m * self._astride:self._astride].tolist()

    def counter_seqs(self, i: int) -> list:
        first = self._block(i) + self._cmb
        return self._u32[first:first + self.config.m * self._cstride:self._cstride].tolist()


def create_vip(cfg: RegionConfig, path, **kw) -> VipRegion:
    return VipRegion.create(cfg, path, **kw)
