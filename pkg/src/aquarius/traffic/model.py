"""Packet records and the processor-sharing server model."""

from __future__ import annotations

import enum
import heapq
import ipaddress
import math
from typing import NamedTuple, Optional

TCP = 6


class ConfigError(ValueError):
    """Invalid workload or component configuration."""


class TcpFlags(enum.IntFlag):
    SYN = 0x02
    FIN = 0x01
    RST = 0x04
    PSH = 0x08
    ACK = 0x10


# canonical token order used when serializing flag sets
FLAG_ORDER = (TcpFlags.SYN, TcpFlags.FIN, TcpFlags.RST, TcpFlags.PSH, TcpFlags.ACK)
_FLAG_BY_NAME = {f.name: f for f in FLAG_ORDER}


def format_flags(flags: int) -> str:
    return "|".join(f.name for f in FLAG_ORDER if flags & f)


def parse_flags(text: str) -> TcpFlags:
    if not text:
        raise ValueError("empty flag set")
    out = TcpFlags(0)
    for tok in text.split("|"):
        try:
            out |= _FLAG_BY_NAME[tok.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown TCP flag {tok!r}") from None
    return out


class Direction(enum.Enum):
    CLIENT_TO_VIP = "client_to_vip"
    VIP_TO_CLIENT = "vip_to_client"


class FiveTuple(NamedTuple):
    src_ip: int
    dst_ip: int
    src_port: int
    dst_port: int
    proto: int = TCP

    def __str__(self):
        return (f"{ipaddress.IPv4Address(self.src_ip)}:{self.src_port}->"
                f"{ipaddress.IPv4Address(self.dst_ip)}:{self.dst_port}/{self.proto}")


class PacketEvent(NamedTuple):
    ts: float
    flow: FiveTuple
    flags: int
    payload_len: int = 0
    seq: int = 0
    ack: int = 0
    win: int = 0
    dir: Direction = Direction.CLIENT_TO_VIP
    egress_id: Optional[int] = None


class ServerModel:
    """Egalitarian processor-sharing server with ``capacity`` CPUs' worth of speed.

    With n active jobs each is served at ``min(1, capacity / n)`` work units
    per second: a single job cannot use more than one CPU, so a capacity-2
    server only outpaces a capacity-1 server once it holds two or more jobs.
    For capacity <= 1 this is plain processor sharing at speed ``capacity``.
    Jobs are kept on a virtual-time heap, so advancing is O(completions).
    ``busy_time`` integrates ``min(1, n / capacity)`` and ``cpu_usage`` is its
    average over the last advance interval.
    """

    _EPS = 1e-12

    def __init__(self, id: int, capacity: float):
        if capacity <= 0:
            raise ConfigError("server capacity must be positive")
        self.id = id
        self.capacity = float(capacity)
        self.now = 0.0
        self.cpu_usage = 0.0
        self.busy_time = 0.0
        self._v = 0.0
        self._heap: list = []
        self._n_added = 0

    def __len__(self):
        return len(self._heap)

    @property
    def active_jobs(self):
        """(remaining_work, handle) pairs, smallest remaining first."""
        return [(fv - self._v, h) for fv, _, h in sorted(self._heap)]

    def add_job(self, work: float, handle) -> None:
        heapq.heappush(self._heap, (self._v + work, self._n_added, handle))
        self._n_added += 1

    def rate(self, n: int) -> float:
        """Per-job service rate with ``n`` jobs present."""
        return min(1.0, self.capacity / n)

    def time_to_next_completion(self) -> float:
        if not self._heap:
            return math.inf
        return max(0.0, self._heap[0][0] - self._v) / self.rate(len(self._heap))

    def advance(self, dt: float) -> list:
        heap = self._heap
        done = []
        left = dt
        busy = 0.0
        cap = self.capacity
        while heap and left > 0.0:
            n = len(heap)
            r = min(1.0, cap / n)
            need = (heap[0][0] - self._v) / r
            if need <= left + self._EPS:
                need = max(need, 0.0)
                self._v = heap[0][0]
                while heap and heap[0][0] - self._v <= self._EPS:
                    done.append(heapq.heappop(heap)[2])
                step = min(need, left)
            else:
                self._v += left * r
                step = left
            busy += step * min(1.0, n / cap)
            left -= step
        # completions due exactly now (dt == 0 or float round-off)
        while heap and heap[0][0] - self._v <= self._EPS:
            done.append(heapq.heappop(heap)[2])
        self.now += dt
        self.busy_time += busy
        self.cpu_usage = min(1.0, busy / dt) if dt > 0 else (1.0 if heap else 0.0)
        return done

    def advance_to(self, t: float) -> list:
        return self.advance(max(0.0, t - self.now))


def server_advance(model: ServerModel, dt: float) -> list:
    """Advance ``model`` by ``dt`` seconds, returning completed job handles."""
    return model.advance(dt)
