"""Stateful flow table: hash-indexed buckets driven by a TCP state machine.

Bucket ``hash(fid) % M`` tracks one flow through NULL -> SYN -> CONN -> NULL.
A SYN landing on a bucket held by another live flow is a miss: the new flow
is excluded from sampling and only ``n_miss`` records it. Every packet still
bumps ``n_packet`` and ``n_byte``.

Transitions (client-to-VIP packets only; the other direction is counted
but never changes state):

* NULL + SYN          -> SYN,  t0; ``n_syn``, sample ``syn_gap``
* SYN  + ACK (no SYN) -> CONN, t1; ``n_flow_on``/``n_flow_total``, samples
  ``handshake_rtt``, ``flow_interarrival``, ``concurrent_flows_at_arrival``
* CONN + payload      -> t2; samples ``pkt_interarrival``, ``ack_gap``,
  ``bytes_in_flight_proxy`` and, on the first one, ``request_size``.
  ``ack_gap`` is the server data acknowledged since the flow's previous
  packet; ``bytes_in_flight_proxy`` is the distance from the previous
  packet's sequence number to the end of this payload.
* CONN + FIN/RST      -> NULL, t3; samples ``flow_duration``,
  ``flow_size_c2s``, ``flow_pkts``, ``byte_rate``, ``win_size``;
  ``n_flow_on`` -1 and ``n_fin``/``n_rst`` +1
* SYN  + FIN/RST      -> NULL (half-open close; ``n_fin``/``n_rst`` only)

Buckets idle past ``syn_timeout`` (SYN) or ``conn_timeout`` (CONN) are
reclaimed by :meth:`FlowTable.expire`, or lazily when a new SYN collides
with them.
"""

from __future__ import annotations

import enum
from collections import deque
from typing import NamedTuple

from . import catalog as C
from .hashing import bucket_index, fid_digest
from .traffic.model import Direction, TcpFlags

__all__ = ["FlowState", "FlowBucket", "FlowTable", "CounterDelta", "Sample", "InputOrderError",
           "bucket_index"]

_SYN = int(TcpFlags.SYN)
_ACK = int(TcpFlags.ACK)
_FIN = int(TcpFlags.FIN)
_RST = int(TcpFlags.RST)
_M32 = 0xFFFFFFFF


class InputOrderError(ValueError):
    """Packet timestamps went backwards."""


class FlowState(enum.IntEnum):
    NULL = 0
    SYN = 1
    CONN = 2


class CounterDelta(NamedTuple):
    egress_id: int
    counter_id: int
    delta: int


class Sample(NamedTuple):
    egress_id: int
    signal_id: int
    ts: float
    value: float


class FlowBucket:
    __slots__ = ("state", "fid_digest", "t0", "t1", "t2", "t3", "bytes_c2s", "pkts",
                 "last_seq", "last_ack", "last_win", "egress_id", "last_ts", "n_data")

    def __init__(self):
        self.reset()

    def reset(self):
        self.state = FlowState.NULL
        self.fid_digest = 0
        self.t0 = self.t1 = self.t2 = self.t3 = 0.0
        self.bytes_c2s = 0
        self.pkts = 0
        self.last_seq = self.last_ack = self.last_win = 0
        self.egress_id = 0
        self.last_ts = 0.0
        self.n_data = 0

    def __repr__(self):
        return (f"FlowBucket(state={self.state.name}, fid_digest={self.fid_digest:#x}, "
                f"t0={self.t0}, t1={self.t1}, t2={self.t2}, t3={self.t3}, egress_id={self.egress_id})")


class FlowTable:
    def __init__(self, M: int = 65536, syn_timeout: float = 30.0, conn_timeout: float = 300.0):
        if M <= 0:
            raise ValueError("table size must be positive")
        self.M = M
        self.syn_timeout = syn_timeout
        self.conn_timeout = conn_timeout
        self.buckets = [FlowBucket() for _ in range(M)]
        self.miss_count = 0
        self.last_ts = float("-inf")
        self._live: set = set()
        # SYN buckets expire in arrival order, so a FIFO suffices; CONN buckets are scanned
        self._syn_q: deque = deque()
        self._conn: set = set()
        # per-egress bookkeeping for gap/concurrency signals
        self._last_syn: dict = {}
        self._last_conn: dict = {}
        self._flows_on: dict = {}

    def __len__(self):
        return self.M

    @property
    def n_live(self) -> int:
        return len(self._live)

    def index(self, fid) -> int:
        return bucket_index(fid, self.M)

    def _stale(self, b: FlowBucket, now: float) -> bool:
        if b.state == FlowState.SYN:
            return now - b.t0 > self.syn_timeout
        return now - b.last_ts > self.conn_timeout

    def _evict(self, idx: int, b: FlowBucket, now: float, out: list) -> None:
        if b.state == FlowState.CONN:
            e = b.egress_id
            b.t3 = b.last_ts
            out.append(Sample(e, C.FLOW_DURATION, now, b.t3 - b.t0))
            out.append(CounterDelta(e, C.N_FLOW_ON, -1))
            self._flows_on[e] -= 1
            self._conn.discard(idx)
        b.reset()
        self._live.discard(idx)

    def on_packet(self, ev) -> list:
        ts = ev.ts
        if ts < self.last_ts:
            raise InputOrderError(f"packet at {ts} after {self.last_ts}")
        self.last_ts = ts
        e = ev.egress_id if ev.egress_id is not None else 0
        plen = ev.payload_len
        out = [CounterDelta(e, C.N_PACKET, 1), CounterDelta(e, C.N_BYTE, plen)]
        if ev.dir is not Direction.CLIENT_TO_VIP:
            return out
        flags = ev.flags
        digest = fid_digest(ev.flow)
        idx = digest % self.M
        b = self.buckets[idx]

        if flags & _SYN and not flags & _ACK:
            if b.state != FlowState.NULL and b.fid_digest != digest and self._stale(b, ts):
                self._evict(idx, b, ts, out)
            if b.state == FlowState.NULL:
                b.state = FlowState.SYN
                b.fid_digest = digest
                b.t0 = b.last_ts = ts
                b.egress_id = e
                b.pkts = 1
                b.last_seq, b.last_win = ev.seq, ev.win
                self._live.add(idx)
                self._syn_q.append((ts, idx))
                out.append(CounterDelta(e, C.N_SYN, 1))
                prev = self._last_syn.get(e)
                if prev is not None:
                    out.append(Sample(e, C.SYN_GAP, ts, ts - prev))
                self._last_syn[e] = ts
            elif b.fid_digest != digest:
                self.miss_count += 1
                out.append(CounterDelta(e, C.N_MISS, 1))
            return out

        if b.state == FlowState.NULL or b.fid_digest != digest:
            return out

        e = b.egress_id
        b.pkts += 1
        gap = ts - b.last_ts
        b.last_ts = ts

        if flags & (_FIN | _RST):
            closer = C.N_RST if flags & _RST else C.N_FIN
            if b.state == FlowState.CONN:
                b.t3 = ts
                dur = b.t3 - b.t0
                out.append(Sample(e, C.FLOW_DURATION, ts, dur))
                out.append(Sample(e, C.FLOW_SIZE_C2S, ts, b.bytes_c2s))
                out.append(Sample(e, C.FLOW_PKTS, ts, b.pkts))
                if dur > 0:
                    out.append(Sample(e, C.BYTE_RATE, ts, b.bytes_c2s / dur))
                out.append(Sample(e, C.WIN_SIZE, ts, ev.win))
                out.append(CounterDelta(e, C.N_FLOW_ON, -1))
                self._flows_on[e] -= 1
                self._conn.discard(idx)
            out.append(CounterDelta(e, closer, 1))
            b.reset()
            self._live.discard(idx)
            return out

        if b.state == FlowState.SYN:
            if flags & _ACK:
                b.state = FlowState.CONN
                self._conn.add(idx)
                b.t1 = ts
                on = self._flows_on.get(e, 0)
                out.append(CounterDelta(e, C.N_FLOW_ON, 1))
                out.append(CounterDelta(e, C.N_FLOW_TOTAL, 1))
                out.append(Sample(e, C.HANDSHAKE_RTT, ts, ts - b.t0))
                out.append(Sample(e, C.CONCURRENT_FLOWS_AT_ARRIVAL, ts, on))
                prev = self._last_conn.get(e)
                if prev is not None:
                    out.append(Sample(e, C.FLOW_INTERARRIVAL, ts, ts - prev))
                self._last_conn[e] = ts
                self._flows_on[e] = on + 1
                b.last_seq, b.last_ack, b.last_win = ev.seq, ev.ack, ev.win
                if plen:
                    self._data(b, ev, ts, gap, out)
            return out

        if plen:
            self._data(b, ev, ts, gap, out)
        else:
            b.last_seq, b.last_ack, b.last_win = ev.seq, ev.ack, ev.win
        return out

    def _data(self, b: FlowBucket, ev, ts, gap, out) -> None:
        e = b.egress_id
        b.t2 = ts
        if b.n_data == 0:
            out.append(Sample(e, C.REQUEST_SIZE, ts, ev.payload_len))
        out.append(Sample(e, C.PKT_INTERARRIVAL, ts, gap))
        out.append(Sample(e, C.ACK_GAP, ts, (ev.ack - b.last_ack) & _M32))
        out.append(Sample(e, C.BYTES_IN_FLIGHT_PROXY, ts, (ev.seq + ev.payload_len - b.last_seq) & _M32))
        b.n_data += 1
        b.bytes_c2s += ev.payload_len
        b.last_seq, b.last_ack, b.last_win = ev.seq, ev.ack, ev.win

    def expire(self, now: float) -> list:
        out: list = []
        q, buckets = self._syn_q, self.buckets
        limit = now - self.syn_timeout
        while q and q[0][0] < limit:
            t0, idx = q.popleft()
            b = buckets[idx]
            # the entry may be stale: bucket closed, promoted, or reused since
            if b.state == FlowState.SYN and b.t0 == t0:
                self._evict(idx, b, now, out)
        for idx in sorted(self._conn):
            b = buckets[idx]
            if now - b.last_ts > self.conn_timeout:
                self._evict(idx, b, now, out)
        return out

    def flows_on(self, egress_id: int) -> int:
        return self._flows_on.get(egress_id, 0)
