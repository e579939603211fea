"""Discrete-event replay of a FlowBatch against processor-sharing servers.

Each legitimate flow emits SYN, the handshake ACK, its request payload as
PSH|ACK chunks of at most one MSS spaced half an RTT apart, and a FIN|ACK one
RTT after both the server finished its job and the last chunk went out.
Flood flows emit a lone SYN. Packets reach ``sink`` in global time order.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..hashing import fid_digest
from .model import Direction, FiveTuple, PacketEvent, ServerModel, TcpFlags, TCP
from .workload import KIND_FLOOD, MSS, FlowBatch, WorkloadSpec, sample_flows

_M32 = 0xFFFFFFFF

_ACK = 0
_DATA = 1
_FIN = 2
_TICK = 3

SYN = int(TcpFlags.SYN)
ACK = int(TcpFlags.ACK)
PSH_ACK = int(TcpFlags.PSH | TcpFlags.ACK)
FIN_ACK = int(TcpFlags.FIN | TcpFlags.ACK)
C2V = Direction.CLIENT_TO_VIP


def ecmp_picker(active_ids):
    """Return a picker mapping a flow hash onto the current active list."""
    def pick(fid, now):
        return active_ids[fid_digest(fid) % len(active_ids)]
    return pick


@dataclass
class FlowRecord:
    idx: int
    egress: int
    t_syn: float
    t_done: float = math.nan
    t_fin: float = math.nan

    @property
    def fct(self) -> float:
        return self.t_fin - self.t_syn


class Engine:
    """Event loop over flow arrivals, packet emissions, completions and ticks.

    ``picker(fid, now)`` chooses a server id for each new flow.
    ``on_tick(engine, now)`` runs every ``tick`` seconds of simulated time
    while ``now <= until``; it may call :meth:`set_active`. With
    ``packets=False`` only SYNs and FINs are scheduled, which is enough when
    nothing consumes the per-packet stream.
    """

    def __init__(self, servers, picker: Callable, sink: Optional[Callable] = None,
                 tick: Optional[float] = None, on_tick: Optional[Callable] = None,
                 on_arrival: Optional[Callable] = None, packets: bool = True):
        self.servers = {s.id: s for s in servers}
        self.active = sorted(self.servers)
        self.picker = picker
        self.sink = sink
        self.tick = tick
        self.on_tick = on_tick
        self.on_arrival = on_arrival
        self.packets = packets
        self.now = 0.0
        self.records: dict = {}
        self._heap: list = []
        self._order = 0
        self._done_t = []
        for s in servers:
            self._slot(s.id)

    def set_active(self, ids) -> None:
        for i in ids:
            if i not in self.servers:
                raise KeyError(f"unknown server {i}")
        self.active[:] = sorted(ids)

    def add_server(self, server: ServerModel) -> None:
        server.now = self.now
        self.servers[server.id] = server
        self._slot(server.id)

    def _slot(self, sid):
        while len(self._done_t) <= sid:
            self._done_t.append(math.inf)

    def _push(self, t, kind, i, j=0):
        heapq.heappush(self._heap, (t, self._order, kind, i, j))
        self._order += 1

    def _emit(self, ev):
        if self.sink is not None:
            self.sink(ev)

    def _refresh(self, sid):
        s = self.servers[sid]
        self._done_t[sid] = s.now + s.time_to_next_completion()

    def _complete(self, b, handles, t):
        for i in handles:
            rec = self.records[i]
            rec.t_done = t
            n_data = -(-b.size[i] // MSS)
            last_data = rec.t_syn + b.rtt[i] + n_data * b.rtt[i] / 2
            self._push(max(t, last_data) + b.rtt[i], _FIN, i)

    def sample_servers(self):
        """Advance every server to ``now`` (used by tick handlers)."""
        for sid, s in self.servers.items():
            done = s.advance_to(self.now)
            if done:
                self._complete(self._batch, done, self.now)
            self._refresh(sid)

    def run(self, batch: FlowBatch, until: Optional[float] = None):
        b = _Columns(batch)
        self._batch = b
        n = len(b.t)
        times = b.t
        nxt = 0
        if until is None:
            until = float(times[-1]) if n else 0.0
        if self.tick:
            self._push(self.tick, _TICK, -1)
        inf = math.inf
        while True:
            t_arr = times[nxt] if nxt < n and times[nxt] <= until else inf
            t_evt = self._heap[0][0] if self._heap else inf
            t_srv = min(self._done_t) if self._done_t else inf
            t = min(t_arr, t_evt, t_srv)
            if t == inf:
                break
            if t_srv <= t_evt and t_srv <= t_arr:
                self.now = t_srv
                sid = self._done_t.index(t_srv)
                s = self.servers[sid]
                self._complete(b, s.advance_to(t_srv), t_srv)
                self._refresh(sid)
            elif t_evt <= t_arr:
                ev_t, _, kind, i, j = heapq.heappop(self._heap)
                self.now = ev_t
                if kind == _TICK:
                    if self.on_tick is not None:
                        self.on_tick(self, ev_t)
                    if ev_t + self.tick <= until + 1e-9:
                        self._push(ev_t + self.tick, _TICK, -1)
                    continue
                self._packet(b, kind, i, j, ev_t)
            else:
                self.now = t_arr
                self._arrive(b, nxt, t_arr)
                nxt += 1
        return self.records

    def _arrive(self, b, i, t):
        fid = FiveTuple(b.src_ip[i], b.vip, b.src_port[i], b.dport, TCP)
        egress = self.picker(fid, t)
        self.records[i] = FlowRecord(i, egress, t)
        self._emit(PacketEvent(t, fid, SYN, 0, b.isn[i], 0, b.win[i], C2V, egress))
        if self.on_arrival is not None:
            self.on_arrival(self, i, egress, t)
        if b.kind[i] == KIND_FLOOD:
            return
        s = self.servers[egress]
        self._complete(b, s.advance_to(t), t)
        s.add_job(b.work[i], i)
        self._refresh(egress)
        if self.packets:
            self._push(t + b.rtt[i], _ACK, i)

    def _packet(self, b, kind, i, j, t):
        rec = self.records[i]
        fid = FiveTuple(b.src_ip[i], b.vip, b.src_port[i], b.dport, TCP)
        isn = b.isn[i]
        sisn = b.server_isn[i]
        win = b.win[i]
        size = b.size[i]
        if kind == _ACK:
            self._emit(PacketEvent(t, fid, ACK, 0, (isn + 1) & _M32, (sisn + 1) & _M32, win, C2V, rec.egress))
            self._push(t + b.rtt[i] / 2, _DATA, i, 1)
        elif kind == _DATA:
            n_data = -(-size // MSS)
            off = (j - 1) * MSS
            plen = min(MSS, size - off)
            acked = b.response[i] * j // n_data
            self._emit(PacketEvent(t, fid, PSH_ACK, plen, (isn + 1 + off) & _M32,
                                   (sisn + 1 + acked) & _M32, win, C2V, rec.egress))
            if j < n_data:
                self._push(t + b.rtt[i] / 2, _DATA, i, j + 1)
        else:
            rec.t_fin = t
            self._emit(PacketEvent(t, fid, FIN_ACK, 0, (isn + 1 + size) & _M32,
                                   (sisn + 1 + b.response[i]) & _M32, win, C2V, rec.egress))


class _Columns:
    # plain-list copy of a FlowBatch; indexing lists is much cheaper than numpy scalars
    def __init__(self, batch: FlowBatch):
        for name in ("t", "src_ip", "src_port", "kind", "work", "size", "response", "rtt",
                     "win", "isn", "server_isn"):
            setattr(self, name, np.asarray(getattr(batch, name)).tolist())
        self.vip = batch.vip
        self.dport = batch.dport


def make_servers(capacities):
    return [ServerModel(i, c) for i, c in enumerate(capacities)]


def gen_trace(spec: WorkloadSpec) -> list:
    """Generate the packet trace of ``spec`` with ECMP server assignment."""
    batch = sample_flows(spec)
    out: list = []
    servers = make_servers(spec.server_capacities)
    engine = Engine(servers, picker=None, sink=out.append)
    engine.picker = ecmp_picker(engine.active)
    engine.run(batch)
    return out
