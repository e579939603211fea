"""Line-delimited trace files.

Header then one packet per line::

    ts,src_ip,dst_ip,src_port,dst_port,proto,flags,payload_len,seq,ack,win,dir,egress

``flags`` is a ``|``-joined token set and ``egress`` is empty when no
server has been assigned. Timestamps use ``repr`` so round trips are exact.
"""

from __future__ import annotations

import ipaddress
import os

from .model import Direction, FiveTuple, PacketEvent, format_flags, parse_flags

HEADER = "ts,src_ip,dst_ip,src_port,dst_port,proto,flags,payload_len,seq,ack,win,dir,egress"
_FIELDS = HEADER.split(",")


class TraceFormatError(ValueError):
    def __init__(self, path, line_no, msg):
        super().__init__(f"{path}:{line_no}: {msg}")
        self.line_no = line_no


def _ip(v: int) -> str:
    return str(ipaddress.IPv4Address(v))


def format_event(ev: PacketEvent) -> str:
    f = ev.flow
    egress = "" if ev.egress_id is None else str(ev.egress_id)
    return ",".join((repr(float(ev.ts)), _ip(f.src_ip), _ip(f.dst_ip), str(f.src_port), str(f.dst_port),
                     str(f.proto), format_flags(ev.flags), str(ev.payload_len), str(ev.seq), str(ev.ack),
                     str(ev.win), ev.dir.value, egress))


def write_trace(events, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(HEADER + "\n")
        for ev in events:
            fh.write(format_event(ev))
            fh.write("\n")


def parse_event(line: str) -> PacketEvent:
    parts = line.rstrip("\r\n").split(",")
    if len(parts) != len(_FIELDS):
        raise ValueError(f"expected {len(_FIELDS)} fields, got {len(parts)}")
    ts, sip, dip, sport, dport, proto, flags, plen, seq, ack, win, direction, egress = parts
    flow = FiveTuple(int(ipaddress.IPv4Address(sip)), int(ipaddress.IPv4Address(dip)),
                     int(sport), int(dport), int(proto))
    return PacketEvent(float(ts), flow, int(parse_flags(flags)), int(plen), int(seq), int(ack), int(win),
                       Direction(direction), int(egress) if egress else None)


def iter_trace(path):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\r\n")
        if header != HEADER:
            raise TraceFormatError(path, 1, "missing or wrong header")
        for no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                yield parse_event(line)
            except ValueError as exc:
                raise TraceFormatError(path, no, str(exc)) from None


def load_trace(path) -> list:
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    return list(iter_trace(path))
