import os

import pytest

from aquarius.store import RegionConfig, VipRegion
from aquarius.traffic import FiveTuple, PacketEvent, TcpFlags, Direction

# acceptance results, printed once at the end of the session
CRITERIA: dict = {}


def record(number, name, passed, detail=""):
    prev = CRITERIA.get(number)
    if prev is not None:
        passed = passed and prev[1]
        detail = "; ".join(x for x in (prev[2], detail) if x)
    CRITERIA[number] = (name, passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        name, ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:>2} {name:<28} {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def region(tmp_path):
    r = VipRegion.create(RegionConfig(), os.path.join(tmp_path, "vip.bin"), seed=0)
    yield r
    r.close()


def pkt(ts, flags, sport=40000, plen=0, seq=0, ack=0, win=64240, egress=0, direction=Direction.CLIENT_TO_VIP):
    flow = FiveTuple(0xC0A80001, 0x0A000001, sport, 80, 6)
    if direction is Direction.VIP_TO_CLIENT:
        flow = FiveTuple(0x0A000001, 0xC0A80001, 80, sport, 6)
    return PacketEvent(ts, flow, int(flags), plen, seq, ack, win, direction, egress)


def one_flow(t0=0.1, sport=40000, egress=0, request=300):
    """Hand-built SYN, ACK, request, response, FIN for one flow."""
    S, A, P, F = TcpFlags.SYN, TcpFlags.ACK, TcpFlags.PSH, TcpFlags.FIN
    return [
        pkt(t0, S, sport, seq=1000, egress=egress),
        pkt(t0 + 0.001, S | A, sport, seq=5000, ack=1001, egress=egress, direction=Direction.VIP_TO_CLIENT),
        pkt(t0 + 0.002, A, sport, seq=1001, ack=5001, egress=egress),
        pkt(t0 + 0.003, P | A, sport, plen=request, seq=1001, ack=5001, egress=egress),
        pkt(t0 + 0.010, P | A, sport, plen=1200, seq=5001, ack=1001 + request, egress=egress,
            direction=Direction.VIP_TO_CLIENT),
        pkt(t0 + 0.011, A, sport, seq=1001 + request, ack=6201, egress=egress),
        pkt(t0 + 0.020, F | A, sport, seq=1001 + request, ack=6201, egress=egress),
    ]
