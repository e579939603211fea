"""Glue between the flow table and a VIP region: the data-plane loop."""

from __future__ import annotations

from ..flow_table import FlowTable
from ..store import VipRegion


class DataPlane:
    """Feeds packets through a flow table into a region.

    Egress blocks are activated on first sight. :meth:`tick` publishes the
    counter caches and sweeps idle flows every ``expire_every`` seconds.
    """

    def __init__(self, region: VipRegion, table: FlowTable | None = None, expire_every: float = 1.0):
        self.region = region
        self.table = table if table is not None else FlowTable()
        self.expire_every = expire_every
        self._next_sweep = expire_every
        self.n_packets = 0

    def ensure_egress(self, i: int) -> None:
        if not self.region.is_active(i):
            self.region.add_egress(i)

    def process(self, ev) -> None:
        if ev.egress_id is not None and not self.region.is_active(ev.egress_id):
            self.region.add_egress(ev.egress_id)
        apply = self.region.apply_emission
        for em in self.table.on_packet(ev):
            apply(em)
        self.n_packets += 1

    def tick(self, now: float) -> None:
        if now >= self._next_sweep:
            for em in self.table.expire(now):
                self.region.apply_emission(em)
            self._next_sweep = now + self.expire_every
        for i in self.region.active_egresses():
            self.region.publish_counters(i)

    def frames(self, now: float) -> dict:
        return {i: self.region.read_latest(i, now) for i in self.region.active_egresses()}
