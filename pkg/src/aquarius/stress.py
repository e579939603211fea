"""Two-thread exchange stress: one publisher, one reader, one region.

The publisher writes counter snapshot ``p`` as ``counters[j] = p * (j + 1)``
and publishes it; the reader loops :meth:`VipRegion.read_latest` and checks
that every frame it gets back is exactly one of those snapshots. A frame
mixing two snapshots is counted as torn.
"""

from __future__ import annotations

import os
import sys
import tempfile
import threading
import time
from dataclasses import asdict, dataclass

import numpy as np

from .store import RegionConfig, VipRegion


@dataclass
class StressReport:
    publishes: int
    reads: int
    empty: int  # reads before the first publish
    torn: int
    seconds: float
    checked: bool

    def to_dict(self) -> dict:
        return asdict(self)


def _unchecked_read(region: VipRegion, i: int):
    # newest buffer copied without the sequence re-check; used as a negative control
    first = region._block(i) + region._cmb
    stride = region._cstride
    buf, seq = region._newest(first, stride)
    time.sleep(0)
    at = first + buf * stride
    return seq, np.array(region._u32[at + 1:at + stride])


def run_stress(publishes: int = 1_000_000, switch_interval: float = 1e-5, chunk: int = 0,
               checked: bool = True, path=None, egress: int = 0) -> StressReport:
    """Run the publisher and reader threads until ``publishes`` snapshots went out.

    ``chunk`` > 0 splits each payload copy into pieces of that many words so
    that thread switches can land in the middle of a publish. ``checked``
    False swaps in a reader without the sequence re-check.
    """
    if publishes < 1:
        raise ValueError("publishes must be >= 1")
    cfg = RegionConfig()
    base = np.arange(1, cfg.n_counters + 1, dtype=np.uint64)
    mask = np.uint64(0xFFFFFFFF)
    with tempfile.TemporaryDirectory(prefix="aquarius-stress-") as tmp:
        region = VipRegion.create(cfg, path or os.path.join(tmp, "stress.bin"))
        try:
            region.add_egress(egress)
            region._chunk = chunk
            lo = region._block(egress)
            cache = region._u32[lo:lo + cfg.n_counters]
            done = threading.Event()
            stats = {"reads": 0, "empty": 0, "torn": 0}

            def writer():
                for p in range(1, publishes + 1):
                    cache[:] = (base * np.uint64(p)) & mask
                    region.publish_counters(egress)
                done.set()

            def reader():
                reads = empty = torn = 0
                while not done.is_set():
                    if checked:
                        fr = region.read_latest(egress)
                        seq, counters = fr.seq, fr.counters
                    else:
                        seq, counters = _unchecked_read(region, egress)
                    reads += 1
                    p = int(counters[0])
                    if seq == 0 and p == 0:
                        empty += 1
                    elif not (1 <= p <= publishes and np.array_equal(counters, (base * np.uint64(p)) & mask)):
                        torn += 1
                stats.update(reads=reads, empty=empty, torn=torn)

            old = sys.getswitchinterval()
            sys.setswitchinterval(switch_interval)
            t0 = time.perf_counter()
            try:
                threads = [threading.Thread(target=writer), threading.Thread(target=reader)]
                for t in threads:
                    t.start()
                for t in threads:
                    t.join()
            finally:
                sys.setswitchinterval(old)
            secs = time.perf_counter() - t0
            del cache
        finally:
            region.close()
    return StressReport(publishes, stats["reads"], stats["empty"], stats["torn"], secs, checked)

