"""Fixed-size reservoir of (timestamp, value) samples without rejection.

Every arrival overwrites one uniformly chosen slot, so the buffer always
holds the newest sample and older samples survive ``j`` later arrivals with
probability ``(1 - 1/k) ** j``.
"""

from __future__ import annotations

import numpy as np

SLOT_DTYPE = np.dtype("<f4")
SLOT_BYTES = 8


class RandomWords:
    """Buffered stream of 64-bit words from a PCG64 generator."""

    def __init__(self, seed=None, batch: int = 4096):
        if isinstance(seed, np.random.Generator):
            self._gen = seed
        else:
            self._gen = np.random.Generator(np.random.PCG64(seed))
        self._batch = batch
        self._words: list = []
        self._pos = 0

    def word(self) -> int:
        if self._pos >= len(self._words):
            self._words = self._gen.integers(0, 1 << 64, self._batch, dtype=np.uint64, endpoint=False).tolist()
            self._pos = 0
        w = self._words[self._pos]
        self._pos += 1
        return w

    def index(self, k: int) -> int:
        # multiply-shift: floor(w * k / 2**64), bias below k / 2**64
        return (self.word() * k) >> 64


class Reservoir:
    """k-slot reservoir; ``buffer`` may be a float32 view into shared memory."""

    def __init__(self, k: int = 128, rng: RandomWords | None = None, buffer: np.ndarray | None = None):
        if k < 1:
            raise ValueError("reservoir capacity must be >= 1")
        self.k = k
        self.rng = rng if rng is not None else RandomWords()
        if buffer is None:
            buffer = np.zeros((k, 2), dtype=SLOT_DTYPE)
        if buffer.shape != (k, 2) or buffer.dtype != SLOT_DTYPE:
            raise ValueError(f"buffer must be ({k}, 2) little-endian float32")
        self.slots = buffer
        self._flat = buffer.reshape(-1)
        self.inserted = 0

    def insert(self, ts: float, value: float) -> int:
        idx = self.rng.index(self.k)
        flat = self._flat
        flat[2 * idx] = ts
        flat[2 * idx + 1] = value
        self.inserted += 1
        return idx

    def snapshot(self) -> np.ndarray:
        return self.slots.copy()

    def to_bytes(self) -> bytes:
        return self.slots.tobytes()

    def clear(self) -> None:
        self.slots[:] = 0
        self.inserted = 0

