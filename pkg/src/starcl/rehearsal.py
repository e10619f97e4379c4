"""Reservoir-sampled replay buffer."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .netcore import Batch

class EmptyBufferError(RuntimeError):
    pass


@dataclass
class BufferEntry:
    features: np.ndarray
    label: int
    stored_logits: Optional[np.ndarray]
    insert_step: int


class ReplayBuffer:
    """Fixed-capacity store of ``(features, label, logits)`` rows.

    Every streamed item is offered to the reservoir, so after ``N`` items each
    one is retained with probability ``capacity / N``. The buffer owns its own
    generator; callers that must not disturb it pass their own ``rng`` to
    :meth:`draw`.
    """

    def __init__(self, capacity: int, rng: np.random.Generator):
        if capacity < 0:
            raise ValueError("capacity must be nonnegative")
        self.capacity = capacity
        self.rng = rng
        self.seen_count = 0
        self._features: Optional[np.ndarray] = None
        self._labels = np.zeros(capacity, dtype=np.int64)
        self._logits: Optional[np.ndarray] = None
        self._has_logits = np.zeros(capacity, dtype=bool)
        self._insert_step = np.zeros(capacity, dtype=np.int64)
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def _alloc(self, dim: int, num_classes: Optional[int]) -> None:
        if self._features is None:
            self._features = np.zeros((self.capacity, dim))
        if num_classes is not None and self._logits is None:
            self._logits = np.zeros((self.capacity, num_classes))

    def _write(self, slot: int, x, y, z, step: int) -> None:
        self._features[slot] = x
        self._labels[slot] = y
        self._has_logits[slot] = z is not None
        if z is not None:
            self._logits[slot] = z
        self._insert_step[slot] = step

    def update(self, batch: Batch, logits: Optional[np.ndarray] = None) -> None:
        """Stream every row of ``batch`` through reservoir sampling."""
        if len(batch) == 0:
            return
        if logits is None:
            logits = batch.logits
        self._alloc(batch.features.shape[1], None if logits is None else logits.shape[1])
        n = len(batch)
        n_fill = min(max(self.capacity - self.seen_count, 0), n)
        for i in range(n_fill):
            self._write(self._size, batch.features[i], batch.labels[i],
                        None if logits is None else logits[i], self.seen_count)
            self._size += 1
            self.seen_count += 1
        if n_fill == n:
            return
        # item with 0-based stream position p survives into slot j ~ U{0..p} iff j < capacity
        positions = self.seen_count + np.arange(n - n_fill)
        slots = self.rng.integers(0, positions + 1)
        rows = n_fill + np.flatnonzero(slots < self.capacity)
        slots = slots[slots < self.capacity]
        # a slot hit twice keeps the later item, as a sequential pass would
        _, last = np.unique(slots[::-1], return_index=True)
        keep = len(slots) - 1 - last
        for r, j in zip(rows[keep], slots[keep]):
            self._write(int(j), batch.features[r], batch.labels[r],
                        None if logits is None else logits[r], int(positions[r - n_fill]))
        self.seen_count = int(positions[-1]) + 1

    def entry(self, i: int) -> BufferEntry:
        if not 0 <= i < self._size:
            raise IndexError(i)
        z = self._logits[i].copy() if self._has_logits[i] else None
        return BufferEntry(self._features[i].copy(), int(self._labels[i]), z, int(self._insert_step[i]))

    def draw(self, n: int, rng: Optional[np.random.Generator] = None) -> Batch:
        """Sample ``n`` rows: without replacement when ``n <= len(self)``, else with."""
        if self._size == 0:
            raise EmptyBufferError("cannot draw from an empty replay buffer")
        rng = self.rng if rng is None else rng
        if n <= self._size:
            idx = rng.choice(self._size, size=n, replace=False)
        else:
            idx = rng.integers(0, self._size, size=n)
        return self.draw_indices(idx)

    def contents(self) -> Batch:
        """All occupied rows in slot order (logits only if every row has them)."""
        return self.draw_indices(np.arange(self._size))

    def draw_indices(self, idx: np.ndarray) -> Batch:
        if self._features is None:
            return Batch(np.zeros((0, 0)), np.zeros(0, dtype=np.int64))
        logits = None
        if self._logits is not None and self._has_logits[idx].all():
            logits = self._logits[idx].copy()
        return Batch(self._features[idx].copy(), self._labels[idx].copy(), logits)

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Occupied rows as named arrays, for checkpointing."""
        out = {
            "buffer.labels": self._labels[:self._size].copy(),
            "buffer.has_logits": self._has_logits[:self._size].copy(),
            "buffer.insert_step": self._insert_step[:self._size].copy(),
        }
        if self._features is not None:
            out["buffer.features"] = self._features[:self._size].copy()
        if self._logits is not None:
            out["buffer.logits"] = self._logits[:self._size].copy()
        return out

    def state_meta(self) -> dict:
        return {"capacity": self.capacity, "seen_count": self.seen_count,
                "size": self._size, "rng_state": self.rng.bit_generator.state}

    @classmethod
    def from_state(cls, meta: dict, arrays: dict[str, np.ndarray]) -> "ReplayBuffer":
        bitgen = getattr(np.random, meta["rng_state"]["bit_generator"])()
        bitgen.state = meta["rng_state"]
        buf = cls(int(meta["capacity"]), np.random.Generator(bitgen))
        buf.seen_count = int(meta["seen_count"])
        size = int(meta["size"])
        buf._size = size
        if "buffer.features" in arrays:
            buf._alloc(arrays["buffer.features"].shape[1],
                       arrays["buffer.logits"].shape[1] if "buffer.logits" in arrays else None)
            buf._features[:size] = arrays["buffer.features"]
            if "buffer.logits" in arrays:
                buf._logits[:size] = arrays["buffer.logits"]
        buf._labels[:size] = arrays["buffer.labels"]
        buf._has_logits[:size] = arrays["buffer.has_logits"]
        buf._insert_step[:size] = arrays["buffer.insert_step"]
        return buf
