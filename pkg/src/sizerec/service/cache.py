"""Bounded LRU map from encoded-history hash to cached history representation."""

from __future__ import annotations

import hashlib
import threading
from collections import OrderedDict
from typing import Callable

import numpy as np


def history_key(version: str, hist_ids: np.ndarray, day_offsets: np.ndarray) -> str:
    """Content hash of a truncated, encoded history (never the user id)."""
    h = hashlib.sha256(version.encode())
    for arr in (hist_ids, day_offsets):
        arr = np.ascontiguousarray(arr, dtype=np.int64)
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()[:32]


class EmbeddingCache:
    def __init__(self, capacity: int = 10_000):
        if capacity < 0:
            raise ValueError("capacity must be >= 0")
        self.capacity = capacity
        self._data: OrderedDict[str, object] = OrderedDict()
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def __len__(self):
        with self._lock:
            return len(self._data)

    def get(self, key: str):
        with self._lock:
            if key not in self._data:
                return None
            self._data.move_to_end(key)
            return self._data[key]

    def get_or_insert(self, key: str, compute: Callable[[], object]) -> tuple[object, bool]:
        """Return (value, hit). Concurrent misses on one key all see the first stored value."""
        with self._lock:
            if key in self._data:
                self._data.move_to_end(key)
                self.hits += 1
                return self._data[key], True
            self.misses += 1
        value = compute()
        with self._lock:
            if key in self._data:
                self._data.move_to_end(key)
                return self._data[key], False
            if self.capacity:
                self._data[key] = value
                while len(self._data) > self.capacity:
                    self._data.popitem(last=False)
        return value, False

    def clear(self):
        with self._lock:
            self._data.clear()
            self.hits = self.misses = 0
