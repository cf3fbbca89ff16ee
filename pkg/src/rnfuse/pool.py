"""Per-iteration array recycling for the training hot path.

Under this sandbox's kernel, every large fresh allocation pays a page-fault
tax that never amortizes (the allocator's alloc/free churn keeps returning
pages to the OS). Training builds an identically-shaped graph every
iteration, so the fix is explicit: ops draw their output buffers from a
pool keyed by (shape, dtype), and the trainer calls ``step()`` once per
iteration to make every previously issued buffer reusable again.

The pool is disabled by default; plain ``np.empty`` semantics apply
everywhere else. While enabled, arrays issued during iteration k are only
valid until ``step()`` is called for iteration k+1, so anything that must
survive an iteration gets copied out by the caller.
"""

from __future__ import annotations

import numpy as np


class ArrayPool:
    def __init__(self):
        self.enabled = False
        self._known = {}
        self._free = {}

    def empty(self, shape, dtype):
        if not self.enabled:
            return np.empty(shape, dtype)
        if not isinstance(shape, tuple):
            shape = tuple(shape) if np.iterable(shape) else (shape,)
        key = (shape, np.dtype(dtype).char)
        free = self._free.get(key)
        if free:
            return free.pop()
        arr = np.empty(shape, dtype)
        self._known.setdefault(key, []).append(arr)
        return arr

    def empty_like(self, a):
        return self.empty(a.shape, a.dtype)

    def step(self):
        """Recycle every buffer issued so far (previous iteration's graph)."""
        for key, arrs in self._known.items():
            self._free[key] = list(arrs)

    def clear(self):
        self._known.clear()
        self._free.clear()

    def enable(self):
        self.enabled = True

    def disable(self):
        self.enabled = False
        self.clear()


POOL = ArrayPool()


def empty(shape, dtype):
    return POOL.empty(shape, dtype)


def empty_like(a):
    return POOL.empty(a.shape, a.dtype)
