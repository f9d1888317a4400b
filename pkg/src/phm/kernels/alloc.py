"""Temporary-buffer accounting for the structured-matvec kernels.

Every scratch or output array a kernel allocates goes through
:func:`tracked_empty`.  Inside a :func:`track_allocations` region the log
records the cumulative bytes requested, which upper-bounds the peak
footprint of a single kernel invocation (nothing is freed mid-call).
Outside a region the helper is a plain ``np.empty``.
"""

from contextlib import contextmanager

import numpy as np

_active = None


class AllocationLog:
    """Byte and call counts for one tracked region."""

    def __init__(self):
        self.total_bytes = 0
        self.calls = 0

    def __repr__(self):
        return f"AllocationLog(total_bytes={self.total_bytes}, calls={self.calls})"


def tracked_empty(shape, dtype=np.float64) -> np.ndarray:
    arr = np.empty(shape, dtype=dtype)
    if _active is not None:
        _active.total_bytes += arr.nbytes
        _active.calls += 1
    return arr


@contextmanager
def track_allocations():
    """Collect kernel allocations; yields the live :class:`AllocationLog`."""
    global _active
    log = AllocationLog()
    prev = _active
    _active = log
    try:
        yield log
    finally:
        _active = prev
