"""glibc allocator tuning for the training loop.

Training allocates and frees multi-megabyte activations every iteration.
With glibc's defaults each of those goes through mmap/munmap and the pages
are faulted in again on every step, which costs about a third of the
iteration time. Raising the mmap and trim thresholds keeps them on the heap.
Set ``RRF_NO_MALLOPT=1`` to leave the allocator alone.
"""

import ctypes
import ctypes.util
import os
import sys

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3
_done = False


def tune_allocator() -> bool:
    """Apply the thresholds once per process; return True if applied."""
    global _done
    if _done:
        return True
    if not sys.platform.startswith("linux") or os.environ.get("RRF_NO_MALLOPT"):
        return False
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6")
        mallopt = libc.mallopt
    except (OSError, AttributeError):
        return False
    ok = mallopt(_M_MMAP_THRESHOLD, 1 << 30) and mallopt(_M_TRIM_THRESHOLD, (1 << 31) - 1)
    _done = bool(ok)
    return _done
