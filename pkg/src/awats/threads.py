"""BLAS thread pinning.

The numeric kernels here work on small-to-medium matrices where OpenBLAS
threading loses to its own scheduling overhead, and two BLAS pools (numpy's
and scipy's bundled copies) oversubscribing the cores is disastrous. BLAS
parallelism also makes floating-point reductions depend on the thread
count, which would break run-to-run determinism. So every entry point pins
all loaded BLAS libraries to one thread; package-level parallelism (worker
pools over independent tasks) is handled separately and stays
schedule-independent.
"""

from __future__ import annotations

import ctypes
import logging
import os

log = logging.getLogger(__name__)

_pinned = False


def _candidate_libs():
    seen = set()
    try:
        with open("/proc/self/maps") as fh:
            for line in fh:
                path = line.split()[-1] if line.split() else ""
                name = os.path.basename(path)
                if "openblas" in name.lower() and path not in seen:
                    seen.add(path)
                    yield path
    except OSError:
        return


def pin_blas_threads(n: int = 1) -> None:
    """Set the thread count of every loaded OpenBLAS copy (idempotent)."""
    global _pinned
    if _pinned:
        return
    for path in _candidate_libs():
        try:
            lib = ctypes.CDLL(path, mode=ctypes.RTLD_GLOBAL)
        except OSError:
            continue
        for symbol in (
            "openblas_set_num_threads",
            "openblas_set_num_threads64_",
            "scipy_openblas_set_num_threads",
            "scipy_openblas_set_num_threads64_",
        ):
            fn = getattr(lib, symbol, None)
            if fn is not None:
                fn(ctypes.c_int(n))
                log.debug("pinned %s via %s to %d threads", path, symbol, n)
    _pinned = True
