"""Scoring kernels with a compiled fast path.

The Cython extension is preferred when built; otherwise the NumPy
implementation takes over with identical semantics. ``BACKEND`` records
which one is active; ``benchmarks/bench_kernels.py`` compares them.
"""

from . import _numpy as numpy_backend

try:
    from . import _scan as cython_backend

    topk_scan = cython_backend.topk_scan
    assign_nearest = cython_backend.assign_nearest
    BACKEND = "cython"
except ImportError:  # extension not built; pure NumPy fallback
    cython_backend = None
    topk_scan = numpy_backend.topk_scan
    assign_nearest = numpy_backend.assign_nearest
    BACKEND = "numpy"

__all__ = ["topk_scan", "assign_nearest", "BACKEND", "numpy_backend", "cython_backend"]
