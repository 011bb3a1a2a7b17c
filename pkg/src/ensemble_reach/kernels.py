"""Kernel backend selection.

Set ``ENSEMBLE_REACH_PURE_PYTHON=1`` to force the pure-Python kernels.
"""
import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py
if os.environ.get("ENSEMBLE_REACH_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py


def rasterize_disks(xs, ys, x0, y0, hx, hy, nx, ny, radius, impl=None):
    impl = impl or _impl
    return impl.rasterize_disks(np.ascontiguousarray(xs, dtype=float),
                                np.ascontiguousarray(ys, dtype=float),
                                float(x0), float(y0), float(hx), float(hy),
                                int(nx), int(ny), float(radius))


def flood_reach(blocked, impl=None):
    impl = impl or _impl
    return impl.flood_reach(np.ascontiguousarray(blocked, dtype=np.uint8))


def cluster_radius(points, radius, impl=None):
    """Single-linkage cluster labels for complex ``points`` at link distance ``radius``."""
    impl = impl or _impl
    pts = np.asarray(points, dtype=complex).ravel()
    if pts.size == 0:
        return np.zeros(0, dtype=np.intp)
    return np.asarray(impl.cluster_radius(np.ascontiguousarray(pts.real),
                                          np.ascontiguousarray(pts.imag),
                                          float(radius)))
