"""Backend selection for the hot forward-recursion loop.

The compiled extension is used when it imports; setting
``SSM_MIRFS_PURE_PYTHON=1`` forces the NumPy fallback.
"""

import os

import numpy as np

from . import _kernels_py

if os.environ.get("SSM_MIRFS_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

BACKENDS = {"python": _kernels_py}
if BACKEND == "cython":
    BACKENDS["cython"] = _impl


def forward(trans, emis, init, weights, keep=False, backend=None):
    """Run the normalized recursion; see ``_kernels_py.forward``."""
    impl = _impl if backend is None else BACKENDS[backend]
    return impl.forward(
        np.ascontiguousarray(trans, dtype=float),
        np.ascontiguousarray(emis, dtype=float),
        np.ascontiguousarray(init, dtype=float),
        np.ascontiguousarray(weights, dtype=float),
        keep,
    )


def forward_affine(lo, step, weights, emis, init, intercepts, slope, keep=False, backend=None, spline=True):
    """Recursion for a deterministic affine state map; see ``_kernels_py.forward_affine``."""
    impl = _impl if backend is None else BACKENDS[backend]
    return impl.forward_affine(
        float(lo),
        float(step),
        np.ascontiguousarray(weights, dtype=float),
        np.ascontiguousarray(emis, dtype=float),
        np.ascontiguousarray(init, dtype=float),
        np.ascontiguousarray(intercepts, dtype=float),
        float(slope),
        keep,
        spline,
    )
