"""Kernel dispatch: compiled extension when available, numpy/scipy otherwise.

Set ``RIGIDLAB_PURE_PYTHON=1`` before import to force the fallback.
``BACKEND`` records which one was picked.
"""
import os

import numpy as np

from . import _pykernels

if os.environ.get("RIGIDLAB_PURE_PYTHON", "").strip() not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"

so_residual_2d = _impl.so_residual_2d
grid_dijkstra = _impl.grid_dijkstra


def so_residual(B):
    """Distance to SO(d) and a nearest rotation for a stack ``(n, d, d)``.

    ``d == 2`` goes through the closed-form kernel; other dimensions use a
    batched SVD with the smallest singular direction flipped when needed.
    """
    B = np.asarray(B, dtype=float)
    if B.shape[-1] == 2:
        return so_residual_2d(B)
    U, _, Vt = np.linalg.svd(B)
    s = np.sign(np.linalg.det(U) * np.linalg.det(Vt))
    s[s == 0] = 1.0
    U[:, :, -1] *= s[:, None]
    R = U @ Vt
    D = B - R
    return np.sqrt(np.einsum("nij,nij->n", D, D)), R
