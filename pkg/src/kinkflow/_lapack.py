"""ctypes bridge to LAPACK ``dlasq1`` (dqds) through scipy's Cython capsules.

``dlasq1`` returns the singular values of a real bidiagonal matrix to high
relative accuracy, which keeps exponentially small single-particle energies
meaningful far below ``eps * ||M||``.
"""

from __future__ import annotations

import ctypes

import numpy as np
from scipy.linalg import cython_lapack

_P = ctypes.POINTER
_dbl = _P(ctypes.c_double)
_int = _P(ctypes.c_int)


def _load(name: str):
    capsule = cython_lapack.__pyx_capi__[name]
    get_name = ctypes.pythonapi.PyCapsule_GetName
    get_name.restype = ctypes.c_char_p
    get_name.argtypes = [ctypes.py_object]
    get_ptr = ctypes.pythonapi.PyCapsule_GetPointer
    get_ptr.restype = ctypes.c_void_p
    get_ptr.argtypes = [ctypes.py_object, ctypes.c_char_p]
    return get_ptr(capsule, get_name(capsule))


try:
    _dlasq1 = ctypes.CFUNCTYPE(None, _int, _dbl, _dbl, _dbl, _int)(_load("dlasq1"))
except (KeyError, AttributeError, ValueError):  # pragma: no cover - exotic scipy builds
    _dlasq1 = None

HAVE_DQDS = _dlasq1 is not None


def bidiagonal_singular_values(diag, offdiag) -> tuple[np.ndarray, int]:
    """Singular values (descending) of the upper bidiagonal ``(diag, offdiag)``.

    Returns ``(values, info)`` with LAPACK's ``info`` code; ``info > 0`` means
    dqds failed to converge.
    """
    if _dlasq1 is None:  # pragma: no cover
        raise RuntimeError("dlasq1 unavailable")
    d = np.array(diag, dtype=np.float64)
    n = len(d)
    e = np.zeros(max(n, 1), dtype=np.float64)
    e[: len(offdiag)] = offdiag
    work = np.zeros(4 * max(n, 1), dtype=np.float64)
    nn = ctypes.c_int(n)
    info = ctypes.c_int(0)
    _dlasq1(
        ctypes.byref(nn),
        d.ctypes.data_as(_dbl),
        e.ctypes.data_as(_dbl),
        work.ctypes.data_as(_dbl),
        ctypes.byref(info),
    )
    return d, info.value
