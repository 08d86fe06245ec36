"""Square band matrices in LAPACK ``ab`` storage.

A matrix with equal lower and upper bandwidth ``w`` is stored as a
``(2w+1, n)`` array with ``ab[w + i - j, j] = a[i, j]``, the layout
``scipy.linalg.solve_banded`` expects. Slots that fall outside the matrix
(top-left and bottom-right corners of ``ab``) are kept at zero; products rely
on that.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import LinAlgError, solve_banded

from . import _kernels
from .errors import StepFailureError, WorkspaceError


def _real_matrix(ab: np.ndarray, x: np.ndarray) -> bool:
    return x.ndim == 2 and ab.dtype == np.float64 and x.dtype == np.float64


def bandwidth(ab: np.ndarray) -> int:
    return (ab.shape[0] - 1) // 2


def zeros(w: int, n: int, dtype=float) -> np.ndarray:
    return np.zeros((2 * w + 1, n), dtype=dtype)


def identity(n: int, w: int = 0) -> np.ndarray:
    ab = zeros(w, n)
    ab[w] = 1.0
    return ab


def from_dense(a: np.ndarray, w: int) -> np.ndarray:
    n = a.shape[0]
    ab = zeros(w, n, a.dtype)
    for o in range(-w, w + 1):
        if o >= 0:
            ab[w - o, o:] = np.diagonal(a, o)
        else:
            ab[w - o, : n + o] = np.diagonal(a, o)
    return ab


def to_dense(ab: np.ndarray) -> np.ndarray:
    w = bandwidth(ab)
    n = ab.shape[1]
    a = np.zeros((n, n), dtype=ab.dtype)
    for o in range(-w, w + 1):
        if abs(o) >= n:
            continue
        if o >= 0:
            a += np.diag(ab[w - o, o:], o)
        else:
            a += np.diag(ab[w - o, : n + o], o)
    return a


def pad(ab: np.ndarray, w: int) -> np.ndarray:
    """Embed ``ab`` into storage of (larger) bandwidth ``w``."""
    w0 = bandwidth(ab)
    if w0 == w:
        return ab
    if w0 > w:
        raise WorkspaceError(f"cannot shrink bandwidth {w0} to {w}")
    out = zeros(w, ab.shape[1], ab.dtype)
    out[w - w0 : w + w0 + 1] = ab
    return out


def add(*terms: tuple[float, np.ndarray]) -> np.ndarray:
    """Linear combination ``sum c_k X_k`` of band matrices with mixed bandwidths."""
    w = max(bandwidth(x) for _, x in terms)
    out = zeros(w, terms[0][1].shape[1], np.result_type(*(x for _, x in terms)))
    for c, x in terms:
        wx = bandwidth(x)
        out[w - wx : w + wx + 1] += c * x
    return out


def multiply(a: np.ndarray, b: np.ndarray, max_bw: int | None = None) -> np.ndarray:
    """Exact product of two band matrices; the result has bandwidth ``wa + wb``."""
    wa, wb = bandwidth(a), bandwidth(b)
    n = a.shape[1]
    if b.shape[1] != n:
        raise ValueError(f"dimension mismatch {n} vs {b.shape[1]}")
    wc = min(wa + wb, max(n - 1, 0))
    if max_bw is not None and wa + wb > max_bw:
        raise WorkspaceError(f"product bandwidth {wa + wb} exceeds workspace bound {max_bw}")
    # accumulate in the full width, trimming rows that can only hold zeros afterwards
    full = wa + wb
    c = zeros(full, n, np.result_type(a, b))
    for ob in range(-wb, wb + 1):
        if abs(ob) >= n:
            continue
        shift = full - wa - ob
        brow = b[wb - ob]
        if ob >= 0:
            c[shift : shift + 2 * wa + 1, ob:] += a[:, : n - ob] * brow[ob:]
        else:
            c[shift : shift + 2 * wa + 1, : n + ob] += a[:, -ob:] * brow[: n + ob]
    if wc < full:
        c = c[full - wc : full + wc + 1].copy()
    return c


def commutator(a: np.ndarray, b: np.ndarray, max_bw: int | None = None) -> np.ndarray:
    return multiply(a, b, max_bw) - multiply(b, a, max_bw)


def matmat(ab: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Band matrix times dense ``x`` (vector or matrix)."""
    if _real_matrix(ab, x):
        return _kernels.band_matmat(ab, np.ascontiguousarray(x))
    w = bandwidth(ab)
    n = ab.shape[1]
    xs = x.reshape(n, -1)
    out = ab[w][:, None] * xs
    for o in range(1, min(w, n - 1) + 1):
        out[: n - o] += ab[w - o, o:, None] * xs[o:]
        out[o:] += ab[w + o, : n - o, None] * xs[: n - o]
    return out.reshape(x.shape)


def solve(ab: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``a^-1 x`` by band LU with partial pivoting."""
    if _real_matrix(ab, x):
        lu, piv, info = _kernels.band_lu(np.ascontiguousarray(ab))
        if info:
            raise StepFailureError(f"band matrix is singular at pivot {info - 1}")
        return _kernels.band_lu_solve(lu, piv, np.array(x, order="C"))
    w = bandwidth(ab)
    try:
        return solve_banded((w, w), ab, x, check_finite=False)
    except (LinAlgError, ValueError) as exc:
        raise StepFailureError(f"banded solve failed: {exc}") from exc


def transpose(ab: np.ndarray) -> np.ndarray:
    w = bandwidth(ab)
    n = ab.shape[1]
    out = zeros(w, n, ab.dtype)
    for o in range(-w, w + 1):
        if abs(o) >= n:
            continue
        # a[i, i+o] moves to position (i+o, i), i.e. offset -o
        if o >= 0:
            out[w + o, : n - o] = ab[w - o, o:]
        else:
            out[w + o, -o:] = ab[w - o, : n + o]
    return out
