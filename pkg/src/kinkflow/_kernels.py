"""Compiled band-matrix kernels acting on row-major dense right-hand sides.

Band matrices use the ``ab[w + i - j, j] = a[i, j]`` layout of
:mod:`kinkflow.banded`. Right-hand sides are C-contiguous ``(n, m)`` arrays, so
every elementary operation is a contiguous row update.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def band_matmat(ab, x):
    w = (ab.shape[0] - 1) // 2
    n, m = x.shape
    out = np.zeros((n, m))
    for i in range(n):
        lo = max(0, i - w)
        hi = min(n - 1, i + w)
        for j in range(lo, hi + 1):
            c = ab[w + i - j, j]
            if c != 0.0:
                for k in range(m):
                    out[i, k] += c * x[j, k]
    return out


@njit(cache=True)
def band_lu(ab):
    """Partial-pivoting LU of a square band matrix with bandwidth ``w``.

    Returns ``(lu, piv)`` with ``lu`` of shape ``(3w+1, n)``: rows ``0..2w``
    hold ``U`` (upper bandwidth ``2w`` after fill-in) as ``lu[2w + i - j, j]``,
    rows ``2w+1..3w`` hold the multipliers ``L[i, j]`` at ``lu[2w + i - j, j]``.
    """
    w = (ab.shape[0] - 1) // 2
    n = ab.shape[1]
    ku = 2 * w
    lu = np.zeros((3 * w + 1, n))
    lu[w:, :] = ab
    piv = np.empty(n, dtype=np.int64)
    for k in range(n):
        last = min(n - 1, k + w)
        p = k
        best = abs(lu[ku, k])
        for i in range(k + 1, last + 1):
            v = abs(lu[ku + i - k, k])
            if v > best:
                best = v
                p = i
        piv[k] = p
        if best == 0.0:
            return lu, piv, k + 1
        jmax = min(n - 1, k + ku)
        if p != k:
            for j in range(k, jmax + 1):
                a = lu[ku + k - j, j]
                lu[ku + k - j, j] = lu[ku + p - j, j]
                lu[ku + p - j, j] = a
        inv = 1.0 / lu[ku, k]
        for i in range(k + 1, last + 1):
            lu[ku + i - k, k] *= inv
        for j in range(k + 1, jmax + 1):
            ukj = lu[ku + k - j, j]
            if ukj != 0.0:
                for i in range(k + 1, last + 1):
                    lu[ku + i - j, j] -= lu[ku + i - k, k] * ukj
    return lu, piv, 0


@njit(cache=True)
def band_lu_solve(lu, piv, x):
    """Overwrite the row-major ``x`` with ``A^-1 x`` given :func:`band_lu` output."""
    w = (lu.shape[0] - 1) // 3
    ku = 2 * w
    n, m = x.shape
    for k in range(n):
        p = piv[k]
        if p != k:
            for c in range(m):
                t = x[k, c]
                x[k, c] = x[p, c]
                x[p, c] = t
        for i in range(k + 1, min(n - 1, k + w) + 1):
            l = lu[ku + i - k, k]
            if l != 0.0:
                for c in range(m):
                    x[i, c] -= l * x[k, c]
    for i in range(n - 1, -1, -1):
        for j in range(i + 1, min(n - 1, i + ku) + 1):
            u = lu[ku + i - j, j]
            if u != 0.0:
                for c in range(m):
                    x[i, c] -= u * x[j, c]
        inv = 1.0 / lu[ku, i]
        for c in range(m):
            x[i, c] *= inv
    return x


@njit(cache=True)
def band_mul(a, b):
    """Product of two band matrices; bandwidths add and no trimming is done."""
    wa = (a.shape[0] - 1) // 2
    wb = (b.shape[0] - 1) // 2
    n = a.shape[1]
    w = wa + wb
    c = np.zeros((2 * w + 1, n))
    for j in range(n):
        for k in range(max(0, j - wb), min(n - 1, j + wb) + 1):
            bkj = b[wb + k - j, j]
            if bkj == 0.0:
                continue
            for i in range(max(0, k - wa), min(n - 1, k + wa) + 1):
                c[w + i - j, j] += a[wa + i - k, k] * bkj
    return c


@njit(cache=True)
def band_comm(a, b):
    return band_mul(a, b) - band_mul(b, a)


@njit(cache=True)
def _acc(out, coef, x):
    w = (out.shape[0] - 1) // 2
    wx = (x.shape[0] - 1) // 2
    for r in range(2 * wx + 1):
        for j in range(out.shape[1]):
            out[w - wx + r, j] += coef * x[r, j]


@njit(cache=True)
def magnus_omega(a, b, delta, comm, u, h, q):
    """Truncated Magnus exponent of ``H(u) = (1-u) a + u b`` over a step ``h`` centred at ``u``.

    ``q`` is the number of Pade roots, so the series is kept through ``h^(2q-1)``.
    """
    hm = ((1.0 - u) * a + u * b) * h
    if q == 1:
        return hm
    d = delta * h**2
    c = comm * h**3
    wo = 2 if q == 2 else (4 if q == 3 else 6)
    out = np.zeros((2 * wo + 1, a.shape[1]))
    _acc(out, 1.0, hm)
    _acc(out, -1.0 / 12.0, c)
    if q >= 3:
        dc = band_comm(d, c)
        hhc = band_comm(hm, band_comm(hm, c))
        _acc(out, -1.0 / 240.0, dc)
        _acc(out, 1.0 / 720.0, hhc)
        if q >= 4:
            _acc(out, -1.0 / 6720.0, band_comm(d, dc))
            _acc(out, -1.0 / 30240.0, band_comm(hm, band_comm(hm, dc)))
            _acc(out, 1.0 / 7560.0, band_comm(d, hhc))
            _acc(out, -1.0 / 30240.0, band_comm(hm, band_comm(hm, hhc)))
    return out


@njit(cache=True)
def cayley_apply(omega, s, lin_re, quad_re, quad_mod2):
    """``R(omega) s`` for the product of Cayley-type factors; ``s`` is row-major.

    Returns ``(result, info)`` with ``info > 0`` when a shifted matrix is singular.
    """
    w = (omega.shape[0] - 1) // 2
    for k in range(lin_re.shape[0]):
        re = lin_re[k]
        m = -omega
        for j in range(m.shape[1]):
            m[w, j] += re
        lu, piv, info = band_lu(m)
        if info:
            return s, info
        x = band_lu_solve(lu, piv, s.copy())
        # (re + omega)(re - omega)^-1 = 1 + 2 omega (re - omega)^-1: small correction, no cancellation
        s = s + 2.0 * band_matmat(omega, x)
    if quad_re.shape[0]:
        w2 = band_mul(omega, omega)
        for k in range(quad_re.shape[0]):
            re = quad_re[k]
            den = w2.copy()
            _acc(den, -2.0 * re, omega)
            for j in range(den.shape[1]):
                den[2 * w, j] += quad_mod2[k]
            lu, piv, info = band_lu(den)
            if info:
                return s, info
            x = band_lu_solve(lu, piv, s.copy())
            s = s + 4.0 * re * band_matmat(omega, x)
    return s, 0


@njit(cache=True)
def cm_run(a, b, delta, comm, q, lin_re, quad_re, quad_mod2, s, u1, h, k0, k1):
    """Steps ``k0..k1-1`` of the fixed grid ``u1 + k h``; returns ``(s, failed_step or -1)``."""
    for k in range(k0, k1):
        om = magnus_omega(a, b, delta, comm, u1 + (k + 0.5) * h, h, q)
        s, info = cayley_apply(om, s, lin_re, quad_re, quad_mod2)
        if info:
            return s, k
    return s, -1
