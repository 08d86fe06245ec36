"""End-of-anneal ground-state probability from the Majorana propagator.

With ``S`` the Majorana propagator over the whole sweep,

    p0 = sqrt(|det( (S A S^T + B) / 2 )|)

where ``A`` pairs Majoranas ``(2k, 2k+1)`` (vacuum of the transverse-field
modes) and ``B`` pairs ``(2k-1, 2k)`` plus the antiperiodic corner ``(0, 2n-1)``
(kink modes of the final classical chain).
"""

from __future__ import annotations

import logging
import math
import warnings

import numpy as np

from .errors import NumericError

log = logging.getLogger(__name__)

ROUNDOFF_BAND = 1e-9
FAILURE_BAND = 1e-6


def pairing_matrices(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Dense antisymmetric ``A`` and ``B`` for ``n`` spins (dimension ``2n``)."""
    dim = 2 * n
    a = np.zeros((dim, dim))
    b = np.zeros((dim, dim))
    k = np.arange(n)
    a[2 * k, 2 * k + 1] = 1.0
    a[2 * k + 1, 2 * k] = -1.0
    k = np.arange(1, n)
    b[2 * k - 1, 2 * k] = 1.0
    b[2 * k, 2 * k - 1] = -1.0
    b[0, dim - 1] = 1.0
    b[dim - 1, 0] = -1.0
    return a, b


def nambu_bases(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Maps from Majoranas to ``(a_0, a_0^+, a_1, ...)`` and ``(b_0, b_0^+, b_1, ...)``.

    Rows ``2k, 2k+1`` of the driver basis combine ``chi_{2k} -+ i chi_{2k+1}``;
    the kink basis combines ``chi_{2k-1} -+ i chi_{2k}`` and wraps ``chi_{2n-1}``
    into the first pair with antiperiodic sign.
    """
    dim = 2 * n
    driver = np.zeros((dim, dim), dtype=complex)
    kink = np.zeros((dim, dim), dtype=complex)
    for k in range(n):
        driver[2 * k, 2 * k] = driver[2 * k + 1, 2 * k] = 0.5
        driver[2 * k, 2 * k + 1] = -0.5j
        driver[2 * k + 1, 2 * k + 1] = 0.5j
    kink[0, 0], kink[0, dim - 1] = -0.5j, -0.5
    kink[1, 0], kink[1, dim - 1] = 0.5j, -0.5
    for k in range(1, n):
        kink[2 * k, 2 * k - 1] = kink[2 * k + 1, 2 * k - 1] = 0.5
        kink[2 * k, 2 * k] = -0.5j
        kink[2 * k + 1, 2 * k] = 0.5j
    return driver, kink


def correlation_argument(s: np.ndarray) -> np.ndarray:
    """``(S A S^T + B) / 2`` assembled so that it is exactly antisymmetric."""
    dim = s.shape[0]
    p = s[:, 0::2] @ s[:, 1::2].T
    x = p - p.T
    x[np.arange(1, dim - 1, 2), np.arange(2, dim, 2)] += 1.0
    x[np.arange(2, dim, 2), np.arange(1, dim - 1, 2)] -= 1.0
    x[0, dim - 1] += 1.0
    x[dim - 1, 0] -= 1.0
    return 0.5 * x


def ground_state_probability(s) -> float:
    """Probability of the kink-free state after the sweep described by ``s``."""
    mat = getattr(s, "matrix", s)
    x = correlation_argument(np.asarray(mat, dtype=float))
    sign, logdet = np.linalg.slogdet(x)
    if not np.isfinite(logdet):
        if sign == 0:
            return 0.0
        raise NumericError("determinant evaluation failed")
    p0 = math.exp(0.5 * logdet)
    excess = max(p0 - 1.0, 0.0)
    if excess > FAILURE_BAND:
        raise NumericError(f"p0 = {p0!r} exceeds 1; propagator is not orthogonal")
    if excess > ROUNDOFF_BAND:
        warnings.warn(f"p0 = {p0!r} above 1 beyond roundoff; clamping", RuntimeWarning)
    return min(p0, 1.0)
