"""Single-particle spectrum of the fermionised annealing Hamiltonian.

After a Jordan-Wigner transformation the chain Hamiltonian at interpolation
point ``s`` is ``(i/2) chi^T M chi`` with ``M`` real, skew-symmetric and
tridiagonal. Its superdiagonal alternates between the transverse field
``1-s`` (positions ``2i, 2i+1``) and the bond terms ``s*J_k`` (positions
``2k-1, 2k``). The eigenvalues come in pairs ``+-i eps``; the ``eps`` are the
singular values of the bidiagonal matrix formed by the even (diagonal) and odd
(superdiagonal) entries, which we obtain with dqds to full relative accuracy.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal

from ._lapack import HAVE_DQDS, bidiagonal_singular_values
from .errors import NumericError, ValidationError
from .instance import ChainInstance, gamma_from_s

PRECISION_RATIO = 1e-14
GRID_POINTS = 256
S_RANGE = (0.05, 0.98)


@dataclass(frozen=True)
class BandedSkewGenerator:
    """Skew-symmetric tridiagonal matrix stored as its superdiagonal only."""

    superdiagonal: np.ndarray
    s: float = float("nan")
    scale: float = 1.0

    @property
    def dim(self) -> int:
        return len(self.superdiagonal) + 1

    @property
    def values(self) -> np.ndarray:
        return self.scale * np.asarray(self.superdiagonal)

    def bidiagonal(self) -> tuple[np.ndarray, np.ndarray]:
        v = self.values
        return v[0::2], v[1::2]

    def norm_bound(self) -> float:
        return 2.0 * float(np.max(np.abs(self.values), initial=0.0))

    def to_dense(self) -> np.ndarray:
        v = self.values
        return np.diag(v, 1) - np.diag(v, -1)

    def squared_blocks(self) -> tuple[np.ndarray, np.ndarray]:
        """The two symmetric tridiagonal blocks of ``-M^2`` (even and odd indices).

        With ``X = M[even, odd]`` (diagonal ``d``, subdiagonal ``-e``) the even
        block is ``X X^T`` and the odd block ``X^T X``; both have spectrum ``eps^2``.
        """
        d, e = self.bidiagonal()
        n = len(d)
        x = np.diag(d)
        x[np.arange(1, n), np.arange(n - 1)] = -e[: n - 1]
        if len(e) == n:  # odd dimension is impossible for a chain, kept for completeness
            raise ValueError("generator dimension must be even")
        return x @ x.T, x.T @ x


@dataclass(frozen=True)
class SpectrumResult:
    energies: np.ndarray
    s: float
    gap: float
    precision_loss: bool = False

    @property
    def ground_energy(self) -> float:
        return -float(np.sum(self.energies))


def build_generator(inst: ChainInstance, s: float, field: float = 1.0) -> BandedSkewGenerator:
    if not 0.0 <= s <= 1.0:
        raise ValidationError(f"interpolation point must lie in [0, 1], got {s}")
    n = inst.n_spins
    sup = np.empty(2 * n - 1)
    sup[0::2] = (1.0 - s) * field
    sup[1::2] = s * inst.couplings
    return BandedSkewGenerator(sup, s=s)


def _energies(gen: BandedSkewGenerator) -> tuple[np.ndarray, bool]:
    """Sorted energies and whether they carry full relative accuracy."""
    d, e = gen.bidiagonal()
    if HAVE_DQDS:
        vals, info = bidiagonal_singular_values(d, e)
        if info == 0:
            return np.sort(np.abs(vals)), True
        warnings.warn(f"dqds failed (info={info}); falling back to tridiagonal bisection")
    try:
        w = eigh_tridiagonal(np.zeros(gen.dim), gen.values, eigvals_only=True)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigensolver did not converge for dim={gen.dim}, s={gen.s}") from exc
    return np.sort(np.abs(w))[0::2], False


def single_particle_energies(gen: BandedSkewGenerator) -> SpectrumResult:
    eps, relative = _energies(gen)
    if not np.all(np.isfinite(eps)):
        raise NumericError(f"non-finite single-particle energies at s={gen.s}")
    gap = 2.0 * float(eps[0] + eps[1]) if len(eps) > 1 else 2.0 * float(eps[0])
    # only the absolute-accuracy fallback loses the smallest energies to roundoff
    loss = bool(not relative and eps[0] < PRECISION_RATIO * gen.norm_bound())
    return SpectrumResult(eps, gen.s, gap, loss)


def spectrum_at(inst: ChainInstance, s: float) -> SpectrumResult:
    return single_particle_energies(build_generator(inst, s))


def gap_at(inst: ChainInstance, s: float) -> float:
    """Gap to the second excited state, ``2 (eps_0 + eps_1)``."""
    return spectrum_at(inst, s).gap


def many_body_levels(energies) -> np.ndarray:
    """All ``2^n`` levels ``E_0 + 2 sum n_k eps_k``, sorted."""
    eps = np.asarray(energies, dtype=float)
    e0 = -eps.sum()
    occ = np.array(list(itertools.product((0, 1), repeat=len(eps))), dtype=float)
    return np.sort(e0 + 2.0 * occ @ eps)


@dataclass(frozen=True)
class GapResult:
    s_c: float
    gap: float
    multimodal: bool = False
    precision_loss: bool = False


def _golden(f, a: float, b: float, tol: float) -> tuple[float, float]:
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (c, fc) if fc < fd else (d, fd)


def minimum_gap(
    inst: ChainInstance,
    s_lo: float = S_RANGE[0],
    s_hi: float = S_RANGE[1],
    tol: float = 1e-7,
    n_grid: int = GRID_POINTS,
    multimodal_ratio: float = 1.1,
) -> GapResult:
    """Locate the minimum of ``2(eps_0 + eps_1)`` over ``s`` in ``[s_lo, s_hi]``.

    A coarse grid scan picks the best bracket, golden-section search refines
    it. If another, non-adjacent grid-local minimum lies within
    ``multimodal_ratio`` of the best one the result is flagged multimodal.
    """
    if not 0.0 < s_lo < s_hi < 1.0:
        raise ValidationError(f"need 0 < s_lo < s_hi < 1, got ({s_lo}, {s_hi})")
    grid = np.linspace(s_lo, s_hi, n_grid)
    results = [spectrum_at(inst, s) for s in grid]
    gaps = np.array([r.gap for r in results])
    i = int(np.argmin(gaps))

    interior = np.flatnonzero((gaps[1:-1] <= gaps[:-2]) & (gaps[1:-1] <= gaps[2:])) + 1
    rivals = [j for j in interior if abs(j - i) > 1 and gaps[j] <= multimodal_ratio * gaps[i]]

    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, n_grid - 1)]
    s_best, g_best = _golden(lambda s: gap_at(inst, s), lo, hi, tol)
    if g_best > gaps[i]:
        s_best, g_best = grid[i], gaps[i]
    loss = spectrum_at(inst, s_best).precision_loss
    return GapResult(float(s_best), float(g_best), bool(rivals), loss)


# --- random-walk picture of the low-lying spectrum -----------------------------


def griffiths_walk(inst: ChainInstance, gamma: float) -> np.ndarray:
    """``W(k) = sum_{i<k} ln J_i - k ln gamma`` for ``k = 1..n``."""
    j = inst.couplings
    if np.any(j <= 0) or gamma <= 0:
        raise ValidationError("walk needs positive couplings and field")
    k = np.arange(1, len(j) + 2)
    return np.concatenate(([0.0], np.cumsum(np.log(j)))) - k * math.log(gamma)


def _best_rise(w: np.ndarray) -> tuple[float, int, int]:
    lo, best, pair = 0, 0.0, (0, 0)
    for k in range(1, len(w)):
        if w[k] < w[lo]:
            lo = k
        elif w[k] - w[lo] > best:
            best, pair = w[k] - w[lo], (lo, k)
    return best, pair[0], pair[1]


def _best_two_rises(w: np.ndarray) -> tuple[float, tuple[int, int, int, int]]:
    """Largest ``W(b)-W(a) + W(d)-W(c)`` with ``a <= b <= c <= d``."""
    n = len(w)
    # prefix[k]: best single rise inside w[:k+1]
    prefix = np.zeros(n)
    pre_idx = [(0, 0)] * n
    lo, best, pair = 0, 0.0, (0, 0)
    for k in range(n):
        if w[k] < w[lo]:
            lo = k
        if w[k] - w[lo] > best:
            best, pair = w[k] - w[lo], (lo, k)
        prefix[k], pre_idx[k] = best, pair
    total, out = prefix[-1], (*pre_idx[-1], n - 1, n - 1)
    hi = n - 1
    for c in range(n - 1, 0, -1):
        if w[c] > w[hi]:
            hi = c
        cand = w[hi] - w[c] + prefix[c]
        if cand > total:
            total, out = cand, (*pre_idx[c], c, hi)
    return float(total), out


@dataclass(frozen=True)
class GriffithsEstimate:
    eps0: float
    eps1: float
    extrema: tuple[float, float, float, float]
    positions: tuple[int, int, int, int]
    below_critical: bool
    degenerate: bool


def griffiths_estimate(inst: ChainInstance, gamma: float) -> GriffithsEstimate:
    """Dominant-term estimate of the two smallest single-particle energies.

    The largest rise of the walk sets ``eps_0 ~ exp(-R1)``; the best pair of
    disjoint rises sets ``eps_0 eps_1 ~ exp(-R2)``. Labelling the extremal
    points of that pair ``W1..W4`` left to right reproduces both regimes: for
    ``gamma`` below the crossover ``W4 > W2`` and ``eps_1 ~ exp(-(W2-W3))``,
    above it ``eps_1 ~ exp(-(W4-W3))``.
    """
    w = griffiths_walk(inst, gamma)
    r1, _, _ = _best_rise(w)
    r2, (a, b, c, d) = _best_two_rises(w)
    ext = (float(w[a]), float(w[b]), float(w[c]), float(w[d]))
    degenerate = len({a, b, c, d}) < 4 or a == b or c == d
    return GriffithsEstimate(
        eps0=math.exp(-r1),
        eps1=math.exp(-(r2 - r1)),
        extrema=ext,
        positions=(a, b, c, d),
        below_critical=ext[3] >= ext[1],
        degenerate=degenerate,
    )


def griffiths_crossover(inst: ChainInstance, n_grid: int = 200, iters: int = 60) -> float:
    """Field ``gamma*`` where the walk's two tops meet (``W2 = W4``) and ``eps_1`` is smallest.

    ``W4 - W2`` is not monotone in ``gamma`` once the dominant pair of rises
    changes, so a scan in ``ln gamma`` first locates the largest estimated
    height ``R2 - 2 R1`` (smallest ``eps_1``); bisection on the shear then
    refines inside the neighbouring bracket where ``W4 - W2`` changes sign.
    """
    lj = np.log(inst.couplings)
    grid = np.linspace(float(lj.min()) - 1.0, float(lj.max()) + 1.0, n_grid)

    def estimate(log_gamma: float) -> GriffithsEstimate:
        return griffiths_estimate(inst, math.exp(log_gamma))

    ests = [estimate(x) for x in grid]
    score = np.array([-math.log(e.eps1) for e in ests])
    i = int(np.argmax(score))
    excess = [e.extrema[3] - e.extrema[1] for e in ests]
    for lo, hi in ((i - 1, i), (i, i + 1)):
        if lo < 0 or hi >= n_grid or excess[lo] <= 0 or excess[hi] > 0:
            continue
        a, b = grid[lo], grid[hi]
        for _ in range(iters):
            mid = 0.5 * (a + b)
            e = estimate(mid)
            if e.extrema[3] - e.extrema[1] > 0:
                a = mid
            else:
                b = mid
        return math.exp(0.5 * (a + b))
    return math.exp(grid[i])


__all__ = [
    "BandedSkewGenerator",
    "GapResult",
    "GriffithsEstimate",
    "SpectrumResult",
    "build_generator",
    "gamma_from_s",
    "gap_at",
    "griffiths_crossover",
    "griffiths_estimate",
    "griffiths_walk",
    "many_body_levels",
    "minimum_gap",
    "single_particle_energies",
    "spectrum_at",
]
