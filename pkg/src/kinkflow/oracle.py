"""Dense ``2^n`` reference for small chains (test oracle).

Builds ``H(s) = -(1-s) sum X_i - s sum J_k Z_{k-1} Z_k`` explicitly,
diagonalises it and propagates the state vector with an adaptive 8th-order
Runge-Kutta solver. Nothing here touches the Majorana machinery.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.integrate import solve_ivp

from .errors import OracleSizeError
from .instance import AnnealSchedule, ChainInstance

MAX_SPINS = 12


def _check(n: int) -> None:
    if n > MAX_SPINS:
        raise OracleSizeError(f"dense oracle limited to {MAX_SPINS} spins, got {n}")


def hamiltonian_terms(couplings) -> tuple[sparse.csr_matrix, sparse.csr_matrix]:
    """Sparse driver ``-sum X_i`` and diagonal classical part ``-sum J_k Z_{k-1} Z_k``."""
    j = np.asarray(couplings, dtype=float)
    n = len(j) + 1
    _check(n)
    dim = 2**n
    idx = np.arange(dim)
    # spin i is bit (n-1-i) of the basis index; Z = +1 for bit 0
    bits = (idx[:, None] >> (n - 1 - np.arange(n))[None, :]) & 1
    z = 1.0 - 2.0 * bits
    diag = -np.sum(j[None, :] * z[:, :-1] * z[:, 1:], axis=1)
    rows, cols = [], []
    for i in range(n):
        rows.append(idx)
        cols.append(idx ^ (1 << (n - 1 - i)))
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    driver = sparse.csr_matrix((-np.ones(len(rows)), (rows, cols)), shape=(dim, dim))
    return driver, sparse.diags(diag).tocsr()


def dense_hamiltonian(couplings, s: float) -> np.ndarray:
    hd, hc = hamiltonian_terms(couplings)
    return ((1.0 - s) * hd + s * hc).toarray()


def dense_spectrum(couplings, s: float) -> np.ndarray:
    return np.linalg.eigvalsh(dense_hamiltonian(couplings, s))


def even_sector_spectrum(couplings, s: float) -> np.ndarray:
    """Levels in the sector even under the global spin flip ``prod X_i``.

    The annealing starts in this sector and never leaves it; its first gap is
    the one that matters for the sweep.
    """
    h = dense_hamiltonian(couplings, s)
    dim = h.shape[0]
    idx = np.arange(dim // 2)
    # pair |x> with its complement; states with leading bit 0 label the pairs
    v = np.zeros((dim, dim // 2))
    v[idx, idx] = v[(dim - 1) ^ idx, idx] = 2**-0.5
    return np.linalg.eigvalsh(v.T @ h @ v)


def statevector_p0(
    couplings, total_time: float, rtol: float = 1e-11, atol: float = 1e-12
) -> float:
    """Probability of the two aligned states after a linear sweep from ``|+...+>``."""
    hd, hc = hamiltonian_terms(couplings)
    dim = hd.shape[0]
    psi0 = np.full(dim, dim**-0.5, dtype=complex)
    T = float(total_time)
    if T == 0:
        psi = psi0
    else:

        def rhs(t, y):
            s = t / T
            return -1j * ((1.0 - s) * (hd @ y) + s * (hc @ y))

        sol = solve_ivp(rhs, (0.0, T), psi0, method="DOP853", rtol=rtol, atol=atol)
        if not sol.success:  # pragma: no cover
            raise RuntimeError(sol.message)
        psi = sol.y[:, -1]
    return float(abs(psi[0]) ** 2 + abs(psi[-1]) ** 2)


@dataclass(frozen=True)
class OracleResult:
    s_values: np.ndarray
    spectra: list
    p0: float


def exact_oracle(
    inst: ChainInstance,
    sched: AnnealSchedule,
    total_time: float | None = None,
    s_values=(0.0, 0.5, 1.0),
) -> OracleResult:
    _check(inst.n_spins)
    T = sched.total_time if total_time is None else total_time
    spectra = [dense_spectrum(inst.couplings, s) for s in s_values]
    return OracleResult(np.asarray(s_values, dtype=float), spectra, statevector_p0(inst.couplings, T))
