"""Orthogonal integrators for the Majorana evolution ``dS/dt = 2 M(t) S``.

Time is normalised to ``u = t/T`` in ``[0, 1]`` and the generator is
pre-multiplied by ``2T``, so ``H(u) = (1-u) A + u B`` with constant banded
endpoints ``A`` (driver) and ``B`` (couplings).

Cayley-Magnus methods ``cm2..cm8`` build a truncated Magnus exponent ``Omega``
around the step midpoint and apply the diagonal Pade approximant of
``exp(Omega)`` as a product of Cayley-type factors ``(sigma + Omega)/(sigma - Omega)``.
``cm{2q}`` uses the ``[q/q]`` approximant (``q`` roots) together with the
Magnus terms through ``dt^(2q-1)``; ``cm8`` therefore uses four roots. Complex
conjugate roots are merged into one real quadratic factor.

``rk5``/``rk8`` are fixed-step Dormand-Prince baselines with the plain additive
update and no orthogonality control.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.integrate._ivp.rk import DOP853, RK45

from . import _kernels
from . import banded as bd
from .errors import IntegrationError, StepFailureError, ValidationError, WorkspaceError
from .instance import AnnealSchedule, ChainInstance

log = logging.getLogger(__name__)

CM_ORDERS = {"cm2": 2, "cm4": 4, "cm6": 6, "cm8": 8}
RK_METHODS = {"rk5": RK45, "rk8": DOP853, "rk_baseline5": RK45, "rk_baseline8": DOP853}
METHODS = tuple(CM_ORDERS) + ("rk5", "rk8")


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "cm8"
    dt: float = 1.0
    parallel: str = "serial"
    workers: int = 1
    ortho_tol: float = 1e-9
    check_every: int = 2048

    def __post_init__(self):
        if self.method not in CM_ORDERS and self.method not in RK_METHODS:
            raise ValidationError(f"unknown method {self.method!r}; choose from {METHODS}")
        if not self.dt > 0:
            raise ValidationError(f"dt must be positive, got {self.dt}")
        kind, count = parse_parallel(self.parallel)
        if count < 1:
            raise ValidationError(f"parallel count must be >= 1 in {self.parallel!r}")


def parse_parallel(spec: str) -> tuple[str, int]:
    """``serial``, ``columns=K`` or ``intervals=K``."""
    if spec == "serial":
        return "serial", 1
    kind, _, count = spec.partition("=")
    if kind not in ("columns", "intervals") or not count.isdigit():
        raise ValidationError(f"bad parallel spec {spec!r}")
    return kind, int(count)


@dataclass
class EvolutionOperator:
    matrix: np.ndarray
    t: float

    def orthogonality_drift(self) -> float:
        s = self.matrix
        return float(np.max(np.abs(s.T @ s - np.eye(s.shape[1]))))

    def is_special(self) -> bool:
        sign, _ = np.linalg.slogdet(self.matrix)
        return bool(sign > 0)


# --- generator --------------------------------------------------------------


def generator_endpoints(inst: ChainInstance, total_time: float, field: float = 1.0):
    """Banded ``A = H(0)`` and ``B = H(1)`` including the factor ``2T``."""
    n = inst.n_spins
    scale = 2.0 * total_time
    a = bd.zeros(1, 2 * n)
    b = bd.zeros(1, 2 * n)
    # superdiagonal entry (i, i+1) lives at ab[0, i+1]; subdiagonal (i+1, i) at ab[2, i]
    a[0, 1::2] = scale * field
    a[2, 0::2] = -scale * field
    b[0, 2::2] = scale * inst.couplings
    b[2, 1:-1:2] = -scale * inst.couplings
    return a, b


def pade_coefficients(q: int) -> np.ndarray:
    """Numerator coefficients ``P(x) = sum c_j x^j`` of the ``[q/q]`` Pade approximant of ``e^x``.

    Normalised so the leading coefficient is 1.
    """
    c = np.array(
        [
            math.factorial(2 * q - j) * math.factorial(q)
            / (math.factorial(2 * q) * math.factorial(j) * math.factorial(q - j))
            for j in range(q + 1)
        ]
    )
    return c / c[-1]


def cayley_roots(q: int) -> np.ndarray:
    """Shifts ``sigma_k`` with ``e^x ~ prod (sigma_k + x)/(sigma_k - x)``: the negated roots of ``P``."""
    return -np.roots(pade_coefficients(q)[::-1])


def _real_factors(roots: np.ndarray) -> list[tuple[str, float, float]]:
    factors = []
    used = np.zeros(len(roots), dtype=bool)
    for i, r in enumerate(roots):
        if used[i]:
            continue
        used[i] = True
        if abs(r.imag) < 1e-12 * abs(r):
            factors.append(("linear", float(r.real), 0.0))
            continue
        j = next(k for k in range(len(roots)) if not used[k] and abs(roots[k] - np.conj(r)) < 1e-9 * abs(r))
        used[j] = True
        factors.append(("quadratic", float(r.real), float(abs(r) ** 2)))
    return factors


class CayleyMagnus:
    """One-step map ``S -> R(Omega) S`` for a linearly interpolated banded generator.

    The heavy lifting happens in compiled kernels; ``S`` is kept row-major.
    """

    def __init__(self, a: np.ndarray, b: np.ndarray, order: int):
        if order not in (2, 4, 6, 8):
            raise ValidationError(f"unsupported Cayley-Magnus order {order}")
        self.order = order
        self.q = order // 2
        self.max_bw = 2 * self.q - 1 if self.q > 1 else 1
        self.a = np.ascontiguousarray(a, dtype=float)
        self.b = np.ascontiguousarray(b, dtype=float)
        self.delta = self.b - self.a
        self.comm = _kernels.band_comm(self.a, self.b)
        self.factors = _real_factors(cayley_roots(self.q))
        self.lin_re = np.array([re for kind, re, _ in self.factors if kind == "linear"])
        self.quad_re = np.array([re for kind, re, _ in self.factors if kind == "quadratic"])
        self.quad_mod2 = np.array([m2 for kind, _, m2 in self.factors if kind == "quadratic"])
        self.n = a.shape[1]

    def omega(self, u_mid: float, h: float) -> np.ndarray:
        """Truncated Magnus exponent for the step ``[u_mid - h/2, u_mid + h/2]``."""
        om = _kernels.magnus_omega(self.a, self.b, self.delta, self.comm, float(u_mid), float(h), self.q)
        if bd.bandwidth(om) > self.max_bw:
            raise WorkspaceError(f"Omega bandwidth {bd.bandwidth(om)} exceeds bound {self.max_bw}")
        return om

    def apply(self, omega: np.ndarray, s: np.ndarray) -> np.ndarray:
        """Multiply ``s`` by the Pade-Cayley approximant of ``exp(omega)``."""
        omega = np.ascontiguousarray(omega, dtype=float)
        out, info = _kernels.cayley_apply(
            omega, np.array(s, dtype=float, order="C"), self.lin_re, self.quad_re, self.quad_mod2
        )
        if info:
            raise StepFailureError(f"shifted generator singular at pivot {info - 1}")
        return out

    def step(self, s: np.ndarray, u_mid: float, h: float) -> np.ndarray:
        return self.apply(self.omega(u_mid, h), s)

    def run(self, s: np.ndarray, u1: float, h: float, k0: int, k1: int) -> np.ndarray:
        """Steps ``k0 .. k1-1`` of the grid ``u1 + k h`` in one compiled loop."""
        s, bad = _kernels.cm_run(
            self.a, self.b, self.delta, self.comm, self.q,
            self.lin_re, self.quad_re, self.quad_mod2,
            np.array(s, dtype=float, order="C"), float(u1), float(h), int(k0), int(k1),
        )
        if bad >= 0:
            raise StepFailureError(f"shifted generator singular in step {bad}")
        return s


class RungeKutta:
    """Explicit fixed-step Runge-Kutta on ``dS/du = H(u) S`` (no orthogonality control)."""

    def __init__(self, a: np.ndarray, b: np.ndarray, tableau):
        self.a, self.b = a, b
        self.A = tableau.A
        self.B = tableau.B
        self.C = tableau.C
        self.order = tableau.order

    def step(self, s: np.ndarray, u_mid: float, h: float) -> np.ndarray:
        u0 = u_mid - 0.5 * h
        ks = []
        for i, ci in enumerate(self.C):
            y = s
            for j, aij in enumerate(self.A[i, :i]):
                if aij != 0.0:
                    y = y + (h * aij) * ks[j]
            u = u0 + ci * h
            ks.append(bd.matmat((1.0 - u) * self.a + u * self.b, y))
        out = s
        for bi, k in zip(self.B, ks):
            if bi != 0.0:
                out = out + (h * bi) * k
        return out


def make_stepper(inst: ChainInstance, total_time: float, method: str):
    a, b = generator_endpoints(inst, total_time)
    if method in CM_ORDERS:
        return CayleyMagnus(a, b, CM_ORDERS[method])
    if method in RK_METHODS:
        return RungeKutta(a, b, RK_METHODS[method])
    raise ValidationError(f"unknown method {method!r}")


# --- driving loops ------------------------------------------------------------


def step_grid(t1: float, t2: float, total_time: float, dt: float) -> tuple[float, float, int]:
    """Normalised start, step and count; ``dt`` is shrunk to divide ``[t1, t2]`` evenly."""
    u1, u2, du = t1 / total_time, t2 / total_time, dt / total_time
    nsteps = max(1, math.ceil((u2 - u1) / du - 1e-9))
    return u1, (u2 - u1) / nsteps, nsteps


def _drift(s: np.ndarray) -> float:
    return float(np.max(np.abs(s.T @ s - np.eye(s.shape[1]))))


def _advance(stepper, s, u1, h, k0, k1):
    if isinstance(stepper, CayleyMagnus):
        return stepper.run(s, u1, h, k0, k1)
    for k in range(k0, k1):
        s = stepper.step(s, u1 + (k + 0.5) * h, h)
    return s


def _run(stepper, s, u1, h, k0, k1, total_time, cfg: IntegratorConfig, check: bool):
    chunk = cfg.check_every if check and cfg.check_every else k1 - k0
    good_k = k0
    k = k0
    while k < k1:
        k_next = min(k1, k + max(chunk, 1))
        s = _advance(stepper, s, u1, h, k, k_next)
        if check and _drift(s) > cfg.ortho_tol:
            raise IntegrationError(
                f"orthogonality drift beyond {cfg.ortho_tol} near t={(u1 + k_next * h) * total_time}",
                last_good_t=(u1 + good_k * h) * total_time,
            )
        good_k = k = k_next
    return s


def integrate(
    inst: ChainInstance,
    sched: AnnealSchedule,
    cfg: IntegratorConfig = IntegratorConfig(),
    t1: float = 0.0,
    t2: float | None = None,
) -> EvolutionOperator:
    """Propagator ``S(t2) S(t1)^-1`` of the Majorana operators."""
    T = sched.total_time
    t2 = T if t2 is None else t2
    if not 0.0 <= t1 <= t2 <= T * (1 + 1e-12):
        raise ValidationError(f"need 0 <= t1 <= t2 <= T, got t1={t1}, t2={t2}, T={T}")
    dim = 2 * inst.n_spins
    if t2 == t1:
        return EvolutionOperator(np.eye(dim), t2)
    stepper = make_stepper(inst, T, cfg.method)
    u1, h, nsteps = step_grid(t1, t2, T, cfg.dt)
    check = cfg.method in CM_ORDERS
    kind, count = parse_parallel(cfg.parallel)

    if kind == "serial" or count == 1:
        s = _run(stepper, np.eye(dim), u1, h, 0, nsteps, T, cfg, check)
    elif kind == "columns":
        blocks = np.array_split(np.arange(dim), min(count, dim))

        def work(cols):
            return _run(stepper, np.eye(dim)[:, cols], u1, h, 0, nsteps, T, cfg, False)

        with ThreadPoolExecutor(max_workers=max(1, cfg.workers)) as pool:
            s = np.concatenate(list(pool.map(work, blocks)), axis=1)
        if check and _drift(s) > cfg.ortho_tol:
            raise IntegrationError(f"orthogonality drift beyond {cfg.ortho_tol}", last_good_t=t1)
    else:
        # segments reuse the serial step grid so only the final products differ
        bounds = np.linspace(0, nsteps, min(count, nsteps) + 1).round().astype(int)

        def work(seg):
            k0, k1 = seg
            return _run(stepper, np.eye(dim), u1, h, k0, k1, T, cfg, check)

        with ThreadPoolExecutor(max_workers=max(1, cfg.workers)) as pool:
            pieces = list(pool.map(work, zip(bounds[:-1], bounds[1:])))
        s = pieces[0]
        for piece in pieces[1:]:
            s = piece @ s
    return EvolutionOperator(s, t2)


def integrate_parallel(inst, sched, cfg, t1=0.0, t2=None, segments: int = 2, workers: int = 1):
    """Interval-split integration: independent segments from identity, then an ordered product."""
    par = IntegratorConfig(cfg.method, cfg.dt, f"intervals={segments}", workers, cfg.ortho_tol, cfg.check_every)
    return integrate(inst, sched, par, t1, t2)


def rk_baseline(inst, sched, cfg, t1=0.0, t2=None, order: int = 8):
    method = {5: "rk5", 8: "rk8"}[order]
    rk_cfg = IntegratorConfig(method, cfg.dt, cfg.parallel, cfg.workers, cfg.ortho_tol, cfg.check_every)
    return integrate(inst, sched, rk_cfg, t1, t2)


def magnus_omega(stepper: CayleyMagnus, t_mid: float, dt: float) -> np.ndarray:
    return stepper.omega(t_mid, dt)


def cayley_factor_step(stepper: CayleyMagnus, s: EvolutionOperator, omega: np.ndarray) -> EvolutionOperator:
    return EvolutionOperator(stepper.apply(omega, s.matrix), s.t)


def dump_operator(op: EvolutionOperator, path) -> None:
    """Raw row-major binary64 with a two-int64 ``(rows, cols)`` header."""
    m = np.ascontiguousarray(op.matrix, dtype="<f8")
    with open(path, "wb") as fh:
        np.array(m.shape, dtype="<i8").tofile(fh)
        m.tofile(fh)


def load_operator(path) -> np.ndarray:
    with open(path, "rb") as fh:
        rows, cols = np.fromfile(fh, dtype="<i8", count=2)
        return np.fromfile(fh, dtype="<f8").reshape(rows, cols)
