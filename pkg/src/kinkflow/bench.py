"""Ensemble studies: median minimum gap, median time-to-solution, integrator accuracy.

Every study first produces one raw record per (instance[, anneal time]) and
then folds the sorted records into a summary, so summaries can be re-derived
from stored raw files without re-simulating. Aggregation never depends on the
order in which parallel workers finish.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import NumericError, ValidationError
from .evolution import CM_ORDERS, METHODS, IntegratorConfig, integrate
from .instance import (
    AnnealSchedule,
    build_ensemble_instance,
    edge_exponent_variant,
    instance_seed,
    make_rng,
)
from .observables import ground_state_probability
from .spectrum import S_RANGE, minimum_gap

log = logging.getLogger(__name__)

EPS_FLOOR = 1e-12

# sub-stream tags for bootstrap resampling
_GAP_STREAM = 1
_TTS_STREAM = 2


# --- time to solution -----------------------------------------------------------


def tts(total_time: float, p0: float, eps_floor: float = EPS_FLOOR) -> float:
    """``T / |ln(1 - p0)|``.

    ``p0 = 0`` gives ``inf``. Once ``1 - p0`` falls below ``eps_floor`` the
    logarithm is frozen at ``ln(eps_floor)`` (see :func:`is_saturated`).
    """
    if not total_time > 0:
        raise ValidationError(f"anneal time must be positive, got {total_time}")
    if not 0.0 <= p0 <= 1.0:
        raise ValidationError(f"p0 must lie in [0, 1], got {p0}")
    if p0 == 0.0:
        return math.inf
    miss = 1.0 - p0
    if miss < eps_floor:
        return total_time / abs(math.log(eps_floor))
    return total_time / abs(math.log1p(-p0))


def is_saturated(p0: float, eps_floor: float = EPS_FLOOR) -> bool:
    return 1.0 - p0 < eps_floor


@dataclass(frozen=True)
class TTSRecord:
    n_logical: int
    block_size: int
    embedding_kind: str
    seed: int
    T: float
    p0: float
    tau: float
    saturated: bool = False

    @classmethod
    def from_p0(cls, n_logical, block_size, embedding_kind, seed, T, p0, eps_floor=EPS_FLOOR):
        return cls(
            int(n_logical), int(block_size), str(embedding_kind), int(seed), float(T), float(p0),
            tts(T, p0, eps_floor), is_saturated(p0, eps_floor),
        )


# --- study descriptions ---------------------------------------------------------


def geometric_grid(lo: float, hi: float, per_decade: int) -> tuple[float, ...]:
    """Points ``lo * 10^(k/per_decade)`` up to and including ``hi``."""
    if not 0 < lo < hi:
        raise ValidationError(f"need 0 < lo < hi, got ({lo}, {hi})")
    count = int(math.floor(per_decade * math.log10(hi / lo) + 1e-9))
    pts = [lo * 10 ** (k / per_decade) for k in range(count + 1)]
    if pts[-1] < hi * (1 - 1e-12):
        pts.append(hi)
    return tuple(float(p) for p in pts)


def default_t_grid(n: int, per_decade: int = 16, t_max: float | None = None) -> tuple[float, ...]:
    """Geometric anneal-time grid over ``[N/4, 64 N^2]``, optionally capped at ``t_max``."""
    hi = 64.0 * n * n
    if t_max is not None:
        hi = min(hi, t_max)
    return geometric_grid(n / 4.0, hi, per_decade)


@dataclass(frozen=True)
class EnsembleStudy:
    sizes: tuple[int, ...]
    instances_per_size: int = 50
    t_grid: tuple[float, ...] | None = None
    statistic: str = "median"
    bootstrap_samples: int = 1000
    ci_level: float = 0.90
    ensemble_seed: int = 0

    def __post_init__(self):
        if not self.sizes or any(n < 2 for n in self.sizes):
            raise ValidationError(f"sizes must be >= 2, got {self.sizes}")
        if self.instances_per_size < 10:
            raise ValidationError("instances_per_size must be at least 10")
        if self.statistic != "median":
            raise ValidationError(f"unsupported statistic {self.statistic!r}")
        if self.t_grid is not None:
            g = np.asarray(self.t_grid, dtype=float)
            if len(g) == 0 or np.any(g <= 0) or np.any(np.diff(g) <= 0):
                raise ValidationError("t_grid must be positive and strictly increasing")
        if not 0 < self.ci_level < 1:
            raise ValidationError(f"ci_level must lie in (0, 1), got {self.ci_level}")

    def grid_for(self, n: int) -> tuple[float, ...]:
        return tuple(self.t_grid) if self.t_grid is not None else default_t_grid(n)


@dataclass(frozen=True)
class StudyConfig:
    """Which ensemble: disorder law, embedding and block size."""

    disorder: str = "strong"
    embedding: str = "none"
    m: int = 1
    edge_exponent: str = "m+1"

    def __post_init__(self):
        if self.disorder not in ("strong", "scaled", "uniform"):
            raise ValidationError(f"unknown disorder {self.disorder!r}")
        if self.embedding not in ("none", "canonical", "balanced"):
            raise ValidationError(f"unknown embedding {self.embedding!r}")
        if self.embedding == "none" and self.m != 1:
            raise ValidationError("a logical ensemble needs m = 1")
        if self.embedding != "none" and self.m < 2:
            raise ValidationError("an embedded ensemble needs m >= 2")

    @property
    def label(self) -> str:
        if self.embedding == "none":
            return f"logical-{self.disorder}"
        return f"{self.embedding}-m{self.m}-{self.disorder}"

    def instance(self, n: int, ensemble_seed: int, index: int):
        edge = edge_exponent_variant(self.edge_exponent, self.m) if self.m > 1 else None
        return build_ensemble_instance(n, ensemble_seed, index, self.disorder, self.embedding, self.m, edge)


# --- statistics -----------------------------------------------------------------


def bootstrap_ci(values, samples: int = 1000, level: float = 0.90, seed: int = 0, statistic=np.median):
    """Percentile bootstrap interval of ``statistic``.

    Values are sorted first, so the interval does not depend on input order.
    """
    v = np.sort(np.asarray(values, dtype=float))
    if len(v) == 0:
        return math.nan, math.nan
    rng = make_rng(seed, _GAP_STREAM, len(v))
    idx = rng.integers(0, len(v), size=(samples, len(v)))
    stats = statistic(v[idx], axis=1)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(stats, [alpha, 1.0 - alpha])
    return float(lo), float(hi)


def _pmap(fn, tasks, workers: int):
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    chunk = max(1, len(tasks) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks, chunksize=chunk))


# --- median gap -----------------------------------------------------------------


@dataclass(frozen=True)
class GapRecord:
    n: int
    m: int
    embedding: str
    seed: int
    s_c: float
    gap: float
    flag_multimodal: bool
    flag_precision: bool


@dataclass(frozen=True)
class GapSummary:
    n: int
    median_scaled_gap: float
    ci_lo: float
    ci_hi: float
    median_gap: float
    median_s_c: float
    n_used: int
    n_flagged: int
    n_multimodal: int


def _gap_task(args) -> GapRecord:
    cfg, n, ensemble_seed, index, s_lo, s_hi, tol = args
    inst = cfg.instance(n, ensemble_seed, index)
    res = minimum_gap(inst, s_lo, s_hi, tol)
    return GapRecord(
        n, cfg.m, cfg.embedding, instance_seed(ensemble_seed, index),
        res.s_c, res.gap, res.multimodal, res.precision_loss,
    )


def summarize_gaps(records, study: EnsembleStudy) -> list[GapSummary]:
    out = []
    for n in sorted({r.n for r in records}):
        rows = sorted((r for r in records if r.n == n), key=lambda r: r.seed)
        used = [r for r in rows if not r.flag_precision]
        scaled = [n * r.gap for r in used]
        lo, hi = bootstrap_ci(scaled, study.bootstrap_samples, study.ci_level, study.ensemble_seed)
        out.append(
            GapSummary(
                n,
                float(np.median(scaled)) if scaled else math.nan,
                lo,
                hi,
                float(np.median([r.gap for r in used])) if used else math.nan,
                float(np.median([r.s_c for r in used])) if used else math.nan,
                len(used),
                len(rows) - len(used),
                sum(r.flag_multimodal for r in rows),
            )
        )
    return out


def median_gap_study(
    study: EnsembleStudy,
    config: StudyConfig,
    workers: int = 1,
    s_lo: float = S_RANGE[0],
    s_hi: float = S_RANGE[1],
    tol: float = 1e-7,
) -> tuple[list[GapRecord], list[GapSummary]]:
    """Median ``N * gap_c`` per size with a percentile-bootstrap interval.

    Instances whose smallest energies lost precision are excluded from the
    medians and counted in ``n_flagged``.
    """
    tasks = [
        (config, n, study.ensemble_seed, i, s_lo, s_hi, tol)
        for n in study.sizes
        for i in range(study.instances_per_size)
    ]
    records = _pmap(_gap_task, tasks, workers)
    records.sort(key=lambda r: (r.n, r.seed))
    return records, summarize_gaps(records, study)


# --- median time to solution ----------------------------------------------------


def anneal_p0(inst, total_time: float, cfg: IntegratorConfig) -> tuple[float, float]:
    """Ground-state probability after a sweep of length ``total_time`` and the final drift."""
    op = integrate(inst, AnnealSchedule(total_time), cfg)
    return ground_state_probability(op), op.orthogonality_drift()


def calibrate_dt(
    inst,
    total_time: float,
    method: str = "cm8",
    target: float = 1e-8,
    dt0: float = 2.0,
    min_dt: float = 1.0 / 64,
) -> float:
    """Largest ``dt0 / 2^k`` whose ``p0`` agrees with the next halving to relative ``target``."""
    dt = dt0
    prev = anneal_p0(inst, total_time, IntegratorConfig(method, dt))[0]
    while dt > min_dt:
        nxt = anneal_p0(inst, total_time, IntegratorConfig(method, dt / 2))[0]
        if abs(nxt - prev) <= target * max(abs(nxt), 1e-300):
            return dt
        dt, prev = dt / 2, nxt
    raise NumericError(f"no step down to {min_dt} reaches relative accuracy {target}")


@dataclass(frozen=True)
class TTSSummary:
    n: int
    T_opt: float
    median_tau_over_n2: float
    ci_lo: float
    ci_hi: float
    median_tau: float
    optimum_on_edge: bool
    all_saturated_T: tuple[float, ...] = ()
    all_zero_T: tuple[float, ...] = ()


def _tts_task(args) -> TTSRecord:
    config, n, ensemble_seed, index, T, icfg = args
    inst = config.instance(n, ensemble_seed, index)
    p0, _ = anneal_p0(inst, T, icfg)
    return TTSRecord.from_p0(n, config.m, config.embedding, instance_seed(ensemble_seed, index), T, p0)


def tau_table(records, n: int) -> tuple[np.ndarray, np.ndarray, list[int]]:
    """``(T values, tau[instance, T], seeds)`` for one size, rows sorted by seed."""
    rows = [r for r in records if r.n_logical == n]
    ts = np.array(sorted({r.T for r in rows}))
    seeds = sorted({r.seed for r in rows})
    tab = np.full((len(seeds), len(ts)), math.nan)
    si = {s: i for i, s in enumerate(seeds)}
    for r in rows:
        tab[si[r.seed], int(np.searchsorted(ts, r.T))] = r.tau
    return ts, tab, seeds


def _grid_min(ts: np.ndarray, med: np.ndarray) -> float:
    """Parabolic estimate (in ``ln T``) of the continuous minimum of the median curve."""
    j = int(np.argmin(med))
    if j == 0 or j == len(ts) - 1 or not np.all(np.isfinite(med[j - 1 : j + 2])):
        return float(med[j])
    x = np.log(ts[j - 1 : j + 2])
    y = np.log(med[j - 1 : j + 2])
    a, b, c = np.polyfit(x, y, 2)
    if a <= 0:
        return float(med[j])
    return float(min(med[j], math.exp(c - b * b / (4 * a))))


def summarize_tts(records, study: EnsembleStudy) -> list[TTSSummary]:
    out = []
    for n in sorted({r.n_logical for r in records}):
        ts, tab, _ = tau_table(records, n)
        med = np.median(tab, axis=0)
        j = int(np.argmin(med))
        # resample instances and re-optimise T inside each replicate
        rng = make_rng(study.ensemble_seed, _TTS_STREAM, n, tab.shape[0])
        idx = rng.integers(0, tab.shape[0], size=(study.bootstrap_samples, tab.shape[0]))
        boot = np.min(np.median(tab[idx], axis=1), axis=1)
        alpha = (1.0 - study.ci_level) / 2.0
        lo, hi = np.quantile(boot, [alpha, 1.0 - alpha])
        # the true optimum may fall between grid points
        lo = min(lo, _grid_min(ts, med))
        rows = [r for r in records if r.n_logical == n]
        sat = tuple(float(t) for t in ts if all(r.saturated for r in rows if r.T == t))
        zero = tuple(float(t) for t in ts if all(r.p0 == 0.0 for r in rows if r.T == t))
        out.append(
            TTSSummary(
                n, float(ts[j]), float(med[j] / n**2), float(lo / n**2), float(hi / n**2),
                float(med[j]), j in (0, len(ts) - 1), sat, zero,
            )
        )
    return out


def median_tts_study(
    study: EnsembleStudy,
    config: StudyConfig,
    icfg: IntegratorConfig = IntegratorConfig(),
    workers: int = 1,
) -> tuple[list[TTSRecord], list[TTSSummary]]:
    """Median time-to-solution at the ensemble-wide optimal anneal time, per size."""
    tasks = [
        (config, n, study.ensemble_seed, i, T, icfg)
        for n in study.sizes
        for i in range(study.instances_per_size)
        for T in study.grid_for(n)
    ]
    records = _pmap(_tts_task, tasks, workers)
    records.sort(key=lambda r: (r.n_logical, r.seed, r.T))
    return records, summarize_tts(records, study)


def rederive(records) -> list[TTSRecord]:
    """Recompute ``tau`` and saturation from the stored ``(T, p0)`` pairs."""
    return [TTSRecord.from_p0(r.n_logical, r.block_size, r.embedding_kind, r.seed, r.T, r.p0) for r in records]


# --- integrator accuracy --------------------------------------------------------


@dataclass(frozen=True)
class BenchRow:
    method: str
    dt: float
    median_rel_error: float
    orthogonality_drift: float
    wall_ms: float


@dataclass
class BenchResult:
    rows: list[BenchRow]
    reference_dt: float
    reference_p0: list[float] = field(default_factory=list)
    errors: dict = field(default_factory=dict)


def _bench_task(args):
    inst, T, method, dt = args
    t0 = time.perf_counter()
    try:
        with np.errstate(all="ignore"):
            op = integrate(inst, AnnealSchedule(T), IntegratorConfig(method, dt, ortho_tol=math.inf))
            drift = op.orthogonality_drift()
            p0 = ground_state_probability(op) if np.isfinite(drift) and drift < 1e-3 else math.nan
    except (NumericError, FloatingPointError, np.linalg.LinAlgError):
        p0, drift = math.nan, math.inf
    return p0, drift, (time.perf_counter() - t0) * 1e3


def integrator_benchmark(
    n: int = 64,
    total_time: float = 4096.0,
    instances: int = 10,
    dt_grid=(2.0, 1.0, 0.5, 0.25, 0.125),
    methods=METHODS,
    reference_dt: float | None = None,
    disorder: str = "strong",
    ensemble_seed: int = 0,
    workers: int = 1,
) -> BenchResult:
    """Relative ``p0`` error per (method, dt) against cm8 at ``reference_dt``.

    ``reference_dt`` defaults to half the finest swept step. Runs that blow up
    (baselines at coarse steps) get infinite error and drift.
    """
    dt_grid = sorted((float(d) for d in dt_grid), reverse=True)
    ref_dt = reference_dt if reference_dt is not None else dt_grid[-1] / 2
    insts = [build_ensemble_instance(n, ensemble_seed, i, disorder) for i in range(instances)]
    ref = [r[0] for r in _pmap(_bench_task, [(x, total_time, "cm8", ref_dt) for x in insts], workers)]
    tasks = [(x, total_time, m, dt) for m in methods for dt in dt_grid for x in insts]
    out = _pmap(_bench_task, tasks, workers)
    rows, errors = [], {}
    k = 0
    for m in methods:
        for dt in dt_grid:
            chunk = out[k : k + len(insts)]
            k += len(insts)
            rel = np.array(
                [abs(p - r) / abs(r) if np.isfinite(p) else math.inf for (p, _, _), r in zip(chunk, ref)]
            )
            errors[(m, dt)] = rel
            rows.append(
                BenchRow(
                    m, dt, float(np.median(rel)),
                    float(max(d for _, d, _ in chunk)),
                    float(np.median([w for _, _, w in chunk])),
                )
            )
    return BenchResult(rows, ref_dt, ref, errors)


def convergence_slope(rows, method: str, lo: float = 1e-12, hi: float = 1e-2) -> tuple[float, int]:
    """Least-squares slope of ``log error`` vs ``log dt`` over points with error in ``[lo, hi]``.

    Returns ``(slope, points used)``; ``nan`` if fewer than two points qualify.
    """
    pts = [(r.dt, r.median_rel_error) for r in rows if r.method == method and lo <= r.median_rel_error <= hi]
    if len(pts) < 2:
        return math.nan, len(pts)
    x, y = np.log([p[0] for p in pts]), np.log([p[1] for p in pts])
    return float(np.polyfit(x, y, 1)[0]), len(pts)


def power_law_run(
    rows, method: str, floor: float = 1e-12, tol: float = 1.0, min_points: int = 3
) -> tuple[float, tuple[float, ...]]:
    """Slope of the longest stretch of ``dt`` over which the error follows a single power law.

    Points below ``floor`` (reference accuracy) or non-finite are dropped. A
    stretch of consecutive steps qualifies when every local slope between
    neighbours lies within ``tol`` of the stretch's least-squares slope; the
    longest one wins, ties going to the smaller steps. Returns ``(nan, ())``
    when nothing qualifies.
    """
    pts = sorted((r.dt, r.median_rel_error) for r in rows if r.method == method)
    pts = [(d, e) for d, e in pts if np.isfinite(e) and e >= floor]
    if len(pts) < min_points:
        return math.nan, ()
    x = np.log([d for d, _ in pts])
    y = np.log([e for _, e in pts])
    local = np.diff(y) / np.diff(x)
    best = (math.nan, ())
    for i in range(len(pts)):
        for j in range(i + min_points, len(pts) + 1):
            slope = float(np.polyfit(x[i:j], y[i:j], 1)[0])
            if np.all(np.abs(local[i : j - 1] - slope) <= tol) and j - i > len(best[1]):
                best = (slope, tuple(d for d, _ in pts[i:j]))
    return best


# --- persistence ----------------------------------------------------------------


def write_records(path, records) -> None:
    records = list(records)
    if not records:
        Path(path).write_text("")
        return
    names = [f.name for f in fields(records[0])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for r in records:
            w.writerow([_fmt(getattr(r, k)) for k in names])


def _fmt(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ";".join(repr(x) for x in v)
    return v


def read_tts_records(path) -> list[TTSRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(
                TTSRecord(
                    int(row["n_logical"]), int(row["block_size"]), row["embedding_kind"], int(row["seed"]),
                    float(row["T"]), float(row["p0"]), float(row["tau"]), bool(int(row["saturated"])),
                )
            )
    return out


def write_plot_data(path, x, y, y_lo, y_hi) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "y_lo", "y_hi"])
        for row in zip(x, y, y_lo, y_hi):
            w.writerow([repr(float(v)) for v in row])


def summary_dicts(summaries) -> list[dict]:
    return [asdict(s) for s in summaries]


__all__ = [
    "EPS_FLOOR",
    "BenchResult",
    "BenchRow",
    "EnsembleStudy",
    "GapRecord",
    "GapSummary",
    "StudyConfig",
    "TTSRecord",
    "TTSSummary",
    "anneal_p0",
    "bootstrap_ci",
    "calibrate_dt",
    "convergence_slope",
    "default_t_grid",
    "geometric_grid",
    "integrator_benchmark",
    "is_saturated",
    "median_gap_study",
    "median_tts_study",
    "power_law_run",
    "read_tts_records",
    "rederive",
    "summarize_gaps",
    "summarize_tts",
    "tau_table",
    "tts",
    "write_plot_data",
    "write_records",
    "CM_ORDERS",
]
