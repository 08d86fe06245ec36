"""Command-line entry point: ``kinkflow <command> [flags]``.

Commands: gen, gap, evolve, p0, tts, bench-int, replay.

Settings are resolved as flags > ``--config`` JSON file > built-in defaults.
The worker count comes from ``--workers``, else ``KINKFLOW_WORKERS``, else the
config file, else 1. Exit codes: 0 success, 1 invalid input, 2 numerical
failure, 64 usage error.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__
from .bench import (
    EnsembleStudy,
    StudyConfig,
    calibrate_dt,
    geometric_grid,
    integrator_benchmark,
    median_gap_study,
    median_tts_study,
    write_plot_data,
    write_records,
)
from .errors import KinkflowError, NumericError, ValidationError
from .evolution import METHODS, IntegratorConfig, dump_operator, integrate
from .instance import AnnealSchedule, build_instance, edge_exponent_variant, load_instance, save_instance
from .observables import ground_state_probability
from .spectrum import S_RANGE, minimum_gap

log = logging.getLogger("kinkflow")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2, 64
MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1

DEFAULTS: dict[str, dict] = {
    "gen": {"n": 16, "disorder": "strong", "embedding": "none", "m": 1, "edge_exponent": "m+1", "seed": 0},
    "gap": {
        "s_lo": S_RANGE[0], "s_hi": S_RANGE[1], "tol": 1e-7, "disorder": "strong", "embedding": "none",
        "m": 1, "edge_exponent": "m+1", "seed": 0, "per_size": 50, "bootstrap": 1000, "ci": 0.90,
    },
    "evolve": {"t_start": 0.0, "dt": 1.0, "method": "cm8", "parallel": "serial", "ortho_tol": 1e-9},
    "p0": {"dt": 1.0, "method": "cm8", "parallel": "serial", "ortho_tol": 1e-9},
    "tts": {
        "disorder": "strong", "embedding": "none", "m": 1, "edge_exponent": "m+1", "seed": 0,
        "per_size": 50, "dt": "auto", "method": "cm8", "bootstrap": 1000, "ci": 0.90,
    },
    "bench-int": {
        "n": 64, "t_final": 4096.0, "instances": 10, "dt_grid": "0.125:2:5", "methods": ",".join(METHODS),
        "disorder": "strong", "seed": 0,
    },
    "replay": {},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


@dataclass
class RunManifest:
    command: str
    argv: list
    config: dict
    seeds: list = field(default_factory=list)
    format_version: int = MANIFEST_VERSION
    code_version: str = __version__
    timestamp: str = ""

    @property
    def config_digest(self) -> str:
        blob = json.dumps(self.config, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    def write(self, directory) -> Path:
        path = Path(directory) / MANIFEST_NAME
        data = asdict(self)
        data["config_digest"] = self.config_digest
        data["timestamp"] = self.timestamp or datetime.datetime.now(datetime.timezone.utc).isoformat()
        path.write_text(json.dumps(data, indent=2, sort_keys=True, default=str) + "\n")
        return path


# --- parsing ----------------------------------------------------------------------


def _ensemble_flags(p, sizes=True):
    if sizes:
        p.add_argument("--sizes", help="comma-separated logical sizes N")
        p.add_argument("--per-size", type=int, help="instances per size")
    p.add_argument("--disorder", choices=["strong", "scaled", "uniform"])
    p.add_argument("--embedding", choices=["none", "canonical", "balanced"])
    p.add_argument("--m", type=int, help="block size")
    p.add_argument("--edge-exponent", help="m+1 (default), m-1, or a number")
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kinkflow", description="Annealing simulator for random Ising chains.")
    parser.add_argument("--version", action="version", version=__version__)
    common = _Parser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--workers", type=int, help="worker processes (env KINKFLOW_WORKERS)")
    common.add_argument("--config", help="JSON file with default settings")
    common.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_):
        return sub.add_parser(name, help=help_, parents=[common], argument_default=argparse.SUPPRESS)

    p = add("gen", "sample one instance and write it as JSON")
    p.add_argument("--n", type=int)
    _ensemble_flags(p, sizes=False)
    p.add_argument("--out", required=True)

    p = add("gap", "minimum gap of one instance, or an ensemble gap study")
    p.add_argument("--instance")
    _ensemble_flags(p)
    p.add_argument("--s-lo", type=float)
    p.add_argument("--s-hi", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--bootstrap", type=int)
    p.add_argument("--ci", type=float)
    p.add_argument("--out", help="CSV file (single instance); default stdout")
    p.add_argument("--out-dir", help="output directory (ensemble study)")

    for name, help_ in (("evolve", "integrate the Majorana propagator"), ("p0", "ground-state probability")):
        p = add(name, help_)
        p.add_argument("--instance", required=True)
        p.add_argument("--t-final", type=float, required=True)
        p.add_argument("--dt", type=float)
        p.add_argument("--method", choices=list(METHODS))
        p.add_argument("--parallel", help="serial, columns=K or intervals=K")
        p.add_argument("--ortho-tol", type=float, help="abort when |S^T S - I| exceeds this")
        if name == "evolve":
            p.add_argument("--t-start", type=float)
            p.add_argument("--dump-s", help="write S as raw binary64 with a (rows, cols) header")

    p = add("tts", "median time-to-solution study")
    _ensemble_flags(p)
    p.add_argument("--t-grid", help="lo:hi:per_decade or a comma list; default [N/4, 64N^2] at 16/decade")
    p.add_argument("--dt", help="fixed step or 'auto' (calibrated on a pilot instance)")
    p.add_argument("--method", choices=list(METHODS))
    p.add_argument("--bootstrap", type=int)
    p.add_argument("--ci", type=float)
    p.add_argument("--out-dir", required=True)

    p = add("bench-int", "integrator accuracy benchmark")
    p.add_argument("--n", type=int)
    p.add_argument("--t-final", type=float)
    p.add_argument("--instances", type=int)
    p.add_argument("--dt-grid", help="lo:hi:count (geometric, inclusive) or a comma list")
    p.add_argument("--reference-dt", type=float)
    p.add_argument("--methods", help="comma-separated subset of " + ",".join(METHODS))
    p.add_argument("--disorder", choices=["strong", "scaled", "uniform"])
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="CSV file; default stdout")
    p.add_argument("--out-dir", help="directory for CSV, plot data and manifest")

    p = add("replay", "re-run the command recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--out-dir", help="write into this directory instead of the recorded one")
    return parser


def resolve(command: str, ns: argparse.Namespace, env=os.environ) -> dict:
    """Merge defaults, config file and flags (in increasing priority)."""
    cfg = dict(DEFAULTS.get(command, {}))
    flags = {k: v for k, v in vars(ns).items() if k not in ("command",)}
    path = flags.pop("config", None)
    file_cfg = {}
    if path:
        try:
            file_cfg = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise ValidationError("config file must hold a JSON object")
        # either flat keys or a section per command
        section = file_cfg.get(command, {})
        file_cfg = {k: v for k, v in file_cfg.items() if not isinstance(v, dict)}
        file_cfg.update(section)
        file_cfg = {k.replace("-", "_"): v for k, v in file_cfg.items()}
    cfg.update(file_cfg)
    workers = flags.pop("workers", None)
    cfg.update(flags)
    if workers is None and env.get("KINKFLOW_WORKERS"):
        try:
            workers = int(env["KINKFLOW_WORKERS"])
        except ValueError:
            raise ValidationError(f"KINKFLOW_WORKERS must be an integer, got {env['KINKFLOW_WORKERS']!r}") from None
    cfg["workers"] = max(1, int(workers if workers is not None else cfg.get("workers", 1)))
    return cfg


def _sizes(text) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(x) for x in text)
    try:
        return tuple(int(x) for x in str(text).split(",") if x)
    except ValueError:
        raise ValidationError(f"bad size list {text!r}") from None


def parse_grid(text, per_decade_form: bool) -> tuple[float, ...]:
    """``lo:hi:k`` or ``a,b,c``. ``k`` is points per decade or the total point count."""
    if isinstance(text, (list, tuple)):
        return tuple(float(x) for x in text)
    try:
        if ":" in str(text):
            lo, hi, k = str(text).split(":")
            lo, hi, k = float(lo), float(hi), int(k)
            if per_decade_form:
                return geometric_grid(lo, hi, k)
            if k < 2 or not 0 < lo < hi:
                raise ValidationError(f"bad grid {text!r}")
            return tuple(lo * (hi / lo) ** (i / (k - 1)) for i in range(k))
        return tuple(float(x) for x in str(text).split(",") if x)
    except ValueError:
        raise ValidationError(f"bad grid {text!r}") from None


def _study_config(cfg) -> StudyConfig:
    return StudyConfig(cfg["disorder"], cfg["embedding"], int(cfg["m"]), str(cfg["edge_exponent"]))


def _instance_from(cfg):
    edge = edge_exponent_variant(str(cfg["edge_exponent"]), int(cfg["m"])) if int(cfg["m"]) > 1 else None
    return build_instance(int(cfg["n"]), int(cfg["seed"]), cfg["disorder"], cfg["embedding"], int(cfg["m"]), edge)


def _out_dir(path) -> Path:
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    return d


# --- commands ---------------------------------------------------------------------


def cmd_gen(cfg, argv):
    inst = _instance_from(cfg)
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    save_instance(inst, out)
    RunManifest("gen", argv, cfg, [int(cfg["seed"])]).write(out.parent)
    print(json.dumps({"out": str(out), "n_spins": inst.n_spins, "seed": inst.seed}))


GAP_COLUMNS = ["n", "m", "embedding", "seed", "s_c", "gap", "flag_multimodal", "flag_precision"]


def cmd_gap(cfg, argv):
    if cfg.get("instance"):
        inst = load_instance(cfg["instance"])
        res = minimum_gap(inst, float(cfg["s_lo"]), float(cfg["s_hi"]), float(cfg["tol"]))
        row = [
            inst.n_logical, inst.block_size, inst.embedding_kind.value, inst.seed,
            repr(res.s_c), repr(res.gap), int(res.multimodal), int(res.precision_loss),
        ]
        fh = open(cfg["out"], "w", newline="") if cfg.get("out") else sys.stdout
        try:
            w = csv.writer(fh)
            w.writerow(GAP_COLUMNS)
            w.writerow(row)
        finally:
            if fh is not sys.stdout:
                fh.close()
        return
    if not cfg.get("sizes") or not cfg.get("out_dir"):
        raise ValidationError("gap needs --instance, or --sizes with --out-dir for an ensemble study")
    study = EnsembleStudy(
        _sizes(cfg["sizes"]), int(cfg["per_size"]), None, "median", int(cfg["bootstrap"]), float(cfg["ci"]),
        int(cfg["seed"]),
    )
    records, summary = median_gap_study(
        study, _study_config(cfg), cfg["workers"], float(cfg["s_lo"]), float(cfg["s_hi"]), float(cfg["tol"])
    )
    d = _out_dir(cfg["out_dir"])
    write_records(d / "raw.csv", records)
    write_records(d / "summary.csv", summary)
    write_plot_data(
        d / "plot-gap.csv", [s.n for s in summary], [s.median_scaled_gap for s in summary],
        [s.ci_lo for s in summary], [s.ci_hi for s in summary],
    )
    RunManifest("gap", argv, cfg, [int(cfg["seed"])] + [r.seed for r in records]).write(d)
    for s in summary:
        print(json.dumps(asdict(s)))


def _integrator_cfg(cfg) -> IntegratorConfig:
    return IntegratorConfig(cfg["method"], float(cfg["dt"]), cfg["parallel"], cfg["workers"], float(cfg["ortho_tol"]))


def cmd_evolve(cfg, argv):
    inst = load_instance(cfg["instance"])
    op = integrate(inst, AnnealSchedule(float(cfg["t_final"])), _integrator_cfg(cfg), float(cfg["t_start"]))
    out = {"t": op.t, "orthogonality_drift": op.orthogonality_drift(), "special": op.is_special()}
    if cfg.get("dump_s"):
        path = Path(cfg["dump_s"])
        path.parent.mkdir(parents=True, exist_ok=True)
        dump_operator(op, path)
        RunManifest("evolve", argv, cfg, [inst.seed] if inst.seed is not None else []).write(path.parent)
        out["dump"] = str(path)
    print(json.dumps(out))


def cmd_p0(cfg, argv):
    inst = load_instance(cfg["instance"])
    op = integrate(inst, AnnealSchedule(float(cfg["t_final"])), _integrator_cfg(cfg))
    print(json.dumps({"p0": ground_state_probability(op), "orthogonality_drift": op.orthogonality_drift()}))


def cmd_tts(cfg, argv):
    if not cfg.get("sizes"):
        raise ValidationError("tts needs --sizes")
    sizes = _sizes(cfg["sizes"])
    grid = parse_grid(cfg["t_grid"], True) if cfg.get("t_grid") else None
    study = EnsembleStudy(
        sizes, int(cfg["per_size"]), grid, "median", int(cfg["bootstrap"]), float(cfg["ci"]), int(cfg["seed"])
    )
    config = _study_config(cfg)
    if str(cfg["dt"]) == "auto":
        n_pilot = max(sizes)
        t_pilot = max(study.grid_for(n_pilot))
        dt = calibrate_dt(config.instance(n_pilot, study.ensemble_seed, 0), t_pilot, cfg["method"])
        log.info("calibrated dt = %s on a pilot instance at N=%d, T=%g", dt, n_pilot, t_pilot)
    else:
        dt = float(cfg["dt"])
    cfg = dict(cfg, dt_used=dt)
    records, summary = median_tts_study(study, config, IntegratorConfig(cfg["method"], dt), cfg["workers"])
    d = _out_dir(cfg["out_dir"])
    write_records(d / "raw.csv", records)
    write_records(d / "summary.csv", summary)
    write_plot_data(
        d / "plot-tts.csv", [s.n for s in summary], [s.median_tau_over_n2 for s in summary],
        [s.ci_lo for s in summary], [s.ci_hi for s in summary],
    )
    RunManifest("tts", argv, cfg, [study.ensemble_seed] + sorted({r.seed for r in records})).write(d)
    for s in summary:
        print(json.dumps(asdict(s)))


BENCH_COLUMNS = ["method", "dt", "median_rel_error", "orthogonality_drift", "wall_ms"]


def cmd_bench_int(cfg, argv):
    dts = parse_grid(cfg["dt_grid"], False)
    methods = [m for m in str(cfg["methods"]).split(",") if m]
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ValidationError(f"unknown methods {bad}")
    res = integrator_benchmark(
        int(cfg["n"]), float(cfg["t_final"]), int(cfg["instances"]), dts, methods,
        cfg.get("reference_dt"), cfg["disorder"], int(cfg["seed"]), cfg["workers"],
    )
    rows = [[r.method, repr(r.dt), repr(r.median_rel_error), repr(r.orthogonality_drift), repr(r.wall_ms)] for r in res.rows]
    if cfg.get("out_dir"):
        d = _out_dir(cfg["out_dir"])
        target = d / "bench.csv"
        for m in methods:
            sel = [r for r in res.rows if r.method == m]
            write_plot_data(
                d / f"plot-{m}.csv", [r.dt for r in sel], [r.median_rel_error for r in sel],
                [min(res.errors[(m, r.dt)]) for r in sel], [max(res.errors[(m, r.dt)]) for r in sel],
            )
        RunManifest("bench-int", argv, dict(cfg, reference_dt=res.reference_dt), [int(cfg["seed"])]).write(d)
    else:
        target = cfg.get("out")
    fh = open(target, "w", newline="") if target else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(BENCH_COLUMNS)
        w.writerows(rows)
    finally:
        if fh is not sys.stdout:
            fh.close()


def cmd_replay(cfg, argv):
    try:
        data = json.loads(Path(cfg["manifest"]).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read manifest: {exc}") from exc
    if data.get("format_version") != MANIFEST_VERSION:
        raise ValidationError(f"unsupported manifest version {data.get('format_version')}")
    again = list(data["argv"])
    if cfg.get("out_dir"):
        again += ["--out-dir", cfg["out_dir"]]
    code = dispatch(again)
    if code:
        raise SystemExit(code)


COMMANDS = {
    "gen": cmd_gen,
    "gap": cmd_gap,
    "evolve": cmd_evolve,
    "p0": cmd_p0,
    "tts": cmd_tts,
    "bench-int": cmd_bench_int,
    "replay": cmd_replay,
}


def dispatch(argv) -> int:
    argv = list(argv)
    try:
        ns = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        cfg = resolve(ns.command, ns)
        logging.basicConfig(level=cfg.get("log_level", "WARNING"), format="%(levelname)s %(name)s: %(message)s")
        COMMANDS[ns.command](cfg, argv)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValidationError, KinkflowError, ValueError, KeyError, OSError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


def main(argv=None) -> None:
    sys.exit(dispatch(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    main()
