"""Command-line interface: simulations and analytics to plot-ready CSV files.

Subcommands
-----------
simulate    run a trajectory ensemble from a JSON config, emit ensemble.csv
bound       evaluate a concurrence bound curve, emit bound.csv
whichpath   tabulate the homodyne which-path densities on an (X3, X4) grid
maxstats    capture first maximal-concurrence states and histogram their
            Bell amplitudes
smecheck    run the Kraus-vs-SME convergence-order test

Every command writes a ``manifest.json`` echoing the configuration, the master
seed, the package version, the wall-clock runtime and a SHA-256 digest of each
output file; rerunning with the same inputs reproduces identical digests.
Units are fixed: rates in MHz, times in microseconds, phases in degrees in the
config (converted to radians internally).  Exit codes: 0 success, 2 config
error, 3 numerical failure, 4 failed equivalence check.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, analytics
from .kraus import PovmError
from .states import PureState, pure_state_from_label, STATE_LABELS
from .trajectory import SCHEMES, StepError, TrajectoryConfig, run_ensemble, run_trajectory

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_CHECK_FAILED = 4

BOUND_KINDS = {"pure_hom": "pure_bound", "pd_eta": "pd_eta_bound", "hom_eta": "hom_eta_bound"}

THREADS_ENV = "FLUORPAIR_THREADS"


class ConfigError(ValueError):
    """Configuration file violates the schema; message carries the field path."""


# ---------------------------------------------------------------------------
# config schema

_DEFAULTS = {
    "scheme": None,  # required
    "gamma_mhz": 1.0,
    "dt_us": 0.002,
    "total_time_us": 5.0,
    "theta_deg": 0.0,
    "vartheta_deg": 90.0,
    "eta3": 1.0,
    "eta4": 1.0,
    "initial_state": "ee",
    "trajectories": 10000,
    "seed": 0,
    "snapshot_stride": 10,
    "capture_threshold": None,
    "analytic_reference": None,
    "reference_eta": None,
    "emit_trajectory": None,
}


def _fail(path: str, message: str):
    raise ConfigError(f"{path}: {message}")


def _expect_number(value, path, lo=None, hi=None):
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        _fail(path, f"expected a number, got {value!r}")
    if lo is not None and value < lo:
        _fail(path, f"must be >= {lo}, got {value}")
    if hi is not None and value > hi:
        _fail(path, f"must be <= {hi}, got {value}")
    return float(value)


def _expect_int(value, path, lo=None):
    if not isinstance(value, int) or isinstance(value, bool):
        _fail(path, f"expected an integer, got {value!r}")
    if lo is not None and value < lo:
        _fail(path, f"must be >= {lo}, got {value}")
    return value


def _parse_initial(value, path) -> PureState:
    if isinstance(value, str):
        if value not in STATE_LABELS:
            _fail(path, f"unknown state label {value!r}; known: {sorted(STATE_LABELS)}")
        return pure_state_from_label(value)
    if isinstance(value, list) and len(value) == 4:
        amps = []
        for i, pair in enumerate(value):
            if not (isinstance(pair, list) and len(pair) == 2):
                _fail(f"{path}[{i}]", "expected [re, im]")
            amps.append(complex(_expect_number(pair[0], f"{path}[{i}][0]"),
                                _expect_number(pair[1], f"{path}[{i}][1]")))
        try:
            return PureState(amps).normalized()
        except ValueError as exc:
            _fail(path, str(exc))
    _fail(path, "expected a state label or a list of four [re, im] pairs")


def load_config(path: str | Path) -> dict:
    """Parse and validate a simulation config file, filling defaults."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON ({exc})")
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be an object")
    for key in raw:
        if key not in _DEFAULTS:
            _fail(f"config.{key}", "unknown field")
    cfg = dict(_DEFAULTS)
    cfg.update(raw)
    if cfg["scheme"] not in SCHEMES:
        _fail("config.scheme", f"required; one of {SCHEMES}")
    cfg["gamma_mhz"] = _expect_number(cfg["gamma_mhz"], "config.gamma_mhz", lo=1e-12)
    cfg["dt_us"] = _expect_number(cfg["dt_us"], "config.dt_us", lo=1e-12)
    cfg["total_time_us"] = _expect_number(cfg["total_time_us"], "config.total_time_us", lo=1e-12)
    cfg["theta_deg"] = _expect_number(cfg["theta_deg"], "config.theta_deg")
    cfg["vartheta_deg"] = _expect_number(cfg["vartheta_deg"], "config.vartheta_deg")
    cfg["eta3"] = _expect_number(cfg["eta3"], "config.eta3", lo=0.0, hi=1.0)
    cfg["eta4"] = _expect_number(cfg["eta4"], "config.eta4", lo=0.0, hi=1.0)
    cfg["trajectories"] = _expect_int(cfg["trajectories"], "config.trajectories", lo=1)
    cfg["seed"] = _expect_int(cfg["seed"], "config.seed")
    cfg["snapshot_stride"] = _expect_int(cfg["snapshot_stride"], "config.snapshot_stride", lo=1)
    if cfg["capture_threshold"] is not None:
        cfg["capture_threshold"] = _expect_number(
            cfg["capture_threshold"], "config.capture_threshold", lo=0.0, hi=1.0
        )
    if cfg["analytic_reference"] is not None:
        if cfg["analytic_reference"] not in analytics.CURVE_KINDS:
            _fail("config.analytic_reference", f"unknown curve; one of {analytics.CURVE_KINDS}")
    if cfg["reference_eta"] is not None:
        cfg["reference_eta"] = _expect_number(cfg["reference_eta"], "config.reference_eta", 0.0, 1.0)
    if cfg["emit_trajectory"] is not None:
        cfg["emit_trajectory"] = _expect_int(cfg["emit_trajectory"], "config.emit_trajectory", lo=0)
    cfg["initial"] = _parse_initial(cfg["initial_state"], "config.initial_state")
    return cfg


def trajectory_config(cfg: dict, seed_override=None, stride_override=None) -> TrajectoryConfig:
    return TrajectoryConfig.build(
        gamma=cfg["gamma_mhz"],
        dt=cfg["dt_us"],
        total_time=cfg["total_time_us"],
        scheme=cfg["scheme"],
        theta=np.deg2rad(cfg["theta_deg"]),
        vartheta=np.deg2rad(cfg["vartheta_deg"]),
        eta3=cfg["eta3"],
        eta4=cfg["eta4"],
        initial=cfg["initial"],
        seed=cfg["seed"] if seed_override is None else seed_override,
        snapshot_stride=cfg["snapshot_stride"] if stride_override is None else stride_override,
    )


# ---------------------------------------------------------------------------
# output helpers

def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return f"{value:.12g}"
    return str(value)


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Manifest:
    def __init__(self, command: str, config_echo: dict, seed, out_dir: Path):
        self.data = {
            "command": command,
            "config": config_echo,
            "master_seed": seed,
            "code_version": __version__,
            "outputs": {},
        }
        self.out_dir = out_dir
        self.t0 = time.monotonic()

    def add(self, path: Path):
        self.data["outputs"][path.name] = _digest(path)

    def write(self):
        self.data["runtime_seconds"] = round(time.monotonic() - self.t0, 3)
        path = self.out_dir / "manifest.json"
        path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def _config_echo(cfg: dict) -> dict:
    echo = {k: v for k, v in cfg.items() if k != "initial"}
    return echo


def _resolve_threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"environment variable {THREADS_ENV}={env!r} is not an integer")
    return 1


# ---------------------------------------------------------------------------
# subcommands

def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    tcfg = trajectory_config(cfg, args.seed, args.snapshot_stride)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = Manifest("simulate", _config_echo(cfg), tcfg.seed, out_dir)

    summary = run_ensemble(
        tcfg,
        cfg["trajectories"],
        threads=_resolve_threads(args),
        capture_threshold=cfg["capture_threshold"],
    )
    reference = None
    if cfg["analytic_reference"]:
        eta = cfg["reference_eta"]
        if eta is None and cfg["analytic_reference"].startswith(("pd_eta", "hom_eta")):
            eta = cfg["eta3"]
        reference = analytics.closed_form_curve(
            analytics.CurveSpec(cfg["analytic_reference"], tcfg.gamma, summary.times, eta)
        )
    header = ["time_us", "mean_concurrence", "std_concurrence", "mean_purity"]
    columns = [summary.times, summary.mean_concurrence, summary.std_concurrence, summary.mean_purity]
    if reference is not None:
        header.append("analytic_reference")
        columns.append(reference)
    path = out_dir / "ensemble.csv"
    write_csv(path, header, zip(*columns))
    manifest.add(path)

    if cfg["emit_trajectory"] is not None:
        record = run_trajectory(tcfg, index=cfg["emit_trajectory"])
        tpath = out_dir / f"trajectory_{cfg['emit_trajectory']}.csv"
        fields = ["clicks3", "clicks4", "r3", "r4", "r_i", "r_q", "r_x", "r_y", "j"]
        active = [f for f in fields if getattr(record.outcomes[0], f) is not None]
        rows = []
        for k, outcome in enumerate(record.outcomes):
            rows.append(
                [record.times[k + 1]]
                + [getattr(outcome, f) for f in active]
                + [record.concurrence[k + 1], record.purity[k + 1]]
            )
        write_csv(tpath, ["time_us"] + active + ["concurrence", "purity"], rows)
        manifest.add(tpath)
    manifest.write()
    return EXIT_OK


def cmd_bound(args) -> int:
    if args.kind not in BOUND_KINDS:
        raise ConfigError(f"bound kind must be one of {sorted(BOUND_KINDS)}")
    if args.kind != "pure_hom" and args.eta is None:
        raise ConfigError(f"bound kind {args.kind!r} needs --eta")
    times = np.linspace(0.0, args.tmax_us, args.points)
    spec = analytics.CurveSpec(BOUND_KINDS[args.kind], args.gamma_mhz, times, args.eta)
    curve = analytics.closed_form_curve(spec)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(
        "bound",
        {"kind": args.kind, "gamma_mhz": args.gamma_mhz, "eta": args.eta,
         "tmax_us": args.tmax_us, "points": args.points},
        None,
        out_dir,
    )
    path = out_dir / "bound.csv"
    write_csv(path, ["time_us", "concurrence_bound"], zip(times, curve))
    manifest.add(path)
    manifest.write()
    return EXIT_OK


def cmd_whichpath(args) -> int:
    theta, vartheta = np.deg2rad(args.theta_deg), np.deg2rad(args.vartheta_deg)
    grid = np.linspace(args.grid_min, args.grid_max, args.grid_points)
    xx, yy = np.meshgrid(grid, grid, indexing="ij")
    d1 = analytics.which_path_homodyne(xx, yy, theta, vartheta, source=1)
    d2 = analytics.which_path_homodyne(xx, yy, theta, vartheta, source=2)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(
        "whichpath",
        {"theta_deg": args.theta_deg, "vartheta_deg": args.vartheta_deg,
         "grid_min": args.grid_min, "grid_max": args.grid_max, "grid_points": args.grid_points},
        None,
        out_dir,
    )
    path = out_dir / "whichpath.csv"
    rows = zip(xx.ravel(), yy.ravel(), d1.ravel(), d2.ravel(), np.abs(d1 - d2).ravel())
    write_csv(path, ["X3", "X4", "density_source1", "density_source2", "abs_diff"], rows)
    manifest.add(path)
    manifest.write()
    return EXIT_OK


def cmd_maxstats(args) -> int:
    cfg = load_config(args.config)
    if cfg["scheme"] != "homodyne":
        raise ConfigError("config.scheme: maxstats requires the homodyne scheme")
    if cfg["capture_threshold"] is None:
        raise ConfigError("config.capture_threshold: required for maxstats")
    tcfg = trajectory_config(cfg, args.seed, args.snapshot_stride)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = Manifest("maxstats", _config_echo(cfg), tcfg.seed, out_dir)

    summary = run_ensemble(
        tcfg, cfg["trajectories"], threads=_resolve_threads(args),
        capture_threshold=cfg["capture_threshold"],
    )
    stats = analytics.max_conc_state_stats(summary.captures.states)

    mpath = out_dir / "maxstats_marginals.csv"
    rows = []
    for name, hist in (("B", stats.b_hist), ("C", stats.c_hist), ("E", stats.e_hist)):
        counts, edges = hist
        total = max(1, counts.sum())
        for i, count in enumerate(counts):
            rows.append([name, edges[i], edges[i + 1], int(count), count / total])
    write_csv(mpath, ["amplitude", "bin_left", "bin_right", "count", "rel_count"], rows)
    manifest.add(mpath)

    jpath = out_dir / "maxstats_joint.csv"
    jrows = []
    for pair, (x, y, xr, yr) in {
        "BC": (stats.b, stats.c, (0, 1), (-1, 1)),
        "BE": (stats.b, stats.e, (0, 1), (-1, 1)),
        "CE": (stats.c, stats.e, (-1, 1), (-1, 1)),
    }.items():
        counts, xe, ye = np.histogram2d(x, y, bins=40, range=(xr, yr))
        for i in range(counts.shape[0]):
            for j in range(counts.shape[1]):
                if counts[i, j]:
                    jrows.append([pair, xe[i], xe[i + 1], ye[j], ye[j + 1], int(counts[i, j])])
    write_csv(jpath, ["pair", "x_left", "x_right", "y_left", "y_right", "count"], jrows)
    manifest.add(jpath)

    spath = out_dir / "maxstats_summary.csv"
    write_csv(
        spath,
        ["n_captures", "a_violation_count", "max_abs_A", "skew_C", "skew_E",
         "b_mode_left", "b_mode_right", "norm_residual"],
        [[stats.n_states, stats.a_violations, stats.max_abs_a, stats.skew_c, stats.skew_e,
          stats.b_mode_bin[0], stats.b_mode_bin[1], stats.norm_residual]],
    )
    manifest.add(spath)
    manifest.write()
    return EXIT_OK


def cmd_smecheck(args) -> int:
    if args.scheme not in ("homodyne", "heterodyne"):
        raise ConfigError("smecheck scheme must be 'homodyne' or 'heterodyne'")
    rng = np.random.default_rng(args.seed if args.seed is not None else 7)
    states = []
    for _ in range(args.states):
        a = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        rho = a @ a.conj().T
        states.append(rho / np.trace(rho))
    quad_order = args.quad_order or (16 if args.scheme == "homodyne" else 10)
    corruption = 0.01 if args.inject_corruption else 0.0
    report = analytics.kraus_sme_order_test(
        args.scheme, states, quad_order=quad_order, corruption=corruption
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(
        "smecheck",
        {"scheme": args.scheme, "states": args.states, "quad_order": quad_order,
         "inject_corruption": bool(args.inject_corruption)},
        args.seed,
        out_dir,
    )
    path = out_dir / "smecheck.csv"
    write_csv(
        path,
        ["gamma_dt", "mean_difference_norm", "fitted_slope", "passed"],
        [[gdt, norm, report.slope, report.passed]
         for gdt, norm in zip(report.gamma_dts, report.mean_norms)],
    )
    manifest.add(path)
    manifest.write()
    verdict = "PASS" if report.passed else "FAIL"
    print(f"smecheck {args.scheme}: slope = {report.slope:.3f} "
          f"(required {report.slope_range[0]}..{report.slope_range[1]}) -> {verdict}")
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


# ---------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fluorpair",
        description="Stochastic trajectories of jointly monitored two-qubit fluorescence.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out-dir", default=".", help="directory for output files")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--threads", type=int, default=None,
                       help=f"worker processes (default: ${THREADS_ENV} or 1)")
        p.add_argument("--snapshot-stride", type=int, default=None)

    p = sub.add_parser("simulate", help="run a trajectory ensemble from a config file")
    p.add_argument("--config", required=True)
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bound", help="evaluate a concurrence bound curve")
    p.add_argument("kind", choices=sorted(BOUND_KINDS))
    p.add_argument("--gamma-mhz", type=float, default=1.0)
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--tmax-us", type=float, default=5.0)
    p.add_argument("--points", type=int, default=501)
    common(p)
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("whichpath", help="homodyne which-path densities on a grid")
    p.add_argument("--theta-deg", type=float, default=0.0)
    p.add_argument("--vartheta-deg", type=float, default=90.0)
    p.add_argument("--grid-min", type=float, default=-3.0)
    p.add_argument("--grid-max", type=float, default=3.0)
    p.add_argument("--grid-points", type=int, default=61)
    common(p)
    p.set_defaults(func=cmd_whichpath)

    p = sub.add_parser("maxstats", help="Bell-amplitude statistics of captured states")
    p.add_argument("--config", required=True)
    common(p)
    p.set_defaults(func=cmd_maxstats)

    p = sub.add_parser("smecheck", help="Kraus vs SME convergence-order test")
    p.add_argument("--scheme", required=True)
    p.add_argument("--states", type=int, default=8)
    p.add_argument("--quad-order", type=int, default=None)
    p.add_argument("--inject-corruption", action="store_true",
                   help="negative control: perturb one Kraus entry by 1%%")
    common(p)
    p.set_defaults(func=cmd_smecheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StepError, PovmError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
