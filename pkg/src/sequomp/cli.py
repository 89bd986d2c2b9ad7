"""Command-line front end.

Subcommands:

``bounds``     evaluate the measurement bounds for one parameter point
``calibrate``  find the threshold that meets the configured false-alarm rate
``sweep``      calibrate and estimate P_MD over a grid of m
``figure``     run one of the canonical experiments (somp-bound, compare, omp)

Exit status is 0 on success, 2 for configuration or usage errors and 3 for
runtime or numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from . import __version__, bounds
from .montecarlo import (
    CalibrationError,
    ExperimentConfig,
    ExperimentResult,
    calibrate_threshold,
    estimate_rates,
    first_m_below,
    sweep_m,
)
from .power_shaping import ShapingSpec, gamma_for_theta, make_profile
from .signal_model import ProblemDims

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

SWEEP_COLUMNS = ["detector", "profile", "theta", "n", "lambda", "snr_db", "pfa_target", "m", "mu",
                 "pmd_hat", "pmd_se", "pfa_hat", "trials", "seed"]
BOUND_COLUMNS = ["bound_id", "m", "assumptions"]

# canonical setup of the simulation figures
FIGURE_BASE = {"dims": {"n": 100, "m": 100, "lambda": 0.1}, "snr_db": 20.0, "pfa_target": 1e-3,
               "theta": 0.1, "trials": 1000, "calibration_trials": 3000, "master_seed": 0}
FIGURE_CURVES = {
    "compare": [("thresholding", "constant"), ("sequomp", "constant"), ("sequomp", "robust")],
    "omp": [("omp", "constant"), ("omp", "robust")],
}
FIGURE_GRIDS = {"compare": "50:450:5", "omp": "30:200:5"}
SOMP_BOUND_CELLS = [(0.1, 10.0), (0.1, 20.0), (0.2, 10.0), (0.2, 20.0)]
CROSSING_LEVEL = 0.01


class ConfigError(ValueError):
    """Bad user input: exit status 2."""


# ---------------------------------------------------------------- helpers

def parse_grid(text: str) -> List[int]:
    """Parse ``a:b:step`` into the inclusive list a, a+step, ..., <= b."""
    parts = text.split(":")
    if len(parts) not in (2, 3):
        raise ConfigError(f"--m-grid must look like a:b:step, got {text!r}")
    try:
        a, b = int(parts[0]), int(parts[1])
        step = int(parts[2]) if len(parts) == 3 else 1
    except ValueError:
        raise ConfigError(f"--m-grid entries must be integers, got {text!r}") from None
    if step <= 0:
        raise ConfigError("--m-grid step must be positive")
    grid = list(range(a, b + 1, step))
    if not grid:
        raise ConfigError(f"--m-grid {text!r} is empty")
    if grid[0] < 1:
        raise ConfigError("--m-grid values must be positive")
    return grid


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(raw)


def config_from_dict(raw) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    try:
        return ExperimentConfig.from_dict(raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def apply_overrides(config: ExperimentConfig, args) -> ExperimentConfig:
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["master_seed"] = args.seed
    if getattr(args, "trials", None) is not None:
        changes["trials"] = args.trials
    if getattr(args, "calibration_trials", None) is not None:
        changes["calibration_trials"] = args.calibration_trials
    try:
        return replace(config, **changes) if changes else config
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def sweep_rows(config: ExperimentConfig, results: Sequence[ExperimentResult]) -> List[dict]:
    return [{
        "detector": config.detector, "profile": config.profile_kind, "theta": config.theta,
        "n": config.dims.n, "lambda": config.dims.lam, "snr_db": config.snr_db,
        "pfa_target": config.pfa_target, "m": r.m, "mu": r.mu, "pmd_hat": r.pmd_hat,
        "pmd_se": r.pmd_se, "pfa_hat": r.pfa_hat, "trials": r.trials, "seed": r.seed,
    } for r in results]


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: _cell(row[k]) for k in columns})
    return buf.getvalue()


def _check_out_dir(out: Path):
    probe = out
    while not probe.exists():
        probe = probe.parent
    if not probe.is_dir() or not os.access(probe, os.W_OK):
        raise ConfigError(f"output location {out} is not writable")


def write_bundle(out: Path, files: Dict[str, str], manifest: dict) -> Path:
    """Write CSV files plus a manifest listing them."""
    out.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (out / name).write_text(text, encoding="utf-8")
    manifest = dict(manifest, outputs=sorted(files))
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_manifest(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            man = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc}") from exc
    if not isinstance(man, dict) or "command" not in man:
        raise ConfigError(f"{path} is not a run manifest")
    return man


# ---------------------------------------------------------------- bounds

def bounds_rows(n, k, snr, mar, delta=0.0, C=1.0, theta=0.1, gamma=None) -> List[dict]:
    """Evaluate every bound at one parameter point.

    ``snr = inf`` stands for the SNR*MAR -> infinity regime.
    """
    if n < 2 or not 0 < k < n:
        raise ConfigError("need n >= 2 and 0 < k < n")
    if not mar > 0 or mar > 1:
        raise ConfigError("MAR must lie in (0, 1]")
    if delta < 0:
        raise ConfigError("delta must be nonnegative")
    lam = k / n
    high = math.isinf(snr)
    regime = "SNR*MAR->inf" if high else f"SNR={snr!r};MAR={mar!r}"
    rows = [
        ("ml_necessary", bounds.ml_necessary_m(k, n, snr, mar, delta), f"{regime};delta={delta!r}"),
        ("ml_sufficient", bounds.ml_sufficient_m(k, n, snr, mar, C), f"{regime};C={C!r}"),
        ("thresholding", bounds.thresholding_sufficient_m(k, n, snr, mar, delta), f"{regime};delta={delta!r}"),
        ("lasso", bounds.lasso_omp_scaling_m(k, n, "lasso"), "SNR*MAR->inf;scaling law"),
        ("omp", bounds.lasso_omp_scaling_m(k, n, "omp"), "SNR*MAR->inf;scaling law"),
        ("sequomp_known_ranks", bounds.sequomp_known_ranks_m(n, lam, snr, mar, delta),
         f"{regime};delta={delta!r};ordering known"),
    ]
    spec = ShapingSpec(n, lam, snr, 0.0)
    rows.append(("sequomp_best_profile",
                 bounds.sequomp_sufficient_m(n, lam, gamma_for_theta(spec), delta),
                 f"{regime};delta={delta!r};optimal profile"))
    if not high:
        rows.append(("sequomp_best_profile_large_n", bounds.sequomp_best_profile_m(n, lam, snr, delta),
                     f"{regime};delta={delta!r};optimal profile;large n"))
    rows.append(("sequomp_robust", bounds.sequomp_sufficient_m(n, lam, gamma_for_theta(replace(spec, theta=theta)), delta),
                 f"{regime};delta={delta!r};robust profile theta={theta!r}"))
    if gamma is not None:
        rows.append(("sequomp_gamma", bounds.sequomp_sufficient_m(n, lam, gamma, delta),
                     f"gamma={gamma!r};delta={delta!r}"))
    return [{"bound_id": b, "m": float(m), "assumptions": a} for b, m, a in rows]


def cmd_bounds(args) -> int:
    if (args.k is None) == (args.lam is None):
        raise ConfigError("give exactly one of --k and --lambda")
    k = args.k if args.k is not None else args.lam * args.n
    if args.high_snr:
        snr = math.inf
    elif args.snr is not None:
        snr = args.snr
    elif args.snr_db is not None:
        snr = 10 ** (args.snr_db / 10)
    else:
        raise ConfigError("give --snr, --snr-db or --high-snr")
    if not snr > 0:
        raise ConfigError("SNR must be positive")
    try:
        rows = bounds_rows(args.n, k, snr, args.mar, args.delta, args.C, args.theta, args.gamma)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    text = csv_text(BOUND_COLUMNS, rows)
    if args.out:
        _check_out_dir(Path(args.out).parent)
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------- calibrate / sweep

def cmd_calibrate(args) -> int:
    config = apply_overrides(load_config(args.config), args)
    m = args.m if args.m is not None else config.dims.m
    if m < 1:
        raise ConfigError("--m must be positive")
    mu = calibrate_threshold(config, m, args.threads)
    out = {"m": m, "mu": mu, "pfa_target": config.pfa_target,
           "calibration_trials": config.n_calibration, "seed": config.master_seed}
    if args.estimate:
        res = estimate_rates(config, m, mu, args.threads)
        out.update(pfa_hat=res.pfa_hat, pmd_hat=res.pmd_hat, pmd_se=res.pmd_se, trials=res.trials)
    sys.stdout.write(json.dumps(out, sort_keys=True) + "\n")
    return EXIT_OK


def run_sweep(config: ExperimentConfig, grid: List[int], out: Path, threads: int = 1) -> Path:
    start = time.perf_counter()
    results = sweep_m(config, grid, threads)
    files = {"sweep.csv": csv_text(SWEEP_COLUMNS, sweep_rows(config, results))}
    manifest = {"command": "sweep", "config": config.to_dict(), "m_grid": grid,
                "master_seed": config.master_seed, "version": __version__,
                "wall_time_s": time.perf_counter() - start}
    return write_bundle(out, files, manifest)


def cmd_sweep(args) -> int:
    if args.manifest:
        man = read_manifest(args.manifest)
        if man["command"] != "sweep":
            raise ConfigError(f"manifest records a {man['command']!r} run, not a sweep")
        config = config_from_dict(man["config"])
        grid = [int(m) for m in man["m_grid"]]
        if not grid:
            raise ConfigError("manifest m grid is empty")
        out = Path(args.out) if args.out else Path(args.manifest).parent
    else:
        if not args.config or not args.m_grid or not args.out:
            raise ConfigError("sweep needs --config, --m-grid and --out (or --manifest)")
        config = apply_overrides(load_config(args.config), args)
        grid = parse_grid(args.m_grid)
        out = Path(args.out)
    _check_out_dir(out)
    path = run_sweep(config, grid, out, args.threads)
    sys.stderr.write(f"wrote {path}\n")
    return EXIT_OK


# ---------------------------------------------------------------- figures

def figure_config(detector, profile, params) -> ExperimentConfig:
    d = dict(FIGURE_BASE)
    d.update(detector=detector, profile_kind=profile)
    for key in ("master_seed", "trials", "calibration_trials"):
        if params.get(key) is not None:
            d[key] = params[key]
    return config_from_dict(d)


def somp_bound_theory(lam, snr_db, n=100, theta=0.1):
    """Theoretical m for robust-profile SequOMP at one (lambda, SNR) cell."""
    gamma = gamma_for_theta(ShapingSpec(n, lam, 10 ** (snr_db / 10), theta))
    return gamma, bounds.sequomp_sufficient_m(n, lam, gamma)


def _somp_grid(m_theory):
    lo = max(5, int(5 * round(0.5 * m_theory / 5)))
    hi = int(5 * math.ceil(1.5 * m_theory / 5))
    return list(range(lo, hi + 1, 10))


def run_figure(which: str, params: dict, out: Path, threads: int = 1) -> Path:
    start = time.perf_counter()
    grid = parse_grid(params["m_grid"]) if params.get("m_grid") else None
    data, files, configs = [], {}, []
    if which == "somp-bound":
        theory = []
        for lam, snr_db in SOMP_BOUND_CELLS:
            base = figure_config("sequomp", "robust", params)
            cfg = replace(base, dims=ProblemDims(base.dims.n, base.dims.m, lam), snr_db=snr_db)
            configs.append(cfg.to_dict())
            gamma, m_theory = somp_bound_theory(lam, snr_db, cfg.dims.n, cfg.theta)
            m_eval = math.ceil(m_theory)
            results = sweep_m(cfg, grid or _somp_grid(m_theory), threads)
            data += sweep_rows(cfg, results)
            mu = calibrate_threshold(cfg, m_eval, threads)
            at = estimate_rates(cfg, m_eval, mu, threads)
            theory.append({"lambda": lam, "snr_db": snr_db, "theta": cfg.theta, "gamma": gamma,
                           "m_theory": m_theory, "m_eval": m_eval, "mu": mu,
                           "pmd_hat": at.pmd_hat, "pmd_se": at.pmd_se})
        files["somp-bound_theory.csv"] = csv_text(
            ["lambda", "snr_db", "theta", "gamma", "m_theory", "m_eval", "mu", "pmd_hat", "pmd_se"], theory)
    elif which in FIGURE_CURVES:
        grid = grid or parse_grid(FIGURE_GRIDS[which])
        crossings, theory = [], []
        for detector, profile in FIGURE_CURVES[which]:
            cfg = figure_config(detector, profile, params)
            configs.append(cfg.to_dict())
            results = sweep_m(cfg, grid, threads)
            data += sweep_rows(cfg, results)
            m_cross = first_m_below(results, CROSSING_LEVEL)
            if m_cross is None:
                sys.stderr.write(f"warning: {detector}/{profile} never reached P_MD <= 1% on the grid\n")
            else:
                crossings.append({"detector": detector, "profile": profile, "m_1pct": m_cross})
            theory.append(_curve_theory(cfg))
        files[f"{which}_crossings.csv"] = csv_text(["detector", "profile", "m_1pct"], crossings)
        files[f"{which}_theory.csv"] = csv_text(["detector", "profile", "bound_id", "gamma", "m_theory"], theory)
    else:
        raise ConfigError(f"unknown figure {which!r}")
    files[f"{which}.csv"] = csv_text(SWEEP_COLUMNS, data)
    manifest = {"command": "figure", "which": which, "params": params, "configs": configs,
                "master_seed": configs[0]["master_seed"], "version": __version__,
                "wall_time_s": time.perf_counter() - start}
    return write_bundle(out, files, manifest)


def _curve_theory(cfg: ExperimentConfig) -> dict:
    n, lam = cfg.dims.n, cfg.dims.lam
    prof = make_profile(cfg.profile_kind, n, lam, cfg.snr, cfg.theta)
    gamma = prof.msinr()
    if cfg.detector == "thresholding":
        bound_id, m = "thresholding", bounds.thresholding_sufficient_m(lam * n, n, cfg.snr, prof.mar())
    elif cfg.detector == "omp":
        bound_id, m = "omp", bounds.lasso_omp_scaling_m(lam * n, n, "omp")
    else:
        bound_id, m = "sequomp", bounds.sequomp_sufficient_m(n, lam, gamma)
    return {"detector": cfg.detector, "profile": cfg.profile_kind, "bound_id": bound_id,
            "gamma": gamma, "m_theory": m}


def cmd_figure(args) -> int:
    if args.manifest:
        man = read_manifest(args.manifest)
        if man["command"] != "figure":
            raise ConfigError(f"manifest records a {man['command']!r} run, not a figure")
        which, params = man["which"], dict(man["params"])
        out = Path(args.out) if args.out else Path(args.manifest).parent
    else:
        if not args.which or not args.out:
            raise ConfigError("figure needs a figure name and --out (or --manifest)")
        which = args.which
        params = {"m_grid": args.m_grid, "master_seed": args.seed, "trials": args.trials,
                  "calibration_trials": args.calibration_trials}
        if args.m_grid:
            parse_grid(args.m_grid)
        out = Path(args.out)
    if which not in ("somp-bound", "compare", "omp"):
        raise ConfigError(f"unknown figure {which!r}")
    _check_out_dir(out)
    path = run_figure(which, params, out, args.threads)
    sys.stderr.write(f"wrote {path}\n")
    return EXIT_OK


# ---------------------------------------------------------------- entry point

def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _seed(text):
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sequomp", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bounds", help="evaluate measurement bounds")
    b.add_argument("--n", type=int, required=True)
    b.add_argument("--k", type=float)
    b.add_argument("--lambda", dest="lam", type=float)
    b.add_argument("--snr", type=float, help="total SNR, linear")
    b.add_argument("--snr-db", type=float)
    b.add_argument("--high-snr", action="store_true", help="evaluate in the SNR*MAR -> infinity limit")
    b.add_argument("--mar", type=float, default=1.0)
    b.add_argument("--delta", type=float, default=0.0)
    b.add_argument("--C", type=float, default=1.0)
    b.add_argument("--theta", type=float, default=0.1)
    b.add_argument("--gamma", type=float, help="also evaluate the SequOMP bound at this MSINR")
    b.add_argument("--out", help="CSV file (default: stdout)")
    b.set_defaults(func=cmd_bounds)

    def run_flags(sp):
        sp.add_argument("--seed", type=_seed)
        sp.add_argument("--trials", type=_positive_int)
        sp.add_argument("--calibration-trials", type=_positive_int)
        sp.add_argument("--threads", type=_positive_int, default=1)

    c = sub.add_parser("calibrate", help="calibrate the detection threshold")
    c.add_argument("--config", required=True)
    c.add_argument("--m", type=int)
    c.add_argument("--estimate", action="store_true", help="also estimate P_FA and P_MD at the threshold")
    run_flags(c)
    c.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("sweep", help="P_MD over a grid of m")
    s.add_argument("--config")
    s.add_argument("--m-grid")
    s.add_argument("--out")
    s.add_argument("--manifest", help="rerun from a previous manifest")
    run_flags(s)
    s.set_defaults(func=cmd_sweep)

    f = sub.add_parser("figure", help="run a canonical experiment")
    f.add_argument("which", nargs="?", choices=["somp-bound", "compare", "omp"])
    f.add_argument("--out")
    f.add_argument("--m-grid")
    f.add_argument("--manifest", help="rerun from a previous manifest")
    run_flags(f)
    f.set_defaults(func=cmd_figure)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_CONFIG
    except (CalibrationError, ArithmeticError, ValueError, RuntimeError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
