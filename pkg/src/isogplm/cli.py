"""Command-line interface: ``isogplm {fit,bic,simulate,calibrate}``.

Exit codes: 0 success, 1 usage or input error, 2 numerical non-convergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .data import DataError, read_csv
from .fit import FitConfig, FitError, bic_select, fit, jackknife_se
from .scale_calibration import CalibrationError, ShapeCalibration
from .simulate import (SCHEMES, ScenarioConfig, run_campaign, write_records,
                       write_table)

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED = 0, 1, 2


class UsageError(Exception):
    pass


def _sig6(obj):
    """Round every float in a JSON-like structure to 6 significant digits."""
    if isinstance(obj, float):
        return float(f"{obj:.6g}") if math.isfinite(obj) else str(obj)
    if isinstance(obj, dict):
        return {k: _sig6(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sig6(v) for v in obj]
    return obj


def _k_arg(text):
    if text == "auto":
        return None
    try:
        k = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("k must be an integer or 'auto'") from None
    return k


def _fit_config(args) -> FitConfig:
    if not 0.0 < args.efficiency < 1.0:
        raise UsageError(f"efficiency must lie in (0, 1), got {args.efficiency}")
    try:
        return FitConfig(
            family=args.family, robust=args.estimator == "robust",
            order=args.order, placement=args.placement, k=args.k,
            efficiency=args.efficiency, n_subsamples=args.subsamples,
            seed=args.seed, c_w=None if args.c_w <= 0 else args.c_w,
            log_scale=args.log_scale)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _add_fit_options(p):
    p.add_argument("input", help="CSV with columns y, t, x1..xp")
    p.add_argument("--family", choices=["log_gamma", "identity", "logistic"],
                   default="log_gamma")
    p.add_argument("--estimator", choices=["robust", "classical"], default="robust")
    p.add_argument("--order", type=int, default=4, help="spline order (4 = cubic)")
    p.add_argument("--placement", choices=["uniform", "quantile"], default="uniform")
    p.add_argument("--efficiency", type=float, default=0.9)
    p.add_argument("--subsamples", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--c-w", type=float, default=4.685,
                   help="leverage weight constant; <= 0 disables weights")
    p.add_argument("--log-scale", action="store_true",
                   help="responses are already log responses (log-Gamma family)")
    p.add_argument("--rescale-t", action="store_true",
                   help="min-max rescale t onto [0, 1]")


def cmd_fit(args) -> int:
    cfg = _fit_config(args)
    data = read_csv(args.input, rescale_t=args.rescale_t)
    result = fit(data, cfg)
    if args.jackknife:
        result.jackknife_sd = jackknife_se(data, cfg, result)
    out = Path(args.output)
    payload = result.to_dict()
    if data.meta.get("t_rescale"):
        payload["t_rescale"] = data.meta["t_rescale"]
    out.write_text(json.dumps(_sig6(payload), indent=2) + "\n")
    grid_path = Path(args.grid) if args.grid else out.with_name(out.stem + "_grid.csv")
    grid = np.linspace(0.0, 1.0, args.grid_points)
    values = result.eta(grid)
    with open(grid_path, "w") as fh:
        fh.write("t,eta_hat\n")
        for t, v in zip(grid, values):
            fh.write(f"{t:.6g},{v:.6g}\n")
    if not result.converged:
        print(f"warning: fit did not converge ({result.report.termination}; "
              f"flags: {result.flags})", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_bic(args) -> int:
    cfg = _fit_config(args)
    data = read_csv(args.input, rescale_t=args.rescale_t)
    k_range = None
    if args.k_min is not None or args.k_max is not None:
        if args.k_min is None or args.k_max is None or args.k_min > args.k_max:
            raise UsageError("--k-min and --k-max must be given together with k-min <= k-max")
        k_range = range(args.k_min, args.k_max + 1)
    k_star, result, curve = bic_select(data, cfg, k_range)
    lines = ["k\tbic\tselected"]
    for k, v in curve.items():
        lines.append(f"{k}\t{v:.6g}\t{int(k == k_star)}")
    text = "\n".join(lines) + "\n"
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK if result.converged else EXIT_NONCONVERGED


def cmd_simulate(args) -> int:
    if args.replications <= 0:
        raise UsageError("--replications must be positive")
    if args.parallel <= 0:
        raise UsageError("--parallel must be positive")
    schemes = args.schemes.split(",")
    bad = [s for s in schemes if s not in SCHEMES]
    if bad:
        raise UsageError(f"unknown contamination schemes {bad}; choose from {SCHEMES}")
    estimators = args.estimators.split(",")
    try:
        fit_cfg = FitConfig(efficiency=args.efficiency,
                            n_subsamples=args.subsamples, seed=args.seed,
                            k=args.k, full_bic_curve=False)
        reports = []
        for scheme in schemes:
            sc = ScenarioConfig(n=args.n, beta0=args.beta0, eta0=args.model,
                                alpha=args.alpha, contamination=scheme,
                                replications=args.replications, seed=args.seed)
            reports.append(run_campaign(sc, estimators, args.parallel, fit_cfg))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    write_table(args.output, reports)
    if args.records:
        write_records(args.records, reports)
    return EXIT_NONCONVERGED if any(r.flagged for r in reports
                                    if r.scenario.replications > 1) else EXIT_OK


def _alpha_grid(text):
    try:
        if ":" in text:
            lo, hi, num = text.split(":")
            grid = np.geomspace(float(lo), float(hi), int(num))
        else:
            grid = np.array([float(a) for a in text.split(",")])
    except ValueError:
        raise UsageError(f"cannot parse alpha grid {text!r}") from None
    if grid.size == 0 or not np.all(np.isfinite(grid)) or np.any(grid <= 0):
        raise UsageError("alpha grid must contain positive finite values")
    return grid


def cmd_calibrate(args) -> int:
    grid = _alpha_grid(args.alphas)
    try:
        effs = [float(e) for e in args.efficiencies.split(",")]
    except ValueError:
        raise UsageError(f"cannot parse efficiencies {args.efficiencies!r}") from None
    if any(not 0.0 < e < 1.0 for e in effs):
        raise UsageError("efficiencies must lie in (0, 1)")
    ShapeCalibration(b=args.b).export_csv(args.output, grid, effs)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="isogplm",
        description="Robust fits of isotonic generalized partly linear models.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit one model and write JSON plus an eta grid")
    _add_fit_options(p)
    p.add_argument("--k", type=_k_arg, default=None,
                   help="number of basis functions or 'auto' for BIC (default)")
    p.add_argument("-o", "--output", default="fit.json")
    p.add_argument("--grid", default=None, help="grid CSV (default <output>_grid.csv)")
    p.add_argument("--grid-points", type=int, default=201)
    p.add_argument("--jackknife", action="store_true",
                   help="add leave-one-out standard deviations of beta")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("bic", help="BIC curve over the number of basis functions")
    _add_fit_options(p)
    p.add_argument("--k-min", type=int, default=None)
    p.add_argument("--k-max", type=int, default=None)
    p.add_argument("-o", "--output", default=None, help="TSV path (default stdout)")
    p.set_defaults(func=cmd_bic, k=None)

    p = sub.add_parser("simulate", help="Monte Carlo campaign")
    p.add_argument("--model", choices=["model1", "model2"], default="model1")
    p.add_argument("--schemes", default="C0,C1,C2,C3")
    p.add_argument("--estimators", default="classical,robust")
    p.add_argument("--replications", "--nr", type=int, default=200)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--beta0", type=float, default=2.0)
    p.add_argument("--alpha", type=float, default=3.0)
    p.add_argument("--efficiency", type=float, default=0.9)
    p.add_argument("--subsamples", type=int, default=50)
    p.add_argument("--k", type=_k_arg, default=None)
    p.add_argument("--seed", type=int, default=20130101)
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("-o", "--output", default="table.tsv")
    p.add_argument("--records", default=None, help="raw per-replication CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", help="export the shape calibration table")
    p.add_argument("--alphas", default="0.5,1,2,3,5,10,20",
                   help="comma list or lo:hi:num (log spaced)")
    p.add_argument("--efficiencies", default="0.90,0.95")
    p.add_argument("--b", type=float, default=0.5)
    p.add_argument("-o", "--output", default="calibration.csv")
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (FitError, CalibrationError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
