"""Two-stage estimation and recycled-bootstrap intervals for hierarchical NLS models.

Exit codes: 0 success, 1 estimation failure, 2 input or configuration error.
"""

import argparse
import logging
import os
import sys
import time

import numpy as np

from . import __version__, io
from .errors import EstimationError, InvalidArgumentError, RecycledStsError
from .models import MODELS, get_model
from .nls import FitOptions
from .recycle import CI_METHODS, RecycleConfig, ks_to_normal, recycle_bootstrap
from .rng import root_key
from .simulate import run_coverage_experiment, run_mse_experiment
from .sts import fit_sts
from .weights import SCHEMES, check_assumption_w, get_scheme

log = logging.getLogger("recycled_sts")

EXIT_OK, EXIT_ESTIMATION, EXIT_INPUT = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on its own; route through main instead so
    # the message format matches the other input errors.
    def error(self, message):
        raise UsageError(message)


def _vector(text):
    try:
        return np.array([float(v) for v in text.split(",") if v.strip()])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _add_fit_flags(p):
    p.add_argument("dataset", help="CSV file with header id,time,value")
    p.add_argument("--model", required=True, choices=sorted(MODELS))
    p.add_argument("--init", required=True, type=_vector,
                   help="comma-separated starting values shared by all individuals")
    p.add_argument("--out", default=".", help="output directory (created if missing)")
    p.add_argument("--max-iterations", type=int, default=FitOptions.max_iterations)
    p.add_argument("--multistart", type=int, default=1)


def build_parser():
    ap = _Parser(prog="recycled-sts", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="two-stage fit of a dataset")
    _add_fit_flags(p)

    p = sub.add_parser("recycle", help="two-stage fit plus recycled-bootstrap intervals")
    _add_fit_flags(p)
    p.add_argument("--B", type=int, default=1000, help="number of replicates (>= 100)")
    p.add_argument("--inner-weights", default="dirichlet", choices=SCHEMES)
    p.add_argument("--outer-weights", default="dirichlet", choices=SCHEMES)
    p.add_argument("--ci-level", type=float, default=0.95)
    p.add_argument("--ci-method", default="basic_studentized", choices=CI_METHODS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--debug-unit-weights", action="store_true",
                   help="use constant unit weights; the interval collapses to the point estimate")

    p = sub.add_parser("simulate", help="run a Monte Carlo experiment from a config")
    p.add_argument("config", help="config file path or bundled config name")
    p.add_argument("--out", default=".", help="output directory (created if missing)")
    p.add_argument("--paper-scale", action="store_true",
                   help="use 1000 MSE / 2000 coverage replicates and B = 1000")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--no-svg", action="store_true", help="skip the SVG line plots")
    p.add_argument("--M-rep", dest="M_rep", type=int, default=None,
                   help="override the replicate count of the config")
    p.add_argument("--dry-run", action="store_true",
                   help="resolve the config and write the manifest without simulating")

    p = sub.add_parser("check-weights", help="moment diagnostics for a weight scheme")
    p.add_argument("--weights", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--draws", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)

    sub.add_parser("list-configs", help="names of the bundled experiment configs")
    return ap


def _fit_dataset(args):
    model = get_model(args.model)
    data = io.read_dataset(args.dataset)
    opts = FitOptions(max_iterations=args.max_iterations, multistart_count=args.multistart)
    if args.init.size != model.p:
        raise InvalidArgumentError(f"--init needs {model.p} values for {args.model}")
    fit = fit_sts(model, data, args.init, opts)
    return model, data, fit


def _write_fit(out, model, data, fit):
    order = {k: i for i, k in enumerate(fit.ids)}
    rows = []
    for ind in data.individuals:
        i = order.get(ind.id)
        theta = fit.theta_hat_i[i] if i is not None else np.full(model.p, np.nan)
        rows.append([ind.id, ind.n, "used" if i is not None else "dropped", *theta])
    io.write_table(os.path.join(out, "individuals.csv"),
                   ["id", "n", "status", *[f"theta{k + 1}" for k in range(model.p)]], rows)
    summary = [["theta_sts", *fit.theta_sts], ["sigma_sq_M", fit.sigma_sq_M]]
    summary += [[f"S2_row{k + 1}", *fit.S2[k]] for k in range(model.p)]
    if fit.D_hat is not None:
        summary.append(["nu_hat", fit.nu_hat])
        summary += [[f"D_hat_row{k + 1}", *fit.D_hat[k]] for k in range(model.p)]
    if fit.lambda_hat_sq_uncorrected is not None:
        summary.append(["lambda_hat_sq", fit.lambda_hat_sq_uncorrected])
    summary += [["N_used", fit.N_used], ["dropped", fit.dropped]]
    io.write_table(os.path.join(out, "summary.csv"), ["quantity", "values"], summary)
    return summary


def _print_rows(rows):
    for r in rows:
        print("  ".join([str(r[0]).ljust(14)] + [io.fmt(v) for v in r[1:]]))


def cmd_fit(args):
    t0 = time.time()
    model, data, fit = _fit_dataset(args)
    os.makedirs(args.out, exist_ok=True)
    _print_rows(_write_fit(args.out, model, data, fit))
    io.write_manifest(os.path.join(args.out, "manifest.json"), "fit", None,
                      {"dataset": os.path.abspath(args.dataset), "model": args.model,
                       "init": args.init.tolist()},
                      time.time() - t0, {"individuals": fit.dropped})
    return EXIT_OK


def cmd_recycle(args):
    t0 = time.time()
    model, data, fit = _fit_dataset(args)
    if args.debug_unit_weights:
        inner = outer = get_scheme("unit")
    else:
        inner, outer = get_scheme(args.inner_weights), get_scheme(args.outer_weights)
    cfg = RecycleConfig(B=args.B, inner_scheme=inner, outer_scheme=outer,
                        ci_level=args.ci_level, ci_method=args.ci_method,
                        fit_options=FitOptions(max_iterations=args.max_iterations))
    run = recycle_bootstrap(model, data, fit, cfg, int(root_key(args.seed)), threads=args.threads)
    os.makedirs(args.out, exist_ok=True)
    _write_fit(args.out, model, data, fit)
    io.write_table(os.path.join(args.out, "replicates.csv"),
                   [f"theta{k + 1}" for k in range(model.p)], run.replicates)
    rows = []
    for k in range(model.p):
        lam = np.sqrt(fit.S2[k, k] / (fit.N_used - 1))
        ks = ks_to_normal(run, lam, k) if lam > 0 and run.replicates.shape[0] else float("nan")
        rows.append([f"theta{k + 1}", fit.theta_sts[k], *run.intervals[k], ks])
    io.write_table(os.path.join(args.out, "intervals.csv"),
                   ["parameter", "estimate", "lo", "hi", "ks_to_normal"], rows)
    print(f"{run.replicates.shape[0]} of {run.B} replicates kept, tau_N = {io.fmt(run.tau_N)}")
    _print_rows(rows)
    if run.unreliable:
        print(f"warning: {run.drop_count} of {run.B} replicates dropped; intervals unreliable",
              file=sys.stderr)
    io.write_manifest(
        os.path.join(args.out, "manifest.json"), "recycle", args.seed,
        {"dataset": os.path.abspath(args.dataset), "model": args.model,
         "init": args.init.tolist(), "B": args.B, "inner_weights": inner.kind,
         "outer_weights": outer.kind, "ci_level": args.ci_level, "ci_method": args.ci_method},
        time.time() - t0, {"individuals": fit.dropped, "replicates": run.drop_count},
        {"retries": run.retries, "unreliable": run.unreliable},
    )
    return EXIT_OK


def cmd_simulate(args):
    t0 = time.time()
    cfg = io.load_config(io.resolve_config_path(args.config), paper_scale=args.paper_scale)
    if args.M_rep is not None:
        if args.M_rep < 1:
            raise InvalidArgumentError("--M-rep must be positive")
        cfg.M_rep = args.M_rep
    os.makedirs(args.out, exist_ok=True)
    if args.dry_run:
        io.write_manifest(os.path.join(args.out, "manifest.json"), "simulate", cfg.base.seed,
                          cfg.as_dict(), time.time() - t0, {},
                          {"M_rep": cfg.M_rep, "paper_scale": args.paper_scale,
                           "dry_run": True, "cells": len(cfg.grid)})
        print(f"{len(cfg.grid)} cells, M_rep = {cfg.M_rep}; nothing run")
        return EXIT_OK
    if cfg.experiment == "mse":
        report = run_mse_experiment(cfg.grid, cfg.base, cfg.M_rep, threads=args.threads)
        metrics = ("mse", "drop_rate")
    else:
        report = run_coverage_experiment(cfg.grid, cfg.base, cfg.M_rep, mode=cfg.mode,
                                         cfg=cfg.recycle, threads=args.threads,
                                         level=cfg.ci_level)
        metrics = ("coverage", "mean_ci_length", "drop_rate")
    io.write_table(os.path.join(args.out, "report.csv"), list(report.COLUMNS), report.rows())
    if not args.no_svg:
        for m in metrics:
            io.write_svg(os.path.join(args.out, f"{m}.svg"), report, m)
    flagged = [(c.N, c.n) for c in report.cells if c.flagged]
    for c in report.cells:
        print("  ".join(io.fmt(v) for v in (c.N, c.n, c.mse, c.coverage, c.mean_ci_length,
                                            c.drop_rate)) + ("  (flagged)" if c.flagged else ""))
    if flagged:
        print(f"warning: {len(flagged)} cells dropped more than 20% of fits", file=sys.stderr)
    io.write_manifest(
        os.path.join(args.out, "manifest.json"), "simulate", cfg.base.seed, cfg.as_dict(),
        time.time() - t0,
        {f"{c.N}x{c.n}": {"drop_rate": c.drop_rate, "failed_reps": c.failed_reps}
         for c in report.cells},
        {"M_rep": cfg.M_rep, "paper_scale": args.paper_scale, "report": report.meta,
         "flagged_cells": flagged},
    )
    return EXIT_OK


def cmd_check_weights(args):
    scheme = get_scheme(args.weights)
    if scheme.kind not in SCHEMES:
        raise InvalidArgumentError(f"unknown weight scheme {args.weights!r}")
    rep = check_assumption_w(scheme, args.n, draws=args.draws,
                             rng=np.random.default_rng(args.seed))
    print(f"scheme {rep.scheme}  n = {rep.n}  draws = {rep.draws}  tau^2 = {io.fmt(rep.tau_sq)}")
    print("condition          estimate    target      tolerance   result")
    for name, est, target, tol, ok in rep.rows():
        print(f"{name:<18} {io.fmt(est):<11} {io.fmt(target):<11} {io.fmt(tol):<11} "
              f"{'pass' if ok else 'FAIL'}")
    return EXIT_OK


def cmd_list_configs(args):
    for name in io.bundled_configs():
        print(name)
    return EXIT_OK


COMMANDS = {
    "fit": cmd_fit, "recycle": cmd_recycle, "simulate": cmd_simulate,
    "check-weights": cmd_check_weights, "list-configs": cmd_list_configs,
}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"recycled-sts: error: {e}", file=sys.stderr)
        return EXIT_INPUT
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (InvalidArgumentError, OSError) as e:
        print(f"recycled-sts: error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (EstimationError, RecycledStsError, np.linalg.LinAlgError) as e:
        print(f"recycled-sts: estimation failed: {e}", file=sys.stderr)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())
