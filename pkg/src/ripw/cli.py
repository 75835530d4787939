"""Command-line interface: solve-date, estimate, simulate, and weights
subcommands with machine-readable output.

Data goes to stdout (JSON or CSV), errors to stderr.  Exit codes: 0 on
success, 2 on validation problems, 3 on numeric failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .design import load_design, reshape_from_json, reshape_to_json
from .errors import NumericError, RipwError, ValidationError
from .estimator import (
    OutcomeModel,
    crossfit_estimate,
    ripw_infer,
    twfe_covariate_fitter,
    zero_outcome_fitter,
)
from .panel import TimeWeights, load_panel
from .propensity import make_propensity_fitter
from .simulate import (
    DEFAULT_N,
    DEFAULT_REPS,
    DEFAULT_SEED,
    FULL_SCALE_N,
    FULL_SCALE_REPS,
    SCENARIO_NAMES,
    effect_weights,
    midpoint_reshape,
    run_monte_carlo,
    scenario_from_name,
    weights_design,
)
from .solver import SolverConfig, date_residual, pick_solution, solve_date

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3


def _format_value(value) -> str:
    """JSON fragment with floats at 17 significant digits (round-trip exact)."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if value is None:
        return "null"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        x = float(value)
        if x != x or x in (float("inf"), float("-inf")):
            raise NumericError(f"cannot serialize non-finite value {x}")
        return format(x, ".17g")
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, dict):
        items = ", ".join(f"{json.dumps(str(k))}: {_format_value(v)}" for k, v in value.items())
        return "{" + items + "}"
    if isinstance(value, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_format_value(v) for v in value) + "]"
    raise ValidationError(f"cannot serialize {type(value).__name__}")


def _emit_json(payload: dict, out) -> None:
    out.write(_format_value(payload) + "\n")


def _parse_xi(spec: str, T: int) -> TimeWeights:
    if spec == "equal":
        return TimeWeights.equal(T)
    if spec.startswith("csv:"):
        with open(spec[4:], "r", encoding="utf-8") as fh:
            tokens = fh.read().replace(",", " ").split()
        return TimeWeights(np.array([float(t) for t in tokens]))
    raise ValidationError(f"--xi must be 'equal' or 'csv:<path>', got {spec!r}")


def _solve_for_design(design_path: str, xi_spec: str, lam: float, seed: int):
    support, _ = load_design(design_path)
    xi = _parse_xi(xi_spec, support.T)
    family = solve_date(support, xi, config=SolverConfig(seed=seed))
    Pi = pick_solution(family, lam)  # raises EmptyFamily when unsolvable
    return Pi, xi, family


def _cmd_solve_date(args) -> int:
    Pi, xi, family = _solve_for_design(args.design, args.xi, args.lam, args.seed)
    residual = date_residual(Pi, xi)
    payload = reshape_to_json(
        Pi,
        extra={
            "residual_max": residual.max_abs,
            "family": family.kind,
            "lambda": args.lam,
        },
    )
    _emit_json(payload, sys.stdout)
    return EXIT_OK


def _cmd_estimate(args) -> int:
    panel = load_panel(args.panel)
    support, pi_known = load_design(args.design)
    if args.reshape == "solved":
        Pi, _, _ = _solve_for_design(args.design, "equal", args.lam, args.seed)
    else:
        with open(args.reshape, "r", encoding="utf-8") as fh:
            Pi = reshape_from_json(json.load(fh))

    if args.outcome == "zero":
        outcome_fitter = zero_outcome_fitter
        m_hat = None
    elif args.outcome == "twfe-covariates":
        outcome_fitter = twfe_covariate_fitter()
        m_hat = "fit"
    else:
        raise ValidationError(f"unknown outcome model {args.outcome!r}")

    if args.crossfit is not None:
        if args.propensity is None:
            raise ValidationError("--crossfit requires --propensity")
        fitter = make_propensity_fitter(args.propensity, support)
        fit = crossfit_estimate(
            panel,
            fitter,
            outcome_fitter,
            Pi,
            K=args.crossfit,
            seed=args.seed,
            alpha=args.alpha,
        )
    else:
        if args.propensity is not None:
            pi = make_propensity_fitter(args.propensity, support)(panel)(panel)
        elif pi_known is not None:
            pi = pi_known
            if pi.n == 1 and panel.n > 1:
                probs = np.repeat(pi.probs, panel.n, axis=0)
                pi = type(pi)(paths=pi.paths, probs=probs, support=pi.support)
        else:
            raise ValidationError(
                "design file carries no propensities; pass --propensity"
            )
        m = None
        if m_hat == "fit":
            m = OutcomeModel(m_hat=outcome_fitter(panel)(panel))
        fit = ripw_infer(panel, pi, Pi, m_hat=m, alpha=args.alpha)

    payload = {
        "tau_hat": fit.tau_hat,
        "se": fit.se,
        "ci": [fit.ci_lower, fit.ci_upper],
        "D": fit.denominator,
        "n_zero_weight": fit.zero_weight_units,
        "folds": None if fit.folds is None else list(fit.folds),
        "n": fit.n,
        "alpha": fit.alpha,
        "clipped_propensities": fit.clipped_propensities,
    }
    _emit_json(payload, sys.stdout)
    return EXIT_OK


def _cmd_simulate(args) -> int:
    n = FULL_SCALE_N if args.full_scale else args.n
    reps = FULL_SCALE_REPS if args.full_scale else args.reps
    if reps < 1:
        raise ValidationError(f"--reps must be >= 1, got {reps}")
    scn = scenario_from_name(args.scenario, n=n, seed=args.seed)
    report = run_monte_carlo(scn, reps, alpha=args.alpha)
    if args.rep_csv:
        with open(args.rep_csv, "w", encoding="utf-8") as fh:
            fh.write("estimator,rep,tau_hat,covered\n")
            for est, rep, tau, cov in report.rows():
                fh.write(f"{est},{rep},{format(tau, '.17g')},{int(cov)}\n")
    payload = {
        "scenario": scn.name,
        "n": scn.n,
        "T": scn.T,
        "reps": reps,
        "seed": scn.seed,
        "alpha": args.alpha,
        "tau_star": report.tau_star,
        "estimators": {
            est: {
                "mean_bias": report.summary(est).mean_bias,
                "sd_bias": report.summary(est).sd_bias,
                "se_mean": report.summary(est).se_mean,
                "coverage": report.summary(est).coverage,
                "reps": report.summary(est).reps,
            }
            for est in report.estimators
        },
    }
    _emit_json(payload, sys.stdout)
    return EXIT_OK


def _cmd_weights(args) -> int:
    design = weights_design(args.n, seed=args.seed)
    Pi = midpoint_reshape(design.T) if args.estimator == "ripw" else None
    ew = effect_weights(
        design, args.estimator, reps=args.reps, seed=args.seed, Pi=Pi
    )
    scale = ew.n * ew.T
    out = sys.stdout
    out.write("kind,rep,unit,period,weight\n")
    for rep, mat in enumerate(ew.conditional):
        for i in range(ew.n):
            for t in range(ew.T):
                out.write(
                    f"conditional,{rep},{i + 1},{t + 1},{format(scale * mat[i, t], '.17g')}\n"
                )
    for i in range(ew.n):
        for t in range(ew.T):
            out.write(
                f"unconditional,-1,{i + 1},{t + 1},"
                f"{format(scale * ew.unconditional[i, t], '.17g')}\n"
            )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ripw",
        description="Reshaped-IPW two-way-fixed-effects estimation tools",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve-date", help="solve the balance condition for a design")
    p.add_argument("--design", required=True, help="design JSON file")
    p.add_argument("--xi", default="equal", help="'equal' or 'csv:<path>'")
    p.add_argument("--lambda", dest="lam", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(run=_cmd_solve_date)

    p = sub.add_parser("estimate", help="estimate the weighted average effect")
    p.add_argument("--panel", required=True, help="long-format panel CSV")
    p.add_argument("--design", required=True, help="design JSON file")
    p.add_argument("--reshape", default="solved", help="'solved' or a solution JSON file")
    p.add_argument("--outcome", default="zero", choices=["zero", "twfe-covariates"])
    p.add_argument("--propensity", default=None, help="empirical|stratified:<col>|hazard:<cols>")
    p.add_argument("--crossfit", type=int, default=None, metavar="K")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--lambda", dest="lam", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(run=_cmd_estimate)

    p = sub.add_parser("simulate", help="Monte Carlo bias and coverage study")
    p.add_argument("--scenario", required=True, choices=list(SCENARIO_NAMES))
    p.add_argument("--n", type=int, default=DEFAULT_N)
    p.add_argument("--reps", type=int, default=DEFAULT_REPS)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--full-scale", action="store_true")
    p.add_argument("--rep-csv", default=None, help="write per-replicate rows here")
    p.set_defaults(run=_cmd_simulate)

    p = sub.add_parser("weights", help="effect-weight diagnostics")
    p.add_argument("--estimator", required=True, choices=["unweighted", "ripw"])
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--reps", type=int, default=10000)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.set_defaults(run=_cmd_weights)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else EXIT_OK
    try:
        return args.run(args)
    except BrokenPipeError:
        # downstream consumer (e.g. head) closed the pipe; suppress the
        # interpreter's shutdown flush as well
        devnull = os.open(os.devnull, os.O_WRONLY)
        os.dup2(devnull, sys.stdout.fileno())
        return EXIT_OK
    except ValidationError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except RipwError as exc:  # anything else from this package
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    raise SystemExit(main())
