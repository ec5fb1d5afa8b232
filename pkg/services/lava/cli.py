#!/usr/bin/env python

"""Command-line surface: fit, tune, risk-curve, simulate and bounds subcommands.

Results go to files or stdout (key=value lines); logs go to stderr. Exit codes are
0 on success, 2 on invalid input and 3 on convergence or numerical failure.
"""

import argparse
import math
import sys
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger

from .exceptions import ConvergenceError, InvalidInputError, NumericalError
from .grid import PenaltyGrid
from .lasso_engine import DesignMatrix, normalize_design, numerical_rank, penalized_objective
from .lava_regression import (
    LavaRegressionFit,
    bound_components,
    df_post_lava,
    df_sure_baseline,
    df_sure_lava,
    fit_regression,
    lava_df,
    lava_objective,
)
from .settings import DEFAULT_MAX_ITER, DEFAULT_TOL, LOG_LEVEL
from .shrinkage import Estimator, PenaltyPair
from .sim_harness import SimConfig, run_experiment, run_sequence_experiment
from .tuning import default_regression_grid, estimate_noise_variance, tune_cv, tune_sure
from .utils import format_penalty, parse_penalty

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3

COEFFICIENT_COLUMNS = ["index", "name", "beta_hat", "delta_hat", "theta_hat", "in_active_set",
                       "scale", "theta_original"]


def configure_logging(level: str) -> None:
    logger.remove()
    logger.add(sys.stderr, level=level.upper())


# Input helpers

def load_data_csv(path: str) -> Tuple[np.ndarray, np.ndarray, List[str]]:
    """Read a CSV whose first column is the response and the rest regressors.

    Returns:
        (Y, X, regressor names).
    """
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except FileNotFoundError as e:
        raise InvalidInputError(f"data file not found: {path}") from e
    except pd.errors.EmptyDataError as e:
        raise InvalidInputError(f"{path}: empty file, a header row is required") from e
    except pd.errors.ParserError as e:
        raise InvalidInputError(f"{path}: malformed CSV ({e})") from e
    if frame.shape[1] < 2:
        raise InvalidInputError(f"{path}: need a response column and at least one regressor")
    if frame.shape[0] < 1:
        raise InvalidInputError(f"{path}: no data rows")
    columns = []
    for name in frame.columns:
        values = pd.to_numeric(frame[name].str.strip(), errors="coerce")
        bad = values.isna() | ~np.isfinite(values.fillna(0.0))
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            # line numbers count the header as line 1
            raise InvalidInputError(
                f"{path}: row {row + 2}, column {name!r}: non-numeric value {frame[name].iloc[row]!r}"
            )
        columns.append(values.to_numpy(dtype=float))
    data = np.column_stack(columns)
    return data[:, 0], data[:, 1:], [str(name) for name in frame.columns[1:]]


def _design(X: np.ndarray, normalize: bool) -> DesignMatrix:
    return normalize_design(X) if normalize else DesignMatrix.unscaled(X)


def _penalty_pair(kind: Estimator, lambda1: Optional[str], lambda2: Optional[str]) -> PenaltyPair:
    if kind is Estimator.ML:
        return PenaltyPair.unpenalized()
    if kind in (Estimator.LASSO, Estimator.POST_LASSO):
        if lambda1 is None:
            raise InvalidInputError(f"{kind.value} needs --lambda1")
        return PenaltyPair.lasso(parse_penalty(lambda1))
    if kind is Estimator.RIDGE:
        if lambda2 is None:
            raise InvalidInputError("ridge needs --lambda2")
        return PenaltyPair.ridge(parse_penalty(lambda2))
    if lambda1 is None or lambda2 is None:
        raise InvalidInputError(f"{kind.value} needs --lambda1 and --lambda2")
    return PenaltyPair(parse_penalty(lambda1), parse_penalty(lambda2))


def _emit(pairs: Sequence[Tuple[str, object]]) -> None:
    for key, value in pairs:
        if isinstance(value, float):
            value = format_penalty(value) if math.isinf(value) else f"{value:.17g}"
        print(f"{key}={value}")


def _objective(fit: LavaRegressionFit, D: DesignMatrix, Y: np.ndarray) -> float:
    if fit.estimator is Estimator.ELASTIC_NET:
        return penalized_objective(D, Y, fit.delta_hat, fit.penalties.lambda1, fit.penalties.lambda2)
    return lava_objective(D, Y, fit.beta_hat, fit.delta_hat, fit.penalties)


def _degrees_of_freedom(fit: LavaRegressionFit, D: DesignMatrix, Y: np.ndarray) -> Optional[float]:
    kind = fit.estimator
    if kind is Estimator.LAVA:
        return lava_df(fit, D)
    if kind is Estimator.POST_LAVA:
        return df_post_lava(fit, D)
    if kind in (Estimator.LASSO, Estimator.RIDGE, Estimator.ELASTIC_NET):
        return df_sure_baseline(kind, fit, D, Y, 1.0).df
    if kind is Estimator.ML:
        _, s, _ = D.svd
        return float(numerical_rank(s, D.n, D.p))
    return None


def write_coefficients(path: str, fit: LavaRegressionFit, D: DesignMatrix, names: Sequence[str]) -> None:
    active = np.zeros(D.p, dtype=bool)
    active[fit.active_set] = True
    frame = pd.DataFrame({
        "index": np.arange(D.p),
        "name": list(names),
        "beta_hat": fit.beta_hat,
        "delta_hat": fit.delta_hat,
        "theta_hat": fit.theta_hat,
        "in_active_set": active,
        "scale": D.column_scales,
        "theta_original": D.to_original_scale(fit.theta_hat),
    }, columns=COEFFICIENT_COLUMNS)
    frame.to_csv(path, index=False, float_format="%.17g")
    logger.success(f"Wrote {D.p} coefficients to {path}")


# Subcommands

def cmd_fit(args: argparse.Namespace) -> None:
    Y, X, names = load_data_csv(args.data)
    D = _design(X, args.normalize)
    kind = Estimator.parse(args.estimator)
    pair = _penalty_pair(kind, args.lambda1, args.lambda2)
    logger.info(f"Fitting {kind.value} at ({pair.lambda1}, {pair.lambda2}) on n={D.n}, p={D.p}")
    fit = fit_regression(kind, D, Y, pair)
    if not fit.converged:
        raise ConvergenceError(f"{kind.value} fit did not converge (KKT residual {fit.kkt_residual:.3e})",
                               fit.kkt_residual, fit.iterations)
    write_coefficients(args.out, fit, D, names)
    summary = [
        ("estimator", kind.value),
        ("lambda1", pair.lambda1),
        ("lambda2", pair.lambda2),
        ("objective", _objective(fit, D, Y)),
        ("active_set_size", int(fit.active_set.size)),
        ("iterations", fit.iterations),
        ("kkt_residual", float(fit.kkt_residual)),
        ("n", D.n),
        ("p", D.p),
        ("normalized", args.normalize),
        ("tol", DEFAULT_TOL),
        ("max_iter", DEFAULT_MAX_ITER),
    ]
    df = _degrees_of_freedom(fit, D, Y)
    if df is not None:
        summary.append(("df", float(df)))
    if args.sigma2 is not None:
        summary.append(("sigma2", float(args.sigma2)))
        if kind is Estimator.LAVA:
            summary.append(("sure", df_sure_lava(fit, D, Y, args.sigma2).sure))
        elif kind in (Estimator.LASSO, Estimator.RIDGE, Estimator.ELASTIC_NET):
            summary.append(("sure", df_sure_baseline(kind, fit, D, Y, args.sigma2).sure))
        else:
            logger.warning(f"No SURE is available for {kind.value}")
    _emit(summary)


def cmd_tune(args: argparse.Namespace) -> None:
    Y, X, _ = load_data_csv(args.data)
    D = _design(X, args.normalize)
    kind = Estimator.parse(args.estimator)
    sigma2 = args.sigma2
    estimated = sigma2 is None
    if estimated:
        sigma2 = estimate_noise_variance(D, Y).sigma2
        logger.info(f"Estimated noise variance {sigma2:.6g}")
    if args.grid_spec:
        grid = PenaltyGrid.from_spec(args.grid_spec)
    else:
        grid = default_regression_grid(D.n, D.p, math.sqrt(sigma2))
    if args.method == "sure":
        result = tune_sure(kind, D, Y, grid, sigma2)
    else:
        result = tune_cv(kind, D, Y, grid, folds=args.folds, seed=args.seed)
    result.to_csv(args.out)
    _emit([
        ("estimator", kind.value),
        ("method", args.method),
        ("lambda1", result.penalties.lambda1),
        ("lambda2", result.penalties.lambda2),
        ("criterion", result.criterion),
        ("sigma_u2_used", float(sigma2)),
        ("sigma_u2_estimated", estimated),
        ("folds", args.folds),
        ("seed", args.seed),
        ("grid", args.grid_spec or "default"),
        ("num_lambda1", len(grid.lambda1_values)),
        ("num_lambda2", len(grid.lambda2_values)),
        ("normalized", args.normalize),
        ("failures", result.failures),
    ])


def _model_spec(text: str) -> dict:
    values = {"p": "100", "sigma": "0.1"}
    for item in filter(None, (part.strip() for part in text.split(","))):
        key, sep, value = item.partition("=")
        if not sep or key.strip() not in values:
            raise InvalidInputError(f"model spec entries are p=<int> or sigma=<float>, got {item!r}")
        values[key.strip()] = value.strip()
    return values


def cmd_risk_curve(args: argparse.Namespace) -> None:
    model = _model_spec(args.model_spec)
    cfg = SimConfig(scenario="sequence", p=model["p"], sigma=model["sigma"], q_grid=args.q_grid,
                    tuning=args.penalty_policy, estimators=args.estimators, c=args.c)
    result = run_sequence_experiment(cfg)
    result.risk_table.to_csv(args.out)


def cmd_simulate(args: argparse.Namespace) -> None:
    if args.config:
        cfg = SimConfig.from_file(args.config, args.overrides)
    else:
        cfg = SimConfig.from_pairs(args.overrides)
    logger.info(f"Simulation config hash {cfg.config_hash}")
    out_dir = run_experiment(cfg).write(args.out_dir)
    _emit([("out_dir", str(out_dir)), ("config_hash", cfg.config_hash)])


def _load_vector(path: str) -> np.ndarray:
    try:
        frame = pd.read_csv(path, header=None, comment="#")
    except (FileNotFoundError, pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise InvalidInputError(f"cannot read vector file {path}: {e}") from e
    values = pd.to_numeric(frame.to_numpy().ravel(), errors="coerce")
    if np.isnan(values).any():
        raise InvalidInputError(f"{path}: vector entries must be numeric")
    return np.asarray(values, dtype=float)


def cmd_bounds(args: argparse.Namespace) -> None:
    Y, X, _ = load_data_csv(args.data)
    D = _design(X, args.normalize)
    beta0 = _load_vector(args.beta0)
    sigma_u = args.sigma_u
    estimated = sigma_u is None
    if estimated:
        sigma_u = math.sqrt(estimate_noise_variance(D, Y).sigma2)
    support = [int(j) for j in args.support.split(",")] if args.support else None
    lambda2 = parse_penalty(args.lambda2)
    report = bound_components(D, lambda2, beta0, sigma_u, alpha=args.alpha, eps=args.eps,
                              c=args.c, support=support, reps=args.reps, seed=args.seed)
    rows = [(name, math.nan if value is None else float(value)) for name, value in report.as_rows()]
    if args.out:
        pd.DataFrame(rows, columns=["quantity", "value"]).to_csv(args.out, index=False, float_format="%.17g")
        logger.success(f"Wrote deviation report to {args.out}")
    effective = [
        ("sigma_u", float(sigma_u)),
        ("sigma_u_estimated", estimated),
        ("lambda2", lambda2),
        ("alpha", args.alpha),
        ("eps", args.eps),
        ("c", args.c),
        ("support", args.support or "none"),
        ("reps", args.reps),
        ("seed", args.seed),
        ("normalized", args.normalize),
    ]
    _emit(effective + rows)


# Parser

def _add_data_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("data", help="CSV with header; first column response, remaining columns regressors")
    parser.add_argument("--no-normalize", dest="normalize", action="store_false",
                        help="Use the design columns as given")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lava", description="Lava and post-lava sparse+dense estimation")
    parser.add_argument("--log-level", default=LOG_LEVEL, help="loguru level for stderr output")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="Fit one estimator at given penalties")
    _add_data_args(fit)
    fit.add_argument("--estimator", default="lava")
    fit.add_argument("--lambda1", help="l1 level, 'inf' allowed")
    fit.add_argument("--lambda2", help="l2 level, 'inf' allowed")
    fit.add_argument("--sigma2", type=float, help="Noise variance for the SURE line")
    fit.add_argument("--out", required=True, help="Coefficient CSV")
    fit.set_defaults(handler=cmd_fit)

    tune = sub.add_parser("tune", help="Choose penalties by SURE or cross-validation")
    _add_data_args(tune)
    tune.add_argument("--estimator", default="lava")
    tune.add_argument("--method", choices=("sure", "cv"), default="sure")
    tune.add_argument("--folds", type=int, default=5)
    tune.add_argument("--seed", type=int, default=0)
    tune.add_argument("--grid-spec", help="L1LO:L1HI:N1,L2LO:L2HI:N2")
    tune.add_argument("--sigma2", type=float, help="Known noise variance; estimated when absent")
    tune.add_argument("--out", required=True, help="Criterion surface CSV")
    tune.set_defaults(handler=cmd_tune)

    curve = sub.add_parser("risk-curve", help="Exact sequence-model risk curves")
    curve.add_argument("--model-spec", default="p=100,sigma=0.1")
    curve.add_argument("--penalty-policy", choices=("oracle", "plugin"), default="plugin")
    curve.add_argument("--q-grid", default="0,0.5,1,1.5,2,2.5,3,3.5,4")
    curve.add_argument("--estimators", default="lava,post-lava,lasso,post-lasso,ridge,ml")
    curve.add_argument("--c", type=float, default=0.05, help="Significance level of the lasso plug-in")
    curve.add_argument("--out", required=True)
    curve.set_defaults(handler=cmd_risk_curve)

    simulate = sub.add_parser("simulate", help="Run a seeded experiment from a key=value config")
    simulate.add_argument("--config", help="key=value config file")
    simulate.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    simulate.add_argument("--out-dir", required=True)
    simulate.set_defaults(handler=cmd_simulate)

    bounds = sub.add_parser("bounds", help="Deviation-bound diagnostics for a dense part beta0")
    _add_data_args(bounds)
    bounds.add_argument("--lambda2", required=True)
    bounds.add_argument("--beta0", required=True, help="File with one beta0 entry per line")
    bounds.add_argument("--sigma-u", type=float, help="Noise level; estimated when absent")
    bounds.add_argument("--alpha", type=float, default=0.05)
    bounds.add_argument("--eps", type=float, default=0.05)
    bounds.add_argument("--c", type=float, default=1.1)
    bounds.add_argument("--support", help="Comma-separated support of the sparse part")
    bounds.add_argument("--reps", type=int, default=1000, help="Score simulations; 0 uses the union bound")
    bounds.add_argument("--seed", type=int, default=0)
    bounds.add_argument("--out", help="CSV for the report")
    bounds.set_defaults(handler=cmd_bounds)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_INPUT
    configure_logging(args.log_level)
    try:
        args.handler(args)
    except InvalidInputError as e:
        logger.error(f"Invalid input: {e}")
        return EXIT_INPUT
    except ConvergenceError as e:
        logger.error(f"Convergence failure: {e} (KKT residual {e.kkt_residual:.3e})")
        return EXIT_NUMERICAL
    except NumericalError as e:
        logger.error(f"Numerical failure: {e}")
        return EXIT_NUMERICAL
    return EXIT_OK
