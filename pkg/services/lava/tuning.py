#!/usr/bin/env python

import math
from dataclasses import dataclass
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from loguru import logger
from scipy import special

from .exceptions import ConvergenceError, InvalidInputError, LavaError
from .gaussian_sequence import sure_lava_sequence
from .grid import PenaltyGrid, argmin_prefer_larger
from .lasso_engine import DesignMatrix, SolverOptions, fit_lasso, normalize_design
from .lava_regression import (
    LavaRegressionFit,
    RidgeProjection,
    df_sure_baseline,
    df_sure_lava,
    fit_post_lava_regression,
    fit_regression,
    ridge_projection,
)
from .settings import N_JOBS
from .shrinkage import Estimator, PenaltyPair
from .utils import rng_stream

SURFACE_COLUMNS = ["method", "lambda1", "lambda2", "criterion"]

# Post-selection kinds are tuned along the path of the estimator they refit
_BASE_KIND = {Estimator.POST_LAVA: Estimator.LAVA, Estimator.POST_LASSO: Estimator.LASSO}

Criterion = Callable[[LavaRegressionFit, Optional[RidgeProjection]], float]


@dataclass(frozen=True, eq=False)
class TuneResult:
    kind: Estimator
    method: str
    penalties: PenaltyPair
    surface: pd.DataFrame
    fit: Optional[LavaRegressionFit] = None
    sigma_u2_used: Optional[float] = None
    failures: int = 0

    @property
    def criterion(self) -> float:
        """Surface value at the chosen penalties."""
        rows = self.surface[(self.surface["lambda1"] == self.penalties.lambda1)
                            & (self.surface["lambda2"] == self.penalties.lambda2)]
        return float(rows["criterion"].iloc[0])

    def to_csv(self, path) -> None:
        self.surface.to_csv(path, index=False, float_format="%.17g")
        logger.success(f"Wrote {len(self.surface)}-point {self.method} surface to {path}")


class NoiseEstimate(NamedTuple):
    sigma2: float
    iterations: int
    converged: bool
    floored: bool


def default_regression_grid(n: int, p: int, sigma_u: float, num_lambda1: int = 30,
                            num_lambda2: int = 30) -> PenaltyGrid:
    """lambda1 log-spaced over [0.01, 10] * 2 sigma_u sqrt(log(2p)/n), lambda2 over [1e-4, 1e4]."""
    center = 2.0 * max(sigma_u, 1e-12) * math.sqrt(math.log(2.0 * p) / n)
    return PenaltyGrid.log_spaced((0.01 * center, 10.0 * center), num_lambda1,
                                  (1e-4, 1e4), num_lambda2)


def estimate_noise_variance(D: DesignMatrix, Y: np.ndarray, c: float = 1.1, alpha: float = 0.05,
                            tol: float = 1e-4, max_iter: int = 20,
                            opts: Optional[SolverOptions] = None) -> NoiseEstimate:
    """Iterated lasso estimate of the noise variance.

    Starting from the sample variance of Y (a conservative value), fit the lasso at
    lambda1 = 2 c sigma_hat Phi^{-1}(1 - alpha/(2p)) / sqrt(n) and update
    sigma_hat^2 = |Y - X delta_hat|^2 / (n - |J|), until the relative change falls
    below tol or max_iter rounds have run.
    """
    Y = np.asarray(Y, dtype=float)
    n, p = D.n, D.p
    if n < 2:
        raise InvalidInputError("noise estimation needs n > 1")
    sigma2 = float(np.var(Y, ddof=1))
    quantile = float(special.ndtri(1.0 - alpha / (2.0 * p)))
    warm = None
    floored = False
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        level = 2.0 * c * math.sqrt(sigma2) * quantile / math.sqrt(n)
        if not level > 0:
            converged = True
            break
        fit = fit_lasso(D, Y, level, opts, warm)
        warm = fit.delta
        resid = Y - D.X @ fit.delta
        dof = n - fit.active_set.size
        if dof < 1:
            dof = 1
            floored = True
        updated = float(resid @ resid) / dof
        change = abs(updated - sigma2) / sigma2
        sigma2 = updated
        if change < tol:
            converged = True
            break
    if floored:
        logger.warning("Noise estimate used a floored denominator (|J| >= n)")
    logger.debug(f"Noise variance estimate {sigma2:.6g} after {iterations} rounds")
    return NoiseEstimate(sigma2=sigma2, iterations=iterations, converged=converged, floored=floored)


def _columns(candidates: Sequence[PenaltyPair]) -> List[List[Tuple[int, PenaltyPair]]]:
    groups: Dict[float, List[Tuple[int, PenaltyPair]]] = {}
    for index, pair in enumerate(candidates):
        groups.setdefault(pair.lambda2, []).append((index, pair))
    return list(groups.values())


def _column_values(kind: Estimator, D: DesignMatrix, Y: np.ndarray,
                   column: List[Tuple[int, PenaltyPair]], opts: Optional[SolverOptions],
                   criterion: Criterion) -> List[Tuple[int, float]]:
    """Criterion along one lambda2 column, walking lambda1 downwards with warm starts."""
    base_kind = _BASE_KIND.get(kind, kind)
    lambda2 = column[0][1].lambda2
    projection = None
    if base_kind is Estimator.LAVA and math.isfinite(lambda2):
        projection = ridge_projection(D, lambda2)
    out = []
    warm = None
    for index, pair in sorted(column, key=lambda t: -t[1].lambda1):
        try:
            start = warm if math.isfinite(pair.lambda1) else None
            base = fit_regression(base_kind, D, Y, pair, opts, start, projection)
            if not base.converged:
                raise ConvergenceError(f"solver did not converge at ({pair.lambda1}, {pair.lambda2})",
                                       base.kkt_residual, base.iterations)
            warm = base.delta_hat
            fit = fit_post_lava_regression(base, D, Y) if kind in _BASE_KIND else base
            value = float(criterion(fit, projection))
        except LavaError as e:
            logger.warning(f"Skipping grid point ({pair.lambda1}, {pair.lambda2}): {e}")
            value = math.nan
        out.append((index, value))
    return out


def _evaluate_grid(kind: Estimator, D: DesignMatrix, Y: np.ndarray, candidates: Sequence[PenaltyPair],
                   opts: Optional[SolverOptions], criterion: Criterion,
                   n_jobs: Optional[int]) -> np.ndarray:
    results = Parallel(n_jobs=n_jobs or N_JOBS, prefer="threads")(
        delayed(_column_values)(kind, D, Y, column, opts, criterion) for column in _columns(candidates)
    )
    values = np.full(len(candidates), math.nan)
    for column in results:
        for index, value in column:
            values[index] = value
    return values


def _surface(method: str, candidates: Sequence[PenaltyPair], values: np.ndarray) -> pd.DataFrame:
    return pd.DataFrame({
        "method": method,
        "lambda1": [pair.lambda1 for pair in candidates],
        "lambda2": [pair.lambda2 for pair in candidates],
        "criterion": values,
    }, columns=SURFACE_COLUMNS)


def _tunable(kind: Union[str, Estimator]) -> Estimator:
    kind = Estimator.parse(kind)
    if kind is Estimator.ML:
        raise InvalidInputError("ml has no penalty to tune")
    return kind


def tune_sure(kind: Union[str, Estimator], D: DesignMatrix, Y: np.ndarray, grid: PenaltyGrid,
              sigma_u2: float, opts: Optional[SolverOptions] = None,
              n_jobs: Optional[int] = None) -> TuneResult:
    """Choose penalties by minimizing SURE over the grid.

    Post-lava and post-lasso reuse the SURE surface of lava and lasso and refit at
    the chosen point. With an estimated sigma_u2 the criterion is only approximately
    unbiased.
    """
    kind = _tunable(kind)
    Y = np.asarray(Y, dtype=float)
    source = _BASE_KIND.get(kind, kind)
    candidates = grid.candidates(source)
    logger.info(f"SURE tuning of {kind.value} over {len(candidates)} grid points (sigma_u2={sigma_u2:.6g})")

    def criterion(fit: LavaRegressionFit, projection: Optional[RidgeProjection]) -> float:
        if source is Estimator.LAVA:
            return df_sure_lava(fit, D, Y, sigma_u2, projection).sure
        return df_sure_baseline(source, fit, D, Y, sigma_u2).sure

    values = _evaluate_grid(source, D, Y, candidates, opts, criterion, n_jobs)
    chosen = candidates[argmin_prefer_larger(candidates, values)]
    fit = fit_regression(kind, D, Y, chosen, opts)
    failures = int(np.isnan(values).sum())
    logger.success(f"SURE chose ({chosen.lambda1:.6g}, {chosen.lambda2:.6g}) for {kind.value}")
    return TuneResult(kind=kind, method="sure", penalties=chosen, surface=_surface("sure", candidates, values),
                      fit=fit, sigma_u2_used=float(sigma_u2), failures=failures)


def assign_folds(n: int, folds: int, seed: int) -> np.ndarray:
    """Contiguous fold blocks over a seeded permutation of the rows."""
    if folds < 2 or n < folds:
        raise InvalidInputError(f"need 2 <= folds <= n, got folds={folds}, n={n}")
    order = rng_stream(seed, 0).permutation(n)
    fold_ids = np.empty(n, dtype=int)
    for fold, rows in enumerate(np.array_split(order, folds)):
        fold_ids[rows] = fold
    return fold_ids


def _fold_errors(kind: Estimator, D: DesignMatrix, Y: np.ndarray, train: np.ndarray,
                 candidates: Sequence[PenaltyPair], opts: Optional[SolverOptions]) -> np.ndarray:
    raw = D.raw
    # columns that vanish on the training rows get coefficient zero
    kept = np.flatnonzero(np.any(raw[train] != 0, axis=0))
    if kept.size < D.p:
        logger.debug(f"dropping {D.p - kept.size} columns that are zero on the training rows")
    if kept.size == 0:
        return np.full(len(candidates), np.sum(Y[~train] ** 2))
    raw = raw[:, kept]
    train_design = normalize_design(raw[train]) if D.normalized else DesignMatrix.unscaled(raw[train])
    X_test, Y_test = raw[~train], Y[~train]

    def criterion(fit: LavaRegressionFit, projection: Optional[RidgeProjection]) -> float:
        prediction = X_test @ train_design.to_original_scale(fit.theta_hat)
        return float(np.sum((Y_test - prediction) ** 2))

    return _evaluate_grid(kind, train_design, Y[train], candidates, opts, criterion, n_jobs=1)


def tune_cv(kind: Union[str, Estimator], D: DesignMatrix, Y: np.ndarray, grid: PenaltyGrid,
            folds: int = 5, seed: int = 0, fold_ids: Optional[np.ndarray] = None,
            opts: Optional[SolverOptions] = None, n_jobs: Optional[int] = None) -> TuneResult:
    """Choose penalties by k-fold cross-validation.

    Args:
        kind: Estimator kind.
        D: Full design; each training fold is renormalized on its own rows.
        Y: Response.
        grid: Candidate penalties.
        folds: Number of folds.
        seed: Seed of the fold assignment.
        fold_ids: Explicit fold label per row, overriding the seeded assignment.
        opts: Solver options.
        n_jobs: Parallel folds.

    Returns:
        TuneResult whose criterion is the pooled held-out mean squared error.
    """
    kind = _tunable(kind)
    Y = np.asarray(Y, dtype=float)
    if fold_ids is None:
        fold_ids = assign_folds(D.n, folds, seed)
    else:
        fold_ids = np.asarray(fold_ids, dtype=int)
        if fold_ids.shape != (D.n,) or set(np.unique(fold_ids)) != set(range(folds)):
            raise InvalidInputError(f"fold_ids must label every row with 0..{folds - 1}, each fold nonempty")
    candidates = grid.candidates(kind)
    logger.info(f"{folds}-fold CV tuning of {kind.value} over {len(candidates)} grid points")
    per_fold = Parallel(n_jobs=n_jobs or N_JOBS, prefer="threads")(
        delayed(_fold_errors)(kind, D, Y, fold_ids != fold, candidates, opts) for fold in range(folds)
    )
    values = np.sum(per_fold, axis=0) / D.n
    chosen = candidates[argmin_prefer_larger(candidates, values)]
    fit = fit_regression(kind, D, Y, chosen, opts)
    failures = int(np.isnan(values).sum())
    logger.success(f"CV chose ({chosen.lambda1:.6g}, {chosen.lambda2:.6g}) for {kind.value}")
    return TuneResult(kind=kind, method="cv", penalties=chosen, surface=_surface("cv", candidates, values),
                      fit=fit, sigma_u2_used=None, failures=failures)


def tune_sure_sequence(z: np.ndarray, sigma: float, grid: PenaltyGrid) -> TuneResult:
    """Lava penalties minimizing the sequence-model SURE of a single draw z."""
    candidates = grid.candidates(Estimator.LAVA)
    values = np.array([sure_lava_sequence(z, pair, sigma) for pair in candidates])
    chosen = candidates[argmin_prefer_larger(candidates, values)]
    return TuneResult(kind=Estimator.LAVA, method="sure", penalties=chosen,
                      surface=_surface("sure", candidates, values), sigma_u2_used=sigma ** 2)


def tune_oracle(kind: Union[str, Estimator], D: DesignMatrix, Y: np.ndarray, grid: PenaltyGrid,
                mean: np.ndarray, opts: Optional[SolverOptions] = None,
                n_jobs: Optional[int] = None) -> TuneResult:
    """Grid point minimizing the true prediction risk (1/n)|X theta_hat - mean|^2.

    Needs the true regression mean, so it is only available in simulations.
    """
    kind = _tunable(kind)
    Y = np.asarray(Y, dtype=float)
    mean = np.asarray(mean, dtype=float)
    if mean.shape != (D.n,):
        raise InvalidInputError(f"mean must have length {D.n}, got shape {mean.shape}")
    candidates = grid.candidates(kind)

    def criterion(fit: LavaRegressionFit, projection: Optional[RidgeProjection]) -> float:
        return float(np.mean((fit.fitted - mean) ** 2))

    values = _evaluate_grid(kind, D, Y, candidates, opts, criterion, n_jobs)
    chosen = candidates[argmin_prefer_larger(candidates, values)]
    fit = fit_regression(kind, D, Y, chosen, opts)
    return TuneResult(kind=kind, method="oracle", penalties=chosen, surface=_surface("oracle", candidates, values),
                      fit=fit, failures=int(np.isnan(values).sum()))
