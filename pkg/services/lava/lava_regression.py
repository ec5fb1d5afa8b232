#!/usr/bin/env python

"""Lava and post-lava in fixed-design regression.

The lava program (1/n)|Y - X(beta + delta)|^2 + lambda2 |beta|^2 + lambda1 |delta|_1 is
solved by profiling out beta: delta is a lasso fit on (K^{1/2} Y, K^{1/2} X), where
K = I - P and P = X (X'X + n lambda2 I)^{-1} X' is the ridge projection; beta is the
ridge fit of the residual Y - X delta. Every projection acts through the thin SVD of X.
"""

import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np
from joblib import Parallel, delayed
from loguru import logger

from .exceptions import InvalidInputError
from .lasso_engine import (
    DesignMatrix,
    SolverOptions,
    fit_elastic_net,
    fit_lasso,
    fit_ridge,
    singular_value_cutoff,
)
from .settings import N_JOBS
from .shrinkage import Estimator, PenaltyLike, PenaltyPair, coerce_penalties
from .utils import rng_stream

# Draws per block in score simulations
SCORE_BLOCK_SIZE = 1000


def _scale_rows(weights: np.ndarray, values: np.ndarray) -> np.ndarray:
    return weights * values if values.ndim == 1 else weights[:, None] * values


@dataclass(frozen=True, eq=False)
class RidgeProjection:
    """P, K = I - P and K^{1/2} for one (design, lambda2), as diagonal weights on U."""

    design: DesignMatrix
    lambda2: float
    U: np.ndarray
    s: np.ndarray
    p_weights: np.ndarray
    k_half_weights: np.ndarray

    def apply_p(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return self.U @ _scale_rows(self.p_weights, self.U.T @ v)

    def apply_k(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return v - self.apply_p(v)

    def apply_k_half(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return v + self.U @ _scale_rows(self.k_half_weights - 1.0, self.U.T @ v)

    def matrix_p(self) -> np.ndarray:
        """Dense n x n P; for diagnostics on small problems."""
        return (self.U * self.p_weights) @ self.U.T

    def ridge_coefficients(self, r: np.ndarray) -> np.ndarray:
        """(X'X + n lambda2 I)^{-1} X' r."""
        if math.isinf(self.lambda2):
            return np.zeros(self.design.p)
        _, _, Vt = self.design.svd
        denom = self.s ** 2 + self.design.n * self.lambda2
        return Vt.T @ (self.s / denom * (self.U.T @ np.asarray(r, dtype=float)))

    @property
    def trace_p(self) -> float:
        return float(self.p_weights.sum())

    @property
    def trace_p2(self) -> float:
        return float((self.p_weights ** 2).sum())

    @property
    def norm_p2(self) -> float:
        return float((self.p_weights ** 2).max(initial=0.0))

    @property
    def norm_k(self) -> float:
        if self.U.shape[1] < self.design.n:
            return 1.0
        return float((1.0 - self.p_weights).max(initial=1.0))

    @cached_property
    def transformed(self) -> DesignMatrix:
        """The design K^{1/2} X, unscaled."""
        return DesignMatrix.unscaled(self.apply_k_half(self.design.X))


def ridge_projection(D: DesignMatrix, lambda2: float) -> RidgeProjection:
    """Ridge projection operators of D at level lambda2 (> 0, inf gives P = 0)."""
    if math.isnan(lambda2) or lambda2 <= 0:
        raise InvalidInputError(f"lambda2 must be positive, got {lambda2}")
    U, s, _ = D.svd
    if math.isinf(lambda2):
        p_weights = np.zeros_like(s)
        k_half = np.ones_like(s)
    else:
        denom = s ** 2 + D.n * lambda2
        p_weights = s ** 2 / denom
        k_half = np.sqrt(D.n * lambda2 / denom)
    return RidgeProjection(design=D, lambda2=float(lambda2), U=U, s=s,
                           p_weights=p_weights, k_half_weights=k_half)


@dataclass(frozen=True, eq=False)
class LavaRegressionFit:
    estimator: Estimator
    penalties: PenaltyPair
    beta_hat: np.ndarray
    delta_hat: np.ndarray
    active_set: np.ndarray
    fitted: np.ndarray
    residual: np.ndarray
    converged: bool = True
    kkt_residual: float = 0.0
    iterations: int = 0

    @property
    def theta_hat(self) -> np.ndarray:
        return self.beta_hat + self.delta_hat


def _check_response(D: DesignMatrix, Y: np.ndarray) -> np.ndarray:
    Y = np.asarray(Y, dtype=float)
    if Y.shape != (D.n,):
        raise InvalidInputError(f"response must have length {D.n}, got shape {Y.shape}")
    return Y


def _assemble(kind: Estimator, pair: PenaltyPair, D: DesignMatrix, Y: np.ndarray,
              beta: np.ndarray, delta: np.ndarray, converged: bool = True,
              kkt: float = 0.0, iterations: int = 0) -> LavaRegressionFit:
    fitted = D.X @ (beta + delta)
    return LavaRegressionFit(
        estimator=kind, penalties=pair, beta_hat=beta, delta_hat=delta,
        active_set=np.flatnonzero(delta), fitted=fitted, residual=Y - fitted,
        converged=converged, kkt_residual=kkt, iterations=iterations,
    )


def lava_objective(D: DesignMatrix, Y: np.ndarray, beta: np.ndarray, delta: np.ndarray,
                   penalties: PenaltyPair) -> float:
    """(1/n)|Y - X(beta + delta)|^2 + lambda2 |beta|^2 + lambda1 |delta|_1 with 0 * inf = 0."""
    resid = Y - D.X @ (beta + delta)
    value = float(resid @ resid) / D.n
    beta_sq = float(beta @ beta)
    delta_l1 = float(np.abs(delta).sum())
    if beta_sq:
        value += penalties.lambda2 * beta_sq
    if delta_l1:
        value += penalties.lambda1 * delta_l1
    return value


def fit_lava_regression(D: DesignMatrix, Y: np.ndarray, p: PenaltyPair,
                        opts: Optional[SolverOptions] = None,
                        warm_start: Optional[np.ndarray] = None,
                        projection: Optional[RidgeProjection] = None) -> LavaRegressionFit:
    """Lava fit by profiling.

    Args:
        D: Design.
        Y: Response.
        p: Penalties; lambda2 = inf gives the lasso fit, lambda1 = inf the ridge fit.
        opts: Lasso solver options.
        warm_start: Starting sparse part for the lasso step.
        projection: Precomputed ridge projection of D at p.lambda2.

    Returns:
        The fit, with the lasso step's convergence diagnostics.
    """
    Y = _check_response(D, Y)
    if math.isinf(p.lambda1):
        beta = fit_ridge(D, Y, p.lambda2)
        return _assemble(Estimator.LAVA, p, D, Y, beta, np.zeros(D.p))
    if math.isinf(p.lambda2):
        lasso = fit_lasso(D, Y, p.lambda1, opts, warm_start)
        return _assemble(Estimator.LAVA, p, D, Y, np.zeros(D.p), lasso.delta,
                         lasso.converged, lasso.kkt_residual, lasso.iterations)
    if projection is None:
        projection = ridge_projection(D, p.lambda2)
    elif projection.design is not D or projection.lambda2 != p.lambda2:
        raise InvalidInputError("projection was built for another design or lambda2")

    # Step 1: lasso on the transformed data
    lasso = fit_lasso(projection.transformed, projection.apply_k_half(Y), p.lambda1, opts, warm_start)
    # Step 2: ridge on the residual
    beta = projection.ridge_coefficients(Y - D.X @ lasso.delta)
    return _assemble(Estimator.LAVA, p, D, Y, beta, lasso.delta,
                     lasso.converged, lasso.kkt_residual, lasso.iterations)


def _pseudo_solve(A: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Moore-Penrose least squares through a truncated SVD."""
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    keep = s > singular_value_cutoff(s, *A.shape)
    return Vt[keep].T @ ((U[:, keep].T @ y) / s[keep])


def _column_basis(A: np.ndarray) -> np.ndarray:
    U, s, _ = np.linalg.svd(A, full_matrices=False)
    return U[:, s > singular_value_cutoff(s, *A.shape)]


def fit_post_lava_regression(fit: LavaRegressionFit, D: DesignMatrix, Y: np.ndarray) -> LavaRegressionFit:
    """Refit the selected sparse part by least squares on Y - X beta_hat."""
    Y = _check_response(D, Y)
    kind = Estimator.POST_LASSO if fit.estimator is Estimator.LASSO else Estimator.POST_LAVA
    J = fit.active_set
    if J.size == 0:
        return replace(fit, estimator=kind)
    delta = np.zeros(D.p)
    delta[J] = _pseudo_solve(D.X[:, J], Y - D.X @ fit.beta_hat)
    refit = _assemble(kind, fit.penalties, D, Y, fit.beta_hat, delta,
                      fit.converged, fit.kkt_residual, fit.iterations)
    # keep the lava selection even where the refit coefficient is exactly zero
    return replace(refit, active_set=J)


def fit_regression(kind: Union[str, Estimator], D: DesignMatrix, Y: np.ndarray,
                   penalties: PenaltyLike = None, opts: Optional[SolverOptions] = None,
                   warm_start: Optional[np.ndarray] = None,
                   projection: Optional[RidgeProjection] = None) -> LavaRegressionFit:
    """Fit any estimator kind; the sparse coefficients of lasso-type fits sit in delta_hat."""
    kind = Estimator.parse(kind)
    pair = coerce_penalties(kind, penalties)
    Y = _check_response(D, Y)
    if kind in (Estimator.LAVA, Estimator.POST_LAVA):
        fit = fit_lava_regression(D, Y, pair, opts, warm_start, projection)
        return fit if kind is Estimator.LAVA else fit_post_lava_regression(fit, D, Y)
    if kind in (Estimator.LASSO, Estimator.POST_LASSO):
        lasso = fit_lasso(D, Y, pair.lambda1, opts, warm_start)
        fit = _assemble(Estimator.LASSO, pair, D, Y, np.zeros(D.p), lasso.delta,
                        lasso.converged, lasso.kkt_residual, lasso.iterations)
        return fit if kind is Estimator.LASSO else fit_post_lava_regression(fit, D, Y)
    if kind is Estimator.RIDGE:
        return _assemble(kind, pair, D, Y, fit_ridge(D, Y, pair.lambda2), np.zeros(D.p))
    if kind is Estimator.ELASTIC_NET:
        enet = fit_elastic_net(D, Y, pair, opts, warm_start)
        return _assemble(kind, pair, D, Y, np.zeros(D.p), enet.delta,
                         enet.converged, enet.kkt_residual, enet.iterations)
    ols = _pseudo_solve(D.X, Y)
    return _assemble(kind, pair, D, Y, ols, np.zeros(D.p))


# Degrees of freedom and SURE

class DfSure(NamedTuple):
    df: float
    sure: float


def _sure(fit: LavaRegressionFit, Y: np.ndarray, sigma_u2: float, df: float) -> float:
    n = Y.shape[0]
    return -sigma_u2 + float(fit.residual @ fit.residual) / n + 2.0 * sigma_u2 * df / n


def _check_variance(sigma_u2: float) -> None:
    if not (math.isfinite(sigma_u2) and sigma_u2 > 0):
        raise InvalidInputError(f"sigma_u2 must be positive, got {sigma_u2}")


def _projection_for(fit: LavaRegressionFit, D: DesignMatrix,
                    projection: Optional[RidgeProjection]) -> RidgeProjection:
    if projection is not None:
        return projection
    return ridge_projection(D, fit.penalties.lambda2)


def lava_df(fit: LavaRegressionFit, D: DesignMatrix, projection: Optional[RidgeProjection] = None) -> float:
    """rank(X~_J) + tr(K~_J P), X~ = K^{1/2} X and K~_J the projection off the columns X~_J."""
    proj = _projection_for(fit, D, projection)
    J = fit.active_set
    if J.size == 0:
        return proj.trace_p
    Q = _column_basis(proj.transformed.X[:, J])
    UQ = proj.U.T @ Q
    captured = float(proj.p_weights @ np.sum(UQ ** 2, axis=1))
    return Q.shape[1] + proj.trace_p - captured


def df_sure_lava(fit: LavaRegressionFit, D: DesignMatrix, Y: np.ndarray, sigma_u2: float,
                 projection: Optional[RidgeProjection] = None) -> DfSure:
    """Degrees of freedom estimate and SURE of a lava fit.

    SURE = -sigma_u2 + (1/n)|X theta_hat - Y|^2 + (2 sigma_u2 / n) df.
    """
    _check_variance(sigma_u2)
    Y = _check_response(D, Y)
    df = lava_df(fit, D, projection)
    return DfSure(df=df, sure=_sure(fit, Y, sigma_u2, df))


def df_post_lava(fit: LavaRegressionFit, D: DesignMatrix, projection: Optional[RidgeProjection] = None) -> float:
    """df of post-lava: df_lava + tr(P_J K^{1/2} K~_J K^{1/2}); a diagnostic, not a SURE input."""
    proj = _projection_for(fit, D, projection)
    df = lava_df(fit, D, proj)
    J = fit.active_set
    if J.size == 0:
        return df
    M = proj.apply_k_half(_column_basis(D.X[:, J]))
    Q_t = _column_basis(proj.transformed.X[:, J])
    return df + float(np.sum(M ** 2)) - float(np.sum((Q_t.T @ M) ** 2))


def df_sure_baseline(kind: Union[str, Estimator], fit: LavaRegressionFit, D: DesignMatrix,
                     Y: np.ndarray, sigma_u2: float) -> DfSure:
    """Standard df: ridge tr(P), lasso |J|, elastic net tr of the active-set ridge hat matrix."""
    kind = Estimator.parse(kind)
    _check_variance(sigma_u2)
    Y = _check_response(D, Y)
    if kind is Estimator.RIDGE:
        df = ridge_projection(D, fit.penalties.lambda2).trace_p
    elif kind is Estimator.LASSO:
        df = float(fit.active_set.size)
    elif kind is Estimator.ELASTIC_NET:
        J = fit.active_set
        if J.size == 0:
            df = 0.0
        else:
            s = np.linalg.svd(D.X[:, J], compute_uv=False)
            df = float(np.sum(s ** 2 / (s ** 2 + D.n * fit.penalties.lambda2)))
    elif kind is Estimator.LAVA:
        return df_sure_lava(fit, D, Y, sigma_u2)
    else:
        raise InvalidInputError(f"no SURE available for {kind.value}")
    return DfSure(df=df, sure=_sure(fit, Y, sigma_u2, df))


# Deviation diagnostics

def _score_block(score_map: np.ndarray, U: np.ndarray, sigma_u: float, size: int,
                 seed: int, index: int) -> np.ndarray:
    rng = rng_stream(seed, index)
    noise = sigma_u * rng.standard_normal((U.shape[0], size))
    return np.abs(score_map @ (U.T @ noise)).max(axis=0)


def score_quantile(D: DesignMatrix, lambda2: float, sigma_u: float, alpha: float = 0.05,
                   reps: int = 1000, seed: int = 0, n_jobs: Optional[int] = None) -> float:
    """Simulated (1 - alpha) quantile of |(2/n) X'K U|_inf with U ~ N(0, sigma_u^2 I)."""
    if reps < 100:
        raise InvalidInputError(f"reps must be >= 100, got {reps}")
    if not 0 < alpha < 1:
        raise InvalidInputError(f"alpha must be in (0, 1), got {alpha}")
    if sigma_u == 0:
        return 0.0
    proj = ridge_projection(D, lambda2)
    _, s, Vt = D.svd
    # (2/n) X'K = (2/n) V diag(s (1 - w)) U'
    score_map = (2.0 / D.n) * Vt.T * (s * (1.0 - proj.p_weights))
    sizes = [SCORE_BLOCK_SIZE] * (reps // SCORE_BLOCK_SIZE)
    if reps % SCORE_BLOCK_SIZE:
        sizes.append(reps % SCORE_BLOCK_SIZE)
    maxima = Parallel(n_jobs=n_jobs or N_JOBS, prefer="threads")(
        delayed(_score_block)(score_map, proj.U, sigma_u, size, seed, b) for b, size in enumerate(sizes)
    )
    return float(np.quantile(np.concatenate(maxima), 1.0 - alpha, method="inverted_cdf"))


def bar_v(D: DesignMatrix, lambda2: float) -> float:
    """Largest diagonal entry of V = lambda2^2 (S + lambda2 I)^{-1} S (S + lambda2 I)^{-1}, S = X'X/n."""
    _, s, Vt = D.svd
    eig = s ** 2 / D.n
    weights = eig if math.isinf(lambda2) else lambda2 ** 2 * eig / (eig + lambda2) ** 2
    return float(((Vt ** 2) * weights[:, None]).sum(axis=0).max())


def lambda_bar(D: DesignMatrix, lambda2: float, sigma_u: float, alpha: float = 0.05) -> float:
    """Union-bound level 2 sigma_u sqrt(2 barV log(2p/alpha) / n).

    Each score coordinate is N(0, 4 sigma_u^2 v_jj / n); Mill's ratio needs the factor 2
    inside the root for p tail probabilities to sum below alpha.
    """
    return 2.0 * sigma_u * math.sqrt(2.0 * bar_v(D, lambda2) * math.log(2.0 * D.p / alpha) / D.n)


def restricted_eigenvalue_surrogate(D: DesignMatrix, lambda2: float, support: Sequence[int], c: float = 1.1,
                                    n_directions: int = 4000, seed: int = 0) -> float:
    """Search estimate of kappa^2 = inf |X~ Delta|^2 / (n |Delta_J|^2) over the cone
    |Delta_{J^c}|_1 <= (c+1)/(c-1) |Delta_J|_1.

    Being a minimum over explored directions, it is an upper estimate of the infimum.
    """
    if D.p > 12:
        raise InvalidInputError(f"restricted eigenvalue search is limited to p <= 12, got p={D.p}")
    if c <= 1:
        raise InvalidInputError(f"c must exceed 1, got {c}")
    J = np.unique(np.asarray(support, dtype=int))
    if J.size == 0 or J.min() < 0 or J.max() >= D.p:
        raise InvalidInputError("support must be a nonempty set of column indices")
    Jc = np.setdiff1d(np.arange(D.p), J)
    G = ridge_projection(D, lambda2).transformed.gram
    cone = (c + 1.0) / (c - 1.0)
    rng = rng_stream(seed, 0)

    def into_cone(delta: np.ndarray) -> np.ndarray:
        budget = cone * np.abs(delta[J]).sum()
        outside = np.abs(delta[Jc]).sum()
        if outside > budget:
            delta = delta.copy()
            delta[Jc] *= budget / outside
        return delta

    def ratio(delta: np.ndarray) -> float:
        denom = float(delta[J] @ delta[J])
        return math.inf if denom == 0 else float(delta @ G @ delta) / denom

    candidates = []
    _, vecs = np.linalg.eigh(G[np.ix_(J, J)])
    for col in vecs.T:
        delta = np.zeros(D.p)
        delta[J] = col
        candidates.append(delta)
    _, vecs = np.linalg.eigh(G)
    candidates.extend(into_cone(col) for col in vecs.T)
    for _ in range(n_directions):
        delta = np.zeros(D.p)
        delta[J] = rng.standard_normal(J.size)
        if Jc.size:
            tail = rng.standard_normal(Jc.size)
            delta[Jc] = tail * rng.uniform() * cone * np.abs(delta[J]).sum() / np.abs(tail).sum()
        candidates.append(delta)

    scored = sorted(((ratio(d), i) for i, d in enumerate(candidates)), key=lambda t: t[0])
    best = scored[0][0]
    # local refinement from the leading candidates
    for value, i in scored[:5]:
        current, current_value, step = candidates[i], value, 0.5
        for _ in range(300):
            trial = into_cone(current + step * rng.standard_normal(D.p))
            trial_value = ratio(trial)
            if trial_value < current_value:
                current, current_value = trial, trial_value
            else:
                step *= 0.97
        best = min(best, current_value)
    return max(best, 0.0)


@dataclass(frozen=True)
class DeviationReport:
    lambda1_quantile: Optional[float]
    lambda_bar: float
    bar_v: float
    b2: float
    b3: float
    b4: float
    k_norm: float
    lambda1: float
    restricted_eigenvalue_surrogate: Optional[float] = None
    b1_upper: Optional[float] = None

    @property
    def total_bound(self) -> Optional[float]:
        """(B1up v B2) |K| + B3 + B4, available when B1up is."""
        if self.b1_upper is None:
            return None
        return max(self.b1_upper, self.b2) * self.k_norm + self.b3 + self.b4

    def as_rows(self):
        """(quantity, value) pairs in a fixed order for CSV or plain-text output."""
        names = ["lambda1_quantile", "lambda_bar", "bar_v", "b2", "b3", "b4", "k_norm", "lambda1",
                 "restricted_eigenvalue_surrogate", "b1_upper"]
        rows = [(name, getattr(self, name)) for name in names]
        rows.append(("total_bound", self.total_bound))
        return rows


def bound_components(D: DesignMatrix, lambda2: float, beta0: np.ndarray, sigma_u: float,
                     alpha: float = 0.05, eps: float = 0.05, c: float = 1.1,
                     support: Optional[Sequence[int]] = None, reps: int = 0, seed: int = 0,
                     lambda1: Optional[float] = None) -> DeviationReport:
    """Deviation-bound terms for a caller-supplied dense part beta0.

    Args:
        D: Design.
        lambda2: Ridge level.
        beta0: Candidate dense part.
        sigma_u: Noise level.
        alpha: Score quantile level.
        eps: Confidence slack of the B3 term.
        c: Multiplier of the score level (lambda1 = c * Lambda).
        support: Support of the sparse part; enables the restricted-eigenvalue
            surrogate and B1up when p <= 12.
        reps: Score simulations for Lambda_{1-alpha}; 0 uses the union-bound level.
        seed: Seed of the score simulation.
        lambda1: Penalty level to report B1up for; defaults to c * Lambda.

    Returns:
        A DeviationReport.
    """
    if not (0 < alpha < 1 and 0 < eps < 1):
        raise InvalidInputError("alpha and eps must lie in (0, 1)")
    beta0 = np.asarray(beta0, dtype=float)
    if beta0.shape != (D.p,):
        raise InvalidInputError(f"beta0 must have length {D.p}")
    proj = ridge_projection(D, lambda2)
    signal = D.X @ beta0
    b2 = 32.0 / D.n * float(np.sum(proj.apply_k_half(signal) ** 2))
    b4 = 4.0 / D.n * float(np.sum(proj.apply_k(signal) ** 2))
    b3 = 4.0 * sigma_u ** 2 / D.n * (
        math.sqrt(proj.trace_p2) + math.sqrt(2.0) * math.sqrt(proj.norm_p2) * math.sqrt(math.log(1.0 / eps))
    ) ** 2
    level_bar = lambda_bar(D, lambda2, sigma_u, alpha)
    quantile = score_quantile(D, lambda2, sigma_u, alpha, reps, seed) if reps else None
    if lambda1 is None:
        lambda1 = c * (quantile if quantile is not None else level_bar)

    kappa_sq = None
    b1_upper = None
    if support is not None and D.p <= 12:
        kappa_sq = restricted_eigenvalue_surrogate(D, lambda2, support, c, seed=seed)
        size = len(set(int(j) for j in support))
        b1_upper = math.inf if kappa_sq == 0 else 8.0 * lambda1 ** 2 * size / kappa_sq
    report = DeviationReport(
        lambda1_quantile=quantile, lambda_bar=level_bar, bar_v=bar_v(D, lambda2),
        b2=b2, b3=b3, b4=b4, k_norm=proj.norm_k, lambda1=float(lambda1),
        restricted_eigenvalue_surrogate=kappa_sq, b1_upper=b1_upper,
    )
    logger.debug(f"Deviation terms at lambda2={lambda2}: B2={b2:.4g}, B3={b3:.4g}, B4={b4:.4g}")
    return report
