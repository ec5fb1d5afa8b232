#!/usr/bin/env python

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Tuple

import numba
import numpy as np
from loguru import logger

from .exceptions import InvalidInputError, NumericalError
from .settings import DEBUG, DEFAULT_MAX_ITER, DEFAULT_TOL
from .shrinkage import PenaltyPair


@dataclass(frozen=True)
class SolverOptions:
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    check_descent: bool = DEBUG

    def __post_init__(self):
        if not self.tol > 0 or self.max_iter < 1:
            raise InvalidInputError(f"invalid solver options tol={self.tol}, max_iter={self.max_iter}")


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """Immutable design with the column scales needed to map coefficients back.

    The thin SVD and the Gram matrix X'X/n are computed once on first use and
    shared by every fit on this design.
    """

    X: np.ndarray
    column_scales: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        scales = np.array(self.column_scales, dtype=float)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise InvalidInputError(f"design must be a nonempty matrix, got shape {X.shape}")
        if scales.shape != (X.shape[1],) or np.any(scales <= 0):
            raise InvalidInputError("column_scales must be positive, one per column")
        if not np.all(np.isfinite(X)):
            raise InvalidInputError("design contains non-finite entries")
        X.setflags(write=False)
        scales.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "column_scales", scales)

    @classmethod
    def unscaled(cls, X: np.ndarray) -> "DesignMatrix":
        X = np.asarray(X, dtype=float)
        return cls(X, np.ones(X.shape[1]), normalized=False)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def raw(self) -> np.ndarray:
        """The design on its original scale."""
        return self.X * self.column_scales

    @cached_property
    def svd(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return np.linalg.svd(self.X, full_matrices=False)

    @cached_property
    def gram(self) -> np.ndarray:
        return np.ascontiguousarray(self.X.T @ self.X / self.n)

    def to_original_scale(self, coef: np.ndarray) -> np.ndarray:
        return np.asarray(coef, dtype=float) / self.column_scales


@dataclass(frozen=True, eq=False)
class LassoFit:
    delta: np.ndarray
    active_set: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int
    converged: bool
    lambda1: float
    lambda2: float = 0.0
    max_change: float = field(default=0.0, compare=False)


def normalize_design(X: np.ndarray) -> DesignMatrix:
    """Scale columns so that n^{-1} [X'X]_jj = 1.

    Args:
        X: Raw n x p design.

    Returns:
        The normalized DesignMatrix, carrying the scales sqrt(n^{-1} sum_i x_ij^2).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise InvalidInputError(f"design must be 2-d, got shape {X.shape}")
    scales = np.sqrt(np.mean(X ** 2, axis=0))
    zero = np.flatnonzero(scales == 0)
    if zero.size:
        raise InvalidInputError(f"design column {int(zero[0])} is all zero")
    return DesignMatrix(X / scales, scales, normalized=True)


def singular_value_cutoff(s: np.ndarray, n_rows: int, n_cols: int) -> float:
    """Numerical-rank threshold max(n_rows, n_cols) * ulp * s_max."""
    if s.size == 0:
        return 0.0
    return max(n_rows, n_cols) * np.finfo(float).eps * float(s.max())


def numerical_rank(s: np.ndarray, n_rows: int, n_cols: int) -> int:
    return int(np.count_nonzero(s > singular_value_cutoff(s, n_rows, n_cols)))


# Coordinate descent in Gram form: G = X'X/n, b = X'y/n, yy = y'y/n

@numba.njit(cache=True, nogil=True)
def _refresh_correlation(G, b, delta, c):
    p = b.shape[0]
    for i in range(p):
        acc = b[i]
        for j in range(p):
            acc -= G[i, j] * delta[j]
        c[i] = acc


@numba.njit(cache=True, nogil=True)
def _gram_objective(b, yy, lambda1, lambda2, delta, c):
    value = yy
    for j in range(b.shape[0]):
        value += -b[j] * delta[j] - c[j] * delta[j] + lambda2 * delta[j] * delta[j] + lambda1 * abs(delta[j])
    return value


@numba.njit(cache=True, nogil=True)
def _gram_kkt(c, delta, lambda1, lambda2):
    worst = 0.0
    for j in range(c.shape[0]):
        grad = -2.0 * c[j] + 2.0 * lambda2 * delta[j]
        if delta[j] > 0.0:
            v = abs(grad + lambda1)
        elif delta[j] < 0.0:
            v = abs(grad - lambda1)
        else:
            v = max(abs(grad) - lambda1, 0.0)
        if v > worst:
            worst = v
    return worst


@numba.njit(cache=True, nogil=True)
def _coordinate_descent(G, b, yy, lambda1, lambda2, delta, tol, max_iter, history):
    p = b.shape[0]
    c = np.empty(p)
    _refresh_correlation(G, b, delta, c)
    half = 0.5 * lambda1
    sweeps = 0
    max_change = np.inf
    for sweep in range(max_iter):
        max_change = 0.0
        for j in range(p):
            old = delta[j]
            rho = c[j] + G[j, j] * old
            denom = G[j, j] + lambda2
            new = 0.0
            if denom > 0.0:
                if rho > half:
                    new = (rho - half) / denom
                elif rho < -half:
                    new = (rho + half) / denom
            diff = new - old
            if diff != 0.0:
                delta[j] = new
                for i in range(p):
                    c[i] -= G[i, j] * diff
                if abs(diff) > max_change:
                    max_change = abs(diff)
        sweeps = sweep + 1
        if sweep < history.shape[0]:
            history[sweep] = _gram_objective(b, yy, lambda1, lambda2, delta, c)
        if max_change < tol:
            _refresh_correlation(G, b, delta, c)
            if _gram_kkt(c, delta, lambda1, lambda2) < tol:
                break
    _refresh_correlation(G, b, delta, c)
    return sweeps, max_change, _gram_kkt(c, delta, lambda1, lambda2)


def _assert_descent(history: np.ndarray) -> None:
    steps = np.diff(history)
    slack = 1e-12 * np.maximum(1.0, np.abs(history[1:]))
    bad = np.flatnonzero(steps > slack)
    if bad.size:
        raise AssertionError(f"coordinate descent objective increased at sweep {int(bad[0]) + 1}")


def solve_gram(G: np.ndarray, b: np.ndarray, yy: float, lambda1: float, lambda2: float = 0.0,
               opts: Optional[SolverOptions] = None,
               warm_start: Optional[np.ndarray] = None) -> Tuple[np.ndarray, int, float, float]:
    """Minimize yy - 2 b'd + d'Gd + lambda2 |d|^2 + lambda1 |d|_1 by cyclic coordinate descent.

    Returns:
        (delta, sweeps, last max coefficient change, KKT residual).
    """
    opts = opts or SolverOptions()
    p = b.shape[0]
    delta = np.zeros(p) if warm_start is None else np.array(warm_start, dtype=float)
    if delta.shape != (p,):
        raise InvalidInputError(f"warm start must have length {p}")
    history = np.empty(opts.max_iter if opts.check_descent else 0)
    sweeps, max_change, kkt = _coordinate_descent(
        np.ascontiguousarray(G, dtype=float), np.ascontiguousarray(b, dtype=float), float(yy),
        float(lambda1), float(lambda2), delta, float(opts.tol), int(opts.max_iter), history,
    )
    if opts.check_descent:
        _assert_descent(history[:sweeps])
    return delta, int(sweeps), float(max_change), float(kkt)


def _check_response(D: DesignMatrix, y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.shape != (D.n,):
        raise InvalidInputError(f"response must have length {D.n}, got shape {y.shape}")
    if not np.all(np.isfinite(y)):
        raise InvalidInputError("response contains non-finite entries")
    return y


def penalized_objective(D: DesignMatrix, y: np.ndarray, coef: np.ndarray,
                        lambda1: float, lambda2: float = 0.0) -> float:
    """(1/n)|y - X coef|^2 + lambda2 |coef|^2 + lambda1 |coef|_1."""
    resid = y - D.X @ coef
    value = float(resid @ resid) / D.n + lambda1 * float(np.abs(coef).sum())
    if lambda2:
        value += lambda2 * float(coef @ coef)
    return value


def _fit_penalized(D: DesignMatrix, y: np.ndarray, lambda1: float, lambda2: float,
                   opts: Optional[SolverOptions], warm_start: Optional[np.ndarray]) -> LassoFit:
    y = _check_response(D, y)
    opts = opts or SolverOptions()
    b = D.X.T @ y / D.n
    yy = float(y @ y) / D.n
    delta, sweeps, max_change, kkt = solve_gram(D.gram, b, yy, lambda1, lambda2, opts, warm_start)
    converged = max_change < opts.tol and kkt < opts.tol
    if not converged:
        logger.warning(f"Coordinate descent stopped after {sweeps} sweeps without converging "
                       f"(KKT residual {kkt:.3e}, lambda1={lambda1}, lambda2={lambda2})")
    return LassoFit(
        delta=delta,
        active_set=np.flatnonzero(delta),
        objective=penalized_objective(D, y, delta, lambda1, lambda2),
        kkt_residual=kkt,
        iterations=sweeps,
        converged=bool(converged),
        lambda1=float(lambda1),
        lambda2=float(lambda2),
        max_change=max_change,
    )


def fit_lasso(D: DesignMatrix, y: np.ndarray, lambda1: float, opts: Optional[SolverOptions] = None,
              warm_start: Optional[np.ndarray] = None) -> LassoFit:
    """Lasso fit minimizing (1/n)|y - X delta|^2 + lambda1 |delta|_1.

    Args:
        D: Design.
        y: Response of length n.
        lambda1: Positive l1 level.
        opts: Tolerance, sweep cap and descent check.
        warm_start: Optional starting coefficients.

    Returns:
        A LassoFit; a fit that hit max_iter is returned with converged=False.
    """
    if not (math.isfinite(lambda1) and lambda1 > 0):
        raise InvalidInputError(f"lambda1 must be positive and finite, got {lambda1}")
    return _fit_penalized(D, y, lambda1, 0.0, opts, warm_start)


def fit_elastic_net(D: DesignMatrix, y: np.ndarray, p: PenaltyPair, opts: Optional[SolverOptions] = None,
                    warm_start: Optional[np.ndarray] = None) -> LassoFit:
    if not p.is_finite:
        raise InvalidInputError("elastic net needs finite penalties")
    return _fit_penalized(D, y, p.lambda1, p.lambda2, opts, warm_start)


def fit_ridge(D: DesignMatrix, y: np.ndarray, lambda2: float) -> np.ndarray:
    """(X'X + n lambda2 I)^{-1} X'y through the thin SVD of X."""
    y = _check_response(D, y)
    if math.isnan(lambda2) or lambda2 < 0:
        raise InvalidInputError(f"lambda2 must be >= 0, got {lambda2}")
    if math.isinf(lambda2):
        return np.zeros(D.p)
    U, s, Vt = D.svd
    uty = U.T @ y
    if lambda2 == 0:
        if numerical_rank(s, D.n, D.p) < D.p:
            raise NumericalError("unpenalized ridge needs X'X invertible; the design is rank deficient")
        return Vt.T @ (uty / s)
    return Vt.T @ (s / (s ** 2 + D.n * lambda2) * uty)


def check_kkt(D: DesignMatrix, y: np.ndarray, fit: LassoFit, lambda1: float) -> float:
    """Largest subgradient violation of the fit at level lambda1 (and the fit's lambda2)."""
    y = _check_response(D, y)
    delta = fit.delta
    grad = -2.0 * D.X.T @ (y - D.X @ delta) / D.n + 2.0 * fit.lambda2 * delta
    violation = np.where(
        delta != 0,
        np.abs(grad + lambda1 * np.sign(delta)),
        np.maximum(np.abs(grad) - lambda1, 0.0),
    )
    return float(violation.max(initial=0.0))
