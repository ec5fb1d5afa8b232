#!/usr/bin/env python

"""Exact risk of the shrinkage estimators in the Gaussian sequence model Z ~ N_p(theta, sigma^2 I)."""

import math
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from loguru import logger
from scipy import special
from scipy.stats import norm

from .exceptions import InvalidInputError
from .grid import PenaltyGrid, argmin_prefer_larger
from .settings import MC_BLOCK_SIZE, N_JOBS
from .shrinkage import (
    Estimator,
    PenaltyLike,
    PenaltyPair,
    apply_shrinkage,
    coerce_penalties,
    lava_weights,
)
from .utils import ArrayOrFloat, as_output, rng_stream

RISK_TABLE_COLUMNS = ["estimator", "lambda1", "lambda2", "q", "risk", "se", "method"]


@dataclass(frozen=True)
class SequenceModel:
    theta: np.ndarray
    sigma: float

    def __post_init__(self):
        theta = np.atleast_1d(np.array(self.theta, dtype=float))
        if theta.ndim != 1 or theta.size < 1:
            raise InvalidInputError("theta must be a nonempty vector")
        if not np.all(np.isfinite(theta)):
            raise InvalidInputError("theta must be finite")
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise InvalidInputError(f"sigma must be positive, got {self.sigma}")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def p(self) -> int:
        return int(self.theta.size)

    @property
    def norm2_theta_sq(self) -> float:
        return float(self.theta @ self.theta)


@dataclass(frozen=True)
class SignalSplit:
    """theta = beta (dense part) + delta (sparse part)."""

    beta: np.ndarray
    delta: np.ndarray
    q: float = 0.0

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float)
        delta = np.asarray(self.delta, dtype=float)
        if beta.shape != delta.shape or beta.ndim != 1:
            raise InvalidInputError("beta and delta must be vectors of equal length")
        if self.q < 0:
            raise InvalidInputError(f"q must be >= 0, got {self.q}")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "delta", delta)

    @classmethod
    def for_comparison(cls, p: int, q: float) -> "SignalSplit":
        """delta = (3, 0, ..., 0), beta = (0, 0.1q, ..., 0.1q)."""
        delta = np.zeros(p)
        delta[0] = 3.0
        beta = np.full(p, 0.1 * q)
        beta[0] = 0.0
        return cls(beta=beta, delta=delta, q=q)

    @property
    def theta(self) -> np.ndarray:
        return self.beta + self.delta

    @property
    def s(self) -> int:
        return int(np.count_nonzero(self.delta))

    @property
    def norm2_beta_sq(self) -> float:
        return float(self.beta @ self.beta)


@dataclass(frozen=True)
class PiecewiseLinearSpec:
    """F(z) = h z + d on z > w, e z + m on |z| <= w, f z + g on z < -w."""

    h: float
    d: float
    e: float
    m: float
    f: float
    g: float
    w: float

    def __post_init__(self):
        for name in ("h", "d", "e", "m", "f", "g"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidInputError(f"coefficient {name} must be finite")
        if math.isnan(self.w) or self.w < 0:
            raise InvalidInputError(f"w must be >= 0, got {self.w}")


# Kernel

def _scaled_density(x: float, theta: np.ndarray, sigma: float) -> np.ndarray:
    # sigma^2 * phi_{theta,sigma}(x); zero at infinite endpoints
    if math.isinf(x):
        return np.zeros_like(theta)
    return sigma ** 2 * norm.pdf(x, loc=theta, scale=sigma)


def _interval_prob(lo: float, hi: float, theta: np.ndarray, sigma: float) -> np.ndarray:
    if hi == math.inf:
        return special.ndtr((theta - lo) / sigma)
    if lo == -math.inf:
        return special.ndtr((hi - theta) / sigma)
    return special.ndtr((hi - theta) / sigma) - special.ndtr((lo - theta) / sigma)


def _region_sq_moment(slope, intercept, lo: float, hi: float,
                      theta: np.ndarray, sigma: float) -> np.ndarray:
    """E[(slope Z + intercept)^2 1{lo < Z < hi}] for Z ~ N(theta, sigma^2)."""
    slope = np.asarray(slope, dtype=float)
    intercept = np.asarray(intercept, dtype=float)
    prob = _interval_prob(lo, hi, theta, sigma)
    out = ((slope * theta + intercept) ** 2 + slope ** 2 * sigma ** 2) * prob
    if math.isfinite(lo):
        out = out + _scaled_density(lo, theta, sigma) * (slope ** 2 * (lo + theta) + 2 * slope * intercept)
    if math.isfinite(hi):
        out = out - _scaled_density(hi, theta, sigma) * (slope ** 2 * (hi + theta) + 2 * slope * intercept)
    return out


def _kernel(h, d, e, m, f, g, w: float, theta: np.ndarray, sigma: float) -> np.ndarray:
    middle = _region_sq_moment(e, m, -w, w, theta, sigma)
    if math.isinf(w):
        return middle
    upper = _region_sq_moment(h, d, w, math.inf, theta, sigma)
    lower = _region_sq_moment(f, g, -math.inf, -w, theta, sigma)
    return upper + middle + lower


def _check_location(theta, sigma) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise InvalidInputError("theta must be finite")
    if not (math.isfinite(sigma) and sigma > 0):
        raise InvalidInputError(f"sigma must be positive and finite, got {sigma}")
    return theta


def piecewise_sq_expectation(spec: PiecewiseLinearSpec, theta: ArrayOrFloat, sigma: float) -> ArrayOrFloat:
    """E[F(Z)^2] for a piecewise linear F and Z ~ N(theta, sigma^2), in closed form.

    Args:
        spec: The three linear pieces and the breakpoint w.
        theta: Mean of Z (scalar or array).
        sigma: Standard deviation of Z.

    Returns:
        The second moment, with the shape of theta.
    """
    theta = _check_location(theta, sigma)
    return as_output(_kernel(spec.h, spec.d, spec.e, spec.m, spec.f, spec.g, spec.w, theta, sigma))


# Risk

def _error_pieces(kind: Estimator, pair: PenaltyPair, theta: np.ndarray):
    """Pieces of F(z) = d(z) - theta for the estimator kind."""
    one = np.ones_like(theta)
    zero = np.zeros_like(theta)
    if kind in (Estimator.LAVA, Estimator.LASSO):
        weights = lava_weights(pair)
        if math.isinf(weights.w):
            return zero, zero, (1 - weights.k) * one, -theta, zero, zero, weights.w
        half = pair.lambda1 / 2.0
        return one, -half - theta, (1 - weights.k) * one, -theta, one, half - theta, weights.w
    if kind in (Estimator.POST_LAVA, Estimator.POST_LASSO):
        weights = lava_weights(pair)
        return one, -theta, (1 - weights.k) * one, -theta, one, -theta, weights.w
    if kind is Estimator.RIDGE:
        slope = 0.0 if math.isinf(pair.lambda2) else 1.0 / (1.0 + pair.lambda2)
        return zero, zero, slope * one, -theta, zero, zero, math.inf
    if kind is Estimator.ELASTIC_NET:
        if not pair.is_finite:
            raise InvalidInputError("elastic net needs finite penalties")
        scale = 1.0 / (1.0 + pair.lambda2)
        shift = pair.lambda1 * scale / 2.0
        return scale * one, -shift - theta, zero, -theta, scale * one, shift - theta, pair.lambda1 / 2.0
    return one, -theta, one, -theta, one, -theta, math.inf


def risk_scalar_via_kernel(kind: Union[str, Estimator], theta: ArrayOrFloat, sigma: float,
                           penalties: PenaltyLike = None) -> ArrayOrFloat:
    """Risk E[(d(Z) - theta)^2] computed directly through the piecewise kernel."""
    kind = Estimator.parse(kind)
    pair = coerce_penalties(kind, penalties)
    theta = _check_location(theta, sigma)
    risk = _kernel(*_error_pieces(kind, pair, theta), theta, sigma)
    return as_output(np.maximum(risk, 0.0))


def _lava_risk(pair: PenaltyPair, theta: np.ndarray, sigma: float) -> np.ndarray:
    # R = -sigma^2 + E(Z - d(Z))^2 + 2 E[(Z - theta) d(Z)]
    weights = lava_weights(pair)
    k, w = weights.k, weights.w
    zero = np.zeros_like(theta)
    if math.isinf(w):
        residual = _kernel(zero, zero, -k + zero, zero, zero, zero, w, theta, sigma)
        tail = zero
    else:
        half = pair.lambda1 / 2.0
        residual = _kernel(zero, zero - half, -k + zero, zero, zero, zero + half, w, theta, sigma)
        tail = special.ndtr((theta - w) / sigma) + special.ndtr((-w - theta) / sigma)
    cross = 2.0 * (1.0 - k) * sigma ** 2 + 2.0 * k * sigma ** 2 * tail
    return -sigma ** 2 + residual + cross


def risk_scalar(kind: Union[str, Estimator], theta: ArrayOrFloat, sigma: float,
                penalties: PenaltyLike = None) -> ArrayOrFloat:
    """Exact scalar risk of an estimator kind.

    Lava and lasso go through the Stein decomposition of the risk, ridge through its
    closed form, the remaining kinds through the piecewise kernel. Lasso takes
    lambda_l, ridge lambda_r, post-lasso lambda_l; the pair kinds take a PenaltyPair.
    """
    kind = Estimator.parse(kind)
    pair = coerce_penalties(kind, penalties)
    theta = _check_location(theta, sigma)
    if kind in (Estimator.LAVA, Estimator.LASSO):
        risk = _lava_risk(pair, theta, sigma)
    elif kind is Estimator.RIDGE:
        k_r = 1.0 if math.isinf(pair.lambda2) else pair.lambda2 / (1.0 + pair.lambda2)
        risk = k_r ** 2 * theta ** 2 + (1.0 - k_r) ** 2 * sigma ** 2
    elif kind is Estimator.ML:
        risk = np.full_like(theta, sigma ** 2)
    else:
        risk = _kernel(*_error_pieces(kind, pair, theta), theta, sigma)
    return as_output(np.maximum(risk, 0.0))


def risk_vector(kind: Union[str, Estimator], model: SequenceModel, penalties: PenaltyLike = None) -> float:
    return float(np.sum(risk_scalar(kind, model.theta, model.sigma, penalties)))


def risk_ml(model: SequenceModel) -> float:
    """Risk p*sigma^2 of the maximum-likelihood estimator Z."""
    return model.p * model.sigma ** 2


# Penalty choice

class PlugInPenalties(NamedTuple):
    lambda_l: float
    lambda_r: float
    lambda1: float
    lambda2: float

    def for_kind(self, kind: Union[str, Estimator]) -> PenaltyPair:
        kind = Estimator.parse(kind)
        if kind in (Estimator.LAVA, Estimator.POST_LAVA):
            return PenaltyPair(self.lambda1, self.lambda2)
        if kind in (Estimator.LASSO, Estimator.POST_LASSO):
            return PenaltyPair.lasso(self.lambda_l)
        if kind is Estimator.RIDGE:
            return PenaltyPair.ridge(self.lambda_r)
        if kind is Estimator.ML:
            return PenaltyPair.unpenalized()
        raise InvalidInputError(f"no plug-in penalty for {kind.value}")


def plug_in_penalties(p: int, sigma: float, c: float, norm2_theta_sq: float,
                      norm2_beta_sq: float) -> PlugInPenalties:
    """Canonical plug-in levels.

    Args:
        p: Dimension.
        sigma: Noise level.
        c: Significance level in (0, 1).
        norm2_theta_sq: Squared norm of theta (ridge level).
        norm2_beta_sq: Squared norm of the dense part (lava ridge level).

    Returns:
        (lambda_l, lambda_r, lambda1, lambda2); a zero norm gives an infinite level.
    """
    if p < 1 or not (0 < c < 1) or sigma <= 0:
        raise InvalidInputError(f"invalid plug-in inputs p={p}, c={c}, sigma={sigma}")
    if norm2_theta_sq < 0 or norm2_beta_sq < 0:
        raise InvalidInputError("squared norms must be >= 0")
    lambda_l = 2.0 * sigma * float(special.ndtri(1.0 - c / (2.0 * p)))
    lambda_r = math.inf if norm2_theta_sq == 0 else sigma ** 2 * p / norm2_theta_sq
    lambda2 = math.inf if norm2_beta_sq == 0 else sigma ** 2 * p / norm2_beta_sq
    return PlugInPenalties(lambda_l=lambda_l, lambda_r=lambda_r, lambda1=lambda_l, lambda2=lambda2)


def oracle_penalties(kind: Union[str, Estimator], model: SequenceModel,
                     grid: Optional[PenaltyGrid] = None) -> PenaltyPair:
    """Risk-minimizing grid penalties; ties go to the larger penalties."""
    kind = Estimator.parse(kind)
    grid = grid or PenaltyGrid.oracle_default(model.sigma)
    candidates = grid.candidates(kind)
    risks = [risk_vector(kind, model, pair) for pair in candidates]
    best = candidates[argmin_prefer_larger(candidates, risks)]
    logger.debug(f"Oracle {kind.value} penalties ({best.lambda1}, {best.lambda2}) over {len(candidates)} candidates")
    return best


# Stein estimate and diagnostics

def sure_lava_sequence(samples: np.ndarray, penalties: PenaltyPair, sigma: float) -> float:
    """Stein unbiased estimate of the lava risk from one or more draws.

    samples is a single draw of length p or an (n, p) matrix of draws.
    """
    z = np.atleast_2d(np.asarray(samples, dtype=float))
    if z.size == 0:
        raise InvalidInputError("samples must be nonempty")
    weights = lava_weights(penalties)
    n, p = z.shape
    residual = z - np.asarray(apply_shrinkage(Estimator.LAVA, z, penalties))
    mean_residual = float(np.sum(residual ** 2)) / n
    crossings = float(np.count_nonzero(np.abs(z) > weights.w)) / n
    return (1.0 - 2.0 * weights.k) * p * sigma ** 2 + mean_residual + 2.0 * weights.k * sigma ** 2 * crossings


@dataclass(frozen=True)
class RelativeRiskBound:
    value: float
    r2_dense: float
    noise_condition: bool
    signal_condition: bool
    significance_condition: bool
    proof_condition: bool

    @property
    def applicable(self) -> bool:
        return self.noise_condition and self.signal_condition and self.significance_condition


def relative_risk_bound(beta: np.ndarray, sigma: float, p: int, s: int, M: float,
                        c: float = 0.05) -> RelativeRiskBound:
    """Upper bound on risk(lava) / (p sigma^2) with its applicability flags."""
    beta = np.asarray(beta, dtype=float)
    norm2_beta = float(beta @ beta)
    log_p = math.log(p) if p > 1 else 0.0
    root16 = p ** (1.0 / 16.0)
    r2_dense = norm2_beta / (sigma ** 2 * p + norm2_beta)
    value = (
        r2_dense
        + 3.0 * s * M ** 2 / (p * sigma ** 2)
        + 4.0 / (math.sqrt(2.0 * math.pi) * root16) * (1.0 + 7.0 * M / (sigma * root16))
    )
    bound = RelativeRiskBound(
        value=value,
        r2_dense=r2_dense,
        noise_condition=sigma * math.sqrt(log_p) > 2.0 * M + 33.0 * sigma,
        signal_condition=M ** 2 * log_p > 16.0 * sigma ** 2,
        significance_condition=math.pi * c ** 2 * log_p >= 1.0,
        proof_condition=2.0 * p / (math.pi * c ** 2) >= log_p,
    )
    if not bound.applicable:
        logger.warning(f"Relative risk bound conditions fail at p={p}; bound {value:.4g} is not applicable")
    return bound


# Monte Carlo oracle

def _mc_block(kind: Estimator, theta: np.ndarray, sigma: float, pair: PenaltyPair,
              size: int, seed: int, index: int) -> np.ndarray:
    rng = rng_stream(seed, index)
    z = theta + sigma * rng.standard_normal((size, theta.size))
    estimate = np.asarray(apply_shrinkage(kind, z, pair))
    return np.sum((estimate - theta) ** 2, axis=1)


def mc_risk(kind: Union[str, Estimator], model: SequenceModel, penalties: PenaltyLike = None,
            reps: int = 100_000, seed: int = 0, n_jobs: Optional[int] = None) -> Tuple[float, float]:
    """Monte-Carlo risk and its standard error.

    Draws are generated in fixed-size blocks, block b from stream (seed, b), so the
    result does not depend on the worker count.
    """
    if reps < 2:
        raise InvalidInputError(f"reps must be >= 2, got {reps}")
    kind = Estimator.parse(kind)
    pair = coerce_penalties(kind, penalties)
    sizes = [MC_BLOCK_SIZE] * (reps // MC_BLOCK_SIZE)
    if reps % MC_BLOCK_SIZE:
        sizes.append(reps % MC_BLOCK_SIZE)
    losses = Parallel(n_jobs=n_jobs or N_JOBS, prefer="threads")(
        delayed(_mc_block)(kind, model.theta, model.sigma, pair, size, seed, b)
        for b, size in enumerate(sizes)
    )
    losses = np.concatenate(losses)
    return float(losses.mean()), float(losses.std(ddof=1) / math.sqrt(reps))


# Risk tables

@dataclass(frozen=True)
class RiskRow:
    estimator: str
    lambda1: float
    lambda2: float
    q: float
    risk: float
    se: float = 0.0
    method: str = "analytic"

    def __post_init__(self):
        if self.method not in ("analytic", "mc"):
            raise InvalidInputError(f"unknown risk method {self.method!r}")
        if self.method == "analytic" and self.se != 0:
            raise InvalidInputError("analytic rows carry se = 0")
        if self.method == "mc" and not self.se > 0:
            raise InvalidInputError("Monte-Carlo rows carry se > 0")


@dataclass
class RiskTable:
    rows: List[RiskRow] = field(default_factory=list)

    def add(self, row: RiskRow) -> None:
        self.rows.append(row)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([row.__dict__ for row in self.rows], columns=RISK_TABLE_COLUMNS)

    def relative_to_ml(self, p: int, sigma: float) -> pd.DataFrame:
        """Risk table with an extra column risk / (p sigma^2)."""
        frame = self.to_frame()
        frame["relative_risk"] = frame["risk"] / (p * sigma ** 2)
        return frame

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.17g")
        logger.success(f"Wrote {len(self.rows)} risk rows to {path}")
