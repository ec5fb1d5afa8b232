#!/usr/bin/env python

"""Scalar shrinkage rules for the sparse+dense estimators.

Every rule works elementwise on numpy arrays and returns a python float for
scalar input. Penalty limits are encoded with math.inf: lambda2 = inf is the
lasso limit and lambda1 = inf the ridge limit.
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

import numpy as np

from .exceptions import InvalidInputError
from .utils import ArrayOrFloat, as_output

INF = math.inf


class Estimator(str, Enum):
    LAVA = "lava"
    POST_LAVA = "post-lava"
    LASSO = "lasso"
    POST_LASSO = "post-lasso"
    RIDGE = "ridge"
    ELASTIC_NET = "elastic-net"
    ML = "ml"

    @classmethod
    def parse(cls, value: Union[str, "Estimator"]) -> "Estimator":
        """Accept enum members and loose spellings such as 'post_lava' or 'enet'."""
        if isinstance(value, cls):
            return value
        token = str(value).strip().lower().replace("_", "-").replace(" ", "-")
        aliases = {"enet": "elastic-net", "elasticnet": "elastic-net", "ols": "ml"}
        token = aliases.get(token, token)
        try:
            return cls(token)
        except ValueError as e:
            raise InvalidInputError(f"unknown estimator kind {value!r}") from e

    @property
    def takes_pair(self) -> bool:
        return self in (Estimator.LAVA, Estimator.POST_LAVA, Estimator.ELASTIC_NET)


@dataclass(frozen=True)
class PenaltyPair:
    """The (lambda1, lambda2) tuning pair; at most one level may be infinite."""

    lambda1: float
    lambda2: float

    def __post_init__(self):
        for name in ("lambda1", "lambda2"):
            value = float(getattr(self, name))
            if math.isnan(value) or value < 0:
                raise InvalidInputError(f"{name} must be >= 0, got {value}")
            object.__setattr__(self, name, value)
        if math.isinf(self.lambda1) and math.isinf(self.lambda2):
            raise InvalidInputError("lambda1 and lambda2 cannot both be infinite")

    @classmethod
    def lasso(cls, lambda_l: float) -> "PenaltyPair":
        return cls(lambda_l, INF)

    @classmethod
    def ridge(cls, lambda_r: float) -> "PenaltyPair":
        return cls(INF, lambda_r)

    @classmethod
    def unpenalized(cls) -> "PenaltyPair":
        return cls(0.0, 0.0)

    @property
    def is_finite(self) -> bool:
        return math.isfinite(self.lambda1) and math.isfinite(self.lambda2)


@dataclass(frozen=True)
class LavaWeights:
    k: float
    w: float


@dataclass(frozen=True)
class ScalarSplit:
    """Dense part d2 and sparse part d1 of the lava rule."""

    d2: ArrayOrFloat
    d1: ArrayOrFloat

    @property
    def total(self) -> ArrayOrFloat:
        return as_output(np.asarray(self.d2) + np.asarray(self.d1))


PenaltyLike = Union[PenaltyPair, float, int, None]


def coerce_penalties(kind: Union[str, Estimator], penalties: PenaltyLike) -> PenaltyPair:
    """Express the penalties of any estimator kind as a PenaltyPair.

    Lasso-type kinds accept a scalar lambda_l (mapped to (lambda_l, inf)), ridge a
    scalar lambda_r (mapped to (inf, lambda_r)), and ml takes no penalty.
    """
    kind = Estimator.parse(kind)
    if kind is Estimator.ML:
        return PenaltyPair.unpenalized()
    if isinstance(penalties, PenaltyPair):
        return penalties
    if penalties is None:
        raise InvalidInputError(f"{kind.value} requires penalties")
    if kind in (Estimator.LASSO, Estimator.POST_LASSO):
        return PenaltyPair.lasso(float(penalties))
    if kind is Estimator.RIDGE:
        return PenaltyPair.ridge(float(penalties))
    raise InvalidInputError(f"{kind.value} takes a (lambda1, lambda2) pair, got {penalties!r}")


def soft_threshold(z: ArrayOrFloat, t: float) -> ArrayOrFloat:
    """(|z| - t)_+ * sign(z), with sign(0) = 0."""
    if t < 0 or math.isnan(t):
        raise InvalidInputError(f"threshold must be >= 0, got {t}")
    z = np.asarray(z, dtype=float)
    return as_output(np.sign(z) * np.maximum(np.abs(z) - t, 0.0))


def lava_weights(p: PenaltyPair) -> LavaWeights:
    """Ridge weight k = lambda2/(1+lambda2) and threshold w = lambda1/(2k)."""
    if math.isinf(p.lambda2):
        k = 1.0
    else:
        k = p.lambda2 / (1.0 + p.lambda2)
    if k == 0.0 or math.isinf(p.lambda1):
        w = INF
    else:
        w = p.lambda1 / (2.0 * k)
    return LavaWeights(k=k, w=w)


def shrink_lava(z: ArrayOrFloat, p: PenaltyPair) -> ScalarSplit:
    # d1 = argmin_delta k(z - delta)^2 + lambda1|delta|, d2 = (1-k)(z - d1)
    weights = lava_weights(p)
    z = np.asarray(z, dtype=float)
    d1 = np.asarray(soft_threshold(z, weights.w))
    d2 = (1.0 - weights.k) * (z - d1)
    return ScalarSplit(d2=as_output(d2), d1=as_output(d1))


def shrink_post_lava(z: ArrayOrFloat, p: PenaltyPair) -> ArrayOrFloat:
    weights = lava_weights(p)
    z = np.asarray(z, dtype=float)
    return as_output(np.where(np.abs(z) > weights.w, z, (1.0 - weights.k) * z))


def shrink_ridge(z: ArrayOrFloat, lambda_r: float) -> ArrayOrFloat:
    if lambda_r < 0 or math.isnan(lambda_r):
        raise InvalidInputError(f"lambda_r must be >= 0, got {lambda_r}")
    z = np.asarray(z, dtype=float)
    if math.isinf(lambda_r):
        return as_output(np.zeros_like(z))
    return as_output(z / (1.0 + lambda_r))


def shrink_elastic_net(z: ArrayOrFloat, p: PenaltyPair) -> ArrayOrFloat:
    """Soft-threshold at lambda1/2, then scale by 1/(1 + lambda2)."""
    if not p.is_finite:
        raise InvalidInputError("elastic net needs finite penalties")
    return as_output(np.asarray(soft_threshold(z, p.lambda1 / 2.0)) / (1.0 + p.lambda2))


def shrink_post_lasso(z: ArrayOrFloat, lambda_l: float) -> ArrayOrFloat:
    if lambda_l < 0 or math.isnan(lambda_l):
        raise InvalidInputError(f"lambda_l must be >= 0, got {lambda_l}")
    z = np.asarray(z, dtype=float)
    return as_output(np.where(np.abs(z) > lambda_l / 2.0, z, 0.0))


def apply_shrinkage(kind: Union[str, Estimator], z: ArrayOrFloat,
                    penalties: Optional[PenaltyLike] = None) -> ArrayOrFloat:
    """Apply the shrinkage rule of an estimator kind elementwise.

    Args:
        kind: Estimator kind (or its name).
        z: Observation(s).
        penalties: PenaltyPair, or a scalar level for lasso/post-lasso/ridge.

    Returns:
        The estimate with the shape of z.
    """
    kind = Estimator.parse(kind)
    pair = coerce_penalties(kind, penalties)
    if kind is Estimator.LAVA:
        return shrink_lava(z, pair).total
    if kind is Estimator.POST_LAVA:
        return shrink_post_lava(z, pair)
    if kind is Estimator.LASSO:
        return soft_threshold(z, pair.lambda1 / 2.0)
    if kind is Estimator.POST_LASSO:
        return shrink_post_lasso(z, pair.lambda1)
    if kind is Estimator.RIDGE:
        return shrink_ridge(z, pair.lambda2)
    if kind is Estimator.ELASTIC_NET:
        return shrink_elastic_net(z, pair)
    return as_output(np.asarray(z, dtype=float).copy())
