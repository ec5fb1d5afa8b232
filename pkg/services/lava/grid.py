#!/usr/bin/env python

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple, Union

import numpy as np

from .exceptions import InvalidInputError
from .shrinkage import INF, Estimator, PenaltyPair

# Relative tolerance under which two criterion values count as a tie
TIE_RTOL = 1e-12


def _as_levels(values: Sequence[float], name: str) -> Tuple[float, ...]:
    levels = tuple(float(v) for v in values)
    if not levels:
        raise InvalidInputError(f"{name} must be nonempty")
    for v in levels:
        if not math.isfinite(v) or v <= 0:
            raise InvalidInputError(f"{name} must hold positive finite levels, got {v}")
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise InvalidInputError(f"{name} must be strictly increasing")
    return levels


@dataclass(frozen=True)
class PenaltyGrid:
    """Candidate penalty levels.

    With include_limits the lava and post-lava candidates also cover the lasso
    column (lambda2 = inf) and the ridge row (lambda1 = inf), so a search over
    the lava grid contains every lasso and ridge candidate.
    """

    lambda1_values: Tuple[float, ...]
    lambda2_values: Tuple[float, ...]
    include_limits: bool = False

    def __post_init__(self):
        object.__setattr__(self, "lambda1_values", _as_levels(self.lambda1_values, "lambda1_values"))
        object.__setattr__(self, "lambda2_values", _as_levels(self.lambda2_values, "lambda2_values"))

    @classmethod
    def log_spaced(cls, lambda1_range: Tuple[float, float], num_lambda1: int,
                   lambda2_range: Tuple[float, float], num_lambda2: int,
                   include_limits: bool = False) -> "PenaltyGrid":
        if num_lambda1 < 1 or num_lambda2 < 1:
            raise InvalidInputError("grid sizes must be >= 1")
        l1 = np.geomspace(lambda1_range[0], lambda1_range[1], num_lambda1)
        l2 = np.geomspace(lambda2_range[0], lambda2_range[1], num_lambda2)
        return cls(tuple(l1), tuple(l2), include_limits)

    @classmethod
    def oracle_default(cls, sigma: float, num: int = 50) -> "PenaltyGrid":
        """Oracle search space: lambda1 in [1e-4, 1e4]*sigma, lambda2 in [1e-4, 1e4], limits included."""
        return cls.log_spaced((1e-4 * sigma, 1e4 * sigma), num, (1e-4, 1e4), num, include_limits=True)

    @classmethod
    def from_spec(cls, text: str) -> "PenaltyGrid":
        """Parse 'L1LO:L1HI:N1,L2LO:L2HI:N2' (log-spaced, inclusive ends)."""
        try:
            first, second = text.split(",")
            lo1, hi1, n1 = first.split(":")
            lo2, hi2, n2 = second.split(":")
            return cls.log_spaced((float(lo1), float(hi1)), int(n1), (float(lo2), float(hi2)), int(n2))
        except (ValueError, TypeError) as e:
            raise InvalidInputError(f"cannot parse grid spec {text!r}: {e}") from e

    def _levels(self, values: Tuple[float, ...]) -> List[float]:
        return list(values) + ([INF] if self.include_limits else [])

    def candidates(self, kind: Union[str, Estimator]) -> List[PenaltyPair]:
        """Candidates for one estimator kind, lambda2 outer and lambda1 inner, ascending."""
        kind = Estimator.parse(kind)
        if kind is Estimator.ML:
            return [PenaltyPair.unpenalized()]
        if kind in (Estimator.LASSO, Estimator.POST_LASSO):
            return [PenaltyPair.lasso(l1) for l1 in self.lambda1_values]
        if kind is Estimator.RIDGE:
            return [PenaltyPair.ridge(l2) for l2 in self.lambda2_values]
        if kind is Estimator.ELASTIC_NET:
            return [PenaltyPair(l1, l2) for l2 in self.lambda2_values for l1 in self.lambda1_values]
        return [
            PenaltyPair(l1, l2)
            for l2 in self._levels(self.lambda2_values)
            for l1 in self._levels(self.lambda1_values)
            if not (math.isinf(l1) and math.isinf(l2))
        ]

    @property
    def size(self) -> int:
        return len(self.lambda1_values) * len(self.lambda2_values)


def argmin_prefer_larger(candidates: Sequence[PenaltyPair], values: Sequence[float]) -> int:
    """Index of the smallest finite value; ties go to the larger (lambda1, lambda2)."""
    values = np.asarray(values, dtype=float)
    finite = np.isfinite(values)
    if not finite.any():
        raise InvalidInputError("no grid point produced a finite criterion")
    best = values[finite].min()
    slack = TIE_RTOL * max(abs(best), 1e-300)
    tied = [i for i in np.flatnonzero(finite) if values[i] <= best + slack]
    return int(max(tied, key=lambda i: (candidates[i].lambda1, candidates[i].lambda2)))
