#!/usr/bin/env python

import hashlib
import json
import math
from typing import Any, Dict, Union

import numpy as np

from .exceptions import InvalidInputError

ArrayOrFloat = Union[float, np.ndarray]


def rng_stream(seed: int, index: int) -> np.random.Generator:
    """Generate the random stream for a (seed, index) pair.

    Index -1 is reserved for the fixed design; replications and Monte-Carlo
    blocks use 0, 1, 2, ...

    Args:
        seed: Experiment seed (any non-negative 64-bit integer).
        index: Stream index, >= -1.

    Returns:
        An independent numpy Generator.
    """
    if seed < 0 or index < -1:
        raise InvalidInputError(f"invalid stream key (seed={seed}, index={index})")
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index + 1,)))


def as_output(value: np.ndarray) -> ArrayOrFloat:
    """Return a python float for 0-d results, the array otherwise."""
    value = np.asarray(value, dtype=float)
    if value.ndim == 0:
        return float(value)
    return value


def parse_penalty(text: Union[str, float, int]) -> float:
    """Parse a penalty level; 'inf' (any case) gives the +inf sentinel."""
    if isinstance(text, (int, float)):
        value = float(text)
    else:
        token = str(text).strip().lower()
        if token in ("inf", "+inf", "infinity"):
            return math.inf
        try:
            value = float(token)
        except ValueError as e:
            raise InvalidInputError(f"cannot parse penalty level {text!r}") from e
    if math.isnan(value) or value < 0:
        raise InvalidInputError(f"penalty level must be >= 0, got {text!r}")
    return value


def format_penalty(value: float) -> str:
    return "inf" if math.isinf(value) else repr(float(value))


def config_hash(values: Dict[str, Any]) -> str:
    """SHA-256 of the canonical JSON rendering of a config dictionary."""
    payload = json.dumps(values, sort_keys=True, default=str)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()
