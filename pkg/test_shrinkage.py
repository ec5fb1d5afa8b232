import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from services.lava import InvalidInputError
from services.lava.shrinkage import (
    INF,
    Estimator,
    PenaltyPair,
    apply_shrinkage,
    coerce_penalties,
    lava_weights,
    shrink_elastic_net,
    shrink_lava,
    shrink_post_lasso,
    shrink_post_lava,
    shrink_ridge,
    soft_threshold,
)

values = st.floats(min_value=-50, max_value=50, allow_nan=False)
levels = st.floats(min_value=1e-3, max_value=20, allow_nan=False)


def test_soft_threshold_examples():
    assert soft_threshold(1.0, 0.25) == pytest.approx(0.75)
    assert soft_threshold(0.0, 3.0) == 0.0
    assert soft_threshold(-0.2, 0.25) == 0.0
    np.testing.assert_allclose(soft_threshold(np.array([-2.0, 0.1, 2.0]), 1.0), [-1.0, 0.0, 1.0])


def test_soft_threshold_rejects_negative_level():
    with pytest.raises(InvalidInputError):
        soft_threshold(1.0, -0.1)


def test_lava_weights_examples():
    weights = lava_weights(PenaltyPair(1.0, 1.0))
    assert (weights.k, weights.w) == pytest.approx((0.5, 1.0))
    weights = lava_weights(PenaltyPair(0.5, INF))
    assert weights.k == 1.0 and weights.w == pytest.approx(0.25)
    weights = lava_weights(PenaltyPair(INF, 2.0))
    assert weights.k == pytest.approx(2.0 / 3.0) and math.isinf(weights.w)
    weights = lava_weights(PenaltyPair(1.0, 0.0))
    assert weights.k == 0.0 and math.isinf(weights.w)


def test_penalty_pair_validation():
    with pytest.raises(InvalidInputError):
        PenaltyPair(INF, INF)
    with pytest.raises(InvalidInputError):
        PenaltyPair(-1.0, 1.0)
    with pytest.raises(InvalidInputError):
        PenaltyPair(1.0, float("nan"))
    assert PenaltyPair.lasso(2.0) == PenaltyPair(2.0, INF)
    assert PenaltyPair.ridge(3.0) == PenaltyPair(INF, 3.0)


def test_shrink_lava_examples():
    assert shrink_lava(2.0, PenaltyPair(1.0, 1.0)).total == pytest.approx(1.5)
    assert shrink_lava(0.5, PenaltyPair(1.0, 1.0)).total == pytest.approx(0.25)
    assert shrink_lava(0.0, PenaltyPair(3.0, 0.7)).total == 0.0


def test_shrink_lava_identity_at_zero_ridge_level():
    z = np.linspace(-4, 4, 17)
    np.testing.assert_array_equal(shrink_lava(z, PenaltyPair(1.0, 0.0)).total, z)


def test_post_lava_and_baseline_examples():
    pair = PenaltyPair(1.0, 1.0)
    assert shrink_post_lava(2.0, pair) == pytest.approx(2.0)
    assert shrink_post_lava(0.5, pair) == pytest.approx(0.25)
    assert shrink_post_lava(0.0, pair) == 0.0
    assert shrink_ridge(1.0, 0.0) == 1.0
    assert shrink_ridge(3.0, 1.0) == pytest.approx(1.5)
    assert shrink_ridge(-2.0, 3.0) == pytest.approx(-0.5)
    assert shrink_elastic_net(1.0, PenaltyPair(0.5, 0.0)) == pytest.approx(0.75)
    assert shrink_elastic_net(1.0, PenaltyPair(0.0, 1.0)) == pytest.approx(0.5)
    assert shrink_elastic_net(0.2, PenaltyPair(0.5, 1.0)) == 0.0
    assert shrink_post_lasso(1.0, 1.0) == 1.0
    assert shrink_post_lasso(0.4, 1.0) == 0.0
    assert shrink_post_lasso(0.0, 1.0) == 0.0


@given(values, levels, levels)
def test_lava_is_weighted_average_of_ridge_and_soft_threshold(z, l1, l2):
    pair = PenaltyPair(l1, l2)
    weights = lava_weights(pair)
    expected = (1 - weights.k) * z + weights.k * soft_threshold(z, weights.w)
    split = shrink_lava(z, pair)
    assert split.total == pytest.approx(expected, abs=1e-12)
    assert split.d1 + split.d2 == pytest.approx(split.total, abs=1e-12)


@given(values, levels, levels)
def test_lava_piecewise_identity(z, l1, l2):
    pair = PenaltyPair(l1, l2)
    weights = lava_weights(pair)
    total = shrink_lava(z, pair).total
    if abs(z) <= weights.w:
        assert total == pytest.approx(shrink_ridge(z, l2), abs=1e-12)
    else:
        assert total == pytest.approx(soft_threshold(z, l1 / 2), abs=1e-9)


@given(values, levels)
def test_lava_limits(z, level):
    assert shrink_lava(z, PenaltyPair(level, INF)).total == pytest.approx(soft_threshold(z, level / 2))
    assert shrink_lava(z, PenaltyPair(INF, level)).total == pytest.approx(shrink_ridge(z, level))


@given(values, levels, levels, st.sampled_from(list(Estimator)))
def test_every_rule_is_odd(z, l1, l2, kind):
    if kind in (Estimator.LASSO, Estimator.POST_LASSO):
        pair = PenaltyPair.lasso(l1)
    elif kind is Estimator.RIDGE:
        pair = PenaltyPair.ridge(l2)
    else:
        pair = PenaltyPair(l1, l2)
    assert apply_shrinkage(kind, -z, pair) == pytest.approx(-apply_shrinkage(kind, z, pair), abs=1e-12)


def test_lava_keeps_small_signals_elastic_net_kills_them():
    pair = PenaltyPair(1.0, 1.0)
    z = np.array([0.05, 0.2, 0.45])
    assert np.all(shrink_elastic_net(z, pair) == 0.0)
    assert np.all(shrink_lava(z, pair).total != 0.0)


def test_lava_matches_brute_force_minimization():
    # profile out the dense part: min_d k (z - d)^2 + lambda1 |d|
    rng = np.random.default_rng(11)
    grid = np.linspace(-6, 6, 1_200_001)
    for _ in range(100):
        z = rng.uniform(-4, 4)
        l1 = rng.uniform(0.05, 3)
        l2 = rng.uniform(0.05, 5)
        k = l2 / (1 + l2)
        d = grid[np.argmin(k * (z - grid) ** 2 + l1 * np.abs(grid))]
        b = (z - d) / (1 + l2)
        assert shrink_lava(z, PenaltyPair(l1, l2)).total == pytest.approx(b + d, abs=1e-4)


def test_lava_is_continuous():
    z = np.linspace(-5, 5, 200_001)
    total = shrink_lava(z, PenaltyPair(1.3, 0.4)).total
    assert np.max(np.abs(np.diff(total))) < 1e-4


def test_apply_shrinkage_vectorizes_every_kind():
    z = np.linspace(-3, 3, 13)
    for kind in Estimator:
        out = apply_shrinkage(kind, z, coerce_penalties(kind, PenaltyPair(1.0, 1.0)) if kind.takes_pair else 1.0)
        assert out.shape == z.shape
    np.testing.assert_array_equal(apply_shrinkage("ml", z), z)


def test_estimator_parse_aliases():
    assert Estimator.parse("post_lava") is Estimator.POST_LAVA
    assert Estimator.parse("enet") is Estimator.ELASTIC_NET
    assert Estimator.parse("OLS") is Estimator.ML
    with pytest.raises(InvalidInputError):
        Estimator.parse("scad")
