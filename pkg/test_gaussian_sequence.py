import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, special
from scipy.stats import norm

from services.lava import InvalidInputError
from services.lava.gaussian_sequence import (
    RISK_TABLE_COLUMNS,
    PiecewiseLinearSpec,
    RiskRow,
    RiskTable,
    SequenceModel,
    SignalSplit,
    mc_risk,
    oracle_penalties,
    piecewise_sq_expectation,
    plug_in_penalties,
    relative_risk_bound,
    risk_ml,
    risk_scalar,
    risk_scalar_via_kernel,
    risk_vector,
    sure_lava_sequence,
)
from services.lava.grid import PenaltyGrid
from services.lava.shrinkage import INF, Estimator, PenaltyPair, apply_shrinkage, lava_weights

SIGMA = 0.1
P = 100


def comparison_model(q, p=P):
    return SequenceModel(SignalSplit.for_comparison(p, q).theta, SIGMA)


def plug_in_pairs(q, p=P):
    split = SignalSplit.for_comparison(p, q)
    levels = plug_in_penalties(p, SIGMA, 0.05, float(split.theta @ split.theta), split.norm2_beta_sq)
    return {kind: levels.for_kind(kind) for kind in (Estimator.LAVA, Estimator.LASSO, Estimator.RIDGE)}


def pair_for(kind, l1, l2):
    if kind in (Estimator.LASSO, Estimator.POST_LASSO):
        return PenaltyPair.lasso(l1)
    if kind is Estimator.RIDGE:
        return PenaltyPair.ridge(l2)
    if kind is Estimator.ML:
        return PenaltyPair.unpenalized()
    return PenaltyPair(l1, l2)


def breakpoints(kind, pair):
    if kind in (Estimator.LAVA, Estimator.POST_LAVA):
        return [lava_weights(pair).w]
    if kind in (Estimator.LASSO, Estimator.POST_LASSO, Estimator.ELASTIC_NET):
        return [pair.lambda1 / 2]
    return []


def quad_risk(kind, theta, sigma, pair):
    def integrand(z):
        return (apply_shrinkage(kind, z, pair) - theta) ** 2 * norm.pdf(z, theta, sigma)

    lo, hi = theta - 12 * sigma, theta + 12 * sigma
    points = sorted(x for b in breakpoints(kind, pair) if math.isfinite(b) for x in (-b, b) if lo < x < hi)
    value, _ = integrate.quad(integrand, lo, hi, points=points or None, limit=400, epsabs=1e-13, epsrel=1e-11)
    return value


# Kernel

def test_kernel_constant_function():
    spec = PiecewiseLinearSpec(h=0, d=1.7, e=0, m=1.7, f=0, g=1.7, w=0.8)
    assert piecewise_sq_expectation(spec, 0.3, 1.2) == pytest.approx(1.7 ** 2, rel=1e-12)


def test_kernel_centered_identity_gives_variance():
    theta, sigma = 0.7, 1.3
    spec = PiecewiseLinearSpec(h=1, d=-theta, e=1, m=-theta, f=1, g=-theta, w=0.4)
    assert piecewise_sq_expectation(spec, theta, sigma) == pytest.approx(sigma ** 2, rel=1e-12)


@given(
    st.floats(-3, 3), st.floats(-3, 3), st.floats(0.01, 5),
    st.floats(-5, 5), st.floats(0.1, 3),
)
def test_kernel_merged_line(slope, intercept, w, theta, sigma):
    spec = PiecewiseLinearSpec(h=slope, d=intercept, e=slope, m=intercept, f=slope, g=intercept, w=w)
    expected = (slope * theta + intercept) ** 2 + slope ** 2 * sigma ** 2
    assert piecewise_sq_expectation(spec, theta, sigma) == pytest.approx(expected, rel=1e-10, abs=1e-10)


def test_kernel_lava_residual_matches_monte_carlo():
    pair = PenaltyPair(1.0, 1.0)
    # F(z) = d_lava(z) at theta = 0 with k = 1/2, w = 1
    spec = PiecewiseLinearSpec(h=1, d=-0.5, e=0.5, m=0, f=1, g=0.5, w=1)
    z = np.random.default_rng(5).standard_normal(1_000_000)
    squares = apply_shrinkage("lava", z, pair) ** 2
    se = squares.std(ddof=1) / math.sqrt(z.size)
    assert abs(piecewise_sq_expectation(spec, 0.0, 1.0) - squares.mean()) <= 3 * se


def test_kernel_rejects_bad_inputs():
    with pytest.raises(InvalidInputError):
        PiecewiseLinearSpec(h=1, d=0, e=1, m=0, f=1, g=0, w=-1)
    with pytest.raises(InvalidInputError):
        piecewise_sq_expectation(PiecewiseLinearSpec(1, 0, 1, 0, 1, 0, 1), float("nan"), 1.0)


# Scalar risk

def test_ridge_risk_examples():
    assert risk_scalar("ridge", 0.0, 1.0, 0.0) == pytest.approx(1.0)
    assert risk_scalar("ridge", 2.0, 1.0, 1.0) == pytest.approx(1.25)


@pytest.mark.parametrize("kind", [k for k in Estimator])
def test_risk_matches_numerical_integration(kind):
    rng = np.random.default_rng(2024)
    for _ in range(20):
        theta, sigma = rng.uniform(-3, 3), rng.uniform(0.2, 2)
        pair = pair_for(kind, rng.uniform(0.1, 3), rng.uniform(0.1, 3))
        assert risk_scalar(kind, theta, sigma, pair) == pytest.approx(quad_risk(kind, theta, sigma, pair),
                                                                      rel=1e-7, abs=1e-10)


@pytest.mark.parametrize("kind", ["lava", "post-lava", "lasso", "post-lasso", "ridge", "elastic-net"])
def test_risk_matches_monte_carlo(kind):
    kind = Estimator.parse(kind)
    model = SequenceModel(np.array([0.4, -1.1, 2.5]), 0.8)
    pair = pair_for(kind, 0.9, 0.6)
    risk, se = mc_risk(kind, model, pair, reps=100_000, seed=3)
    assert abs(risk_vector(kind, model, pair) - risk) <= 3 * se


def random_tuple(index):
    rng = np.random.default_rng(500 + index)
    return rng.uniform(-3, 3), rng.uniform(0.2, 2), rng.uniform(0.05, 4), rng.uniform(0.05, 4)


@pytest.mark.parametrize("index", range(8))
@pytest.mark.parametrize("kind", ["lava", "post-lava", "lasso", "ridge", "elastic-net"])
def test_closed_form_risk_matches_simulation_on_random_tuples(kind, index):
    kind = Estimator.parse(kind)
    theta, sigma, l1, l2 = random_tuple(index)
    pair = pair_for(kind, l1, l2)
    risk, se = mc_risk(kind, SequenceModel(np.array([theta]), sigma), pair, reps=40_000, seed=100 + index)
    assert se > 0
    assert abs(risk_scalar(kind, theta, sigma, pair) - risk) <= 4 * se


@given(st.floats(-4, 4), st.floats(0.1, 2), st.floats(0.01, 4), st.floats(0.01, 4))
def test_lava_kernel_route_agrees_with_stein_route(theta, sigma, l1, l2):
    pair = PenaltyPair(l1, l2)
    assert risk_scalar_via_kernel("lava", theta, sigma, pair) == pytest.approx(
        risk_scalar("lava", theta, sigma, pair), rel=1e-8, abs=1e-12)


@given(st.floats(-4, 4), st.floats(0.1, 2), st.floats(0.01, 4))
def test_lasso_and_ridge_are_lava_limits(theta, sigma, level):
    assert risk_scalar("lasso", theta, sigma, level) == pytest.approx(
        risk_scalar("lava", theta, sigma, PenaltyPair(level, INF)), rel=1e-12)
    assert risk_scalar("ridge", theta, sigma, level) == pytest.approx(
        risk_scalar("lava", theta, sigma, PenaltyPair(INF, level)), rel=1e-10, abs=1e-14)


def test_lava_plug_in_risk_matches_monte_carlo():
    pair = plug_in_pairs(1.0)[Estimator.LAVA]
    z = 3.0 + SIGMA * np.random.default_rng(8).standard_normal(1_000_000)
    losses = (apply_shrinkage("lava", z, pair) - 3.0) ** 2
    se = losses.std(ddof=1) / math.sqrt(z.size)
    assert abs(risk_scalar("lava", 3.0, SIGMA, pair) - losses.mean()) <= 3 * se


def test_risks_are_nonnegative():
    theta = np.linspace(-3, 3, 61)
    for kind in Estimator:
        assert np.all(risk_scalar(kind, theta, 0.5, pair_for(kind, 0.7, 0.3)) >= 0)


# Vector risk

def test_risk_vector_single_coordinate_equals_scalar():
    model = SequenceModel([1.3], 0.4)
    pair = PenaltyPair(0.5, 2.0)
    assert risk_vector("lava", model, pair) == pytest.approx(risk_scalar("lava", 1.3, 0.4, pair))


def test_lasso_risk_vanishes_at_zero_signal_with_large_penalty():
    model = SequenceModel(np.zeros(50), 1.0)
    risks = [risk_vector("lasso", model, level) for level in (2.0, 10.0, 40.0)]
    assert risks[0] > risks[1] > risks[2]
    assert risks[2] < 1e-12


def test_risk_ml_is_p_sigma_squared():
    assert risk_ml(comparison_model(1.0)) == pytest.approx(P * SIGMA ** 2)


@pytest.mark.parametrize("q", np.arange(0, 2.01, 0.25))
def test_oracle_lava_dominates_lasso_and_ridge(q):
    model = comparison_model(q)
    grid = PenaltyGrid.oracle_default(SIGMA, num=25)
    best = {kind: risk_vector(kind, model, oracle_penalties(kind, model, grid))
            for kind in (Estimator.LAVA, Estimator.LASSO, Estimator.RIDGE)}
    assert best[Estimator.LAVA] <= min(best[Estimator.LASSO], best[Estimator.RIDGE]) * (1 + 1e-12)


@pytest.mark.parametrize("q", np.arange(0, 2.01, 0.25))
def test_plug_in_lava_dominates_lasso_and_ridge(q):
    model = comparison_model(q)
    risks = {kind: risk_vector(kind, model, pair) for kind, pair in plug_in_pairs(q).items()}
    assert risks[Estimator.LAVA] <= risks[Estimator.LASSO] * (1 + 1e-9)
    assert risks[Estimator.LAVA] <= risks[Estimator.RIDGE] * (1 + 1e-9)


# Penalty choice

def test_plug_in_levels():
    levels = plug_in_penalties(P, SIGMA, 0.05, 9.0, 0.01 * 99)
    assert levels.lambda1 == pytest.approx(0.2 * special.ndtri(1 - 0.00025))
    assert levels.lambda_l == levels.lambda1
    assert levels.lambda2 == pytest.approx(0.01 * 100 / (0.01 * 99))
    assert math.isinf(plug_in_penalties(P, SIGMA, 0.05, 9.0, 0.0).lambda2)
    with pytest.raises(InvalidInputError):
        levels.for_kind("elastic-net")


def test_oracle_at_zero_signal_picks_largest_levels():
    model = SequenceModel(np.zeros(10), 1.0)
    grid = PenaltyGrid.oracle_default(1.0, num=20)
    assert oracle_penalties("ridge", model, grid).lambda2 == max(grid.lambda2_values)
    assert oracle_penalties("lasso", model, grid).lambda1 == max(grid.lambda1_values)


def test_oracle_beats_every_grid_point():
    model = comparison_model(0.0)
    grid = PenaltyGrid.oracle_default(SIGMA, num=15)
    best = risk_vector("lava", model, oracle_penalties("lava", model, grid))
    for pair in grid.candidates("lava")[::7]:
        assert best <= risk_vector("lava", model, pair) + 1e-15


# SURE

def test_sure_is_unbiased():
    theta = np.zeros(20)
    theta[0] = 3.0
    model = SequenceModel(theta, SIGMA)
    pair = PenaltyPair(0.3, 1.0)
    rng = np.random.default_rng(17)
    draws = theta + SIGMA * rng.standard_normal((2000, 20))
    estimates = np.array([sure_lava_sequence(z, pair, SIGMA) for z in draws])
    se = estimates.std(ddof=1) / math.sqrt(estimates.size)
    assert abs(estimates.mean() - risk_vector("lava", model, pair)) <= 3 * se


def test_sure_ridge_limit_drops_indicator_term():
    z = np.array([0.3, -2.0, 5.0])
    pair = PenaltyPair(INF, 1.5)
    k = 1.5 / 2.5
    expected = (1 - 2 * k) * 3 * 0.25 + float(np.sum((z - (1 - k) * z) ** 2))
    assert sure_lava_sequence(z, pair, 0.5) == pytest.approx(expected)


def test_sure_averages_over_rows():
    rng = np.random.default_rng(1)
    draws = rng.standard_normal((4, 6))
    pair = PenaltyPair(0.8, 0.5)
    each = [sure_lava_sequence(z, pair, 1.0) for z in draws]
    assert sure_lava_sequence(draws, pair, 1.0) == pytest.approx(np.mean(each))


# Relative risk bound

def test_relative_risk_bound_without_dense_part():
    p, M = 10_000, 0.5
    bound = relative_risk_bound(np.zeros(p), 1.0, p, 0, M)
    root16 = p ** (1 / 16)
    assert bound.value == pytest.approx(4 / (math.sqrt(2 * math.pi) * root16) * (1 + 7 * M / root16))
    assert bound.r2_dense == 0.0


def test_relative_risk_bound_flags_small_dimension():
    beta = np.full(50, 0.1)
    bound = relative_risk_bound(beta, 1.0, 50, 1, 3.0)
    assert bound.value >= bound.r2_dense
    assert not bound.noise_condition
    assert not bound.applicable
    assert bound.proof_condition


# Monte Carlo oracle

def test_mc_identity_risk():
    model = comparison_model(1.0)
    risk, se = mc_risk("ml", model, reps=20_000, seed=4)
    assert abs(risk - P * SIGMA ** 2) <= 3 * se


def test_mc_is_deterministic_and_worker_independent():
    model = comparison_model(1.0)
    pair = PenaltyPair(0.5, 1.0)
    first = mc_risk("lava", model, pair, reps=25_000, seed=9, n_jobs=1)
    assert mc_risk("lava", model, pair, reps=25_000, seed=9, n_jobs=1) == first
    assert mc_risk("lava", model, pair, reps=25_000, seed=9, n_jobs=3) == first


def test_mc_lava_matches_closed_form():
    model = comparison_model(1.0)
    pair = plug_in_pairs(1.0)[Estimator.LAVA]
    risk, se = mc_risk("lava", model, pair, reps=100_000, seed=21)
    assert abs(risk - risk_vector("lava", model, pair)) <= 3 * se


def test_mc_needs_two_reps():
    with pytest.raises(InvalidInputError):
        mc_risk("ml", comparison_model(0.0), reps=1)


# Models and tables

def test_signal_split_for_comparison():
    split = SignalSplit.for_comparison(4, 1.0)
    np.testing.assert_allclose(split.theta, [3.0, 0.1, 0.1, 0.1])
    assert split.s == 1
    np.testing.assert_allclose(SignalSplit.for_comparison(1, 2.0).theta, [3.0])


def test_sequence_model_validation():
    with pytest.raises(InvalidInputError):
        SequenceModel([1.0], 0.0)
    with pytest.raises(InvalidInputError):
        SequenceModel([], 1.0)
    model = SequenceModel([1.0, 2.0], 1.0)
    with pytest.raises(ValueError):
        model.theta[0] = 5.0


def test_risk_rows_carry_provenance():
    with pytest.raises(InvalidInputError):
        RiskRow("lava", 1.0, 1.0, 0.0, 0.5, se=0.1, method="analytic")
    with pytest.raises(InvalidInputError):
        RiskRow("lava", 1.0, 1.0, 0.0, 0.5, se=0.0, method="mc")


def test_risk_table_csv(tmp_path):
    table = RiskTable()
    table.add(RiskRow("lava", 0.7, INF, 0.0, 0.31))
    table.add(RiskRow("ridge", INF, 0.2, 0.0, 0.95, se=0.01, method="mc"))
    path = tmp_path / "risk.csv"
    table.to_csv(path)
    frame = pd.read_csv(path)
    assert list(frame.columns) == RISK_TABLE_COLUMNS
    assert math.isinf(frame["lambda2"][0])
    relative = table.relative_to_ml(10, 1.0)
    assert relative["relative_risk"].tolist() == pytest.approx([0.031, 0.095])
