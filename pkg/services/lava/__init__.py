#!/usr/bin/env python

from .exceptions import ConvergenceError, InvalidInputError, LavaError, NumericalError
from .shrinkage import (
    Estimator,
    PenaltyPair,
    LavaWeights,
    ScalarSplit,
    apply_shrinkage,
    lava_weights,
    shrink_elastic_net,
    shrink_lava,
    shrink_post_lasso,
    shrink_post_lava,
    shrink_ridge,
    soft_threshold
)
from .grid import PenaltyGrid
from .gaussian_sequence import (
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
    sure_lava_sequence
)
from .lasso_engine import (
    DesignMatrix,
    LassoFit,
    SolverOptions,
    check_kkt,
    fit_elastic_net,
    fit_lasso,
    fit_ridge,
    normalize_design
)
from .lava_regression import (
    DeviationReport,
    LavaRegressionFit,
    RidgeProjection,
    bound_components,
    df_post_lava,
    df_sure_baseline,
    df_sure_lava,
    fit_lava_regression,
    fit_post_lava_regression,
    fit_regression,
    lava_objective,
    restricted_eigenvalue_surrogate,
    ridge_projection,
    score_quantile
)
from .tuning import (
    TuneResult,
    default_regression_grid,
    estimate_noise_variance,
    tune_cv,
    tune_oracle,
    tune_sure,
    tune_sure_sequence
)
from .sim_harness import (
    SimConfig,
    SimResult,
    gen_coefficients,
    gen_design,
    run_regression_experiment,
    run_sequence_experiment
)

__all__ = [
    "LavaError",
    "InvalidInputError",
    "ConvergenceError",
    "NumericalError",
    "Estimator",
    "PenaltyPair",
    "LavaWeights",
    "ScalarSplit",
    "apply_shrinkage",
    "lava_weights",
    "soft_threshold",
    "shrink_lava",
    "shrink_post_lava",
    "shrink_ridge",
    "shrink_elastic_net",
    "shrink_post_lasso",
    "PenaltyGrid",
    "PiecewiseLinearSpec",
    "RiskRow",
    "RiskTable",
    "SequenceModel",
    "SignalSplit",
    "piecewise_sq_expectation",
    "risk_scalar",
    "risk_scalar_via_kernel",
    "risk_vector",
    "risk_ml",
    "plug_in_penalties",
    "oracle_penalties",
    "sure_lava_sequence",
    "relative_risk_bound",
    "mc_risk",
    "DesignMatrix",
    "LassoFit",
    "SolverOptions",
    "normalize_design",
    "fit_lasso",
    "fit_elastic_net",
    "fit_ridge",
    "check_kkt",
    "RidgeProjection",
    "LavaRegressionFit",
    "DeviationReport",
    "ridge_projection",
    "fit_lava_regression",
    "fit_post_lava_regression",
    "fit_regression",
    "lava_objective",
    "df_sure_lava",
    "df_post_lava",
    "df_sure_baseline",
    "score_quantile",
    "restricted_eigenvalue_surrogate",
    "bound_components",
    "TuneResult",
    "default_regression_grid",
    "estimate_noise_variance",
    "tune_sure",
    "tune_cv",
    "tune_oracle",
    "tune_sure_sequence",
    "SimConfig",
    "SimResult",
    "gen_coefficients",
    "gen_design",
    "run_sequence_experiment",
    "run_regression_experiment"
]
