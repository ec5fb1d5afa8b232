#!/usr/bin/env python

"""Seeded Monte-Carlo experiments comparing the estimators.

The sequence scenario evaluates exact risks (or Monte-Carlo risks) in the Gaussian
sequence model; the regression scenario holds one design fixed, redraws the noise B
times and reports the mean prediction risk (1/n)|X theta_hat - X theta|^2.
"""

import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import scipy
from joblib import Parallel, delayed
from loguru import logger

from .exceptions import ConvergenceError, InvalidInputError, LavaError
from .gaussian_sequence import (
    RiskRow,
    RiskTable,
    SequenceModel,
    SignalSplit,
    mc_risk,
    oracle_penalties,
    plug_in_penalties,
    risk_ml,
    risk_vector,
)
from .grid import PenaltyGrid
from .lasso_engine import normalize_design
from .lava_regression import LavaRegressionFit, fit_post_lava_regression, fit_regression
from .settings import N_JOBS
from .shrinkage import Estimator, PenaltyPair
from .tuning import default_regression_grid, estimate_noise_variance, tune_cv, tune_oracle, tune_sure
from .utils import config_hash, rng_stream

RESULT_COLUMNS = ["scenario", "estimator", "q", "risk", "se", "reps", "failures", "lambda1_mean", "lambda2_mean"]

SCENARIOS = ("sequence", "regression")
DESIGNS = ("independent", "factor")
TUNINGS = {"sequence": ("oracle", "plugin"), "regression": ("oracle", "sure", "cv")}
DEFAULT_TUNING = {"sequence": "plugin", "regression": "sure"}


def _split_list(value: Union[str, Sequence]) -> List[str]:
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return [str(item) for item in value]


@dataclass(frozen=True)
class SimConfig:
    scenario: str = "regression"
    n: int = 100
    p: int = 200
    q_grid: Tuple[float, ...] = (0.0, 0.5, 1.0, 1.5, 2.0)
    design: str = "independent"
    k_factors: int = 3
    B: int = 100
    seed: int = 0
    tuning: Optional[str] = None
    folds: int = 5
    estimators: Tuple[str, ...] = ("lava", "post-lava", "lasso", "post-lasso", "ridge", "elastic-net")
    sigma: float = 0.1
    sigma_u: float = 1.0
    c: float = 0.05
    num_lambda1: int = 30
    num_lambda2: int = 30
    noise: str = "known"
    sequence_method: str = "analytic"
    grid_num: int = 50

    def __post_init__(self):
        try:
            q_grid = tuple(float(q) for q in _split_list(self.q_grid))
            estimators = tuple(Estimator.parse(e).value for e in _split_list(self.estimators))
            for name in ("n", "p", "k_factors", "B", "seed", "folds", "num_lambda1", "num_lambda2", "grid_num"):
                object.__setattr__(self, name, int(getattr(self, name)))
            for name in ("sigma", "sigma_u", "c"):
                object.__setattr__(self, name, float(getattr(self, name)))
        except (TypeError, ValueError) as e:
            raise InvalidInputError(f"invalid simulation config: {e}") from e
        object.__setattr__(self, "q_grid", q_grid)
        object.__setattr__(self, "estimators", estimators)
        if self.scenario not in SCENARIOS:
            raise InvalidInputError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if self.tuning is None:
            object.__setattr__(self, "tuning", DEFAULT_TUNING[self.scenario])
        if self.design not in DESIGNS:
            raise InvalidInputError(f"design must be one of {DESIGNS}, got {self.design!r}")
        if self.tuning not in TUNINGS[self.scenario]:
            raise InvalidInputError(f"tuning {self.tuning!r} is not available for the {self.scenario} scenario")
        if self.noise not in ("known", "estimated"):
            raise InvalidInputError(f"noise must be known or estimated, got {self.noise!r}")
        if self.sequence_method not in ("analytic", "mc"):
            raise InvalidInputError(f"sequence_method must be analytic or mc, got {self.sequence_method!r}")
        if self.B < 1 or self.p < 1 or self.n < 1:
            raise InvalidInputError("B, n and p must be >= 1")
        if not q_grid or min(q_grid) < 0:
            raise InvalidInputError("q_grid must be nonempty and nonnegative")
        if not estimators:
            raise InvalidInputError("at least one estimator is required")
        if self.sigma <= 0 or self.sigma_u < 0:
            raise InvalidInputError("sigma must be positive and sigma_u nonnegative")

    @classmethod
    def _parse_pairs(cls, pairs: Sequence[str], source: str = "line") -> Dict[str, str]:
        known = {f.name for f in fields(cls)}
        values: Dict[str, str] = {}
        for number, line in enumerate(pairs, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidInputError(f"{source} {number}: expected key=value, got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in known:
                raise InvalidInputError(f"{source} {number}: unknown config key {key!r}")
            values[key] = value
        return values

    @classmethod
    def from_pairs(cls, pairs: Sequence[str], base: Optional["SimConfig"] = None) -> "SimConfig":
        """Apply key=value strings on top of base (or the defaults); unknown keys are rejected."""
        values: Dict[str, Any] = asdict(base) if base is not None else {}
        values.update(cls._parse_pairs(pairs))
        return cls(**values)

    @classmethod
    def from_file(cls, path: Union[str, Path], overrides: Sequence[str] = ()) -> "SimConfig":
        """Load a key=value file; overrides win and validation runs once on the merged values."""
        text = Path(path).read_text(encoding="utf-8")
        values = cls._parse_pairs(text.splitlines())
        values.update(cls._parse_pairs(overrides, source="override"))
        return cls(**values)

    def to_dict(self) -> Dict[str, Any]:
        values = asdict(self)
        values["q_grid"] = list(self.q_grid)
        values["estimators"] = list(self.estimators)
        return values

    @property
    def config_hash(self) -> str:
        return config_hash(self.to_dict())


@dataclass(frozen=True)
class SimRow:
    scenario: str
    estimator: str
    q: float
    risk: float
    se: float
    reps: int
    failures: int
    lambda1_mean: float
    lambda2_mean: float


@dataclass
class SimResult:
    config: SimConfig
    rows: List[SimRow] = field(default_factory=list)
    risk_table: Optional[RiskTable] = None

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([row.__dict__ for row in self.rows], columns=RESULT_COLUMNS)

    def risk(self, estimator: str, q: float) -> float:
        frame = self.to_frame()
        rows = frame[(frame["estimator"] == Estimator.parse(estimator).value) & (frame["q"] == q)]
        return float(rows["risk"].iloc[0])

    def to_csv(self, path: Union[str, Path]) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.17g")
        logger.success(f"Wrote {len(self.rows)} result rows to {path}")

    def write_metadata(self, path: Union[str, Path]) -> None:
        lines = [f"{key}={','.join(map(str, value)) if isinstance(value, list) else value}"
                 for key, value in self.config.to_dict().items()]
        lines += [
            f"config_hash={self.config.config_hash}",
            f"numpy_version={np.__version__}",
            f"scipy_version={scipy.__version__}",
        ]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    def write(self, out_dir: Union[str, Path]) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        self.to_csv(out_dir / "results.csv")
        self.write_metadata(out_dir / "metadata.txt")
        if self.risk_table is not None:
            self.risk_table.to_csv(out_dir / "risk_table.csv")
        return out_dir


# Data generation

def gen_coefficients(p: int, q: float) -> np.ndarray:
    """theta = (3, 0, ..., 0) + q (0, 0.1, ..., 0.1)."""
    if p < 1 or q < 0:
        raise InvalidInputError(f"need p >= 1 and q >= 0, got p={p}, q={q}")
    return SignalSplit.for_comparison(p, q).theta


def factor_loadings(p: int, seed: int, k_factors: int = 3) -> np.ndarray:
    """Loadings L of the factor design; Sigma = L L' + I."""
    return rng_stream(seed, -1).standard_normal((p, k_factors))


def gen_design(kind: str, n: int, p: int, seed: int, k_factors: int = 3) -> np.ndarray:
    """Design with i.i.d. N(0, Sigma) rows drawn from the design stream (seed, -1).

    The factor design draws the loadings first, so factor_loadings(p, seed) returns
    the L behind Sigma = L L' + I.
    """
    if n < 1 or p < 1:
        raise InvalidInputError(f"need n, p >= 1, got n={n}, p={p}")
    rng = rng_stream(seed, -1)
    if kind == "independent":
        return rng.standard_normal((n, p))
    if kind == "factor":
        L = rng.standard_normal((p, k_factors))
        factors = rng.standard_normal((n, k_factors))
        return factors @ L.T + rng.standard_normal((n, p))
    raise InvalidInputError(f"design must be one of {DESIGNS}, got {kind!r}")


# Sequence scenario

def _sequence_penalties(cfg: SimConfig, kind: Estimator, split: SignalSplit,
                        model: SequenceModel, grid: PenaltyGrid) -> Optional[PenaltyPair]:
    if kind is Estimator.ML:
        return PenaltyPair.unpenalized()
    if cfg.tuning == "oracle":
        return oracle_penalties(kind, model, grid)
    if kind is Estimator.ELASTIC_NET:
        return None
    plug_in = plug_in_penalties(cfg.p, cfg.sigma, cfg.c, model.norm2_theta_sq, split.norm2_beta_sq)
    return plug_in.for_kind(kind)


def run_sequence_experiment(cfg: SimConfig, n_jobs: Optional[int] = None) -> SimResult:
    """Risk of every estimator per q under oracle or plug-in penalties."""
    if cfg.scenario != "sequence":
        raise InvalidInputError("run_sequence_experiment needs scenario=sequence")
    logger.info(f"Sequence experiment p={cfg.p} sigma={cfg.sigma} tuning={cfg.tuning} "
                f"method={cfg.sequence_method} over q={list(cfg.q_grid)}")
    grid = PenaltyGrid.oracle_default(cfg.sigma, cfg.grid_num)
    result = SimResult(config=cfg, risk_table=RiskTable())
    for q in cfg.q_grid:
        split = SignalSplit.for_comparison(cfg.p, q)
        model = SequenceModel(split.theta, cfg.sigma)
        for name in cfg.estimators:
            kind = Estimator.parse(name)
            pair = _sequence_penalties(cfg, kind, split, model, grid)
            if pair is None:
                logger.warning(f"No plug-in penalty for {kind.value}; skipped")
                continue
            if cfg.sequence_method == "mc":
                risk, se = mc_risk(kind, model, pair, reps=max(cfg.B, 2), seed=cfg.seed, n_jobs=n_jobs)
                reps, method = max(cfg.B, 2), "mc"
            else:
                risk = risk_ml(model) if kind is Estimator.ML else risk_vector(kind, model, pair)
                se, reps, method = 0.0, 0, "analytic"
            result.rows.append(SimRow("sequence", kind.value, q, risk, se, reps, 0, pair.lambda1, pair.lambda2))
            result.risk_table.add(RiskRow(kind.value, pair.lambda1, pair.lambda2, q, risk, se, method))
            logger.debug(f"q={q} {kind.value}: risk {risk:.6g}")
    logger.success(f"Sequence experiment produced {len(result.rows)} rows")
    return result


# Regression scenario

def _replication(cfg: SimConfig, D, mean: np.ndarray, r: int) -> Dict[str, Optional[Tuple[float, PenaltyPair]]]:
    """Risk and chosen penalties of every estimator on replication r (None on failure)."""
    rng = rng_stream(cfg.seed, r)
    Y = mean + cfg.sigma_u * rng.standard_normal(cfg.n)
    fold_seed = int(rng.integers(0, 2 ** 32))
    out: Dict[str, Optional[Tuple[float, PenaltyPair]]] = {}
    try:
        sigma_u2 = cfg.sigma_u ** 2 if cfg.noise == "known" else estimate_noise_variance(D, Y).sigma2
    except LavaError as e:
        logger.warning(f"Replication {r}: noise estimate failed ({e})")
        return {name: None for name in cfg.estimators}
    grid = default_regression_grid(cfg.n, cfg.p, math.sqrt(sigma_u2), cfg.num_lambda1, cfg.num_lambda2)
    sure_fits: Dict[Estimator, LavaRegressionFit] = {}
    for name in cfg.estimators:
        kind = Estimator.parse(name)
        try:
            if kind is Estimator.ML:
                fit = fit_regression(kind, D, Y)
            elif cfg.tuning == "sure" and kind in (Estimator.POST_LAVA, Estimator.POST_LASSO):
                source = Estimator.LAVA if kind is Estimator.POST_LAVA else Estimator.LASSO
                if source not in sure_fits:
                    sure_fits[source] = tune_sure(source, D, Y, grid, sigma_u2, n_jobs=1).fit
                fit = fit_post_lava_regression(sure_fits[source], D, Y)
            elif cfg.tuning == "sure":
                fit = tune_sure(kind, D, Y, grid, sigma_u2, n_jobs=1).fit
                sure_fits[kind] = fit
            elif cfg.tuning == "cv":
                fit = tune_cv(kind, D, Y, grid, folds=cfg.folds, seed=fold_seed, n_jobs=1).fit
            else:
                fit = tune_oracle(kind, D, Y, grid, mean, n_jobs=1).fit
            if not fit.converged:
                raise ConvergenceError(f"{kind.value} fit did not converge", fit.kkt_residual, fit.iterations)
            out[kind.value] = (float(np.mean((fit.fitted - mean) ** 2)), fit.penalties)
        except LavaError as e:
            logger.warning(f"Replication {r}: {kind.value} failed ({e})")
            out[kind.value] = None
    logger.debug(f"Replication {r} done")
    return out


def _aggregate(q: float, name: str, outcomes: List[Optional[Tuple[float, PenaltyPair]]]) -> SimRow:
    done = [o for o in outcomes if o is not None]
    failures = len(outcomes) - len(done)
    if not done:
        return SimRow("regression", name, q, math.nan, math.nan, 0, failures, math.nan, math.nan)
    risks = np.array([risk for risk, _ in done])
    se = float(risks.std(ddof=1) / math.sqrt(risks.size)) if risks.size > 1 else 0.0
    return SimRow(
        scenario="regression", estimator=name, q=q, risk=float(risks.mean()), se=se,
        reps=len(done), failures=failures,
        lambda1_mean=float(np.mean([pair.lambda1 for _, pair in done])),
        lambda2_mean=float(np.mean([pair.lambda2 for _, pair in done])),
    )


def run_regression_experiment(cfg: SimConfig, n_jobs: Optional[int] = None) -> SimResult:
    """Fixed-design regression comparison; replication r draws its noise from stream (seed, r)."""
    if cfg.scenario != "regression":
        raise InvalidInputError("run_regression_experiment needs scenario=regression")
    logger.info(f"Regression experiment n={cfg.n} p={cfg.p} design={cfg.design} B={cfg.B} "
                f"tuning={cfg.tuning} noise={cfg.noise}")
    X = gen_design(cfg.design, cfg.n, cfg.p, cfg.seed, cfg.k_factors)
    D = normalize_design(X)
    result = SimResult(config=cfg)
    for q in cfg.q_grid:
        mean = X @ gen_coefficients(cfg.p, q)
        outcomes = Parallel(n_jobs=n_jobs or N_JOBS, prefer="threads")(
            delayed(_replication)(cfg, D, mean, r) for r in range(cfg.B)
        )
        for name in cfg.estimators:
            row = _aggregate(q, name, [outcome[name] for outcome in outcomes])
            result.rows.append(row)
            logger.info(f"q={q} {name}: risk {row.risk:.4g} (se {row.se:.2g}, failures {row.failures})")
    logger.success(f"Regression experiment finished with {len(result.rows)} rows")
    return result


def run_experiment(cfg: SimConfig, n_jobs: Optional[int] = None) -> SimResult:
    if cfg.scenario == "sequence":
        return run_sequence_experiment(cfg, n_jobs)
    return run_regression_experiment(cfg, n_jobs)
