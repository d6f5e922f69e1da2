"""Sequential model-based search: GP surrogate with expected improvement."""
import logging
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import norm
from sklearn.exceptions import ConvergenceWarning
from sklearn.gaussian_process import GaussianProcessRegressor
from sklearn.gaussian_process.kernels import ConstantKernel, Matern, WhiteKernel

from .core import Seed, derive_seed, make_rng
from .errors import InputError

logger = logging.getLogger(__name__)


class ParamKind(str, Enum):
    REAL = "real"
    LOG_REAL = "log"
    INTEGER = "int"
    CATEGORICAL = "categorical"


@dataclass(frozen=True)
class ParamSpec:
    """One searchable parameter, mapped onto [0, 1]."""

    name: str
    kind: ParamKind
    low: Optional[float] = None
    high: Optional[float] = None
    choices: Tuple[Any, ...] = ()

    def __post_init__(self):
        if self.kind == ParamKind.CATEGORICAL:
            if not self.choices:
                raise InputError(f"Parameter '{self.name}' has no choices")
            return
        if self.low is None or self.high is None or not self.low <= self.high:
            raise InputError(f"Parameter '{self.name}' needs low <= high, got ({self.low}, {self.high})")
        if self.kind == ParamKind.LOG_REAL and self.low <= 0:
            raise InputError(f"Log-scaled parameter '{self.name}' needs a positive lower bound")

    def from_unit(self, u: float) -> Any:
        u = float(np.clip(u, 0.0, 1.0))
        if self.kind == ParamKind.CATEGORICAL:
            return self.choices[min(int(u * len(self.choices)), len(self.choices) - 1)]
        if self.kind == ParamKind.INTEGER:
            span = int(self.high) - int(self.low) + 1
            return int(self.low) + min(int(u * span), span - 1)
        if self.kind == ParamKind.LOG_REAL:
            return float(math.exp(math.log(self.low) + u * (math.log(self.high) - math.log(self.low))))
        return float(self.low + u * (self.high - self.low))

    def to_unit(self, value: Any) -> float:
        if self.kind == ParamKind.CATEGORICAL:
            return (self.choices.index(value) + 0.5) / len(self.choices)
        if self.high == self.low:
            return 0.5
        if self.kind == ParamKind.INTEGER:
            span = int(self.high) - int(self.low) + 1
            return (int(value) - int(self.low) + 0.5) / span
        if self.kind == ParamKind.LOG_REAL:
            return (math.log(value) - math.log(self.low)) / (math.log(self.high) - math.log(self.low))
        return (float(value) - self.low) / (self.high - self.low)


@dataclass(frozen=True)
class SearchSpace:
    params: Tuple[ParamSpec, ...]

    def __post_init__(self):
        if not self.params:
            raise InputError("Search space is empty")
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise InputError(f"Duplicate parameter names: {names}")

    @property
    def dim(self) -> int:
        return len(self.params)

    def decode(self, u: Sequence[float]) -> Dict[str, Any]:
        return {p.name: p.from_unit(v) for p, v in zip(self.params, u)}

    def encode(self, values: Dict[str, Any]) -> np.ndarray:
        return np.asarray([p.to_unit(values[p.name]) for p in self.params], dtype=float)


@dataclass
class OptimizationResult:
    best_params: Dict[str, Any]
    best_score: float
    history: List[Tuple[Dict[str, Any], float]] = field(default_factory=list)

    @property
    def n_evaluations(self) -> int:
        return len(self.history)


def expected_improvement(mu: np.ndarray, sigma: np.ndarray, best: float, xi: float = 0.01) -> np.ndarray:
    """EI for maximization; zero where the surrogate is certain."""
    improvement = mu - best - xi
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sigma > 0, improvement / sigma, 0.0)
    ei = improvement * norm.cdf(z) + sigma * norm.pdf(z)
    return np.where(sigma > 0, np.maximum(ei, 0.0), 0.0)


def _surrogate(dim: int, seed: int) -> GaussianProcessRegressor:
    kernel = ConstantKernel(1.0, (1e-3, 1e3)) * Matern(
        length_scale=np.full(dim, 0.5), length_scale_bounds=(1e-2, 1e2), nu=2.5
    ) + WhiteKernel(1e-3, (1e-8, 1e-1))
    return GaussianProcessRegressor(kernel=kernel, normalize_y=True, n_restarts_optimizer=2, random_state=seed)


def _key(params: Dict[str, Any]) -> Tuple:
    return tuple(sorted((k, round(v, 12) if isinstance(v, float) else v) for k, v in params.items()))


def bayes_maximize(
    objective: Callable[[Dict[str, Any]], float],
    space: SearchSpace,
    budget: int,
    seed: Seed,
    n_initial: int = 10,
    n_candidates: int = 2048,
    xi: float = 0.01,
) -> OptimizationResult:
    """Maximize ``objective`` over ``space`` with at most ``budget`` evaluations.

    The first ``min(n_initial, budget)`` points are uniform random draws; the
    rest maximize expected improvement over seeded random candidates. A
    budget of 1 evaluates a single random configuration.

    Args:
        objective: Maps a decoded parameter dict to a score (higher is better)
        space: Parameter definitions
        budget: Total number of configurations to evaluate
        seed: Seed for the warm-up draws, candidates and surrogate restarts
        n_initial: Random warm-up evaluations before the surrogate is used
        n_candidates: Random candidates scored by EI per step
        xi: Exploration margin for EI

    Returns:
        OptimizationResult with the best configuration and full history
    """
    if budget < 1:
        raise InputError(f"Search budget must be at least 1, got {budget}")
    rng = make_rng(seed, "bayes_maximize")
    cache: Dict[Tuple, float] = {}
    X: List[np.ndarray] = []
    history: List[Tuple[Dict[str, Any], float]] = []

    def evaluate(u: np.ndarray):
        params = space.decode(u)
        key = _key(params)
        if key not in cache:
            cache[key] = float(objective(params))
        X.append(np.asarray(u, dtype=float))
        history.append((params, cache[key]))

    for u in rng.random((min(n_initial, budget), space.dim)):
        evaluate(u)

    step = 0
    while len(history) < budget:
        scores = np.asarray([s for _, s in history], dtype=float)
        finite = np.isfinite(scores)
        fill = scores[finite].min() if finite.any() else 0.0
        y = np.where(finite, scores, fill)

        gp = _surrogate(space.dim, derive_seed(seed, "surrogate", step))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            gp.fit(np.vstack(X), y)
        candidates = rng.random((n_candidates, space.dim))
        mu, sigma = gp.predict(candidates, return_std=True)
        ei = expected_improvement(mu, sigma, float(y.max()), xi)
        evaluate(candidates[int(np.argmax(ei))] if np.any(ei > 0) else candidates[int(np.argmax(mu))])
        step += 1

    scores = np.asarray([s for _, s in history], dtype=float)
    ranked = np.where(np.isfinite(scores), scores, -np.inf)
    best = int(np.argmax(ranked))
    logger.debug(f"bayes_maximize: best score {scores[best]:.4f} after {len(history)} evaluations")
    return OptimizationResult(best_params=history[best][0], best_score=float(scores[best]), history=history)
