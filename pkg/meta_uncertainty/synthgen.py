"""Complexity-targeted synthetic datasets: boid dynamics tuned by a genetic algorithm.

Points start uniform in the unit cube with balanced labels and are moved by
four weighted rules (cohesion toward a class anchor, separation from the
nearest neighbour, alignment with same-class neighbours, attraction toward
the nearest other-class point) plus a fixed jitter. The GA searches the rule
weights so the dataset's F1 and N1 complexity hit a target.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, Field, model_validator
from scipy.sparse.csgraph import minimum_spanning_tree
from sklearn.metrics import pairwise_distances
from sklearn.neighbors import NearestNeighbors

from .core import FeatureScaler, LabelledDataset, Seed, derive_seed, make_rng
from .errors import DegenerateInputError, InputError, SingleClassError
from .metafeatures import _fisher

logger = logging.getLogger(__name__)

GRID_LEVELS: Tuple[float, ...] = (0.2, 0.4, 0.6, 0.8, 1.0)


class ComplexityTarget(BaseModel):
    f1: float = Field(ge=0, le=1)
    n1: float = Field(ge=0, le=1)
    instances: int = Field(ge=4)
    features: int = Field(ge=1)
    classes: int = Field(default=2, ge=2)

    @model_validator(mode="after")
    def _check(self) -> "ComplexityTarget":
        if self.n1 > self.f1 + 1e-9:
            raise ValueError(f"n1={self.n1} must not exceed f1={self.f1}")
        if self.instances < 2 * self.classes:
            raise ValueError(f"{self.instances} instances cannot hold 2 per class for {self.classes} classes")
        return self


class GASettings(BaseModel):
    population: int = Field(default=20, ge=2)
    generations: int = Field(default=30, ge=1)
    elitism: int = Field(default=2, ge=0)
    tournament: int = Field(default=3, ge=1)
    mutation_sigma: float = Field(default=0.1, gt=0)
    mutation_rate: float = Field(default=0.5, ge=0, le=1)
    steps: int = Field(default=20, ge=1)
    step_size: float = Field(default=0.1, gt=0, le=1)
    jitter: float = Field(default=0.005, ge=0)
    neighbours: int = Field(default=5, ge=1)
    proxy_size: int = Field(default=300, ge=10)
    tolerance: float = Field(default=0.02, ge=0)
    infeasible_residual: float = Field(default=0.2, gt=0)
    n_jobs: int = 1

    @model_validator(mode="after")
    def _check(self) -> "GASettings":
        if self.elitism >= self.population:
            raise ValueError("elitism must be smaller than the population")
        return self


@dataclass(frozen=True)
class BoidRuleWeights:
    cohesion: float
    separation: float
    alignment: float
    class_attraction: float

    def __post_init__(self):
        values = self.as_array()
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise InputError(f"Boid weights must be finite and nonnegative, got {values}")
        if not np.any(values > 0):
            raise InputError("At least one boid weight must be positive")

    def as_array(self) -> np.ndarray:
        return np.asarray([self.cohesion, self.separation, self.alignment, self.class_attraction], dtype=float)

    @classmethod
    def from_array(cls, values: np.ndarray) -> "BoidRuleWeights":
        values = np.clip(np.asarray(values, dtype=float), 0.0, 1.0)
        if not np.any(values > 0):
            values = values.copy()
            values[0] = 1e-3
        return cls(*values.tolist())


def _present_classes(ds: LabelledDataset):
    if len(np.unique(ds.y)) < 2:
        raise SingleClassError(f"{ds.id}: complexity measures need at least two classes present")


def measure_f1(ds: LabelledDataset) -> float:
    """``1 / (1 + max Fisher ratio)``: 0 for separable features, 1 for identical class distributions."""
    _present_classes(ds)
    best = max(_fisher(ds.X[:, j], ds.y, ds.n_classes, 1e6)[0] for j in range(ds.n_features))
    return float(1.0 / (1.0 + best))


def _n1(Z: np.ndarray, y: np.ndarray) -> float:
    D = pairwise_distances(Z)
    D = D + 1e-12 * (1.0 - np.eye(len(Z)))
    tree = minimum_spanning_tree(D).tocoo()
    cross = y[tree.row] != y[tree.col]
    boundary = np.union1d(tree.row[cross], tree.col[cross])
    return float(len(boundary) / len(y))


def measure_n1(ds: LabelledDataset) -> float:
    """Fraction of instances touching a cross-class edge of the Euclidean MST (min-max scaled space)."""
    if ds.n_instances < 3:
        raise DegenerateInputError(f"{ds.id}: N1 needs at least 3 instances")
    _present_classes(ds)
    return _n1(FeatureScaler.for_dataset(ds).transform(ds.X), ds.y)


def _anchors(n_classes: int, n_features: int) -> np.ndarray:
    anchors = np.full((n_classes, n_features), 0.5)
    if n_features == 1:
        anchors[:, 0] = np.linspace(0.25, 0.75, n_classes)
        return anchors
    theta = 2 * np.pi * np.arange(n_classes) / n_classes
    anchors[:, 0] += 0.25 * np.cos(theta)
    anchors[:, 1] += 0.25 * np.sin(theta)
    return anchors


def simulate(weights: BoidRuleWeights, n_instances: int, n_features: int, n_classes: int, settings: GASettings, seed: Seed) -> Tuple[np.ndarray, np.ndarray]:
    """Run the boid dynamics; returns ``(X, y)`` in the unit cube."""
    rng = make_rng(seed, "boids")
    X = rng.random((n_instances, n_features))
    y = np.arange(n_instances) % n_classes
    rng.shuffle(y)
    anchors = _anchors(n_classes, n_features)
    w = weights.as_array()
    k = min(settings.neighbours, n_instances // n_classes - 1)
    groups = [np.flatnonzero(y == c) for c in range(n_classes)]

    for _ in range(settings.steps):
        force = np.zeros_like(X)
        if w[0] > 0:
            force += w[0] * (anchors[y] - X)
        if w[1] > 0:
            dist, idx = NearestNeighbors(n_neighbors=2).fit(X).kneighbors(X)
            away = X - X[idx[:, 1]]
            norm = np.maximum(dist[:, 1:2], 1e-9)
            force += w[1] * 0.05 * away / norm
        if w[2] > 0 and k >= 1:
            for members in groups:
                _, idx = NearestNeighbors(n_neighbors=k + 1).fit(X[members]).kneighbors(X[members])
                force[members] += w[2] * (X[members][idx[:, 1:]].mean(axis=1) - X[members])
        if w[3] > 0:
            for c, members in enumerate(groups):
                others = np.flatnonzero(y != c)
                _, idx = NearestNeighbors(n_neighbors=1).fit(X[others]).kneighbors(X[members])
                force[members] += w[3] * (X[others][idx[:, 0]] - X[members])
        X = np.clip(X + settings.step_size * force + rng.normal(0.0, settings.jitter, X.shape), 0.0, 1.0)
    return X, y


def _complexity(X: np.ndarray, y: np.ndarray, n_classes: int) -> Tuple[float, float]:
    best = max(_fisher(X[:, j], y, n_classes, 1e6)[0] for j in range(X.shape[1]))
    span = X.max(axis=0) - X.min(axis=0)
    Z = (X - X.min(axis=0)) / np.where(span > 0, span, 1.0)
    return float(1.0 / (1.0 + best)), _n1(Z, y)


@dataclass
class GenerationResult:
    weights: BoidRuleWeights
    residual: float
    best_by_generation: List[float] = field(default_factory=list)


def evolve(target: ComplexityTarget, settings: GASettings, seed: Seed) -> GenerationResult:
    """GA over boid weights: tournament selection, uniform crossover, Gaussian mutation, elitism."""
    rng = make_rng(seed, "ga")
    proxy = max(min(target.instances, settings.proxy_size), 2 * target.classes)
    sim_seed = derive_seed(seed, "simulation")
    cache: Dict[Tuple[float, ...], float] = {}

    def residual(genome: np.ndarray) -> float:
        X, y = simulate(BoidRuleWeights.from_array(genome), proxy, target.features, target.classes, settings, sim_seed)
        f1, n1 = _complexity(X, y, target.classes)
        return abs(f1 - target.f1) + abs(n1 - target.n1)

    def evaluate(population: np.ndarray) -> np.ndarray:
        keys = [tuple(np.round(g, 12)) for g in population]
        todo = [g for g, key in zip(population, keys) if key not in cache]
        if settings.n_jobs != 1 and len(todo) > 1:
            scores = Parallel(n_jobs=settings.n_jobs)(delayed(residual)(g) for g in todo)
        else:
            scores = [residual(g) for g in todo]
        for g, score in zip(todo, scores):
            cache[tuple(np.round(g, 12))] = score
        return np.asarray([cache[key] for key in keys])

    population = rng.random((settings.population, 4))
    fitness = evaluate(population)
    history = [float(fitness.min())]

    for generation in range(settings.generations):
        if fitness.min() <= settings.tolerance:
            break
        order = np.argsort(fitness, kind="stable")
        children = [population[i].copy() for i in order[: settings.elitism]]
        while len(children) < settings.population:
            parents = []
            for _ in range(2):
                entrants = rng.choice(settings.population, size=min(settings.tournament, settings.population), replace=False)
                parents.append(population[entrants[np.argmin(fitness[entrants])]])
            mask = rng.random(4) < 0.5
            child = np.where(mask, parents[0], parents[1])
            mutate = rng.random(4) < settings.mutation_rate
            child = np.clip(child + mutate * rng.normal(0.0, settings.mutation_sigma, 4), 0.0, 1.0)
            children.append(child)
        population = np.vstack(children)
        fitness = evaluate(population)
        history.append(float(fitness.min()))
        logger.debug(f"GA generation {generation + 1}: best residual {history[-1]:.4f}")

    best = int(np.argmin(fitness))
    return GenerationResult(BoidRuleWeights.from_array(population[best]), float(fitness[best]), history)


def generate(target: ComplexityTarget, ga: Optional[GASettings] = None, seed: Seed = 0, dataset_id: Optional[str] = None) -> LabelledDataset:
    """Synthetic dataset whose (F1, N1) approach ``target``; achieved values go in metadata."""
    ga = ga or GASettings()
    result = evolve(target, ga, seed)
    X, y = simulate(result.weights, target.instances, target.features, target.classes, ga, derive_seed(seed, "simulation"))
    f1, n1 = _complexity(X, y, target.classes)
    residual = abs(f1 - target.f1) + abs(n1 - target.n1)
    infeasible = residual > ga.infeasible_residual
    if infeasible:
        logger.warning(f"Synthetic target f1={target.f1} n1={target.n1} infeasible: residual {residual:.3f}")
    classes = [f"c{c}" for c in range(target.classes)]
    return LabelledDataset.from_arrays(
        X,
        [classes[c] for c in y],
        dataset_id=dataset_id or f"synthetic_f{target.f1:.2f}_n{target.n1:.2f}",
        provenance="synthetic",
        classes=classes,
        metadata={
            "target_f1": target.f1,
            "target_n1": target.n1,
            "achieved_f1": f1,
            "achieved_n1": n1,
            "seed": int(seed),
            "residual": residual,
            "infeasible": infeasible,
            "weights": dict(zip(("cohesion", "separation", "alignment", "class_attraction"), result.weights.as_array().tolist())),
            "generations_run": len(result.best_by_generation) - 1,
        },
    )


def grid_targets(template: LabelledDataset, levels: Tuple[float, ...] = GRID_LEVELS) -> List[ComplexityTarget]:
    """Every (f1, n1) pair on ``levels`` with n1 <= f1, sized like ``template``."""
    return [
        ComplexityTarget(
            f1=f1, n1=n1, instances=template.n_instances, features=template.n_features, classes=template.n_classes
        )
        for f1 in levels
        for n1 in levels
        if n1 <= f1 + 1e-9
    ]


def generate_grid(template: LabelledDataset, seed: Seed = 0, ga: Optional[GASettings] = None, levels: Tuple[float, ...] = GRID_LEVELS) -> List[LabelledDataset]:
    datasets = []
    for target in grid_targets(template, levels):
        key = f"{target.f1:.1f}/{target.n1:.1f}"
        datasets.append(
            generate(
                target,
                ga,
                derive_seed(seed, template.id, key),
                dataset_id=f"{template.id}_syn_f{target.f1:.1f}_n{target.n1:.1f}",
            )
        )
        logger.info(
            f"{datasets[-1].id}: achieved f1={datasets[-1].metadata['achieved_f1']:.3f} "
            f"n1={datasets[-1].metadata['achieved_n1']:.3f}"
        )
    return datasets
