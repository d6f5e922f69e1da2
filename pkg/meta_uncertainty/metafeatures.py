"""Per-instance complexity meta-features computed against a reference (training) set.

A ``MetaFeatureContext`` is fitted once per reference set and then shared
read-only by every query. All distance-based measures work in the
``FeatureScaler`` space.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.special import logsumexp
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import pairwise_distances

from .core import FeatureScaler, LabelledDataset, Seed, derive_seed
from .diversity import diversity_from_counts
from .errors import ClassTooSmallError, DegenerateSeparatorError, InputError
from .learners import (
    ClassConditionalDensities,
    DecisionTree,
    PlattCalibration,
    grow_tree,
    log_kde,
    platt_scale,
    silverman_bandwidth,
)

logger = logging.getLogger(__name__)

META_FEATURES: Tuple[str, ...] = ("kdn", "ds", "dcd", "ol", "clol", "ec", "hd")


class MetaFeatureConfig(BaseModel):
    """Neighbourhood size ``k``, kernel width ``h`` (None = Silverman per feature) and caps."""

    k: int = Field(default=5, ge=1)
    h: Optional[float] = Field(default=None, gt=0)
    ol_cap: float = Field(default=1e6, gt=1)
    fisher_cap: float = Field(default=1e6, gt=0)


class MetaFeatureVector(BaseModel):
    model_config = ConfigDict(frozen=True)

    kdn: float = Field(ge=0, le=1)
    ds: float = Field(ge=0, le=1)
    dcd: float = Field(ge=0, le=1)
    ol: float = Field(ge=0)
    clol: float = Field(ge=0, le=1)
    ec: float = Field(ge=0, le=1)
    hd: float = Field(ge=0, le=1)
    flags: Tuple[str, ...] = ()

    @field_validator(*META_FEATURES)
    @classmethod
    def _finite(cls, value: float) -> float:
        if not np.isfinite(value):
            raise ValueError("meta-feature values must be finite")
        return float(value)

    def as_array(self) -> np.ndarray:
        return np.asarray([getattr(self, name) for name in META_FEATURES], dtype=float)

    @classmethod
    def from_array(cls, values: Sequence[float], flags: Sequence[str] = ()) -> "MetaFeatureVector":
        values = np.asarray(values, dtype=float)
        bounded = {name: float(np.clip(v, 0.0, 1.0)) if name != "ol" else max(float(v), 0.0) for name, v in zip(META_FEATURES, values)}
        return cls(**bounded, flags=tuple(flags))


@dataclass
class ConflictMatrix:
    """Signed conflict degrees, one row per contrasting class, one column per feature."""

    entries: np.ndarray
    feature_weights: np.ndarray
    contrast_classes: Tuple[int, ...]
    zero_density_cells: int = 0

    def score(self) -> float:
        if self.entries.size == 0:
            return 0.0
        per_class = np.maximum(self.entries * self.feature_weights, 0.0).sum(axis=1)
        return float(np.clip(per_class.max() / self.feature_weights.sum(), 0.0, 1.0))


def conflict_degree(log_f_pred: float, log_f_other: float) -> float:
    """Positive when the contrasting class is denser: ``1 - f_c/f_r``; negative ``-1 + f_r/f_c`` otherwise."""
    if log_f_other > log_f_pred:
        return float(1.0 - np.exp(log_f_pred - log_f_other))
    if log_f_pred > log_f_other:
        return float(-1.0 + np.exp(log_f_other - log_f_pred))
    return 0.0


def _fisher(column: np.ndarray, y: np.ndarray, n_classes: int, cap: float) -> Tuple[float, bool]:
    mu = column.mean()
    between = 0.0
    within = 0.0
    for c in range(n_classes):
        values = column[y == c]
        if len(values) == 0:
            continue
        between += len(values) * (values.mean() - mu) ** 2
        within += len(values) * values.var()
    scale = max(1.0, float(np.abs(column).max()) ** 2) * len(column)
    if within <= 1e-12 * scale:
        if between <= 1e-12 * scale:
            return 0.0, False
        return cap, True
    return float(min(between / within, cap)), between / within > cap


def fisher_ratio(train: LabelledDataset, feature: int, cap: float = 1e6) -> float:
    """Multiclass Fisher discriminant ratio of one feature; zero within-class variance caps it."""
    value, capped = _fisher(train.X[:, feature], train.y, train.n_classes, cap)
    if capped:
        logger.debug(f"{train.id}: Fisher ratio of feature {feature} capped at {cap}")
    return value


def fisher_weights(train: LabelledDataset, cap: float = 1e6) -> np.ndarray:
    """Fisher ratios normalized by their maximum; floored at 1e-6, all ones when every ratio is 0."""
    ratios = np.asarray([fisher_ratio(train, j, cap) for j in range(train.n_features)])
    if ratios.max(initial=0.0) <= 0:
        return np.ones(train.n_features)
    return np.maximum(ratios / ratios.max(), 1e-6)


@dataclass
class HyperplaneSeparator:
    """Linear reference separator(s) in the scaled space.

    One row of ``weights`` per separator (one for two classes, one-vs-rest
    otherwise). ``scale`` is the largest training margin.
    """

    weights: np.ndarray
    intercepts: np.ndarray
    scale: float
    calibration: Optional[PlattCalibration] = None

    def __post_init__(self):
        self.weights = np.atleast_2d(np.asarray(self.weights, dtype=float))
        self.intercepts = np.atleast_1d(np.asarray(self.intercepts, dtype=float))
        norms = np.linalg.norm(self.weights, axis=1)
        if np.any(norms <= 1e-12):
            raise DegenerateSeparatorError("Reference separator has a zero weight vector")
        if not self.scale > 0:
            raise DegenerateSeparatorError(f"Reference separator has non-positive margin scale {self.scale}")

    def signed_margins(self, Z: np.ndarray) -> np.ndarray:
        Z = np.atleast_2d(Z)
        return (Z @ self.weights.T + self.intercepts) / np.linalg.norm(self.weights, axis=1)

    def raw_margins(self, Z: np.ndarray) -> np.ndarray:
        return np.abs(self.signed_margins(Z)).min(axis=1)

    def distance(self, Z: np.ndarray) -> np.ndarray:
        """Normalized distance to the nearest separator, clipped to [0, 1]."""
        return np.clip(self.raw_margins(Z) / self.scale, 0.0, 1.0)

    def probability(self, Z: np.ndarray) -> Optional[np.ndarray]:
        """Platt-calibrated P(second class) for two-class separators."""
        if self.calibration is None:
            return None
        return self.calibration.predict(self.signed_margins(Z)[:, 0])

    @classmethod
    def fit(cls, Z: np.ndarray, y: np.ndarray, seed: Seed = 0) -> "HyperplaneSeparator":
        present = np.unique(y)
        if len(present) < 2:
            raise DegenerateSeparatorError("Reference separator needs at least two classes")
        targets = [present[1]] if len(present) == 2 else list(present)
        weights, intercepts = [], []
        for target in targets:
            binary = (y == target).astype(int)
            model = LogisticRegression(C=1.0, max_iter=1000, random_state=derive_seed(seed, "separator", int(target)))
            model.fit(Z, binary)
            weights.append(model.coef_[0])
            intercepts.append(model.intercept_[0])
        weights = np.asarray(weights)
        intercepts = np.asarray(intercepts)
        if np.any(np.linalg.norm(weights, axis=1) <= 1e-12):
            raise DegenerateSeparatorError("Reference separator has a zero weight vector")
        margins = np.abs((Z @ weights.T + intercepts) / np.linalg.norm(weights, axis=1)).min(axis=1)
        calibration = None
        if len(present) == 2:
            signed = (Z @ weights[0] + intercepts[0]) / np.linalg.norm(weights[0])
            calibration = platt_scale(signed, (y == present[1]).astype(int))
        return cls(weights=weights, intercepts=intercepts, scale=float(margins.max()), calibration=calibration)


class _NeighbourIndex:
    """kNN / reverse-NN / shared-NN structure and neighbourhood densities over a point set."""

    def __init__(self, points: np.ndarray, k: int, h: np.ndarray):
        self.points = points
        self.h = h
        n = len(points)
        self.k = min(k, n - 1)
        D = pairwise_distances(points)
        np.fill_diagonal(D, np.inf)
        order = np.argsort(D, axis=1, kind="stable")
        self.knn = order[:, : self.k]
        self.kdist = D[np.arange(n), self.knn[:, -1]] if self.k > 0 else np.zeros(n)
        self.inverse: List[List[int]] = [[] for _ in range(n)]
        for i, row in enumerate(self.knn):
            for j in row:
                self.inverse[j].append(i)
        self.log_density = np.empty(n)
        for i in range(n):
            members = self._train_neighbourhood(i, D[i])
            self.log_density[i] = log_kde(points[members], points[i], h, include_self=True)[0]

    def _train_neighbourhood(self, i: int, dist_row: np.ndarray) -> np.ndarray:
        rnn = np.flatnonzero(dist_row <= self.kdist)
        snn = {z for j in self.knn[i] for z in self.inverse[j]}
        members = set(self.knn[i].tolist()) | set(rnn.tolist()) | snn
        members.discard(i)
        return np.asarray(sorted(members), dtype=int)

    def query_knn(self, dist_row: np.ndarray, k: int) -> np.ndarray:
        return np.argsort(dist_row, kind="stable")[:k]

    def neighbourhood(self, dist_row: np.ndarray) -> np.ndarray:
        """Union of kNN, reverse NN and shared NN of an outside query."""
        knn = self.query_knn(dist_row, max(self.k, 1))
        rnn = np.flatnonzero(dist_row <= self.kdist)
        snn = {z for j in knn for z in self.inverse[j]}
        return np.asarray(sorted(set(knn.tolist()) | set(rnn.tolist()) | snn), dtype=int)

    def outlierness(self, query: np.ndarray, dist_row: np.ndarray, cap: float) -> Tuple[float, bool]:
        members = self.neighbourhood(dist_row)
        log_px = log_kde(self.points[members], query, self.h, include_self=True)[0]
        log_mean = logsumexp(self.log_density[members]) - np.log(len(members))
        log_ratio = log_mean - log_px
        if not np.isfinite(log_px) or log_ratio > np.log(cap):
            return cap, True
        return float(np.exp(log_ratio)), False


@dataclass
class MetaFeatureContext:
    """Fitted reference set shared by every meta-feature query."""

    train: LabelledDataset
    config: MetaFeatureConfig
    scaler: FeatureScaler
    Z: np.ndarray
    h: np.ndarray
    index: _NeighbourIndex
    class_indexes: Dict[int, Tuple[np.ndarray, _NeighbourIndex]]
    unpruned: DecisionTree
    pruned: DecisionTree
    densities: ClassConditionalDensities
    weights: np.ndarray
    separator: HyperplaneSeparator
    fit_flags: Tuple[str, ...] = field(default_factory=tuple)

    @classmethod
    def fit(cls, train: LabelledDataset, config: Optional[MetaFeatureConfig] = None, seed: Seed = 0) -> "MetaFeatureContext":
        config = config or MetaFeatureConfig()
        if config.k > train.n_instances:
            raise InputError(f"{train.id}: k={config.k} exceeds the {train.n_instances} reference instances")
        flags: List[str] = []
        scaler = FeatureScaler.for_dataset(train)
        Z = scaler.transform(train.X)
        h = np.full(Z.shape[1], config.h) if config.h is not None else silverman_bandwidth(Z)
        index = _NeighbourIndex(Z, config.k, h)

        class_indexes: Dict[int, Tuple[np.ndarray, _NeighbourIndex]] = {}
        for c, label in enumerate(train.classes):
            members = np.flatnonzero(train.y == c)
            if len(members) == 0:
                flags.append("clol_class_absent")
                continue
            if len(members) == 1:
                raise ClassTooSmallError(
                    f"{train.id}: class '{label}' has a single member; class-level outlierness needs two",
                    class_label=label,
                )
            if len(members) - 1 < config.k:
                flags.append("clol_k_reduced")
                logger.debug(f"{train.id}: class '{label}' k reduced to {len(members) - 1}")
            class_indexes[c] = (members, _NeighbourIndex(Z[members], config.k, h))

        weights = fisher_weights(train, config.fisher_cap)
        return cls(
            train=train,
            config=config,
            scaler=scaler,
            Z=Z,
            h=h,
            index=index,
            class_indexes=class_indexes,
            unpruned=grow_tree(train, pruned=False, seed=derive_seed(seed, "unpruned"), scaler=scaler),
            pruned=grow_tree(train, pruned=True, seed=derive_seed(seed, "pruned"), scaler=scaler),
            densities=ClassConditionalDensities.fit(train.X, train.y, train.schema.feature_kinds, train.n_classes),
            weights=weights,
            separator=HyperplaneSeparator.fit(Z, train.y, seed=derive_seed(seed, "separator")),
            fit_flags=tuple(sorted(set(flags))),
        )

    def _scaled(self, X: np.ndarray) -> np.ndarray:
        return self.scaler.transform(np.atleast_2d(np.asarray(X, dtype=float)))

    def _distances(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        z = self._scaled(x)
        return z, pairwise_distances(z, self.Z)[0]

    def _kdn(self, dist_row: np.ndarray) -> float:
        neighbours = self.index.query_knn(dist_row, self.config.k)
        counts = np.bincount(self.train.y[neighbours], minlength=self.train.n_classes)
        return float(diversity_from_counts(counts)[0])

    def _disjunct_size(self, leaf: int) -> float:
        largest = self.unpruned.largest_leaf_size
        if largest <= 1:
            return 0.0
        return (self.unpruned.leaf_size(leaf) - 1) / (largest - 1)

    def _leaf_diversity(self, leaf: int) -> float:
        return float(diversity_from_counts(self.pruned.leaf_class_counts[leaf])[0])

    def _class_level_outlierness(self, z: np.ndarray, dist_row: np.ndarray) -> Tuple[float, bool]:
        shares = []
        capped = False
        for members, index in self.class_indexes.values():
            value, hit_cap = index.outlierness(z, dist_row[members], self.config.ol_cap)
            shares.append(value)
            capped = capped or hit_cap
        shares = np.asarray(shares)
        if len(shares) < 2:
            return 0.0, capped
        if shares.sum() <= 0:
            return 1.0, capped
        return float(diversity_from_counts(shares / shares.sum())[0]), capped

    def kdn(self, x: np.ndarray) -> float:
        return self._kdn(self._distances(x)[1])

    def disjunct_size(self, x: np.ndarray) -> float:
        return self._disjunct_size(int(self.unpruned.leaf_of(x)[0]))

    def disjunct_class_diversity(self, x: np.ndarray) -> float:
        return self._leaf_diversity(int(self.pruned.leaf_of(x)[0]))

    def outlierness(self, x: np.ndarray) -> Tuple[float, bool]:
        """Neighbourhood-to-own density ratio and whether it hit ``ol_cap``."""
        z, row = self._distances(x)
        return self.index.outlierness(z, row, self.config.ol_cap)

    def class_level_outlierness(self, x: np.ndarray) -> Tuple[float, bool]:
        """Diversity of the per-class outlierness shares; absent classes take no share."""
        return self._class_level_outlierness(*self._distances(x))

    def conflict_matrix(self, x: np.ndarray, c_pred: int) -> ConflictMatrix:
        log_f, zero = self.densities.log_density(np.asarray(x, dtype=float).ravel())
        others = tuple(r for r in range(self.train.n_classes) if r != c_pred)
        entries = np.zeros((len(others), self.train.n_features))
        zero_cells = 0
        for i, r in enumerate(others):
            for j in range(self.train.n_features):
                if zero[c_pred, j] and zero[r, j]:
                    zero_cells += 1
                    continue
                entries[i, j] = conflict_degree(log_f[c_pred, j], log_f[r, j])
        return ConflictMatrix(entries=entries, feature_weights=self.weights, contrast_classes=others, zero_density_cells=zero_cells)

    def evidence_conflict(self, x: np.ndarray, c_pred: int) -> float:
        return self.conflict_matrix(x, c_pred).score()

    def hyperplane_distance(self, x: np.ndarray) -> float:
        return float(self.separator.distance(self._scaled(x))[0])

    def most_likely_class(self, x: np.ndarray) -> int:
        log_f, _ = self.densities.log_density(np.asarray(x, dtype=float).ravel(), laplace_alpha=1.0)
        return int(np.argmax(np.where(np.isfinite(log_f), log_f, -1e300).sum(axis=1)))

    def compute(self, x: np.ndarray, c_pred: Optional[int] = None) -> MetaFeatureVector:
        return self.compute_batch(np.atleast_2d(np.asarray(x, dtype=float)), None if c_pred is None else [c_pred])[0]

    def compute_batch(self, X: np.ndarray, c_preds: Optional[Sequence[int]] = None) -> List[MetaFeatureVector]:
        """Meta-feature vectors for many outside queries.

        Args:
            X: Query instances in the raw (unscaled) feature layout
            c_preds: Predicted class code per query; defaults to the class of
                maximal class-conditional likelihood

        Returns:
            One MetaFeatureVector per query row
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if c_preds is not None and len(c_preds) != len(X):
            raise InputError(f"{len(X)} queries but {len(c_preds)} predicted classes")
        Zq = self._scaled(X)
        D = pairwise_distances(Zq, self.Z)
        leaves_full = self.unpruned.leaf_of(X)
        leaves_pruned = self.pruned.leaf_of(X)
        hd = self.separator.distance(Zq)

        vectors = []
        for i in range(len(X)):
            flags = list(self.fit_flags)
            z = Zq[i : i + 1]
            ol, ol_capped = self.index.outlierness(z, D[i], self.config.ol_cap)
            if ol_capped:
                flags.append("ol_capped")
            clol, clol_capped = self._class_level_outlierness(z, D[i])
            if clol_capped:
                flags.append("clol_capped")

            c_pred = int(c_preds[i]) if c_preds is not None else self.most_likely_class(X[i])
            matrix = self.conflict_matrix(X[i], c_pred)
            if matrix.zero_density_cells:
                flags.append("ec_zero_density")

            vectors.append(
                MetaFeatureVector.from_array(
                    [
                        self._kdn(D[i]),
                        self._disjunct_size(int(leaves_full[i])),
                        self._leaf_diversity(int(leaves_pruned[i])),
                        ol,
                        clol,
                        matrix.score(),
                        hd[i],
                    ],
                    flags=sorted(set(flags)),
                )
            )
        return vectors


def compute_all(x: np.ndarray, train: LabelledDataset, config: Optional[MetaFeatureConfig] = None, c_pred: Optional[int] = None, seed: Seed = 0) -> MetaFeatureVector:
    """All seven meta-features of ``x`` against ``train`` (fits a fresh context)."""
    return MetaFeatureContext.fit(train, config, seed).compute(x, c_pred)


def kdn(x: np.ndarray, train: LabelledDataset, k: int) -> float:
    if k > train.n_instances:
        raise InputError(f"k={k} exceeds the {train.n_instances} reference instances")
    scaler = FeatureScaler.for_dataset(train)
    row = pairwise_distances(scaler.transform(np.atleast_2d(x)), scaler.transform(train.X))[0]
    neighbours = np.argsort(row, kind="stable")[:k]
    return float(diversity_from_counts(np.bincount(train.y[neighbours], minlength=train.n_classes))[0])


def vectors_to_matrix(vectors: Sequence[MetaFeatureVector]) -> np.ndarray:
    if not vectors:
        return np.empty((0, len(META_FEATURES)))
    return np.vstack([v.as_array() for v in vectors])
