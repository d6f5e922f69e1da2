"""Classifier zoo, decision trees, kernel densities and probability baselines."""
import logging
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, logsumexp
from scipy.stats import gaussian_kde, norm
from sklearn.base import ClassifierMixin, clone
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import balanced_accuracy_score
from sklearn.model_selection import KFold, StratifiedKFold, cross_val_score
from sklearn.naive_bayes import GaussianNB
from sklearn.neighbors import KNeighborsClassifier
from sklearn.tree import DecisionTreeClassifier

from .bayesopt import ParamKind, ParamSpec, SearchSpace, bayes_maximize
from .core import FeatureKind, FeatureScaler, LabelledDataset, Seed, derive_seed
from .errors import DegenerateInputError, InputError, SingleClassError

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1


class ClassifierKind(str, Enum):
    LOGISTIC_REGRESSION = "logistic_regression"
    GAUSSIAN_NB = "gaussian_nb"
    KNN_CLASSIFIER = "knn_classifier"
    DECISION_TREE = "decision_tree"


DEFAULT_SPACES: Dict[ClassifierKind, Tuple[ParamSpec, ...]] = {
    ClassifierKind.LOGISTIC_REGRESSION: (
        ParamSpec("C", ParamKind.LOG_REAL, 0.01, 100.0),
        ParamSpec("penalty", ParamKind.CATEGORICAL, choices=("l1", "l2")),
    ),
    ClassifierKind.GAUSSIAN_NB: (ParamSpec("var_smoothing", ParamKind.LOG_REAL, 1e-9, 1.0),),
    ClassifierKind.KNN_CLASSIFIER: (
        ParamSpec("n_neighbors", ParamKind.INTEGER, 2, 11),
        ParamSpec("weights", ParamKind.CATEGORICAL, choices=("uniform", "distance")),
    ),
    ClassifierKind.DECISION_TREE: (
        ParamSpec("max_depth", ParamKind.INTEGER, 1, 20),
        ParamSpec("min_samples_leaf", ParamKind.INTEGER, 1, 20),
        ParamSpec("criterion", ParamKind.CATEGORICAL, choices=("gini", "entropy")),
    ),
}

DEFAULT_PARAMS: Dict[ClassifierKind, Dict[str, Any]] = {
    ClassifierKind.LOGISTIC_REGRESSION: {"C": 1.0, "penalty": "l2"},
    ClassifierKind.GAUSSIAN_NB: {"var_smoothing": 1e-9},
    ClassifierKind.KNN_CLASSIFIER: {"n_neighbors": 5, "weights": "uniform"},
    ClassifierKind.DECISION_TREE: {"max_depth": 5, "min_samples_leaf": 1, "criterion": "gini"},
}


@dataclass(frozen=True)
class ClassifierSpec:
    kind: ClassifierKind
    space: SearchSpace

    def __post_init__(self):
        expected = {p.name for p in DEFAULT_SPACES[self.kind]}
        unknown = {p.name for p in self.space.params} - expected
        if unknown:
            raise InputError(f"Parameters {sorted(unknown)} do not belong to {self.kind.value}")

    @classmethod
    def default(cls, kind: Union[str, ClassifierKind]) -> "ClassifierSpec":
        kind = ClassifierKind(kind)
        return cls(kind=kind, space=SearchSpace(DEFAULT_SPACES[kind]))

    @property
    def defaults(self) -> Dict[str, Any]:
        return dict(DEFAULT_PARAMS[self.kind])


def build_estimator(kind: ClassifierKind, params: Dict[str, Any], seed: Seed, n_train: Optional[int] = None) -> ClassifierMixin:
    """Unfitted scikit-learn estimator for ``kind`` with ``params``."""
    params = {**DEFAULT_PARAMS[kind], **params}
    if kind == ClassifierKind.LOGISTIC_REGRESSION:
        return LogisticRegression(
            C=params["C"], penalty=params["penalty"], solver="liblinear", max_iter=1000,
            random_state=derive_seed(seed, "logreg"),
        )
    if kind == ClassifierKind.GAUSSIAN_NB:
        return GaussianNB(var_smoothing=params["var_smoothing"])
    if kind == ClassifierKind.KNN_CLASSIFIER:
        k = int(params["n_neighbors"])
        if n_train is not None:
            k = max(1, min(k, n_train))
        return KNeighborsClassifier(n_neighbors=k, weights=params["weights"])
    return DecisionTreeClassifier(
        max_depth=int(params["max_depth"]),
        min_samples_leaf=int(params["min_samples_leaf"]),
        criterion=params["criterion"],
        random_state=derive_seed(seed, "tree"),
    )


@dataclass
class TrainedClassifier:
    """A fitted zoo classifier over the full class universe of its training set."""

    kind: ClassifierKind
    params: Dict[str, Any]
    classes: Tuple[str, ...]
    scaler: FeatureScaler
    estimator: ClassifierMixin
    inner_score: Optional[float] = None

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        """Probabilities over ``classes``; 1-D input gives a 1-D vector."""
        single = np.asarray(X).ndim == 1
        Z = self.scaler.transform(np.atleast_2d(X))
        raw = self.estimator.predict_proba(Z)
        proba = np.zeros((Z.shape[0], len(self.classes)))
        proba[:, np.asarray(self.estimator.classes_, dtype=int)] = raw
        proba /= proba.sum(axis=1, keepdims=True)
        return proba[0] if single else proba

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Class codes; ties go to the lowest class code."""
        proba = self.predict_proba(X)
        return np.argmax(proba, axis=-1)

    def to_dict(self) -> Dict[str, Any]:
        fitted: Dict[str, Any] = {}
        est = self.estimator
        if self.kind == ClassifierKind.LOGISTIC_REGRESSION:
            fitted = {"coef": est.coef_.tolist(), "intercept": est.intercept_.tolist()}
        elif self.kind == ClassifierKind.GAUSSIAN_NB:
            fitted = {"theta": est.theta_.tolist(), "var": est.var_.tolist(), "class_prior": est.class_prior_.tolist()}
        elif self.kind == ClassifierKind.KNN_CLASSIFIER:
            fitted = {"n_samples_fit": int(est.n_samples_fit_), "n_neighbors": int(est.n_neighbors)}
        else:
            fitted = {"node_count": int(est.tree_.node_count), "depth": int(est.get_depth()), "n_leaves": int(est.get_n_leaves())}
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "kind": self.kind.value,
            "hyperparameters": self.params,
            "classes": list(self.classes),
            "estimator_classes": [int(c) for c in est.classes_],
            "inner_balanced_accuracy": self.inner_score,
            "fitted": fitted,
        }


def _inner_splitter(y: np.ndarray, folds: int, seed: Seed) -> Optional[StratifiedKFold]:
    present = np.bincount(y)
    present = present[present > 0]
    n_splits = int(min(folds, present.min()))
    if n_splits < 2 or len(present) < 2:
        return None
    return StratifiedKFold(n_splits=n_splits, shuffle=True, random_state=derive_seed(seed, "inner_cv"))


def train_tuned(spec: ClassifierSpec, train: LabelledDataset, folds: int = 5, budget: int = 15, seed: Seed = 0) -> TrainedClassifier:
    """Tune hyperparameters by mean inner-CV balanced accuracy, then refit on all of ``train``.

    Classes too small for a 2-fold inner split fall back to the kind's default hyperparameters.
    """
    if folds < 2:
        raise InputError(f"Inner fold count must be at least 2, got {folds}")
    if budget < 1:
        raise InputError(f"Search budget must be at least 1, got {budget}")
    if len(np.unique(train.y)) < 2:
        raise SingleClassError(f"{train.id}: training set holds a single class")

    scaler = FeatureScaler.for_dataset(train)
    Z = scaler.transform(train.X)
    splitter = _inner_splitter(train.y, folds, seed)

    best_score: Optional[float] = None
    if splitter is None:
        logger.warning(f"{train.id}: a class is too small for inner CV; using default {spec.kind.value} parameters")
        params = spec.defaults
    else:
        smallest_train = train.n_instances - int(np.ceil(train.n_instances / splitter.n_splits))

        def objective(candidate: Dict[str, Any]) -> float:
            est = build_estimator(spec.kind, candidate, seed, n_train=smallest_train)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ConvergenceWarning)
                scores = cross_val_score(est, Z, train.y, cv=splitter, scoring="balanced_accuracy")
            return float(np.mean(scores))

        result = bayes_maximize(objective, spec.space, budget=budget, seed=derive_seed(seed, "train_tuned"))
        params = {**spec.defaults, **result.best_params}
        best_score = result.best_score

    estimator = build_estimator(spec.kind, params, seed, n_train=train.n_instances)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        estimator.fit(Z, train.y)
    logger.debug(f"{train.id}: {spec.kind.value} tuned to {params} (inner score {best_score})")
    return TrainedClassifier(
        kind=spec.kind, params=params, classes=train.classes, scaler=scaler, estimator=estimator, inner_score=best_score
    )


def predict_proba(model: TrainedClassifier, x: np.ndarray) -> np.ndarray:
    return model.predict_proba(x)


def confidence_margin(proba: np.ndarray) -> np.ndarray:
    """``|max p - 0.5|`` per row; the top-class probability stands in for multiclass."""
    proba = np.atleast_2d(proba)
    return np.abs(proba.max(axis=1) - 0.5)


def probability_uncertainty(model: TrainedClassifier, x: np.ndarray) -> float:
    """Distance of the predicted-class probability from 0.5 (larger = more certain)."""
    return float(confidence_margin(model.predict_proba(np.asarray(x, dtype=float).reshape(1, -1)))[0])


def training_balanced_accuracy(model: TrainedClassifier, ds: LabelledDataset) -> float:
    return float(balanced_accuracy_score(ds.y, model.predict(ds.X)))


@dataclass
class DecisionTree:
    """CART tree with the training-instance membership of every leaf."""

    estimator: DecisionTreeClassifier
    scaler: FeatureScaler
    pruned: bool
    ccp_alpha: float
    n_classes: int
    train_leaves: np.ndarray
    leaf_members: Dict[int, np.ndarray]
    leaf_class_counts: Dict[int, np.ndarray]

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_members)

    @property
    def largest_leaf_size(self) -> int:
        return max(len(m) for m in self.leaf_members.values())

    def leaf_of(self, X: np.ndarray) -> np.ndarray:
        return self.estimator.apply(self.scaler.transform(np.atleast_2d(X)))

    def leaf_size(self, leaf: int) -> int:
        return len(self.leaf_members[int(leaf)])


def _pruning_alpha(Z: np.ndarray, y: np.ndarray, seed: Seed, max_candidates: int = 25) -> float:
    """Cost-complexity alpha with the best 3-fold accuracy; ties go to the larger alpha."""
    base = DecisionTreeClassifier(random_state=derive_seed(seed, "tree"))
    alphas = np.unique(base.cost_complexity_pruning_path(Z, y).ccp_alphas)
    alphas = alphas[alphas >= 0]
    if len(alphas) <= 1 or len(y) < 3:
        return 0.0
    if len(alphas) > max_candidates:
        alphas = alphas[np.unique(np.linspace(0, len(alphas) - 1, max_candidates).round().astype(int))]

    counts = np.bincount(y)
    counts = counts[counts > 0]
    if counts.min() >= 3:
        cv = StratifiedKFold(n_splits=3, shuffle=True, random_state=derive_seed(seed, "prune_cv"))
    else:
        cv = KFold(n_splits=3, shuffle=True, random_state=derive_seed(seed, "prune_cv"))

    best_alpha, best_score = 0.0, -np.inf
    for alpha in alphas:
        score = float(np.mean(cross_val_score(clone(base).set_params(ccp_alpha=float(alpha)), Z, y, cv=cv)))
        if score >= best_score - 1e-12:
            best_alpha, best_score = float(alpha), max(score, best_score)
    return best_alpha


def grow_tree(train: LabelledDataset, pruned: bool, seed: Seed = 0, scaler: Optional[FeatureScaler] = None) -> DecisionTree:
    """Unpruned: grown to purity with min-leaf 1. Pruned: cost-complexity pruned by internal 3-fold CV."""
    if train.n_instances < 2:
        raise DegenerateInputError(f"{train.id}: a tree needs at least 2 instances")
    scaler = scaler or FeatureScaler.for_dataset(train)
    Z = scaler.transform(train.X)
    alpha = _pruning_alpha(Z, train.y, seed) if pruned and len(np.unique(train.y)) > 1 else 0.0
    estimator = DecisionTreeClassifier(min_samples_leaf=1, ccp_alpha=alpha, random_state=derive_seed(seed, "tree"))
    estimator.fit(Z, train.y)

    leaves = estimator.apply(Z)
    members: Dict[int, np.ndarray] = {}
    class_counts: Dict[int, np.ndarray] = {}
    for leaf in np.unique(leaves):
        idx = np.flatnonzero(leaves == leaf)
        members[int(leaf)] = idx
        class_counts[int(leaf)] = np.bincount(train.y[idx], minlength=train.n_classes)
    return DecisionTree(
        estimator=estimator,
        scaler=scaler,
        pruned=pruned,
        ccp_alpha=alpha,
        n_classes=train.n_classes,
        train_leaves=leaves,
        leaf_members=members,
        leaf_class_counts=class_counts,
    )


def log_kde(points: np.ndarray, queries: np.ndarray, h: Union[float, np.ndarray], include_self: bool = True) -> np.ndarray:
    """Log of the Gaussian product-kernel density at each query.

    With ``include_self`` the query joins the kernel sum and the count,
    ``p(x) = 1/(|S|+1) * sum over S+{x} of K((z-x)/h) / prod(h)``.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    if points.shape[0] == 0:
        raise InputError("Kernel density needs a nonempty reference set")
    h = np.broadcast_to(np.asarray(h, dtype=float), (points.shape[1],))
    if np.any(h <= 0) or not np.all(np.isfinite(h)):
        raise InputError(f"Kernel width must be positive, got {h}")
    n_dims = points.shape[1]
    log_norm = -0.5 * n_dims * np.log(2 * np.pi) - np.sum(np.log(h))

    diffs = (queries[:, None, :] - points[None, :, :]) / h
    log_k = -0.5 * np.sum(diffs**2, axis=2)
    if include_self:
        log_k = np.concatenate([log_k, np.zeros((queries.shape[0], 1))], axis=1)
    return logsumexp(log_k, axis=1) - np.log(log_k.shape[1]) + log_norm


def kde_density(train_subset: np.ndarray, x: np.ndarray, h: Union[float, np.ndarray], include_self: bool = True) -> float:
    return float(np.exp(log_kde(train_subset, np.atleast_2d(x), h, include_self=include_self)[0]))


def silverman_bandwidth(X: np.ndarray, floor: float = 1e-3) -> np.ndarray:
    """Per-column multivariate Silverman width ``sd * (4 / ((d + 2) n)) ** (1 / (d + 4))``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, d = X.shape
    sd = X.std(axis=0, ddof=1) if n > 1 else np.zeros(d)
    factor = (4.0 / ((d + 2) * max(n, 1))) ** (1.0 / (d + 4))
    return np.maximum(sd * factor, floor)


@dataclass
class ClassConditionalDensities:
    """Per-class, per-feature univariate densities.

    Continuous and ordinal columns use a Gaussian KDE; nominal columns use
    category frequencies. A class column with fewer than two distinct values
    falls back to a narrow Gaussian around its values.
    """

    kinds: List[FeatureKind]
    n_classes: int
    _kdes: Dict[Tuple[int, int], Any] = field(default_factory=dict)
    _frequencies: Dict[Tuple[int, int], Dict[float, int]] = field(default_factory=dict)
    _class_sizes: np.ndarray = field(default_factory=lambda: np.zeros(0))
    _n_levels: Dict[int, int] = field(default_factory=dict)

    @classmethod
    def fit(cls, X: np.ndarray, y: np.ndarray, kinds: Sequence[FeatureKind], n_classes: int) -> "ClassConditionalDensities":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=int)
        dens = cls(kinds=list(kinds), n_classes=n_classes)
        dens._class_sizes = np.bincount(y, minlength=n_classes)
        for j, kind in enumerate(dens.kinds):
            column = X[:, j]
            if kind == FeatureKind.NOMINAL:
                dens._n_levels[j] = len(np.unique(column))
            span = float(np.ptp(column)) if column.size else 0.0
            fallback_sd = max(1.06 * float(column.std()) * max(len(column), 1) ** -0.2, 1e-3 * max(span, 1.0))
            for c in range(n_classes):
                values = column[y == c]
                if kind == FeatureKind.NOMINAL:
                    levels, counts = np.unique(values, return_counts=True)
                    dens._frequencies[(c, j)] = dict(zip(levels.tolist(), counts.tolist()))
                elif len(np.unique(values)) >= 2:
                    dens._kdes[(c, j)] = gaussian_kde(values)
                elif len(values):
                    dens._kdes[(c, j)] = norm(loc=float(values.mean()), scale=fallback_sd)
        return dens

    def log_density(self, x: np.ndarray, laplace_alpha: float = 0.0) -> Tuple[np.ndarray, np.ndarray]:
        """``(C, N)`` log densities at ``x`` and a mask of cells that were zero.

        With ``laplace_alpha > 0`` a zero-frequency nominal cell is replaced
        by the smoothed ``(count + a) / (n_c + a * L)``; the mask still marks it.
        """
        x = np.asarray(x, dtype=float).ravel()
        out = np.full((self.n_classes, len(self.kinds)), -np.inf)
        zero = np.zeros_like(out, dtype=bool)
        for c in range(self.n_classes):
            n_c = self._class_sizes[c]
            for j, kind in enumerate(self.kinds):
                if kind == FeatureKind.NOMINAL:
                    count = self._frequencies.get((c, j), {}).get(float(x[j]), 0)
                    if count == 0 or n_c == 0:
                        zero[c, j] = True
                        if laplace_alpha > 0:
                            levels = max(self._n_levels.get(j, 1), 1)
                            out[c, j] = np.log(laplace_alpha / (n_c + laplace_alpha * levels))
                        continue
                    out[c, j] = np.log(count / n_c)
                    continue
                model = self._kdes.get((c, j))
                if model is None:
                    zero[c, j] = True
                    continue
                value = float(np.ravel(model.logpdf(x[j]))[0])
                if not np.isfinite(value):
                    zero[c, j] = True
                out[c, j] = value
        return out, zero

    def density(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        log_d, zero = self.log_density(x)
        return np.exp(log_d), zero


@dataclass(frozen=True)
class PlattCalibration:
    A: float
    B: float

    def predict(self, scores: np.ndarray) -> np.ndarray:
        """P(label = 1 | score) = 1 / (1 + exp(A * score + B))."""
        return expit(-(self.A * np.asarray(scores, dtype=float) + self.B))


def platt_scale(scores: Sequence[float], labels: Sequence[int], l2: float = 1e-6) -> PlattCalibration:
    """Sigmoid calibration fit to Platt's regularized targets by maximum likelihood."""
    s = np.asarray(scores, dtype=float)
    t = np.asarray(labels, dtype=int)
    if len(s) != len(t):
        raise InputError(f"{len(s)} scores but {len(t)} labels")
    n_pos = int(np.sum(t == 1))
    n_neg = int(np.sum(t == 0))
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("Platt scaling needs both labels present")
    target = np.where(t == 1, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))

    def loss(params: np.ndarray) -> Tuple[float, np.ndarray]:
        a, b = params
        f = a * s + b
        # -log p = log(1 + e^f) for target 1 under p = 1 / (1 + e^f)
        nll = np.sum(target * np.logaddexp(0.0, f) + (1 - target) * np.logaddexp(0.0, -f))
        p = expit(-f)
        residual = target - p
        grad = np.array([np.sum(residual * s) + 2 * l2 * a, np.sum(residual)])
        return float(nll + l2 * a * a), grad

    prior = (n_neg + 1.0) / (n_pos + 1.0)
    result = minimize(loss, x0=np.array([0.0, np.log(prior)]), jac=True, method="L-BFGS-B")
    return PlattCalibration(A=float(result.x[0]), B=float(result.x[1]))
