"""Weighted fuzzy c-means uncertainty estimator and its nested cross-validation."""
import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import BaseModel, Field, model_validator
from scipy.special import softmax
from sklearn.cluster import kmeans_plusplus

from .bayesopt import ParamKind, ParamSpec, SearchSpace, bayes_maximize
from .core import LabelledDataset, Seed, derive_seed, make_stratified_folds
from .errors import (
    DegenerateInputError,
    FoldProcessingError,
    InputError,
    LengthMismatchError,
    VersionMismatchError,
)
from .evalstats import OR_CAP, auprc, auroc, univariate_or
from .knowledgebase import (
    FoldPass,
    KBRecord,
    KnowledgeBase,
    KnowledgeBaseConfig,
    SamplingPolicy,
    fold_pass,
    sample_kb,
)
from .learners import ClassifierSpec, confidence_margin
from .metafeatures import META_FEATURES, MetaFeatureConfig, MetaFeatureVector

logger = logging.getLogger(__name__)

FCM_FORMAT_VERSION = 1
OL_COLUMN = META_FEATURES.index("ol")

MetaInput = Union[MetaFeatureVector, Sequence[float], np.ndarray]


class EstimatorConfig(BaseModel):
    n_clusters_range: Tuple[int, int] = (2, 15)
    weight_range: Tuple[float, float] = (0.0, 1.0)
    bo_budget: int = Field(default=30, ge=1)
    bo_initial: int = Field(default=10, ge=1)
    fuzzifier: float = Field(default=2.0, gt=1.0)
    tol: float = Field(default=1e-5, gt=0)
    max_iter: int = Field(default=300, ge=1)
    outer_folds: int = Field(default=5, ge=2)
    inner_folds: int = Field(default=5, ge=2)
    restarts: int = Field(default=5, ge=1)
    or_cap: float = Field(default=OR_CAP, gt=1)
    sampling: SamplingPolicy = Field(default_factory=SamplingPolicy)
    n_jobs: int = 1

    @model_validator(mode="after")
    def _check_ranges(self) -> "EstimatorConfig":
        low, high = self.n_clusters_range
        if not 1 <= low <= high:
            raise ValueError(f"n_clusters_range must satisfy 1 <= low <= high, got {self.n_clusters_range}")
        w_low, w_high = self.weight_range
        if not 0 <= w_low < w_high:
            raise ValueError(f"weight_range must satisfy 0 <= low < high, got {self.weight_range}")
        return self


def cluster_space(meta: np.ndarray) -> np.ndarray:
    """Meta-feature rows with outlierness squashed to ``ol / (1 + ol)`` so every column lies in [0, 1]."""
    X = np.array(np.atleast_2d(meta), dtype=float)
    if X.shape[1] != len(META_FEATURES):
        raise InputError(f"Expected {len(META_FEATURES)} meta-feature columns, got {X.shape[1]}")
    ol = np.maximum(X[:, OL_COLUMN], 0.0)
    X[:, OL_COLUMN] = ol / (1.0 + ol)
    return X


def meta_matrix(meta: Union[MetaInput, Sequence[MetaFeatureVector], KnowledgeBase]) -> np.ndarray:
    if isinstance(meta, KnowledgeBase):
        return meta.matrix()
    if isinstance(meta, MetaFeatureVector):
        return meta.as_array()[None, :]
    if isinstance(meta, (list, tuple)) and meta and isinstance(meta[0], MetaFeatureVector):
        return np.vstack([m.as_array() for m in meta])
    return np.atleast_2d(np.asarray(meta, dtype=float))


def membership_matrix(X: np.ndarray, centers: np.ndarray, fuzzifier: float) -> np.ndarray:
    """FCM memberships of each row of ``X``; a row on a center is one-hot (split among coincident centers)."""
    d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    U = np.empty_like(d2)
    on_center = d2 <= 0.0
    hit = on_center.any(axis=1)
    if hit.any():
        U[hit] = on_center[hit] / on_center[hit].sum(axis=1, keepdims=True)
    rest = ~hit
    if rest.any():
        U[rest] = softmax(-np.log(d2[rest]) / (fuzzifier - 1.0), axis=1)
    return U


def _objective(X: np.ndarray, centers: np.ndarray, U: np.ndarray, fuzzifier: float) -> float:
    d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return float(((U ** fuzzifier) * d2).sum())


@dataclass(frozen=True)
class Membership:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise InputError("Membership needs a non-empty vector")
        if np.any(v < -1e-12) or abs(v.sum() - 1.0) > 1e-9:
            raise InputError(f"Memberships must be nonnegative and sum to 1, got sum {v.sum()}")


@dataclass(frozen=True)
class FuzzyClusterModel:
    """Fitted clusters in weighted meta-feature space with per-cluster misclassification rates."""

    centers: np.ndarray
    fuzzifier: float
    weights: np.ndarray
    rates: np.ndarray
    global_rate: float
    objective_history: Tuple[float, ...] = ()
    flags: Tuple[str, ...] = ()
    n_records: int = 0

    def __post_init__(self):
        centers = np.atleast_2d(np.array(self.centers, dtype=float))
        weights = np.array(self.weights, dtype=float)
        rates = np.array(self.rates, dtype=float)
        if centers.shape[0] < 1 or centers.shape[1] != len(META_FEATURES):
            raise InputError(f"Centers must be n_clusters x {len(META_FEATURES)}, got {centers.shape}")
        if weights.shape != (len(META_FEATURES),) or np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise InputError("Weights must be seven finite nonnegative reals")
        if rates.shape != (centers.shape[0],) or np.any((rates < 0) | (rates > 1)):
            raise InputError("Rates must be one value in [0, 1] per cluster")
        if not np.all(np.isfinite(centers)):
            raise InputError("Cluster centers must be finite")
        if self.fuzzifier <= 1:
            raise InputError(f"Fuzzifier must exceed 1, got {self.fuzzifier}")
        for name, value in (("centers", centers), ("weights", weights), ("rates", rates)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n_clusters(self) -> int:
        return int(self.centers.shape[0])

    def weighted(self, meta: MetaInput) -> np.ndarray:
        return cluster_space(meta_matrix(meta)) * self.weights

    def membership_matrix(self, meta: MetaInput) -> np.ndarray:
        return membership_matrix(self.weighted(meta), self.centers, self.fuzzifier)

    def estimate(self, meta: MetaInput) -> np.ndarray:
        U = self.membership_matrix(meta)
        return np.clip(U @ self.rates / U.sum(axis=1), 0.0, 1.0)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "format_version": FCM_FORMAT_VERSION,
            "kind": "fuzzy_cluster_model",
            "n_clusters": self.n_clusters,
            "fuzzifier": self.fuzzifier,
            "meta_features": list(META_FEATURES),
            "weights": self.weights.tolist(),
            "centers": self.centers.tolist(),
            "rates": self.rates.tolist(),
            "global_rate": self.global_rate,
            "objective_history": list(self.objective_history),
            "flags": list(self.flags),
            "n_records": self.n_records,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FuzzyClusterModel":
        version = data.get("format_version")
        if data.get("kind") != "fuzzy_cluster_model" or version != FCM_FORMAT_VERSION:
            raise VersionMismatchError(f"Cluster model has format_version {version}, expected {FCM_FORMAT_VERSION}")
        return cls(
            centers=np.asarray(data["centers"], dtype=float),
            fuzzifier=float(data["fuzzifier"]),
            weights=np.asarray(data["weights"], dtype=float),
            rates=np.asarray(data["rates"], dtype=float),
            global_rate=float(data["global_rate"]),
            objective_history=tuple(data.get("objective_history", ())),
            flags=tuple(data.get("flags", ())),
            n_records=int(data.get("n_records", 0)),
        )

    @classmethod
    def from_json(cls, text: str) -> "FuzzyClusterModel":
        return cls.from_dict(json.loads(text))


def misclassification_rate(tp: int, fp: int, tn: int, fn: int) -> float:
    """``1 - (TP + TN) / (TP + FP + TN + FN)``."""
    counts = (tp, fp, tn, fn)
    if any(c < 0 for c in counts):
        raise InputError(f"Confusion counts must be nonnegative, got {counts}")
    total = sum(counts)
    if total == 0:
        raise DegenerateInputError("Misclassification rate of an empty confusion matrix")
    return 1.0 - (tp + tn) / total


def _fcm_restart(X: np.ndarray, n_clusters: int, config: EstimatorConfig, seed: int) -> Tuple[np.ndarray, List[float]]:
    centers, _ = kmeans_plusplus(X, n_clusters, random_state=seed)
    span = float(np.ptp(X, axis=0).max()) if len(X) else 0.0
    threshold = config.tol * max(span, 1e-12)
    history: List[float] = []
    m = config.fuzzifier
    for _ in range(config.max_iter):
        U = membership_matrix(X, centers, m)
        W = U ** m
        mass = W.sum(axis=0)
        updated = np.where(mass[:, None] > 0, (W.T @ X) / np.where(mass > 0, mass, 1.0)[:, None], centers)
        history.append(_objective(X, updated, U, m))
        shift = float(np.abs(updated - centers).max())
        centers = updated
        if shift < threshold:
            break
    return centers, history


def fcm_fit(
    kb: KnowledgeBase,
    weights: Sequence[float],
    n_clusters: int,
    config: Optional[EstimatorConfig] = None,
    seed: Seed = 0,
) -> FuzzyClusterModel:
    """Fuzzy c-means on weight-scaled KB meta-features with per-cluster misclassification rates.

    Centers start from k-means++ seeding; ``config.restarts`` runs are made
    and the one with the lowest final objective is kept. Each record counts
    toward the cluster of its largest membership; an empty cluster takes the
    global KB rate and the model is flagged ``empty_cluster``.
    """
    config = config or EstimatorConfig()
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (len(META_FEATURES),) or np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise InputError("Weights must be seven finite nonnegative reals")
    if not np.any(weights > 0):
        raise DegenerateInputError("All meta-feature weights are zero")
    if n_clusters < 1:
        raise InputError(f"n_clusters must be at least 1, got {n_clusters}")
    if len(kb) < n_clusters:
        raise DegenerateInputError(f"{len(kb)} records cannot form {n_clusters} clusters")

    X = cluster_space(kb.matrix()) * weights
    flags = kb.flags()
    global_rate = float(flags.mean())

    seeds = [derive_seed(seed, "fcm", r) for r in range(config.restarts)]
    if config.n_jobs != 1 and config.restarts > 1:
        runs = Parallel(n_jobs=config.n_jobs)(delayed(_fcm_restart)(X, n_clusters, config, s) for s in seeds)
    else:
        runs = [_fcm_restart(X, n_clusters, config, s) for s in seeds]
    best = min(range(len(runs)), key=lambda r: runs[r][1][-1] if runs[r][1] else np.inf)
    centers, history = runs[best]

    hard = np.argmax(membership_matrix(X, centers, config.fuzzifier), axis=1)
    rates = np.full(n_clusters, global_rate)
    model_flags = []
    for j in range(n_clusters):
        assigned = hard == j
        if assigned.any():
            rates[j] = flags[assigned].mean()
        else:
            model_flags.append("empty_cluster")
    if model_flags:
        logger.warning(f"FCM: {model_flags.count('empty_cluster')} empty cluster(s) took the global rate {global_rate:.4f}")

    return FuzzyClusterModel(
        centers=centers,
        fuzzifier=config.fuzzifier,
        weights=weights,
        rates=rates,
        global_rate=global_rate,
        objective_history=tuple(float(v) for v in history),
        flags=tuple(sorted(set(model_flags))),
        n_records=len(kb),
    )


def memberships(model: FuzzyClusterModel, meta: MetaInput) -> Membership:
    return Membership(values=model.membership_matrix(meta)[0])


def defuzzify(membership: Union[Membership, Sequence[float]], rates: Sequence[float]) -> float:
    """Membership-weighted average of the cluster rates."""
    mu = np.asarray(membership.values if isinstance(membership, Membership) else membership, dtype=float)
    rates = np.asarray(rates, dtype=float)
    if mu.shape != rates.shape:
        raise LengthMismatchError(f"{mu.size} memberships but {rates.size} rates")
    total = mu.sum()
    if total <= 0:
        raise DegenerateInputError("All memberships are zero")
    return float(mu @ rates / total)


def estimate_uncertainty(model: FuzzyClusterModel, meta: MetaInput) -> float:
    return defuzzify(memberships(model, meta), model.rates)


def estimate_batch(model: FuzzyClusterModel, meta: Union[np.ndarray, Sequence[MetaFeatureVector], KnowledgeBase]) -> np.ndarray:
    return model.estimate(meta_matrix(meta))


def fitness(model: FuzzyClusterModel, kb_val: KnowledgeBase, or_cap: float = OR_CAP) -> float:
    """OR x AUROC x AUPRC of the estimated uncertainty as a detector of misclassified records."""
    u = model.estimate(kb_val.matrix())
    f = kb_val.flags()
    return univariate_or(u, f, or_cap).odds_ratio * auroc(u, f) * auprc(u, f).auprc


@dataclass
class ClusterConfiguration:
    weights: np.ndarray
    n_clusters: int
    score: float
    n_evaluations: int = 0
    flags: Tuple[str, ...] = ()

    def __iter__(self):
        return iter((self.weights, self.n_clusters))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "weights": dict(zip(META_FEATURES, (float(w) for w in self.weights))),
            "n_clusters": self.n_clusters,
            "score": self.score,
            "n_evaluations": self.n_evaluations,
            "flags": list(self.flags),
        }


def _search_space(config: EstimatorConfig, max_clusters: int) -> SearchSpace:
    low, high = config.n_clusters_range
    high = max(1, min(high, max_clusters))
    low = min(low, high)
    params = [ParamSpec(f"w_{name}", ParamKind.REAL, *config.weight_range) for name in META_FEATURES]
    params.append(ParamSpec("n_clusters", ParamKind.INTEGER, low, high))
    return SearchSpace(tuple(params))


def optimize_cv(
    splits: Sequence[Tuple[KnowledgeBase, KnowledgeBase]],
    config: Optional[EstimatorConfig] = None,
    seed: Seed = 0,
) -> ClusterConfiguration:
    """Weights and cluster count maximizing the mean fitness over ``(train, validation)`` splits.

    Raises:
        DegenerateInputError: A validation split lacks misclassified or correct records
    """
    config = config or EstimatorConfig()
    if not splits:
        raise InputError("No splits to optimize over")
    for n, (train, val) in enumerate(splits):
        flags = val.flags()
        if flags.size == 0 or flags.min() == flags.max():
            raise DegenerateInputError(f"Validation split {n} needs both misclassified and correct records")
        if len(train) == 0:
            raise DegenerateInputError(f"Training split {n} is empty")

    space = _search_space(config, min(len(train) for train, _ in splits))

    def objective(params: Dict[str, Any]) -> float:
        weights = np.asarray([params[f"w_{name}"] for name in META_FEATURES])
        if not np.any(weights > 0):
            return float("nan")
        scores = []
        for n, (train, val) in enumerate(splits):
            try:
                model = fcm_fit(train, weights, params["n_clusters"], config, derive_seed(seed, "split", n))
            except DegenerateInputError:
                return float("nan")
            scores.append(fitness(model, val, config.or_cap))
        return float(np.mean(scores))

    result = bayes_maximize(
        objective, space, budget=config.bo_budget, seed=derive_seed(seed, "optimize"), n_initial=config.bo_initial
    )
    weights = np.asarray([result.best_params[f"w_{name}"] for name in META_FEATURES])
    flags: Tuple[str, ...] = ()
    if not np.isfinite(result.best_score):
        weights = np.ones(len(META_FEATURES))
        flags = ("untuned",)
    return ClusterConfiguration(
        weights=weights,
        n_clusters=int(result.best_params["n_clusters"]),
        score=float(result.best_score),
        n_evaluations=result.n_evaluations,
        flags=flags,
    )


def optimize(
    kb_train: KnowledgeBase,
    kb_val: KnowledgeBase,
    config: Optional[EstimatorConfig] = None,
    seed: Seed = 0,
) -> ClusterConfiguration:
    return optimize_cv([(kb_train, kb_val)], config, seed)


@dataclass
class NestedCVResult:
    """Per-instance outputs of a nested cross-validated run, aligned with the dataset rows."""

    dataset_id: str
    model_kind: str
    uncertainty: np.ndarray
    misclassified: np.ndarray
    meta: np.ndarray
    predictions: np.ndarray
    confidence: np.ndarray
    folds: np.ndarray
    fold_configs: List[Dict[str, Any]] = field(default_factory=list)
    final_model: Optional[FuzzyClusterModel] = None
    background: Optional[KnowledgeBase] = None

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(
            {
                "instance": np.arange(len(self.uncertainty)),
                "fold": self.folds,
                "prediction": self.predictions,
                "misclassified": self.misclassified,
                "uncertainty": self.uncertainty,
                "confidence": self.confidence,
            }
        )
        for j, name in enumerate(META_FEATURES):
            frame[name] = self.meta[:, j]
        return frame

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, dataset_id: str, model_kind: str) -> "NestedCVResult":
        missing = [c for c in ("fold", "prediction", "misclassified", "uncertainty", "confidence", *META_FEATURES) if c not in frame.columns]
        if missing:
            raise InputError(f"Result table for {dataset_id} lacks columns {missing}")
        frame = frame.sort_values("instance", kind="stable") if "instance" in frame.columns else frame
        return cls(
            dataset_id=dataset_id,
            model_kind=model_kind,
            uncertainty=frame["uncertainty"].to_numpy(dtype=float),
            misclassified=frame["misclassified"].to_numpy(dtype=int),
            meta=frame[list(META_FEATURES)].to_numpy(dtype=float),
            predictions=frame["prediction"].to_numpy(dtype=int),
            confidence=frame["confidence"].to_numpy(dtype=float),
            folds=frame["fold"].to_numpy(dtype=int),
        )

    def records(self, provenance: str = "real") -> KnowledgeBase:
        return KnowledgeBase(records=_records(self.meta, self.misclassified, self.dataset_id, self.model_kind, provenance, self.folds))


def _records(meta, flags, dataset_id, model_kind, provenance, folds, indices=None) -> List[KBRecord]:
    indices = np.arange(len(flags)) if indices is None else indices
    return [
        KBRecord(
            meta=MetaFeatureVector.from_array(row),
            misclassified=int(flag),
            provenance=provenance,
            dataset_id=dataset_id,
            model_kind=model_kind,
            instance_index=int(index),
            fold=int(fold),
        )
        for row, flag, index, fold in zip(np.atleast_2d(meta), flags, indices, folds)
    ]


def _pass_kb(ds: LabelledDataset, spec: ClassifierSpec, result: FoldPass, fold: int) -> KnowledgeBase:
    return KnowledgeBase(
        records=[
            KBRecord(
                meta=vector,
                misclassified=int(flag),
                provenance=ds.provenance,
                dataset_id=ds.id,
                model_kind=spec.kind.value,
                instance_index=int(index),
                fold=fold,
            )
            for index, vector, flag in zip(result.test_indices, result.meta, result.misclassified)
        ]
    )


def _kb_sample(kb: KnowledgeBase, anchor: np.ndarray, policy: SamplingPolicy, seed: Seed) -> KnowledgeBase:
    if len(kb) == 0:
        return KnowledgeBase()
    return sample_kb(kb, anchor, policy, seed)


def _both_flags(kb: KnowledgeBase) -> bool:
    flags = kb.flags()
    return flags.size > 0 and flags.min() != flags.max()


def _tune(
    inner: Dict[int, KnowledgeBase],
    background: KnowledgeBase,
    config: EstimatorConfig,
    seed: Seed,
) -> ClusterConfiguration:
    splits = []
    for j, val in inner.items():
        train = background
        for other, part in inner.items():
            if other != j:
                train = train + part
        if _both_flags(val) and len(train):
            splits.append((train, val))
    if not splits:
        pooled = KnowledgeBase()
        for part in inner.values():
            pooled = pooled + part
        if _both_flags(pooled) and len(background):
            splits = [(background, pooled)]
    if not splits:
        low = config.n_clusters_range[0]
        logger.warning("Clustering system left untuned: no validation split holds both outcomes")
        return ClusterConfiguration(np.ones(len(META_FEATURES)), low, float("nan"), flags=("untuned",))
    return optimize_cv(splits, config, seed)


def _outer_fold(
    ds: LabelledDataset,
    plan,
    fold: int,
    kb: KnowledgeBase,
    spec: ClassifierSpec,
    config: EstimatorConfig,
    kb_config: KnowledgeBaseConfig,
    meta_config: MetaFeatureConfig,
    seed: Seed,
) -> Dict[str, Any]:
    fold_seed = derive_seed(seed, ds.id, "outer", fold)
    train_idx, test_idx = plan.split(fold)
    test = fold_pass(ds, train_idx, test_idx, spec, kb_config, meta_config, fold_seed)

    inner: Dict[int, KnowledgeBase] = {}
    for j in range(plan.k):
        if j == fold:
            continue
        inner_seed = derive_seed(fold_seed, "inner", j)
        result = fold_pass(ds, plan.train_indices(fold, j), plan.test_indices(j), spec, kb_config, meta_config, inner_seed)
        inner[j] = _pass_kb(ds, spec, result, j)

    background = _kb_sample(kb, test.matrix().mean(axis=0), config.sampling, derive_seed(fold_seed, "sample"))
    chosen = _tune(inner, background, config, derive_seed(fold_seed, "tune"))

    training = background
    for part in inner.values():
        training = training + part
    n_clusters = min(chosen.n_clusters, len(training))
    model = fcm_fit(training, chosen.weights, n_clusters, config, derive_seed(fold_seed, "refit"))
    return {
        "fold": fold,
        "test": test,
        "uncertainty": model.estimate(test.matrix()),
        "config": {"fold": fold, **chosen.to_dict(), "n_background": len(background), "n_training": len(training)},
        "chosen": chosen,
    }


def _safe_outer_fold(*args, **kwargs) -> Dict[str, Any]:
    fold = args[2]
    try:
        return _outer_fold(*args, **kwargs)
    except FoldProcessingError:
        raise
    except Exception as e:
        raise FoldProcessingError(str(e), fold=fold) from e


def nested_cv_run(
    ds: LabelledDataset,
    kb: Optional[KnowledgeBase],
    model_spec: ClassifierSpec,
    config: Optional[EstimatorConfig] = None,
    seed: Seed = 0,
    kb_config: Optional[KnowledgeBaseConfig] = None,
    meta_config: Optional[MetaFeatureConfig] = None,
) -> NestedCVResult:
    """Estimated uncertainty and misclassification flag for every instance of ``ds``.

    For each outer fold the classifier is tuned on the remaining folds and
    predicts the held-out fold, whose meta-features are computed against
    the same training folds. Every inner fold is predicted the same way from
    the folds left after removing it and the outer fold; those records plus
    a KB sample anchored at the outer fold's meta-feature centroid tune the
    clustering system, which is then refit on all of them and applied to
    the held-out fold.

    Args:
        ds: Target dataset
        kb: Knowledge base of other tasks (may be empty)
        model_spec: Classifier family and search space
        config: Clustering-system settings
        seed: Root seed
        kb_config: Classifier tuning folds and budget
        meta_config: Meta-feature settings

    Returns:
        NestedCVResult aligned with the rows of ``ds``

    Raises:
        FoldProcessingError: An outer fold could not be processed
    """
    config = config or EstimatorConfig()
    kb_config = (kb_config or KnowledgeBaseConfig()).model_copy(update={"inner_folds": config.inner_folds})
    meta_config = meta_config or MetaFeatureConfig()
    kb = kb if kb is not None else KnowledgeBase()
    plan = make_stratified_folds(ds, config.outer_folds, derive_seed(seed, ds.id, "outer"))

    args = [(ds, plan, fold, kb, model_spec, config, kb_config, meta_config, seed) for fold in range(plan.k)]
    if config.n_jobs != 1:
        outcomes = Parallel(n_jobs=config.n_jobs)(delayed(_safe_outer_fold)(*a) for a in args)
    else:
        outcomes = [_safe_outer_fold(*a) for a in args]

    n = ds.n_instances
    uncertainty = np.zeros(n)
    misclassified = np.zeros(n, dtype=int)
    meta = np.zeros((n, len(META_FEATURES)))
    predictions = np.zeros(n, dtype=int)
    confidence = np.zeros(n)
    folds = plan.assignments.copy()
    for outcome in outcomes:
        test: FoldPass = outcome["test"]
        idx = test.test_indices
        uncertainty[idx] = outcome["uncertainty"]
        misclassified[idx] = test.misclassified
        meta[idx] = test.matrix()
        predictions[idx] = test.predictions
        confidence[idx] = confidence_margin(test.probabilities)
        logger.info(
            f"{ds.id}: outer fold {outcome['fold']} tuned to {outcome['chosen'].n_clusters} clusters "
            f"(inner score {outcome['chosen'].score:.4f})"
        )

    result = NestedCVResult(
        dataset_id=ds.id,
        model_kind=model_spec.kind.value,
        uncertainty=uncertainty,
        misclassified=misclassified,
        meta=meta,
        predictions=predictions,
        confidence=confidence,
        folds=folds,
        fold_configs=[o["config"] for o in outcomes],
    )
    result.final_model, result.background = _final_model(result, kb, outcomes, config, seed)
    return result


def _final_model(
    result: NestedCVResult,
    kb: KnowledgeBase,
    outcomes: List[Dict[str, Any]],
    config: EstimatorConfig,
    seed: Seed,
) -> Tuple[FuzzyClusterModel, KnowledgeBase]:
    """Refit the best-scoring fold configuration on every target record plus a KB sample."""
    def rank(outcome: Dict[str, Any]) -> Tuple[float, int]:
        score = outcome["chosen"].score
        return (score if np.isfinite(score) else -np.inf, -outcome["fold"])

    chosen: ClusterConfiguration = max(outcomes, key=rank)["chosen"]
    background = _kb_sample(kb, result.meta.mean(axis=0), config.sampling, derive_seed(seed, result.dataset_id, "final_sample"))
    training = background + result.records()
    model = fcm_fit(training, chosen.weights, min(chosen.n_clusters, len(training)), config, derive_seed(seed, result.dataset_id, "final"))
    return model, training
