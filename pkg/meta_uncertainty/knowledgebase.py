"""Meta-knowledge base of (meta-features, misclassified) records and its task-specific sampling."""
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field

from .core import LabelledDataset, Seed, derive_seed, make_rng, make_stratified_folds
from .errors import (
    DatasetFailure,
    EmptyPoolError,
    LengthMismatchError,
    MetaUncertaintyError,
    MissingArtifactError,
    VersionMismatchError,
)
from .learners import ClassifierSpec, train_tuned
from .metafeatures import META_FEATURES, MetaFeatureConfig, MetaFeatureContext, MetaFeatureVector, vectors_to_matrix

logger = logging.getLogger(__name__)

KB_FORMAT_VERSION = 1

Provenance = Literal["real", "synthetic"]
Realness = Literal["real", "synthetic", "both"]


class KBRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    meta: MetaFeatureVector
    misclassified: int = Field(ge=0, le=1)
    provenance: Provenance
    dataset_id: str
    model_kind: str
    instance_index: int = -1
    fold: int = -1


class SamplingPolicy(BaseModel):
    """``m`` records drawn uniformly from the nearest ``q`` percent, after a provenance filter."""

    m: int = Field(default=2000, ge=1)
    q: float = Field(default=100.0, gt=0, le=100)
    realness: Realness = "both"


class KnowledgeBaseConfig(BaseModel):
    k_folds: int = Field(default=5, ge=2)
    inner_folds: int = Field(default=5, ge=2)
    budget: int = Field(default=15, ge=1)
    balance_synthetic: bool = True
    n_jobs: int = 1


@dataclass
class KnowledgeBase:
    records: List[KBRecord] = field(default_factory=list)
    failures: List[Dict[str, str]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def matrix(self) -> np.ndarray:
        if not self.records:
            return np.empty((0, len(META_FEATURES)))
        return np.vstack([r.meta.as_array() for r in self.records])

    def flags(self) -> np.ndarray:
        return np.asarray([r.misclassified for r in self.records], dtype=int)

    def provenance(self) -> np.ndarray:
        return np.asarray([r.provenance for r in self.records], dtype=object)

    def misclassification_rate(self) -> float:
        return float(self.flags().mean()) if self.records else 0.0

    @property
    def summary(self) -> Dict[str, Any]:
        """Per-column means and population stdevs plus record counts."""
        M = self.matrix()
        columns = {
            name: {"mean": float(M[:, j].mean()), "std": float(M[:, j].std())} if len(M) else {"mean": 0.0, "std": 0.0}
            for j, name in enumerate(META_FEATURES)
        }
        prov = self.provenance()
        return {
            "n_records": len(self.records),
            "n_real": int(np.sum(prov == "real")),
            "n_synthetic": int(np.sum(prov == "synthetic")),
            "misclassification_rate": self.misclassification_rate(),
            "columns": columns,
        }

    def subset(self, indices: Sequence[int]) -> "KnowledgeBase":
        return KnowledgeBase(records=[self.records[int(i)] for i in indices], failures=list(self.failures))

    def filter(self, realness: Realness) -> "KnowledgeBase":
        if realness == "both":
            return KnowledgeBase(records=list(self.records), failures=list(self.failures))
        return KnowledgeBase(records=[r for r in self.records if r.provenance == realness], failures=list(self.failures))

    def for_model(self, model_kind: str) -> "KnowledgeBase":
        return KnowledgeBase(records=[r for r in self.records if r.model_kind == model_kind], failures=list(self.failures))

    def __add__(self, other: "KnowledgeBase") -> "KnowledgeBase":
        return KnowledgeBase(records=self.records + other.records, failures=self.failures + other.failures)

    @classmethod
    def from_arrays(
        cls,
        meta: np.ndarray,
        flags: Sequence[int],
        provenance: Provenance = "real",
        dataset_id: str = "inline",
        model_kind: str = "unknown",
    ) -> "KnowledgeBase":
        meta = np.atleast_2d(np.asarray(meta, dtype=float))
        if len(meta) != len(flags):
            raise LengthMismatchError(f"{len(meta)} meta-feature rows but {len(flags)} flags")
        return cls(
            records=[
                KBRecord(
                    meta=MetaFeatureVector.from_array(row),
                    misclassified=int(flag),
                    provenance=provenance,
                    dataset_id=dataset_id,
                    model_kind=model_kind,
                    instance_index=i,
                )
                for i, (row, flag) in enumerate(zip(meta, flags))
            ]
        )

    def to_jsonl(self) -> str:
        header = {
            "format_version": KB_FORMAT_VERSION,
            "kind": "knowledge_base",
            "summary": self.summary,
            "failures": self.failures,
        }
        lines = [json.dumps(header, sort_keys=True)]
        lines.extend(r.model_dump_json() for r in self.records)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str, source: str = "<memory>") -> "KnowledgeBase":
        lines = [line for line in text.splitlines() if line.strip()]
        if not lines:
            raise MissingArtifactError(f"Knowledge base {source} is empty")
        header = json.loads(lines[0])
        version = header.get("format_version")
        if header.get("kind") != "knowledge_base" or version != KB_FORMAT_VERSION:
            raise VersionMismatchError(
                f"Knowledge base {source} has format_version {version}, expected {KB_FORMAT_VERSION}"
            )
        return cls(
            records=[KBRecord.model_validate_json(line) for line in lines[1:]],
            failures=list(header.get("failures", [])),
        )


def save_kb(kb: KnowledgeBase, path: Union[str, Path]) -> Path:
    from .clients.artifact_store import atomic_write_text

    return atomic_write_text(Path(path), kb.to_jsonl())


def load_kb(path: Union[str, Path]) -> KnowledgeBase:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"Knowledge base not found: {path}")
    return KnowledgeBase.from_jsonl(path.read_text(encoding="utf-8"), source=str(path))


def label_misclassifications(preds: Sequence[Any], truth: Sequence[Any]) -> np.ndarray:
    """1 where the prediction differs from the true class, else 0."""
    preds = np.asarray(preds, dtype=object)
    truth = np.asarray(truth, dtype=object)
    if len(preds) != len(truth):
        raise LengthMismatchError(f"{len(preds)} predictions but {len(truth)} true labels")
    return (preds != truth).astype(int)


@dataclass
class FoldPass:
    """Validation-fold output of one cross-validated train/predict step."""

    test_indices: np.ndarray
    meta: List[MetaFeatureVector]
    predictions: np.ndarray
    probabilities: np.ndarray
    misclassified: np.ndarray

    def matrix(self) -> np.ndarray:
        return vectors_to_matrix(self.meta)


def fold_pass(
    ds: LabelledDataset,
    train_idx: np.ndarray,
    test_idx: np.ndarray,
    spec: ClassifierSpec,
    config: KnowledgeBaseConfig,
    meta_config: MetaFeatureConfig,
    seed: Seed,
) -> FoldPass:
    """Meta-features and misclassification flags of ``test_idx`` against ``train_idx``.

    The classifier is tuned and fitted on the training part only; its
    predictions are the ``c_pred`` of the evidence-conflict heuristic.
    """
    train = ds.subset(train_idx)
    context = MetaFeatureContext.fit(train, meta_config, seed)
    model = train_tuned(spec, train, config.inner_folds, config.budget, seed)
    X_test = ds.X[test_idx]
    proba = model.predict_proba(X_test)
    preds = np.argmax(proba, axis=1)
    return FoldPass(
        test_indices=np.asarray(test_idx, dtype=int),
        meta=context.compute_batch(X_test, c_preds=preds),
        predictions=preds,
        probabilities=proba,
        misclassified=label_misclassifications(preds, ds.y[test_idx]),
    )


def dataset_fold_passes(
    ds: LabelledDataset,
    spec: ClassifierSpec,
    config: KnowledgeBaseConfig,
    meta_config: MetaFeatureConfig,
    seed: Seed,
) -> Iterator[Tuple[int, FoldPass]]:
    """One fold_pass per stratified fold of ``ds``, every instance held out once."""
    plan = make_stratified_folds(ds, config.k_folds, derive_seed(seed, ds.id))
    for fold in range(plan.k):
        train_idx, test_idx = plan.split(fold)
        yield fold, fold_pass(ds, train_idx, test_idx, spec, config, meta_config, derive_seed(seed, ds.id, fold))


def _dataset_records(
    ds: LabelledDataset,
    spec: ClassifierSpec,
    config: KnowledgeBaseConfig,
    meta_config: MetaFeatureConfig,
    seed: Seed,
) -> List[KBRecord]:
    records: List[KBRecord] = []
    for fold, result in dataset_fold_passes(ds, spec, config, meta_config, seed):
        for index, vector, flag in zip(result.test_indices, result.meta, result.misclassified):
            records.append(
                KBRecord(
                    meta=vector,
                    misclassified=int(flag),
                    provenance=ds.provenance,
                    dataset_id=ds.id,
                    model_kind=spec.kind.value,
                    instance_index=int(index),
                    fold=fold,
                )
            )
    return records


def _safe_dataset_records(ds, spec, config, meta_config, seed) -> Tuple[List[KBRecord], Optional[DatasetFailure]]:
    try:
        return _dataset_records(ds, spec, config, meta_config, seed), None
    except (MetaUncertaintyError, ValueError) as e:
        failure = DatasetFailure(ds.id, str(e))
        logger.error(f"Knowledge base: dataset {failure}")
        return [], failure


def build_kb(
    datasets: Sequence[LabelledDataset],
    model_spec: ClassifierSpec,
    k_folds: int = 5,
    seed: Seed = 0,
    config: Optional[KnowledgeBaseConfig] = None,
    meta_config: Optional[MetaFeatureConfig] = None,
) -> KnowledgeBase:
    """Cross-validated meta-features and misclassification flags for every instance.

    Each outer fold's validation instances get meta-features against the
    training folds only and a prediction from a classifier tuned on those
    folds. Failing datasets are skipped and listed in ``failures``.
    """
    config = (config or KnowledgeBaseConfig()).model_copy(update={"k_folds": k_folds})
    meta_config = meta_config or MetaFeatureConfig()
    if config.n_jobs != 1 and len(datasets) > 1:
        results = Parallel(n_jobs=config.n_jobs)(
            delayed(_safe_dataset_records)(ds, model_spec, config, meta_config, seed) for ds in datasets
        )
    else:
        results = [_safe_dataset_records(ds, model_spec, config, meta_config, seed) for ds in datasets]

    records = [r for batch, _ in results for r in batch]
    records.sort(key=lambda r: (r.dataset_id, r.model_kind, r.instance_index))
    failures = [{"dataset_id": f.dataset_id, "reason": f.reason} for _, f in results if f is not None]
    kb = KnowledgeBase(records=records, failures=failures)
    logger.info(f"Knowledge base: {len(kb)} records from {len(datasets) - len(failures)}/{len(datasets)} datasets")
    return kb


def balance_synthetic(kb: KnowledgeBase, seed: Seed = 0) -> KnowledgeBase:
    """Uniformly truncate synthetic records to the real record count."""
    prov = kb.provenance()
    real = np.flatnonzero(prov == "real")
    synthetic = np.flatnonzero(prov == "synthetic")
    if len(real) == 0 or len(synthetic) <= len(real):
        return kb
    keep = make_rng(seed, "balance_synthetic").choice(synthetic, size=len(real), replace=False)
    return kb.subset(np.sort(np.concatenate([real, keep])))


def _standardize(M: np.ndarray, anchor: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    mu = M.mean(axis=0)
    sd = M.std(axis=0)
    safe = np.where(sd > 0, sd, 1.0)
    Z = np.where(sd > 0, (M - mu) / safe, 0.0)
    a = np.where(sd > 0, (anchor - mu) / safe, 0.0)
    return Z, a


def sample_kb(
    kb: KnowledgeBase,
    anchor: Union[MetaFeatureVector, np.ndarray],
    policy: Optional[SamplingPolicy] = None,
    seed: Seed = 0,
) -> KnowledgeBase:
    """Records drawn from the ``q`` percent of the filtered KB nearest to ``anchor``.

    Distances are Euclidean on z-scored meta-features; the pool holds
    ``ceil(q% * n)`` records and ``min(m, pool)`` of them are drawn without
    replacement.
    """
    policy = policy or SamplingPolicy()
    filtered = kb.filter(policy.realness)
    if len(filtered) == 0:
        raise EmptyPoolError(f"No '{policy.realness}' records to sample from a knowledge base of {len(kb)}")
    anchor = anchor.as_array() if isinstance(anchor, MetaFeatureVector) else np.asarray(anchor, dtype=float)
    Z, a = _standardize(filtered.matrix(), anchor)
    distances = np.linalg.norm(Z - a, axis=1)
    pool_size = min(len(filtered), max(1, math.ceil(policy.q / 100.0 * len(filtered) - 1e-9)))
    pool = np.argsort(distances, kind="stable")[:pool_size]
    if policy.m >= pool_size:
        chosen = pool
    else:
        chosen = make_rng(seed, "sample_kb").choice(pool, size=policy.m, replace=False)
    return filtered.subset(np.sort(chosen))


def policy_grid() -> List[SamplingPolicy]:
    """The 48 sampling policies: m x q x realness."""
    return [
        SamplingPolicy(m=m, q=q, realness=realness)
        for m in (100, 500, 1000, 2000)
        for q in (10.0, 25.0, 50.0, 100.0)
        for realness in ("real", "synthetic", "both")
    ]
