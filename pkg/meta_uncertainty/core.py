"""Dataset types, fold planning, seeding and shared numeric primitives."""
import json
import logging
import zlib
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from sklearn.compose import ColumnTransformer
from sklearn.model_selection import StratifiedKFold
from sklearn.preprocessing import MinMaxScaler, OneHotEncoder

from .errors import ClassTooSmallError, InputError, SchemaMismatchError, SingleClassError

logger = logging.getLogger(__name__)

Seed = int


class FeatureKind(str, Enum):
    CONTINUOUS = "continuous"
    ORDINAL = "ordinal"
    NOMINAL = "nominal"


class FeatureSpec(BaseModel):
    """One schema column. ``levels`` fixes the order of ordinal categories."""

    model_config = ConfigDict(frozen=True)

    name: str
    kind: FeatureKind
    levels: Optional[Tuple[str, ...]] = None


class DatasetSchema(BaseModel):
    model_config = ConfigDict(frozen=True)

    features: Tuple[FeatureSpec, ...]
    class_column: str

    @model_validator(mode="after")
    def _check_names(self) -> "DatasetSchema":
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise ValueError(f"Duplicate feature names in schema: {names}")
        if self.class_column in names:
            raise ValueError(f"Class column '{self.class_column}' is also listed as a feature")
        return self

    @property
    def feature_names(self) -> List[str]:
        return [f.name for f in self.features]

    @property
    def feature_kinds(self) -> List[FeatureKind]:
        return [f.kind for f in self.features]

    @classmethod
    def from_json(cls, path: Union[str, Path]) -> "DatasetSchema":
        """Load a schema document ``{features: [{name, kind}], class_column}``."""
        path = Path(path)
        if not path.exists():
            raise SchemaMismatchError(f"Schema file not found: {path}")
        try:
            return cls.model_validate(json.loads(path.read_text(encoding="utf-8")))
        except ValueError as e:
            raise SchemaMismatchError(f"Invalid schema {path}: {e}")

    @classmethod
    def continuous(cls, n_features: int, class_column: str = "class") -> "DatasetSchema":
        """All-continuous schema with columns ``f0..f{n-1}``."""
        return cls(
            features=tuple(FeatureSpec(name=f"f{i}", kind=FeatureKind.CONTINUOUS) for i in range(n_features)),
            class_column=class_column,
        )


@dataclass(frozen=True)
class LabelledDataset:
    """Typed instances and labels.

    ``X`` holds reals for continuous columns, category codes for nominal
    columns and ordered integers for ordinal columns. ``y`` indexes into
    ``classes``, the full (sorted) class universe.
    """

    schema: DatasetSchema
    X: np.ndarray
    y: np.ndarray
    classes: Tuple[str, ...]
    id: str = "dataset"
    provenance: str = "real"
    categories: Dict[str, Tuple[str, ...]] = field(default_factory=dict)
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=int)
        if X.ndim != 2:
            raise InputError(f"{self.id}: feature matrix must be 2-D, got shape {X.shape}")
        if len(y) != len(X):
            raise InputError(f"{self.id}: {len(X)} rows but {len(y)} labels")
        if X.shape[1] != len(self.schema.features):
            raise SchemaMismatchError(
                f"{self.id}: {X.shape[1]} feature columns but schema lists {len(self.schema.features)}"
            )
        if not np.all(np.isfinite(X)):
            raise InputError(f"{self.id}: feature matrix contains missing or non-finite values")
        if len(self.classes) < 2:
            raise SingleClassError(f"{self.id}: class universe needs at least 2 classes, got {list(self.classes)}")
        if len(y) and (y.min() < 0 or y.max() >= len(self.classes)):
            raise InputError(f"{self.id}: label codes outside the class universe")
        if len(y) < len(self.classes):
            raise InputError(f"{self.id}: {len(y)} instances cannot cover {len(self.classes)} classes")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n_instances(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def labels(self) -> np.ndarray:
        return np.asarray(self.classes, dtype=object)[self.y]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.n_classes)

    def subset(self, indices: Sequence[int], dataset_id: Optional[str] = None) -> "LabelledDataset":
        """Rows ``indices`` with the same schema and class universe."""
        idx = np.asarray(indices, dtype=int)
        return LabelledDataset(
            schema=self.schema,
            X=self.X[idx],
            y=self.y[idx],
            classes=self.classes,
            id=dataset_id or self.id,
            provenance=self.provenance,
            categories=self.categories,
            metadata=self.metadata,
        )

    @classmethod
    def from_arrays(
        cls,
        X: np.ndarray,
        labels: Sequence[Any],
        dataset_id: str = "dataset",
        provenance: str = "real",
        schema: Optional[DatasetSchema] = None,
        classes: Optional[Sequence[Any]] = None,
        metadata: Optional[Dict[str, Any]] = None,
    ) -> "LabelledDataset":
        """Build a dataset from raw arrays; labels are stringified."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        str_labels = np.asarray([str(v) for v in labels], dtype=object)
        universe = tuple(sorted(str(c) for c in classes)) if classes is not None else tuple(sorted(set(str_labels)))
        if classes is None and len(universe) < 2:
            raise SingleClassError(f"{dataset_id}: all labels are '{universe[0] if universe else ''}'")
        lookup = {c: i for i, c in enumerate(universe)}
        try:
            y = np.asarray([lookup[v] for v in str_labels], dtype=int)
        except KeyError as e:
            raise InputError(f"{dataset_id}: label {e} not in class universe {list(universe)}")
        return cls(
            schema=schema or DatasetSchema.continuous(X.shape[1]),
            X=X,
            y=y,
            classes=universe,
            id=dataset_id,
            provenance=provenance,
            metadata=dict(metadata or {}),
        )


def load_dataset(
    path: Union[str, Path],
    schema: DatasetSchema,
    missing_policy: str = "reject",
    dataset_id: Optional[str] = None,
    provenance: str = "real",
) -> LabelledDataset:
    """Parse a CSV file against ``schema``. See ``DatasetReader`` for the rules."""
    from .clients.dataset_reader import DatasetReader

    reader = DatasetReader(path, schema, missing_policy=missing_policy)
    return reader.read(dataset_id=dataset_id, provenance=provenance)


def derive_seed(seed: Seed, *keys: Union[int, str]) -> int:
    """Child seed in [0, 2**32) for ``keys`` under ``seed``."""
    spawn_key = tuple(k if isinstance(k, int) else zlib.crc32(str(k).encode("utf-8")) for k in keys)
    sequence = np.random.SeedSequence(int(seed), spawn_key=spawn_key)
    return int(sequence.generate_state(1)[0])


def make_rng(seed: Seed, *keys: Union[int, str]) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *keys))


def zscore(values: Sequence[float]) -> Tuple[np.ndarray, bool]:
    """Population z-scores; returns ``(scores, degenerate)``.

    Zero variance (or fewer than two values) yields all zeros with
    ``degenerate=True``.
    """
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return np.zeros_like(v), True
    sd = v.std(ddof=0)
    if not np.isfinite(sd) or sd <= 1e-12 * max(1.0, float(np.abs(v).max())):
        return np.zeros_like(v), True
    return (v - v.mean()) / sd, False


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignments: np.ndarray
    seed: Seed

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, *excluded: int) -> np.ndarray:
        return np.flatnonzero(~np.isin(self.assignments, excluded))

    def split(self, fold: int) -> Tuple[np.ndarray, np.ndarray]:
        return self.train_indices(fold), self.test_indices(fold)


def make_stratified_folds(ds: LabelledDataset, k: int, seed: Seed) -> FoldPlan:
    """Deterministic stratified assignment of every instance to one of ``k`` folds."""
    if k < 2:
        raise InputError(f"Fold count must be at least 2, got {k}")
    counts = ds.class_counts()
    for label, count in zip(ds.classes, counts):
        if 0 < count < k:
            raise ClassTooSmallError(
                f"{ds.id}: class '{label}' has {count} members, fewer than {k} folds", class_label=label
            )
    splitter = StratifiedKFold(n_splits=k, shuffle=True, random_state=derive_seed(seed, "folds"))
    assignments = np.empty(ds.n_instances, dtype=int)
    for fold, (_, test_idx) in enumerate(splitter.split(ds.X, ds.y)):
        assignments[test_idx] = fold
    assignments.setflags(write=False)
    return FoldPlan(k=k, assignments=assignments, seed=seed)


class FeatureScaler:
    """Distance space: min-max for continuous/ordinal, one-hot for nominal.

    Fitted on a reference set; queries outside the reference range map
    outside [0, 1].
    """

    def __init__(self, schema: DatasetSchema, categories: Optional[Dict[str, Tuple[str, ...]]] = None):
        self.schema = schema
        self.categories = categories or {}
        kinds = schema.feature_kinds
        self.numeric_columns = [i for i, kind in enumerate(kinds) if kind != FeatureKind.NOMINAL]
        self.nominal_columns = [i for i, kind in enumerate(kinds) if kind == FeatureKind.NOMINAL]
        self._transformer: Optional[ColumnTransformer] = None

    def fit(self, X: np.ndarray) -> "FeatureScaler":
        transformers = []
        if self.numeric_columns:
            transformers.append(("numeric", MinMaxScaler(), self.numeric_columns))
        if self.nominal_columns:
            names = self.schema.feature_names
            levels = [
                np.arange(max(len(self.categories.get(names[i], ())), int(np.max(X[:, i], initial=0)) + 1), dtype=float)
                for i in self.nominal_columns
            ]
            encoder = OneHotEncoder(categories=levels, handle_unknown="ignore", sparse_output=False)
            transformers.append(("nominal", encoder, self.nominal_columns))
        self._transformer = ColumnTransformer(transformers, remainder="drop", sparse_threshold=0.0)
        self._transformer.fit(np.asarray(X, dtype=float))
        return self

    def transform(self, X: np.ndarray) -> np.ndarray:
        if self._transformer is None:
            raise RuntimeError("FeatureScaler used before fit()")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != len(self.schema.features):
            raise SchemaMismatchError(f"Expected {len(self.schema.features)} features, got {X.shape[1]}")
        return np.asarray(self._transformer.transform(X), dtype=float)

    def fit_transform(self, X: np.ndarray) -> np.ndarray:
        return self.fit(X).transform(X)

    @classmethod
    def for_dataset(cls, ds: LabelledDataset) -> "FeatureScaler":
        return cls(ds.schema, ds.categories).fit(ds.X)
