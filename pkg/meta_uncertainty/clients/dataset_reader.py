"""CSV dataset reader that types columns against a DatasetSchema."""
import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from ..core import DatasetSchema, FeatureKind, FeatureSpec, LabelledDataset
from ..errors import (
    EmptyDatasetError,
    InputError,
    MissingArtifactError,
    SchemaMismatchError,
    SingleClassError,
    UnparseableCellError,
)

logger = logging.getLogger(__name__)

MISSING_TOKENS = {"", "?", "na", "nan", "null", "none"}
MISSING_POLICIES = ("reject", "impute")


class DatasetReader:
    """Read and type a labelled CSV file."""

    def __init__(self, csv_path: str, schema: DatasetSchema, missing_policy: str = "reject"):
        """Initialize the reader.

        Args:
            csv_path: Path to a UTF-8, comma-separated file with a header row
            schema: Column kinds and class column
            missing_policy: 'reject' drops rows with missing cells, 'impute'
                fills medians (continuous/ordinal) or modes (nominal)
        """
        self.csv_path = Path(csv_path)
        self.schema = schema
        if missing_policy not in MISSING_POLICIES:
            raise InputError(f"Unknown missing_policy '{missing_policy}', expected one of {MISSING_POLICIES}")
        self.missing_policy = missing_policy

        if not self.csv_path.exists():
            raise MissingArtifactError(f"Dataset file not found: {csv_path}")

    def read(self, dataset_id: Optional[str] = None, provenance: str = "real") -> LabelledDataset:
        """Parse the file into a LabelledDataset.

        Returns:
            Typed dataset with the class universe taken from the observed labels
        """
        frame = self._read_frame()
        self._check_header(list(frame.columns))
        if frame.empty:
            raise EmptyDatasetError(f"Dataset has no rows: {self.csv_path}")

        frame = frame.apply(lambda col: col.str.strip())
        frame = self._handle_missing(frame)

        labels = frame[self.schema.class_column].to_numpy(dtype=object)
        classes = tuple(sorted(set(labels)))
        if len(classes) < 2:
            raise SingleClassError(f"All labels are '{classes[0]}' in {self.csv_path}")

        columns = []
        categories: Dict[str, Tuple[str, ...]] = {}
        for spec in self.schema.features:
            values, levels = self._parse_column(frame, spec)
            columns.append(values)
            if levels is not None:
                categories[spec.name] = levels

        lookup = {c: i for i, c in enumerate(classes)}
        y = np.asarray([lookup[v] for v in labels], dtype=int)
        X = np.column_stack(columns) if columns else np.empty((len(frame), 0))

        ds = LabelledDataset(
            schema=self.schema,
            X=X,
            y=y,
            classes=classes,
            id=dataset_id or self.csv_path.stem,
            provenance=provenance,
            categories=categories,
        )
        logger.info(f"Loaded {ds.id}: M={ds.n_instances} N={ds.n_features} C={ds.n_classes}")
        return ds

    def _read_frame(self) -> pd.DataFrame:
        try:
            return pd.read_csv(self.csv_path, dtype=str, keep_default_na=False, encoding="utf-8")
        except pd.errors.EmptyDataError:
            raise EmptyDatasetError(f"Dataset file is empty: {self.csv_path}")
        except pd.errors.ParserError as e:
            raise UnparseableCellError(f"Malformed CSV {self.csv_path}: {e}")

    def _check_header(self, header: List[str]):
        expected = self.schema.feature_names + [self.schema.class_column]
        header = [h.strip() for h in header]
        for column in header:
            if column not in expected:
                raise SchemaMismatchError(f"Unknown column '{column}' in {self.csv_path}", column=column)
        for column in expected:
            if column not in header:
                raise SchemaMismatchError(f"Missing column '{column}' in {self.csv_path}", column=column)

    def _handle_missing(self, frame: pd.DataFrame) -> pd.DataFrame:
        missing = frame.apply(lambda col: col.str.lower().isin(MISSING_TOKENS))
        if missing[self.schema.class_column].any():
            dropped = int(missing[self.schema.class_column].sum())
            logger.warning(f"Dropping {dropped} rows with a missing class label")
            keep = ~missing[self.schema.class_column]
            frame, missing = frame[keep], missing[keep]

        rows_with_missing = missing.any(axis=1)
        if not rows_with_missing.any():
            return frame.reset_index(drop=True)

        if self.missing_policy == "reject":
            logger.warning(f"Dropping {int(rows_with_missing.sum())} rows with missing cells from {self.csv_path.name}")
            frame = frame[~rows_with_missing]
            if frame.empty:
                raise EmptyDatasetError(f"Every row of {self.csv_path} holds a missing cell")
            return frame.reset_index(drop=True)

        frame = frame.copy()
        for spec in self.schema.features:
            holes = missing[spec.name]
            if not holes.any():
                continue
            present = frame.loc[~holes, spec.name]
            if present.empty:
                raise EmptyDatasetError(f"Column '{spec.name}' has no values to impute from")
            if spec.kind == FeatureKind.NOMINAL:
                fill = present.value_counts().sort_index().idxmax()
            elif spec.kind == FeatureKind.ORDINAL and spec.levels:
                ranks = present.map({level: i for i, level in enumerate(spec.levels)})
                fill = spec.levels[int(np.floor(ranks.median()))]
            else:
                fill = repr(float(pd.to_numeric(present, errors="coerce").median()))
            frame.loc[holes, spec.name] = fill
            logger.info(f"Imputed {int(holes.sum())} cells of '{spec.name}' with {fill}")
        return frame.reset_index(drop=True)

    def _parse_column(self, frame: pd.DataFrame, spec: FeatureSpec) -> Tuple[np.ndarray, Optional[Tuple[str, ...]]]:
        raw = frame[spec.name]
        if spec.kind == FeatureKind.NOMINAL:
            levels = tuple(sorted(raw.unique()))
            codes = {level: float(i) for i, level in enumerate(levels)}
            return raw.map(codes).to_numpy(dtype=float), levels

        if spec.kind == FeatureKind.ORDINAL and spec.levels:
            ranks = {level: float(i) for i, level in enumerate(spec.levels)}
            parsed = raw.map(ranks)
            self._raise_on_unparsed(raw, parsed, spec.name)
            return parsed.to_numpy(dtype=float), tuple(spec.levels)

        parsed = pd.to_numeric(raw, errors="coerce")
        self._raise_on_unparsed(raw, parsed, spec.name)
        values = parsed.to_numpy(dtype=float)
        if spec.kind == FeatureKind.ORDINAL and not np.all(values == np.round(values)):
            row = int(np.flatnonzero(values != np.round(values))[0])
            raise UnparseableCellError(
                f"Ordinal column '{spec.name}' holds non-integer '{raw.iloc[row]}' at row {row + 1}",
                row=row + 1,
                column=spec.name,
            )
        return values, None

    @staticmethod
    def _raise_on_unparsed(raw: pd.Series, parsed: pd.Series, column: str):
        bad = parsed.isna() | ~np.isfinite(parsed.astype(float))
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise UnparseableCellError(
                f"Cannot parse '{raw.iloc[row]}' in column '{column}' at row {row + 1}",
                row=row + 1,
                column=column,
            )
