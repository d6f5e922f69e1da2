import tempfile
import unittest
from pathlib import Path

import numpy as np

from meta_uncertainty.clients.dataset_reader import DatasetReader
from meta_uncertainty.core import DatasetSchema, FeatureKind, FeatureSpec, load_dataset
from meta_uncertainty.errors import (
    EmptyDatasetError,
    InputError,
    MissingArtifactError,
    SchemaMismatchError,
    SingleClassError,
    UnparseableCellError,
)
from tests.builders import write_csv

SCHEMA = DatasetSchema(
    features=(
        FeatureSpec(name="age", kind=FeatureKind.CONTINUOUS),
        FeatureSpec(name="stage", kind=FeatureKind.ORDINAL, levels=("I", "II", "III")),
        FeatureSpec(name="site", kind=FeatureKind.NOMINAL),
    ),
    class_column="outcome",
)
HEADER = ["age", "stage", "site", "outcome"]


class TestDatasetReader(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def _write(self, rows, header=HEADER):
        return write_csv(self.dir / "data.csv", header, rows)

    def test_types_columns(self):
        path = self._write([[61, "II", "north", "died"], [45, "I", "south", "lived"], [70, "III", "north", "died"]])
        ds = load_dataset(path, SCHEMA)
        self.assertEqual(ds.id, "data")
        self.assertEqual(ds.classes, ("died", "lived"))
        np.testing.assert_array_equal(ds.X[:, 1], [1.0, 0.0, 2.0])
        np.testing.assert_array_equal(ds.X[:, 2], [0.0, 1.0, 0.0])
        self.assertEqual(ds.categories["site"], ("north", "south"))

    def test_unknown_column_named(self):
        path = self._write([[1, "I", "n", "a", 0]], header=HEADER + ["extra"])
        with self.assertRaises(SchemaMismatchError) as ctx:
            DatasetReader(path, SCHEMA).read()
        self.assertEqual(ctx.exception.column, "extra")
        self.assertEqual(ctx.exception.exit_code, 2)

    def test_missing_column_named(self):
        path = self._write([[1, "I", "a"]], header=["age", "stage", "outcome"])
        with self.assertRaises(SchemaMismatchError) as ctx:
            DatasetReader(path, SCHEMA).read()
        self.assertEqual(ctx.exception.column, "site")

    def test_unparseable_cell_reports_row_and_column(self):
        path = self._write([[1, "I", "n", "a"], ["old", "II", "s", "b"]])
        with self.assertRaises(UnparseableCellError) as ctx:
            DatasetReader(path, SCHEMA).read()
        self.assertEqual(ctx.exception.row, 2)
        self.assertEqual(ctx.exception.column, "age")

    def test_unknown_ordinal_level(self):
        path = self._write([[1, "IV", "n", "a"], [2, "I", "s", "b"]])
        with self.assertRaises(UnparseableCellError):
            DatasetReader(path, SCHEMA).read()

    def test_reject_drops_rows_with_missing_cells(self):
        path = self._write([[1, "I", "n", "a"], ["?", "II", "s", "b"], [3, "III", "s", "b"], [4, "I", "n", "a"]])
        ds = DatasetReader(path, SCHEMA, missing_policy="reject").read()
        self.assertEqual(ds.n_instances, 3)

    def test_impute_fills_median_and_mode(self):
        path = self._write([[1, "I", "n", "a"], ["", "II", "", "b"], [3, "III", "n", "b"], [5, "I", "s", "a"]])
        ds = DatasetReader(path, SCHEMA, missing_policy="impute").read()
        self.assertEqual(ds.n_instances, 4)
        self.assertEqual(ds.X[1, 0], 3.0)
        self.assertEqual(ds.categories["site"][int(ds.X[1, 2])], "n")

    def test_every_row_missing_is_empty(self):
        path = self._write([["", "I", "n", "a"], ["NA", "II", "s", "b"]])
        with self.assertRaises(EmptyDatasetError):
            DatasetReader(path, SCHEMA).read()

    def test_single_class_rejected(self):
        path = self._write([[1, "I", "n", "a"], [2, "II", "s", "a"]])
        with self.assertRaises(SingleClassError):
            DatasetReader(path, SCHEMA).read()

    def test_missing_file(self):
        with self.assertRaises(MissingArtifactError):
            DatasetReader(self.dir / "absent.csv", SCHEMA)

    def test_unknown_policy(self):
        path = self._write([[1, "I", "n", "a"]])
        with self.assertRaises(InputError):
            DatasetReader(path, SCHEMA, missing_policy="drop")

    def test_schema_from_json(self):
        schema_path = self.dir / "data.schema.json"
        schema_path.write_text(SCHEMA.model_dump_json(), encoding="utf-8")
        self.assertEqual(DatasetSchema.from_json(schema_path), SCHEMA)

    def test_invalid_schema_json(self):
        schema_path = self.dir / "bad.schema.json"
        schema_path.write_text('{"features": [{"name": "x", "kind": "fuzzy"}], "class_column": "y"}', encoding="utf-8")
        with self.assertRaises(SchemaMismatchError):
            DatasetSchema.from_json(schema_path)


if __name__ == '__main__':
    unittest.main()
