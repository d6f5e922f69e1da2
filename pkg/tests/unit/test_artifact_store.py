import json
import shutil
import tempfile
import unittest
from pathlib import Path

import pandas as pd

from meta_uncertainty.clients.artifact_store import ArtifactStore, atomic_write_text, file_sha256
from meta_uncertainty.errors import MissingArtifactError, VersionMismatchError
from tests.builders import mixed_dataset


class TestArtifactStore(unittest.TestCase):

    def setUp(self):
        self.tmp = Path(tempfile.mkdtemp())
        self.store = ArtifactStore(self.tmp / "out", tool_version="test")

    def tearDown(self):
        shutil.rmtree(self.tmp, ignore_errors=True)

    def test_atomic_write_leaves_no_temporaries(self):
        path = atomic_write_text(self.tmp / "nested" / "a.txt", "hello\n")
        self.assertEqual(path.read_text(encoding="utf-8"), "hello\n")
        self.assertEqual([p.name for p in path.parent.iterdir()], ["a.txt"])

    def test_json_is_sorted_and_tracked(self):
        path = self.store.write_json("x/data.json", {"b": 1, "a": [1, 2]})
        self.assertLess(path.read_text().index('"a"'), path.read_text().index('"b"'))
        self.assertEqual(self.store.written, [path])
        self.assertEqual(self.store.read_json("x/data.json"), {"a": [1, 2], "b": 1})
        self.assertEqual(self.store.read, [path])

    def test_read_json_checks_kind_and_version(self):
        self.store.write_json("m.json", {"kind": "model", "format_version": 1})
        self.store.read_json("m.json", kind="model", version=1)
        with self.assertRaises(VersionMismatchError):
            self.store.read_json("m.json", kind="other")
        with self.assertRaises(VersionMismatchError):
            self.store.read_json("m.json", version=2)

    def test_missing_artifacts(self):
        with self.assertRaises(MissingArtifactError):
            self.store.read_text("nothing.txt")
        with self.assertRaises(MissingArtifactError):
            self.store.read_csv("nothing.csv")

    def test_csv_float_format(self):
        self.store.write_csv("t.csv", pd.DataFrame({"v": [1.0 / 3.0]}))
        self.assertEqual(self.store.path("t.csv").read_text().splitlines(), ["v", "0.3333333333"])

    def test_dataset_round_trip(self):
        ds = mixed_dataset(30)
        ds.metadata["note"] = "kept"
        self.store.write_dataset("datasets/mixed.csv", ds)
        self.assertTrue(self.store.exists("datasets/mixed.schema.json"))
        loaded = self.store.read_dataset("datasets/mixed.csv")
        self.assertEqual(loaded.id, "mixed")
        self.assertEqual(loaded.metadata["note"], "kept")
        self.assertEqual(list(loaded.labels), list(ds.labels))
        self.assertEqual(loaded.n_instances, 30)

    def test_manifest_hashes(self):
        output = self.store.write_text("report.md", "# done\n")
        source = self.tmp / "input.csv"
        source.write_text("a,b\n1,2\n", encoding="utf-8")
        manifest = json.loads(self.store.write_manifest("run", 5, inputs=[source]).read_text())
        self.assertEqual(manifest["kind"], "manifest")
        self.assertEqual(manifest["seed"], 5)
        self.assertEqual(manifest["outputs"], {"report.md": file_sha256(output)})
        self.assertEqual(list(manifest["inputs"].values()), [file_sha256(source)])

    def test_manifest_content_hash_ignores_timestamp(self):
        self.store.write_text("report.md", "# done\n")
        first = json.loads(self.store.write_manifest("run", 5).read_text())
        second = json.loads(self.store.write_manifest("run", 5).read_text())
        self.assertEqual(first["content_hash"], second["content_hash"])


if __name__ == '__main__':
    unittest.main()
