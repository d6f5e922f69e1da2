import json
import shutil
import tempfile
import unittest
from pathlib import Path

import numpy as np

from meta_uncertainty.core import LabelledDataset
from meta_uncertainty.errors import EmptyPoolError, LengthMismatchError, MissingArtifactError, VersionMismatchError
from meta_uncertainty.knowledgebase import (
    KnowledgeBase,
    KnowledgeBaseConfig,
    SamplingPolicy,
    balance_synthetic,
    build_kb,
    label_misclassifications,
    load_kb,
    policy_grid,
    sample_kb,
    save_kb,
)
from meta_uncertainty.learners import ClassifierSpec
from meta_uncertainty.metafeatures import MetaFeatureConfig
from tests.builders import random_kb, two_blobs

SMALL = KnowledgeBaseConfig(inner_folds=3, budget=2)


class TestBuildKb(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.ds, _ = two_blobs(40, separation=1.5, seed=2)
        cls.kb = build_kb(
            [cls.ds], ClassifierSpec.default("gaussian_nb"), k_folds=3, seed=1, config=SMALL,
            meta_config=MetaFeatureConfig(k=3),
        )

    def test_one_record_per_instance(self):
        self.assertEqual(len(self.kb), 40)
        self.assertEqual(sorted(r.instance_index for r in self.kb.records), list(range(40)))
        self.assertEqual({r.fold for r in self.kb.records}, {0, 1, 2})
        self.assertTrue(all(r.model_kind == "gaussian_nb" and r.provenance == "real" for r in self.kb.records))

    def test_deterministic(self):
        again = build_kb(
            [self.ds], ClassifierSpec.default("gaussian_nb"), k_folds=3, seed=1, config=SMALL,
            meta_config=MetaFeatureConfig(k=3),
        )
        np.testing.assert_array_equal(self.kb.matrix(), again.matrix())
        np.testing.assert_array_equal(self.kb.flags(), again.flags())

    def test_failing_dataset_is_skipped(self):
        tiny = LabelledDataset.from_arrays(np.arange(6.0)[:, None], ["a"] * 4 + ["b"] * 2, dataset_id="tiny")
        kb = build_kb(
            [self.ds, tiny], ClassifierSpec.default("gaussian_nb"), k_folds=3, seed=1, config=SMALL,
            meta_config=MetaFeatureConfig(k=3),
        )
        self.assertEqual(len(kb), 40)
        self.assertEqual([f["dataset_id"] for f in kb.failures], ["tiny"])
        self.assertTrue(kb.failures[0]["reason"])


class TestLabels(unittest.TestCase):

    def test_label_misclassifications(self):
        np.testing.assert_array_equal(label_misclassifications(["a", "b", "c"], ["a", "c", "c"]), [0, 1, 0])

    def test_length_mismatch(self):
        with self.assertRaises(LengthMismatchError):
            label_misclassifications(["a"], ["a", "b"])
        with self.assertRaises(LengthMismatchError):
            KnowledgeBase.from_arrays(np.zeros((2, 7)), [1])


class TestSampling(unittest.TestCase):

    def setUp(self):
        self.kb = random_kb(100, seed=0) + random_kb(300, seed=1, provenance="synthetic")

    def test_sizes(self):
        anchor = self.kb.matrix()[0]
        self.assertEqual(len(sample_kb(self.kb, anchor, SamplingPolicy(m=50, q=100), seed=0)), 50)
        self.assertEqual(len(sample_kb(self.kb, anchor, SamplingPolicy(m=1000, q=10), seed=0)), 40)
        self.assertEqual(len(sample_kb(self.kb, anchor, SamplingPolicy(m=1000, q=100, realness="real"), seed=0)), 100)

    def test_pool_is_nearest(self):
        anchor = self.kb.matrix()[5]
        sample = sample_kb(self.kb, anchor, SamplingPolicy(m=1000, q=1), seed=0)
        self.assertEqual(len(sample), 4)
        self.assertTrue(any(np.allclose(row, anchor) for row in sample.matrix()))

    def test_realness_filter(self):
        sample = sample_kb(self.kb, self.kb.matrix()[0], SamplingPolicy(m=30, q=50, realness="synthetic"), seed=3)
        self.assertTrue(all(p == "synthetic" for p in sample.provenance()))

    def test_seeded(self):
        policy = SamplingPolicy(m=20, q=50)
        first = sample_kb(self.kb, self.kb.matrix()[0], policy, seed=7)
        second = sample_kb(self.kb, self.kb.matrix()[0], policy, seed=7)
        np.testing.assert_array_equal(first.matrix(), second.matrix())

    def test_empty_pool(self):
        with self.assertRaises(EmptyPoolError):
            sample_kb(random_kb(10), np.zeros(7), SamplingPolicy(realness="synthetic"))

    def test_balance_synthetic(self):
        balanced = balance_synthetic(self.kb, seed=0)
        provenance = balanced.provenance()
        self.assertEqual(int(np.sum(provenance == "real")), 100)
        self.assertEqual(int(np.sum(provenance == "synthetic")), 100)

    def test_policy_grid(self):
        grid = policy_grid()
        self.assertEqual(len(grid), 48)
        self.assertEqual(len({(p.m, p.q, p.realness) for p in grid}), 48)


class TestPersistence(unittest.TestCase):

    def setUp(self):
        self.tmp = Path(tempfile.mkdtemp())

    def tearDown(self):
        shutil.rmtree(self.tmp, ignore_errors=True)

    def test_save_and_load(self):
        kb = random_kb(30, seed=4)
        kb.failures.append({"dataset_id": "x", "reason": "too small"})
        loaded = load_kb(save_kb(kb, self.tmp / "kb.jsonl"))
        self.assertEqual(loaded.records, kb.records)
        self.assertEqual(loaded.failures, kb.failures)

    def test_header_summary(self):
        kb = random_kb(30, seed=4)
        header = json.loads(kb.to_jsonl().splitlines()[0])
        self.assertEqual(header["summary"]["n_records"], 30)
        self.assertAlmostEqual(header["summary"]["misclassification_rate"], kb.misclassification_rate())

    def test_version_mismatch(self):
        lines = random_kb(5).to_jsonl().splitlines()
        header = json.loads(lines[0])
        header["format_version"] = 99
        with self.assertRaises(VersionMismatchError):
            KnowledgeBase.from_jsonl("\n".join([json.dumps(header)] + lines[1:]))

    def test_missing_and_empty(self):
        with self.assertRaises(MissingArtifactError):
            load_kb(self.tmp / "absent.jsonl")
        (self.tmp / "empty.jsonl").write_text("", encoding="utf-8")
        with self.assertRaises(MissingArtifactError):
            load_kb(self.tmp / "empty.jsonl")


if __name__ == '__main__':
    unittest.main()
