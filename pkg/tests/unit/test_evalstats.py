import json
import unittest

import numpy as np

from meta_uncertainty.core import LabelledDataset
from meta_uncertainty.errors import DegenerateInputError, InputError, LengthMismatchError
from meta_uncertainty.evalstats import (
    ABSTENTION_PERCENTILES,
    OR_CAP,
    IsmVerdict,
    abstention_curve,
    auprc,
    auroc,
    build_report,
    class_likelihood,
    detection_metrics,
    disagreeing_neighbors,
    ism_flags,
    misclassification_score,
    spearman_matrix,
    univariate_or,
)
from meta_uncertainty.metafeatures import META_FEATURES
from tests.builders import random_meta, two_blobs


def logistic_flags(x, beta, seed=0):
    rng = np.random.default_rng(seed)
    return (rng.random(len(x)) < 1.0 / (1.0 + np.exp(-beta * x))).astype(int)


class TestOddsRatio(unittest.TestCase):

    def test_direction(self):
        x = np.random.default_rng(1).normal(size=500)
        positive = univariate_or(x, logistic_flags(x, 1.5))
        negative = univariate_or(x, logistic_flags(x, -1.5))
        self.assertGreater(positive.odds_ratio, 2.0)
        self.assertLess(negative.odds_ratio, 0.5)
        self.assertLess(positive.ci_low, positive.odds_ratio)
        self.assertGreater(positive.ci_high, positive.odds_ratio)
        self.assertLess(positive.p_value, 0.001)
        self.assertFalse(positive.clamped)

    def test_scale_free(self):
        x = np.random.default_rng(2).normal(size=300)
        flags = logistic_flags(x, 1.0, seed=2)
        self.assertAlmostEqual(univariate_or(x, flags).odds_ratio, univariate_or(10 * x + 3, flags).odds_ratio, places=6)

    def test_complete_separation_clamps(self):
        x = np.arange(10.0)
        flags = (x >= 5).astype(int)
        result = univariate_or(x, flags)
        self.assertEqual(result.odds_ratio, OR_CAP)
        self.assertTrue(result.clamped)
        self.assertEqual(univariate_or(-x, flags, cap=50.0).odds_ratio, 1.0 / 50.0)

    def test_zero_variance(self):
        result = univariate_or(np.ones(10), [0, 1] * 5)
        self.assertEqual(result.odds_ratio, 1.0)
        self.assertIn("zero_variance", result.flags)

    def test_single_flag_value(self):
        with self.assertRaises(DegenerateInputError):
            univariate_or(np.arange(5.0), np.zeros(5))

    def test_bad_inputs(self):
        with self.assertRaises(LengthMismatchError):
            univariate_or([1.0, 2.0], [0, 1, 1])
        with self.assertRaises(InputError):
            univariate_or([1.0, 2.0], [0, 2])


class TestRankingMetrics(unittest.TestCase):

    def test_auroc_matches_pair_count(self):
        rng = np.random.default_rng(0)
        scores = rng.integers(0, 5, size=60).astype(float)
        flags = rng.integers(0, 2, size=60)
        flags[:2] = [0, 1]
        pos, neg = scores[flags == 1], scores[flags == 0]
        wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
        self.assertAlmostEqual(auroc(scores, flags), wins / (len(pos) * len(neg)))

    def test_perfect_ranking(self):
        scores = np.linspace(0, 1, 20)
        flags = (scores > 0.7).astype(int)
        self.assertEqual(auroc(scores, flags), 1.0)
        result = auprc(scores, flags)
        self.assertAlmostEqual(result.auprc, 1.0)
        self.assertAlmostEqual(result.improvement, 1.0 - flags.mean())

    def test_auprc_needs_a_positive(self):
        with self.assertRaises(DegenerateInputError):
            auprc([0.1, 0.2], [0, 0])

    def test_detection_metrics_undefined_for_one_flag(self):
        self.assertEqual(set(detection_metrics([0.1, 0.2], [1, 1]).values()), {None})

    def test_misclassification_score(self):
        np.testing.assert_allclose(misclassification_score([0.5, 0.0, 0.2]), [0.0, 0.5, 0.3])


class TestSpearman(unittest.TestCase):

    def test_monotone_columns(self):
        x = np.random.default_rng(0).random(30)
        result = spearman_matrix(np.column_stack([x, np.exp(x), -x]), names=("x", "ex", "neg"))
        np.testing.assert_allclose(result.matrix, [[1, 1, -1], [1, 1, -1], [-1, -1, 1]], atol=1e-12)

    def test_constant_column(self):
        M = random_meta(40)
        M[:, 2] = 0.5
        result = spearman_matrix(M)
        self.assertEqual(result.constant_columns, (META_FEATURES[2],))
        self.assertTrue(np.all(np.delete(result.matrix[2], 2) == 0.0))
        self.assertEqual(result.matrix[2, 2], 1.0)
        np.testing.assert_allclose(result.matrix, result.matrix.T)

    def test_too_few_rows(self):
        with self.assertRaises(InputError):
            spearman_matrix(np.zeros((2, 7)))


class TestAbstention(unittest.TestCase):

    def test_ordered_uncertainty(self):
        u = np.arange(100) / 100.0
        flags = (u >= 0.8).astype(int)
        curve = abstention_curve(u, flags)
        self.assertEqual(curve.percentiles, ABSTENTION_PERCENTILES)
        self.assertEqual(curve.misclassified_pct[4], 0.0)
        self.assertAlmostEqual(curve.retained_pct[4], 25.0)
        self.assertAlmostEqual(curve.misclassified_pct[-1], 100.0 * 15 / 95)
        self.assertTrue(np.all(np.diff(curve.retained_pct) >= 0))

    def test_frame_and_dict(self):
        curve = abstention_curve(np.linspace(0, 1, 10), [0, 1] * 5)
        self.assertEqual(len(curve.to_frame()), 19)
        json.dumps(curve.to_dict())


class TestIsm(unittest.TestCase):

    def test_disagreeing_neighbors(self):
        X = np.concatenate([np.arange(5.0), 100 + np.arange(5.0)])[:, None]
        labels = ["a", "a", "b", "a", "a"] + ["b"] * 5
        dn = disagreeing_neighbors(LabelledDataset.from_arrays(X, labels), k=2)
        self.assertEqual(dn[2], 1.0)
        self.assertEqual(dn[0], 0.5)
        np.testing.assert_array_equal(dn[5:], 0.0)

    def test_condition(self):
        self.assertTrue(IsmVerdict.condition(dcp=0.2, cld=-1.0, ds=0.0, kdn=0.0))
        self.assertTrue(IsmVerdict.condition(dcp=1.0, cld=-1.0, ds=0.5, kdn=0.9))
        self.assertFalse(IsmVerdict.condition(dcp=0.2, cld=1.0, ds=0.0, kdn=1.0))
        self.assertFalse(IsmVerdict.condition(dcp=1.0, cld=-1.0, ds=0.5, kdn=0.8))

    def test_relabelled_core_instances_are_flagged(self):
        ds, _ = two_blobs(200, separation=6.0, seed=0)
        y = ds.y.copy()
        planted = []
        for c, center in ((0, -3.0), (1, 3.0)):
            members = np.flatnonzero(y == c)
            nearest = members[np.argmin(np.hypot(ds.X[members, 0] - center, ds.X[members, 1]))]
            planted.append(int(nearest))
        y[planted] = 1 - y[planted]
        relabelled = LabelledDataset.from_arrays(ds.X, [("a", "b")[c] for c in y])
        verdicts = ism_flags(relabelled, k=5, seed=0)
        self.assertTrue(all(verdicts[i].is_ism for i in planted))
        self.assertLess(sum(v.is_ism for v in verdicts), 20)

    def test_class_likelihood(self):
        ds, _ = two_blobs(100, separation=6.0, seed=1)
        x = np.array([-3.0, 0.0])
        self.assertGreater(class_likelihood(x, 0, ds), class_likelihood(x, 1, ds))
        with self.assertRaises(InputError):
            class_likelihood(x, 2, ds)


class TestReport(unittest.TestCase):

    def setUp(self):
        rng = np.random.default_rng(0)
        self.meta = random_meta(80, seed=1)
        self.flags = logistic_flags(self.meta[:, 0] * 4 - 2, 1.0, seed=3)
        self.uncertainty = rng.random(80) * 0.5 + 0.4 * self.flags
        self.confidence = rng.random(80) * 0.5

    def test_contents(self):
        mask = np.zeros(80, dtype=bool)
        mask[:5] = True
        report = build_report(self.meta, self.flags, self.uncertainty, self.confidence, "toy", "knn_classifier", mask)
        self.assertEqual(set(report.odds_ratios), set(META_FEATURES))
        self.assertEqual(
            set(report.metrics),
            {"estimator", "baseline", "estimator_without_ism", "baseline_without_ism"},
        )
        self.assertEqual(report.n_ism, 5)
        self.assertGreater(report.metrics["estimator"]["auroc"], 0.7)
        data = json.loads(report.to_json())
        self.assertEqual(data["dataset_id"], "toy")
        markdown = report.to_markdown()
        self.assertIn("## Odds ratios", markdown)
        self.assertIn("## Abstention", markdown)
        self.assertEqual(len(report.metrics_frame()), 4)

    def test_one_flag_value(self):
        report = build_report(self.meta, np.zeros(80, dtype=int), self.uncertainty, self.confidence)
        self.assertEqual(report.odds_ratios, {})
        self.assertIsNone(report.metrics["estimator"]["auroc"])
        self.assertTrue(report.notes)

    def test_misaligned(self):
        with self.assertRaises(LengthMismatchError):
            build_report(self.meta[:10], self.flags, self.uncertainty, self.confidence)


if __name__ == '__main__':
    unittest.main()
