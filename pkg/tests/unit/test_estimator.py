import unittest

import numpy as np

from meta_uncertainty.errors import DegenerateInputError, InputError, LengthMismatchError, VersionMismatchError
from meta_uncertainty.estimator import (
    EstimatorConfig,
    FuzzyClusterModel,
    NestedCVResult,
    cluster_space,
    defuzzify,
    estimate_batch,
    estimate_uncertainty,
    fcm_fit,
    membership_matrix,
    memberships,
    misclassification_rate,
    nested_cv_run,
    optimize,
    optimize_cv,
)
from meta_uncertainty.knowledgebase import KnowledgeBase, KnowledgeBaseConfig, SamplingPolicy
from meta_uncertainty.learners import ClassifierSpec
from meta_uncertainty.metafeatures import META_FEATURES, MetaFeatureConfig
from tests.builders import random_kb, random_meta, two_blobs

FAST = EstimatorConfig(
    n_clusters_range=(2, 4),
    bo_budget=4,
    bo_initial=3,
    outer_folds=3,
    inner_folds=2,
    restarts=2,
    max_iter=100,
    sampling=SamplingPolicy(m=50, q=100),
)


class TestClusterSpace(unittest.TestCase):

    def test_outlierness_squashed(self):
        X = cluster_space(np.array([[0.1, 0.2, 0.3, 3.0, 0.4, 0.5, 0.6]]))
        self.assertAlmostEqual(X[0, META_FEATURES.index("ol")], 0.75)
        self.assertAlmostEqual(X[0, 0], 0.1)

    def test_wrong_width(self):
        with self.assertRaises(InputError):
            cluster_space(np.zeros((2, 3)))


class TestMemberships(unittest.TestCase):

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        U = membership_matrix(rng.random((50, 3)), rng.random((4, 3)), 2.0)
        np.testing.assert_allclose(U.sum(axis=1), 1.0)
        self.assertTrue(np.all(U >= 0))

    def test_point_on_center_is_one_hot(self):
        centers = np.array([[0.0, 0.0], [1.0, 1.0]])
        U = membership_matrix(np.array([[1.0, 1.0]]), centers, 2.0)
        np.testing.assert_array_equal(U, [[0.0, 1.0]])

    def test_closer_center_dominates(self):
        U = membership_matrix(np.array([[0.1, 0.0]]), np.array([[0.0, 0.0], [1.0, 0.0]]), 2.0)
        self.assertGreater(U[0, 0], 0.9)

    def test_equidistant_point_is_uniform(self):
        U = membership_matrix(np.array([[0.5, 0.0]]), np.array([[0.0, 0.0], [1.0, 0.0]]), 2.0)
        np.testing.assert_allclose(U, [[0.5, 0.5]])


class TestDefuzzify(unittest.TestCase):

    def test_weighted_average(self):
        self.assertAlmostEqual(defuzzify([0.5, 0.5], [0.2, 0.4]), 0.3)
        self.assertAlmostEqual(defuzzify([1.0, 0.0], [0.2, 0.4]), 0.2)
        self.assertAlmostEqual(defuzzify((0.75, 0.25), (0.0, 1.0)), 0.25)

    def test_errors(self):
        with self.assertRaises(LengthMismatchError):
            defuzzify([1.0], [0.2, 0.4])
        with self.assertRaises(DegenerateInputError):
            defuzzify([0.0, 0.0], [0.2, 0.4])

    def test_misclassification_rate(self):
        self.assertAlmostEqual(misclassification_rate(3, 1, 4, 2), 0.3)
        self.assertAlmostEqual(misclassification_rate(3, 1, 5, 1), 0.2)
        with self.assertRaises(DegenerateInputError):
            misclassification_rate(0, 0, 0, 0)
        with self.assertRaises(InputError):
            misclassification_rate(-1, 0, 1, 0)


class TestFcmFit(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.kb = random_kb(200, seed=1)
        cls.weights = np.array([1.0, 0.5, 0.5, 0.2, 0.3, 1.0, 0.4])
        cls.model = fcm_fit(cls.kb, cls.weights, 3, FAST, seed=0)

    def test_objective_non_increasing(self):
        history = np.asarray(self.model.objective_history)
        self.assertGreater(len(history), 1)
        self.assertTrue(np.all(np.diff(history) <= 1e-9 * history[0]))

    def test_estimate_within_rate_bounds(self):
        u = estimate_batch(self.model, random_meta(100, seed=9))
        self.assertTrue(np.all(u >= self.model.rates.min() - 1e-12))
        self.assertTrue(np.all(u <= self.model.rates.max() + 1e-12))

    def test_single_and_batch_agree(self):
        M = random_meta(5, seed=3)
        batch = estimate_batch(self.model, M)
        for row, value in zip(M, batch):
            self.assertAlmostEqual(estimate_uncertainty(self.model, row), value)
        np.testing.assert_allclose(memberships(self.model, M[0]).values.sum(), 1.0)

    def test_one_cluster_gives_global_rate(self):
        model = fcm_fit(self.kb, self.weights, 1, FAST, seed=0)
        np.testing.assert_allclose(estimate_batch(model, random_meta(10)), self.kb.misclassification_rate())

    def test_joint_scaling_leaves_estimates_unchanged(self):
        scaled = FuzzyClusterModel(
            centers=self.model.centers * 3.0,
            fuzzifier=self.model.fuzzifier,
            weights=self.model.weights * 3.0,
            rates=self.model.rates,
            global_rate=self.model.global_rate,
        )
        M = random_meta(20, seed=5)
        np.testing.assert_allclose(scaled.estimate(M), self.model.estimate(M), atol=1e-12)

    def test_seeded(self):
        again = fcm_fit(self.kb, self.weights, 3, FAST, seed=0)
        np.testing.assert_array_equal(again.centers, self.model.centers)

    def test_doubled_weights_keep_hard_assignments(self):
        doubled = fcm_fit(self.kb, 2.0 * self.weights, 3, FAST, seed=0)
        np.testing.assert_allclose(doubled.rates, self.model.rates)
        M = self.kb.matrix()
        np.testing.assert_array_equal(
            np.argmax(doubled.membership_matrix(M), axis=1),
            np.argmax(self.model.membership_matrix(M), axis=1),
        )

    def test_planted_groups_are_found(self):
        rng = np.random.default_rng(2)
        low = np.full((40, 7), 0.2)
        high = np.full((40, 7), 0.8)
        low[:, META_FEATURES.index("ol")] = 0.25
        high[:, META_FEATURES.index("ol")] = 4.0
        M = np.vstack([low, high]) + rng.normal(scale=0.01, size=(80, 7))
        kb = KnowledgeBase.from_arrays(np.clip(M, 0.0, None), [0] * 35 + [1] * 5 + [1] * 30 + [0] * 10)
        model = fcm_fit(kb, np.ones(7), 2, FAST, seed=0)
        centers = model.centers[np.argsort(model.centers[:, 0])]
        np.testing.assert_allclose(centers[0], 0.2, atol=0.05)
        np.testing.assert_allclose(centers[1], 0.8, atol=0.05)
        np.testing.assert_allclose(sorted(model.rates), [0.125, 0.75])

    def test_identical_records_leave_empty_clusters(self):
        kb = KnowledgeBase.from_arrays(np.tile(random_meta(1), (10, 1)), [0, 1] * 5)
        model = fcm_fit(kb, np.ones(7), 3, FAST, seed=0)
        self.assertIn("empty_cluster", model.flags)
        self.assertEqual(model.rates.tolist().count(0.5), 3)

    def test_invalid_inputs(self):
        with self.assertRaises(DegenerateInputError):
            fcm_fit(self.kb, np.zeros(7), 2, FAST)
        with self.assertRaises(InputError):
            fcm_fit(self.kb, np.ones(6), 2, FAST)
        with self.assertRaises(DegenerateInputError):
            fcm_fit(random_kb(3), np.ones(7), 5, FAST)

    def test_serialization(self):
        restored = FuzzyClusterModel.from_json(self.model.to_json())
        np.testing.assert_array_equal(restored.centers, self.model.centers)
        np.testing.assert_array_equal(restored.rates, self.model.rates)
        M = random_meta(10, seed=2)
        np.testing.assert_array_equal(restored.estimate(M), self.model.estimate(M))

    def test_serialization_rejects_other_versions(self):
        data = self.model.to_dict()
        data["format_version"] = 2
        with self.assertRaises(VersionMismatchError):
            FuzzyClusterModel.from_dict(data)

    def test_model_is_read_only(self):
        with self.assertRaises(ValueError):
            self.model.rates[0] = 0.0


class TestOptimize(unittest.TestCase):

    def test_single_class_validation_split(self):
        val = KnowledgeBase.from_arrays(random_meta(20), np.zeros(20, dtype=int))
        with self.assertRaises(DegenerateInputError):
            optimize(random_kb(50), val, FAST)

    def test_no_splits(self):
        with self.assertRaises(InputError):
            optimize_cv([], FAST)

    def test_returns_configuration_in_range(self):
        chosen = optimize(random_kb(120, seed=2), random_kb(60, seed=3), FAST, seed=1)
        self.assertEqual(chosen.weights.shape, (7,))
        self.assertTrue(2 <= chosen.n_clusters <= 4)
        self.assertEqual(chosen.n_evaluations, 4)
        self.assertTrue(np.isfinite(chosen.score))
        weights, n_clusters = chosen
        self.assertEqual(n_clusters, chosen.n_clusters)


class TestNestedCv(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.ds, _ = two_blobs(60, separation=1.0, seed=4, flip=0.1)
        cls.result = nested_cv_run(
            cls.ds,
            random_kb(80, seed=6, model_kind="gaussian_nb"),
            ClassifierSpec.default("gaussian_nb"),
            FAST,
            seed=3,
            kb_config=KnowledgeBaseConfig(budget=1),
            meta_config=MetaFeatureConfig(k=3),
        )

    def test_every_instance_estimated(self):
        r = self.result
        self.assertEqual(r.uncertainty.shape, (60,))
        self.assertTrue(np.all((r.uncertainty >= 0) & (r.uncertainty <= 1)))
        self.assertEqual(set(r.folds.tolist()), {0, 1, 2})
        self.assertEqual(len(r.fold_configs), 3)
        self.assertEqual(r.meta.shape, (60, len(META_FEATURES)))

    def test_flags_match_predictions(self):
        np.testing.assert_array_equal(self.result.misclassified, (self.result.predictions != self.ds.y).astype(int))

    def test_final_model_and_background(self):
        self.assertIsNotNone(self.result.final_model)
        self.assertEqual(len(self.result.background), 50 + 60)

    def test_frame_round_trip(self):
        restored = NestedCVResult.from_frame(self.result.to_frame(), self.ds.id, "gaussian_nb")
        np.testing.assert_array_equal(restored.uncertainty, self.result.uncertainty)
        np.testing.assert_array_equal(restored.meta, self.result.meta)


if __name__ == '__main__':
    unittest.main()
