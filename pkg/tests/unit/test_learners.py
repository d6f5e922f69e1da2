import unittest

import numpy as np
from scipy.integrate import quad

from meta_uncertainty.core import FeatureKind, LabelledDataset
from meta_uncertainty.errors import InputError, SingleClassError
from meta_uncertainty.learners import (
    ClassConditionalDensities,
    ClassifierKind,
    ClassifierSpec,
    confidence_margin,
    grow_tree,
    kde_density,
    log_kde,
    platt_scale,
    probability_uncertainty,
    silverman_bandwidth,
    train_tuned,
    training_balanced_accuracy,
)
from tests.builders import mixed_dataset, two_blobs


class TestTrainTuned(unittest.TestCase):

    def test_every_kind_learns_separable_blobs(self):
        ds, _ = two_blobs(80, separation=5.0, seed=1)
        for kind in ClassifierKind:
            model = train_tuned(ClassifierSpec.default(kind), ds, folds=3, budget=3, seed=0)
            self.assertGreater(training_balanced_accuracy(model, ds), 0.9, kind)
            proba = model.predict_proba(ds.X)
            np.testing.assert_allclose(proba.sum(axis=1), 1.0)

    def test_probabilities_cover_class_universe(self):
        ds = mixed_dataset(45)
        part = ds.subset(np.flatnonzero(ds.y != 2))
        model = train_tuned(ClassifierSpec.default("gaussian_nb"), part, folds=3, budget=2, seed=0)
        proba = model.predict_proba(part.X)
        self.assertEqual(proba.shape[1], 3)
        np.testing.assert_array_equal(proba[:, 2], 0.0)

    def test_deterministic(self):
        ds, _ = two_blobs(60, seed=2)
        spec = ClassifierSpec.default("knn_classifier")
        a = train_tuned(spec, ds, folds=3, budget=4, seed=5)
        b = train_tuned(spec, ds, folds=3, budget=4, seed=5)
        self.assertEqual(a.params, b.params)
        np.testing.assert_array_equal(a.predict_proba(ds.X), b.predict_proba(ds.X))

    def test_tiny_class_falls_back_to_defaults(self):
        X = np.arange(10.0)[:, None]
        ds = LabelledDataset.from_arrays(X, ["a"] * 9 + ["b"])
        model = train_tuned(ClassifierSpec.default("decision_tree"), ds, folds=5, budget=3, seed=0)
        self.assertIsNone(model.inner_score)
        self.assertEqual(model.params, ClassifierSpec.default("decision_tree").defaults)

    def test_single_class_training_set(self):
        ds, _ = two_blobs(20)
        with self.assertRaises(SingleClassError):
            train_tuned(ClassifierSpec.default("gaussian_nb"), ds.subset(np.flatnonzero(ds.y == 0)), 3, 2, 0)

    def test_confidence_margin(self):
        np.testing.assert_allclose(confidence_margin(np.array([[0.9, 0.1], [0.5, 0.5]])), [0.4, 0.0])
        np.testing.assert_allclose(confidence_margin(np.array([[0.2, 0.8], [1.0, 0.0]])), [0.3, 0.5])

    def test_probability_uncertainty_of_single_instance(self):
        rng = np.random.default_rng(4)
        points = rng.normal(loc=(1.5, 0.0), size=(30, 2))
        ds = LabelledDataset.from_arrays(np.vstack([points, -points]), ["a"] * 30 + ["b"] * 30)
        model = train_tuned(ClassifierSpec.default("gaussian_nb"), ds, folds=3, budget=2, seed=0)
        self.assertAlmostEqual(probability_uncertainty(model, np.zeros(2)), 0.0, places=6)
        for x in ds.X[:5]:
            expected = confidence_margin(model.predict_proba(x[None, :]))[0]
            self.assertAlmostEqual(probability_uncertainty(model, x), expected)
            self.assertTrue(0.0 <= probability_uncertainty(model, x) <= 0.5)


class TestTrees(unittest.TestCase):

    def test_unpruned_leaves_are_pure(self):
        ds, _ = two_blobs(60, separation=1.0, seed=3)
        tree = grow_tree(ds, pruned=False, seed=0)
        for counts in tree.leaf_class_counts.values():
            self.assertEqual(int((counts > 0).sum()), 1)
        self.assertEqual(sum(len(m) for m in tree.leaf_members.values()), 60)

    def test_pruning_never_adds_leaves(self):
        ds, _ = two_blobs(80, separation=1.0, seed=4)
        self.assertLessEqual(grow_tree(ds, pruned=True, seed=0).n_leaves, grow_tree(ds, pruned=False, seed=0).n_leaves)


class TestDensities(unittest.TestCase):

    def test_kde_without_self_integrates_to_one(self):
        points = np.array([[0.0], [0.5], [2.0]])
        total, _ = quad(lambda x: kde_density(points, np.array([x]), 0.4, include_self=False), -10, 12, points=[0.0, 0.5, 2.0], limit=200)
        self.assertAlmostEqual(total, 1.0, places=5)

    def test_self_term_raises_density_far_away(self):
        points = np.zeros((4, 1))
        far = np.array([[50.0]])
        self.assertGreater(log_kde(points, far, 1.0, include_self=True)[0], log_kde(points, far, 1.0, include_self=False)[0])

    def test_bad_width(self):
        with self.assertRaises(InputError):
            log_kde(np.zeros((2, 1)), np.zeros((1, 1)), 0.0)

    def test_silverman_positive(self):
        h = silverman_bandwidth(np.ones((10, 2)))
        self.assertTrue(np.all(h > 0))

    def test_nominal_zero_cell_with_laplace_floor(self):
        X = np.array([[0.0], [0.0], [1.0], [1.0]])
        dens = ClassConditionalDensities.fit(X, np.array([0, 0, 1, 1]), [FeatureKind.NOMINAL], 2)
        log_f, zero = dens.log_density(np.array([1.0]))
        self.assertTrue(zero[0, 0])
        self.assertEqual(log_f[0, 0], -np.inf)
        floored, _ = dens.log_density(np.array([1.0]), laplace_alpha=1.0)
        self.assertAlmostEqual(float(np.exp(floored[0, 0])), 1.0 / 4.0)
        self.assertAlmostEqual(float(np.exp(floored[1, 0])), 1.0)


class TestPlatt(unittest.TestCase):

    def test_monotone_in_score(self):
        rng = np.random.default_rng(0)
        labels = np.arange(200) % 2
        scores = labels * 2.0 - 1.0 + rng.normal(scale=0.8, size=200)
        calibration = platt_scale(scores, labels)
        p = calibration.predict(np.array([-2.0, 0.0, 2.0]))
        self.assertTrue(np.all(np.diff(p) > 0))
        self.assertTrue(np.all((p > 0) & (p < 1)))

    def test_needs_both_labels(self):
        with self.assertRaises(SingleClassError):
            platt_scale([0.1, 0.2], [1, 1])


if __name__ == '__main__':
    unittest.main()
