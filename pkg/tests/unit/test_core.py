import unittest

import numpy as np

from meta_uncertainty.core import (
    DatasetSchema,
    FeatureScaler,
    LabelledDataset,
    derive_seed,
    make_rng,
    make_stratified_folds,
    zscore,
)
from meta_uncertainty.errors import ClassTooSmallError, InputError, SchemaMismatchError, SingleClassError
from tests.builders import mixed_dataset, two_blobs


class TestLabelledDataset(unittest.TestCase):

    def test_from_arrays_sorts_class_universe(self):
        ds = LabelledDataset.from_arrays(np.zeros((4, 1)), ["z", "a", "z", "a"])
        self.assertEqual(ds.classes, ("a", "z"))
        np.testing.assert_array_equal(ds.y, [1, 0, 1, 0])
        np.testing.assert_array_equal(ds.labels, ["z", "a", "z", "a"])

    def test_single_class_rejected(self):
        with self.assertRaises(SingleClassError):
            LabelledDataset.from_arrays(np.zeros((3, 1)), ["a", "a", "a"])

    def test_feature_count_must_match_schema(self):
        with self.assertRaises(SchemaMismatchError):
            LabelledDataset(schema=DatasetSchema.continuous(2), X=np.zeros((4, 3)), y=[0, 1, 0, 1], classes=("a", "b"))

    def test_non_finite_rejected(self):
        X = np.array([[0.0], [np.nan], [1.0], [2.0]])
        with self.assertRaises(InputError):
            LabelledDataset.from_arrays(X, ["a", "b", "a", "b"])

    def test_arrays_are_read_only(self):
        ds, _ = two_blobs(20)
        with self.assertRaises(ValueError):
            ds.X[0, 0] = 5.0

    def test_subset_keeps_class_universe(self):
        ds = mixed_dataset(30)
        part = ds.subset([0, 3, 6])
        self.assertEqual(part.classes, ds.classes)
        np.testing.assert_array_equal(part.class_counts(), [3, 0, 0])


class TestSeeding(unittest.TestCase):

    def test_derive_seed_is_deterministic_and_key_sensitive(self):
        self.assertEqual(derive_seed(7, "a", 1), derive_seed(7, "a", 1))
        self.assertNotEqual(derive_seed(7, "a", 1), derive_seed(7, "a", 2))
        self.assertNotEqual(derive_seed(7, "a"), derive_seed(8, "a"))

    def test_make_rng_streams_repeat(self):
        np.testing.assert_array_equal(make_rng(3, "x").random(5), make_rng(3, "x").random(5))


class TestFolds(unittest.TestCase):

    def test_every_instance_in_exactly_one_fold(self):
        ds, _ = two_blobs(53)
        plan = make_stratified_folds(ds, 5, seed=1)
        seen = np.concatenate([plan.test_indices(f) for f in range(plan.k)])
        np.testing.assert_array_equal(np.sort(seen), np.arange(53))

    def test_folds_are_stratified(self):
        ds, _ = two_blobs(100)
        plan = make_stratified_folds(ds, 5, seed=1)
        for fold in range(5):
            counts = np.bincount(ds.y[plan.test_indices(fold)], minlength=2)
            np.testing.assert_array_equal(counts, [10, 10])

    def test_same_seed_same_plan(self):
        ds, _ = two_blobs(40)
        np.testing.assert_array_equal(
            make_stratified_folds(ds, 4, 9).assignments, make_stratified_folds(ds, 4, 9).assignments
        )

    def test_train_indices_exclude_folds(self):
        ds, _ = two_blobs(40)
        plan = make_stratified_folds(ds, 4, 0)
        train = plan.train_indices(0, 1)
        self.assertFalse(np.isin(train, plan.test_indices(0)).any())
        self.assertFalse(np.isin(train, plan.test_indices(1)).any())
        self.assertEqual(len(train), 20)

    def test_small_class_rejected(self):
        ds = LabelledDataset.from_arrays(np.arange(8.0)[:, None], ["a"] * 6 + ["b"] * 2)
        with self.assertRaises(ClassTooSmallError) as ctx:
            make_stratified_folds(ds, 3, 0)
        self.assertEqual(ctx.exception.class_label, "b")


class TestFeatureScaler(unittest.TestCase):

    def test_min_max_and_one_hot(self):
        ds = mixed_dataset(30)
        Z = FeatureScaler.for_dataset(ds).transform(ds.X)
        # x, grade, then three colour indicators
        self.assertEqual(Z.shape, (30, 5))
        self.assertAlmostEqual(Z[:, 0].min(), 0.0)
        self.assertAlmostEqual(Z[:, 0].max(), 1.0)
        np.testing.assert_allclose(Z[:, 2:].sum(axis=1), 1.0)

    def test_queries_outside_range_leave_unit_interval(self):
        ds = LabelledDataset.from_arrays(np.array([[0.0], [1.0], [2.0], [3.0]]), ["a", "b", "a", "b"])
        scaler = FeatureScaler.for_dataset(ds)
        self.assertAlmostEqual(float(scaler.transform([[6.0]])[0, 0]), 2.0)

    def test_wrong_width_rejected(self):
        ds, _ = two_blobs(20)
        with self.assertRaises(SchemaMismatchError):
            FeatureScaler.for_dataset(ds).transform(np.zeros((1, 3)))


class TestZscore(unittest.TestCase):

    def test_standardizes(self):
        z, degenerate = zscore([1.0, 2.0, 3.0])
        self.assertFalse(degenerate)
        self.assertAlmostEqual(float(z.mean()), 0.0)
        self.assertAlmostEqual(float(z.std()), 1.0)

    def test_constant_is_degenerate(self):
        z, degenerate = zscore([4.0, 4.0, 4.0])
        self.assertTrue(degenerate)
        np.testing.assert_array_equal(z, 0.0)


if __name__ == '__main__':
    unittest.main()
