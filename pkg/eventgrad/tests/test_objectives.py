#!/usr/bin/env python3
"""
test_objectives.py — Gradient oracles, shards and smoothness constants
"""

from __future__ import annotations

import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np

REPO_ROOT = Path(__file__).resolve().parents[2]
if str(REPO_ROOT) not in sys.path:
    sys.path.insert(0, str(REPO_ROOT))

from eventgrad.sim.errors import DimensionError, ObjectiveError
from eventgrad.sim.objectives import (
    BlockLayout,
    LeastSquaresObjective,
    LogisticObjective,
    MLPObjective,
    ModelState,
    ObjectiveKind,
    ObjectiveSpec,
    global_accuracy,
    global_gradient,
    global_loss,
    least_squares_optimum,
    lipschitz_constant,
    load_csv_dataset,
    make_objectives,
)


def _numeric_gradient(obj, x, step=1e-6):
    grad = np.zeros_like(x)
    for idx in range(x.size):
        e = np.zeros_like(x)
        e[idx] = step
        grad[idx] = (obj.local_loss(x + e) - obj.local_loss(x - e)) / (2.0 * step)
    return grad


class TestGradientCorrectness(unittest.TestCase):
    """Analytic gradients against central differences."""

    @classmethod
    def setUpClass(cls):
        cls.rng = np.random.default_rng(11)
        cls.objectives = {}
        for kind in ObjectiveKind:
            spec = ObjectiveSpec(kind=kind, dim=3, samples_per_pe=12, batch_size=4, classes=3, hidden=4)
            cls.objectives[kind] = make_objectives(spec, 2, np.random.default_rng(5))[0]

    def test_full_gradient_matches_finite_difference(self):
        for kind, obj in self.objectives.items():
            for trial in range(3):
                with self.subTest(kind=kind.value, trial=trial):
                    x = 0.5 * self.rng.standard_normal(obj.layout.total_dim)
                    analytic = obj.full_gradient(x)
                    numeric = _numeric_gradient(obj, x)
                    rel = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-8)
                    self.assertLess(rel, 1e-5)

    def test_block_layouts(self):
        self.assertEqual(self.objectives[ObjectiveKind.LEAST_SQUARES].layout.num_blocks, 1)
        self.assertEqual(self.objectives[ObjectiveKind.LOGISTIC].layout.sizes(), [9, 3])
        self.assertEqual(self.objectives[ObjectiveKind.MLP].layout.sizes(), [12, 4, 12, 3])

    def test_model_state_accepted(self):
        obj = self.objectives[ObjectiveKind.MLP]
        x = np.linspace(-1.0, 1.0, obj.layout.total_dim)
        state = ModelState(layout=obj.layout, values=x)
        np.testing.assert_array_equal(obj.full_gradient(state), obj.full_gradient(x))
        self.assertEqual(state.block(1).size, 4)

    def test_dimension_mismatch(self):
        obj = self.objectives[ObjectiveKind.LEAST_SQUARES]
        with self.assertRaises(DimensionError):
            obj.full_gradient(np.zeros(obj.layout.total_dim + 1))
        with self.assertRaises(DimensionError):
            ModelState(layout=obj.layout, values=np.zeros(2))


class TestClosedForms(unittest.TestCase):

    def test_identity_minimizer(self):
        obj = LeastSquaresObjective(np.eye(3), np.zeros(3), batch_size=3)
        np.testing.assert_array_equal(obj.stochastic_gradient(np.zeros(3), np.random.default_rng(0)), np.zeros(3))

    def test_least_squares_formula(self):
        A = np.array([[2.0, 1.0], [0.0, 3.0], [1.0, -1.0]])
        b = np.array([1.0, 2.0, 0.5])
        x = np.array([0.3, -0.7])
        obj = LeastSquaresObjective(A, b, batch_size=3)
        np.testing.assert_allclose(obj.full_gradient(x), A.T @ (A @ x - b), atol=1e-14)

    def test_stationary_point(self):
        A = np.array([[2.0, 1.0], [1.0, 3.0]])
        b = np.array([1.0, -1.0])
        obj = LeastSquaresObjective(A, b, batch_size=2)
        np.testing.assert_allclose(obj.full_gradient(np.linalg.solve(A, b)), 0.0, atol=1e-12)

    def test_logistic_symmetric_bias(self):
        obj = LogisticObjective(np.array([[1.0, 0.0], [-1.0, 0.0]]), np.array([0, 1]), batch_size=2, classes=2)
        grad = obj.full_gradient(np.zeros(obj.layout.total_dim))
        np.testing.assert_allclose(obj.layout.view(grad, 1), 0.0, atol=1e-15)

    def test_global_loss_at_zero(self):
        b1, b2 = np.array([1.0, 2.0]), np.array([3.0, 0.0])
        objs = [LeastSquaresObjective(np.eye(2), b1, 2), LeastSquaresObjective(np.eye(2), b2, 2)]
        self.assertAlmostEqual(global_loss(objs, np.zeros(2)), 0.5 * (b1 @ b1 + b2 @ b2) / 2, places=14)


class TestStochasticOracle(unittest.TestCase):

    def test_full_batch_is_exact(self):
        A = np.arange(12, dtype=float).reshape(4, 3)
        obj = LeastSquaresObjective(A, np.ones(4), batch_size=4)
        x = np.array([0.1, -0.2, 0.3])
        rng = np.random.default_rng(0)
        np.testing.assert_array_equal(obj.stochastic_gradient(x, rng), obj.full_gradient(x))

    def test_same_seed_same_batch(self):
        obj = make_objectives(ObjectiveSpec(dim=4, samples_per_pe=20, batch_size=3), 1, np.random.default_rng(1))[0]
        x = np.ones(4)
        g1 = obj.stochastic_gradient(x, np.random.default_rng(42))
        g2 = obj.stochastic_gradient(x, np.random.default_rng(42))
        np.testing.assert_array_equal(g1, g2)

    def test_unbiased_per_coordinate(self):
        draws = 10000
        for kind in ObjectiveKind:
            spec = ObjectiveSpec(kind=kind, dim=3, samples_per_pe=10, batch_size=2, classes=3, hidden=4)
            obj = make_objectives(spec, 1, np.random.default_rng(2))[0]
            x = 0.3 * np.random.default_rng(8).standard_normal(obj.layout.total_dim)
            rng = np.random.default_rng(9)
            samples = np.array([obj.stochastic_gradient(x, rng) for _ in range(draws)])
            mean = samples.mean(axis=0)
            spread = samples.std(axis=0, ddof=1)
            full = obj.full_gradient(x)
            with self.subTest(kind=kind.value):
                # 4 standard errors per coordinate
                self.assertTrue(np.all(np.abs(mean - full) <= 4.0 * spread / np.sqrt(draws) + 1e-12))

    def test_singleton_batches_average_to_full_gradient(self):
        for kind in ObjectiveKind:
            spec = ObjectiveSpec(kind=kind, dim=3, samples_per_pe=9, batch_size=1, classes=3, hidden=4)
            obj = make_objectives(spec, 1, np.random.default_rng(4))[0]
            x = 0.5 * np.random.default_rng(5).standard_normal(obj.layout.total_dim)
            singles = [obj.gradient_on(x, np.array([r])) for r in range(obj.shard_size)]
            with self.subTest(kind=kind.value):
                np.testing.assert_allclose(np.mean(singles, axis=0), obj.full_gradient(x), rtol=1e-10, atol=1e-12)

    def test_invalid_labels(self):
        with self.assertRaises(ObjectiveError):
            LogisticObjective(np.zeros((3, 2)), np.array([0, 1, 2]), batch_size=1, classes=2)
        with self.assertRaises(ObjectiveError):
            MLPObjective(np.zeros((2, 2)), np.array([0.5, 1.0]), batch_size=1, classes=2, hidden=3)

    def test_bad_batch(self):
        with self.assertRaises(ObjectiveError):
            LeastSquaresObjective(np.eye(2), np.zeros(2), batch_size=0)


class TestShards(unittest.TestCase):

    def test_deterministic(self):
        spec = ObjectiveSpec(dim=5, samples_per_pe=8)
        a = make_objectives(spec, 4, np.random.default_rng(3))
        b = make_objectives(spec, 4, np.random.default_rng(3))
        for oa, ob in zip(a, b):
            np.testing.assert_array_equal(oa.features, ob.features)
            np.testing.assert_array_equal(oa.targets, ob.targets)

    def test_identical_shards(self):
        spec = ObjectiveSpec(kind=ObjectiveKind.LOGISTIC, dim=3, samples_per_pe=6, identical_shards=True)
        objs = make_objectives(spec, 3, np.random.default_rng(4))
        for obj in objs[1:]:
            np.testing.assert_array_equal(obj.features, objs[0].features)

    def test_shard_sizes(self):
        objs = make_objectives(ObjectiveSpec(dim=2, samples_per_pe=7), 5, np.random.default_rng(0))
        self.assertEqual([o.shard_size for o in objs], [7] * 5)

    def test_csv_dataset(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "data.csv"
            path.write_text("# x1,x2,y\n1,0,1\n0,1,2\n1,1,3\n2,1,4\n", encoding="utf-8")
            features, targets = load_csv_dataset(path)
            self.assertEqual(features.shape, (4, 2))
            np.testing.assert_array_equal(targets, [1, 2, 3, 4])

            spec = ObjectiveSpec(dim=2, batch_size=1, csv_path=str(path))
            objs = make_objectives(spec, 2, np.random.default_rng(0))
            self.assertEqual([o.shard_size for o in objs], [2, 2])
            with self.assertRaises(ObjectiveError):
                make_objectives(spec, 5, np.random.default_rng(0))

    def test_global_quantities(self):
        objs = make_objectives(ObjectiveSpec(dim=3, samples_per_pe=5), 3, np.random.default_rng(6))
        x = np.array([0.2, 0.0, -0.4])
        self.assertAlmostEqual(global_loss(objs, x), np.mean([o.local_loss(x) for o in objs]), places=12)
        np.testing.assert_allclose(
            global_gradient(objs, x), np.mean([o.full_gradient(x) for o in objs], axis=0), atol=1e-12
        )


class TestAccuracyAndInit(unittest.TestCase):

    def test_logistic_accuracy(self):
        obj = LogisticObjective(np.array([[1.0, 0.0], [-1.0, 0.0]]), np.array([0, 1]), batch_size=2, classes=2)
        w = np.array([[1.0, -1.0], [0.0, 0.0]])
        x = np.concatenate([w.reshape(-1), np.zeros(2)])
        self.assertEqual(obj.accuracy(x), 1.0)
        # all logits tie at zero: every row predicted as class 0
        self.assertEqual(obj.accuracy(np.zeros(obj.layout.total_dim)), 0.5)

    def test_global_accuracy_weights_rows(self):
        a = LogisticObjective(np.array([[1.0, 0.0], [-1.0, 0.0]]), np.array([0, 1]), batch_size=2, classes=2)
        b = LogisticObjective(np.ones((4, 2)), np.zeros(4), batch_size=2, classes=2)
        self.assertAlmostEqual(global_accuracy([a, b], np.zeros(a.layout.total_dim)), 5.0 / 6.0, places=12)

    def test_regression_has_no_accuracy(self):
        obj = LeastSquaresObjective(np.eye(2), np.zeros(2), batch_size=2)
        self.assertIsNone(obj.accuracy(np.zeros(2)))
        self.assertIsNone(global_accuracy([obj], np.zeros(2)))

    def test_mlp_accuracy_in_range(self):
        spec = ObjectiveSpec(kind=ObjectiveKind.MLP, dim=3, samples_per_pe=12, classes=3, hidden=4)
        obj = make_objectives(spec, 1, np.random.default_rng(3))[0]
        acc = obj.accuracy(obj.initial_model(np.random.default_rng(0)))
        self.assertGreaterEqual(acc, 0.0)
        self.assertLessEqual(acc, 1.0)

    def test_default_init(self):
        mlp = MLPObjective(np.zeros((2, 3)), np.array([0, 1]), batch_size=1, classes=2, hidden=4)
        x = mlp.initial_model(np.random.default_rng(0))
        self.assertTrue(np.all(mlp.layout.view(x, 0) != 0.0))
        self.assertTrue(np.all(mlp.layout.view(x, 2) != 0.0))
        np.testing.assert_array_equal(mlp.layout.view(x, 1), 0.0)
        np.testing.assert_array_equal(mlp.layout.view(x, 3), 0.0)

        ls = LeastSquaresObjective(np.eye(3), np.zeros(3), batch_size=3)
        np.testing.assert_array_equal(ls.initial_model(np.random.default_rng(0)), np.zeros(3))

    def test_explicit_scale(self):
        mlp = MLPObjective(np.zeros((2, 3)), np.array([0, 1]), batch_size=1, classes=2, hidden=4)
        x = mlp.initial_model(np.random.default_rng(0), 0.5)
        np.testing.assert_array_equal(x, 0.5 * np.random.default_rng(0).standard_normal(mlp.layout.total_dim))
        np.testing.assert_array_equal(mlp.initial_model(np.random.default_rng(1), 0.0), 0.0)


class TestSmoothness(unittest.TestCase):

    def test_identity_design_has_unit_lipschitz(self):
        obj = LeastSquaresObjective(np.eye(4), np.zeros(4), batch_size=4)
        self.assertAlmostEqual(lipschitz_constant([obj], np.random.default_rng(0)), 1.0, places=12)

    def test_finite_difference_for_nonlinear(self):
        objs = make_objectives(
            ObjectiveSpec(kind=ObjectiveKind.LOGISTIC, dim=3, samples_per_pe=10), 2, np.random.default_rng(1)
        )
        L = lipschitz_constant(objs, np.random.default_rng(2))
        self.assertGreater(L, 0.0)
        # softmax cross-entropy (mean) is bounded by the mean squared row norm (+1 for the bias)
        bound = max(np.mean(np.sum(o.features ** 2, axis=1)) + 1.0 for o in objs)
        self.assertLessEqual(L, bound + 1e-6)

    def test_least_squares_optimum(self):
        A = np.array([[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]])
        x_true = np.array([1.5, -0.5])
        objs = [LeastSquaresObjective(A, A @ x_true, batch_size=3)] * 2
        x_star, f_star = least_squares_optimum(objs)
        np.testing.assert_allclose(x_star, x_true, atol=1e-10)
        self.assertAlmostEqual(f_star, 0.0, places=12)
        self.assertTrue(np.allclose(global_gradient(objs, x_star), 0.0, atol=1e-9))

    def test_optimum_requires_least_squares(self):
        obj = LogisticObjective(np.zeros((2, 2)), np.array([0, 1]), batch_size=1, classes=2)
        with self.assertRaises(ObjectiveError):
            least_squares_optimum([obj])

    def test_layout_requires_blocks(self):
        with self.assertRaises(ObjectiveError):
            BlockLayout.from_shapes([])


if __name__ == "__main__":
    unittest.main(verbosity=2)
