"""
Tests for the linear probes.
"""

import unittest
import os
import sys

import numpy as np

# Add parent directory to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

try:
    from src.saemnesia.data.dataset import OBJECT, STYLE, Dataset
    from src.saemnesia.data.probe import (
        LinearProbe,
        ProbeError,
        accuracy_from_predictions,
        probe_eval,
        probe_train,
    )
    from src.saemnesia.data.synth_activations import build_spec, generate
except ImportError:
    from unittest.case import SkipTest

    raise SkipTest("Could not import probe module")


class TestProbe(unittest.TestCase):
    """Test cases for probe training and evaluation."""

    @classmethod
    def setUpClass(cls):
        cls.data = generate(build_spec(d=32, num_objects=4, num_styles=3, timesteps=3, samples_per_pair=30, seed=11))

    def test_raw_object_probe_is_accurate(self):
        probe = probe_train(self.data, domain=OBJECT)
        acc = probe_eval(probe, self.data)
        self.assertGreaterEqual(acc.macro, 0.9)
        self.assertEqual(set(acc.per_concept), set(self.data.object_names))

    def test_raw_style_probe_is_accurate(self):
        probe = probe_train(self.data, domain=STYLE)
        self.assertGreaterEqual(probe_eval(probe, self.data).macro, 0.9)

    def test_collapsed_representation_is_chance(self):
        probe = probe_train(self.data, domain=OBJECT)
        acc = probe_eval(probe, self.data, representation=lambda d: np.zeros((len(d), d.d)))
        # every row gets the same prediction, so exactly one class is right
        self.assertEqual(sorted(acc.per_concept.values()), [0.0, 0.0, 0.0, 1.0])
        self.assertAlmostEqual(acc.macro, 0.25)

    def test_predicts_vocabulary_ids(self):
        keep = np.flatnonzero(np.isin(self.data.object_ids, [1, 3]))
        probe = probe_train(self.data.subset(keep), domain=OBJECT)
        np.testing.assert_array_equal(probe.classes, [1, 3])
        self.assertTrue(set(np.unique(probe.predict(self.data.X))) <= {1, 3})

    def test_needs_two_classes(self):
        keep = np.flatnonzero(self.data.object_ids == 0)
        with self.assertRaises(ProbeError):
            probe_train(self.data.subset(keep), domain=OBJECT)

    def test_eval_without_labels(self):
        probe = probe_train(self.data, domain=STYLE)
        unlabeled = Dataset(
            X=self.data.X[:4],
            timesteps=self.data.timesteps[:4],
            object_ids=self.data.object_ids[:4],
            style_ids=np.full(4, -1),
            object_names=self.data.object_names,
            style_names=self.data.style_names,
            num_timesteps=self.data.num_timesteps,
        )
        with self.assertRaises(ProbeError):
            probe_eval(probe, unlabeled)


class TestAccuracyFromPredictions(unittest.TestCase):
    """Test cases for accuracy_from_predictions."""

    def setUp(self):
        self.probe = LinearProbe(domain=OBJECT, class_names=["A", "B", "C"], classes=np.arange(3), weights=np.zeros((2, 3)))

    def test_hand_example(self):
        labels = np.array([0, 0, 1, 1, 2, -1])
        predicted = np.array([0, 1, 1, 1, 0, 2])
        acc = accuracy_from_predictions(self.probe, labels, predicted)
        self.assertEqual(acc.per_concept, {"A": 0.5, "B": 1.0, "C": 0.0})
        self.assertAlmostEqual(acc.macro, 0.5)
        self.assertAlmostEqual(acc.overall, 3 / 5)

    def test_mask(self):
        labels = np.array([0, 0, 1, 1])
        predicted = np.array([0, 1, 0, 0])
        acc = accuracy_from_predictions(self.probe, labels, predicted, mask=np.array([True, True, False, False]))
        self.assertEqual(acc.per_concept, {"A": 0.5})
        empty = accuracy_from_predictions(self.probe, labels, predicted, mask=np.zeros(4, dtype=bool))
        self.assertTrue(np.isnan(empty.macro))
        self.assertTrue(np.isnan(empty.overall))
        self.assertEqual(acc.as_dict()["per_concept"], {"A": 0.5})


if __name__ == "__main__":
    unittest.main()
