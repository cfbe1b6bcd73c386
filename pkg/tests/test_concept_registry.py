"""
Tests for concept scoring and assignment.
"""

import unittest
import os
import sys

import numpy as np

# Add parent directory to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

try:
    from src.saemnesia.concepts.registry import (
        RATIO_CAP,
        ConceptAssignment,
        EmptyStratumError,
        RegistryError,
        ScoreTable,
        assign,
        build_score_table,
        centralization_report,
        compute_stats,
        overlap_timesteps,
        score,
    )
    from src.saemnesia.core.sae_model import SaeParams
    from src.saemnesia.data.dataset import OBJECT, STYLE, Concept, Dataset
except ImportError:
    from unittest.case import SkipTest

    raise SkipTest("Could not import registry module")

PROPERTY_CASES = 1000


def table_from(columns, names=None, domain=OBJECT):
    """ScoreTable with one timestep from per-concept score vectors."""
    names = names or [f"C{j}" for j in range(len(columns))]
    scores = np.stack([np.asarray(c, dtype=float) for c in columns], axis=1)[:, None, :]
    concepts = [Concept(name, domain, j) for j, name in enumerate(names)]
    return ScoreTable(scores=scores, timesteps=np.array([0]), concepts=concepts)


def selector_model():
    """d=1, n=2, k=1: latent 0 carries x, latent 1 stays silent."""
    return SaeParams(
        W_enc=np.array([[1.0], [0.0]], dtype=np.float32),
        b_enc=np.zeros(2, dtype=np.float32),
        W_dec=np.array([[1.0, 0.0]], dtype=np.float32),
        b_pre=np.zeros(1, dtype=np.float32),
        k=1,
        k_aux=1,
    )


def tiny_dataset(xs, timesteps, objects, num_timesteps=1):
    return Dataset(
        X=np.asarray(xs, dtype=np.float32).reshape(-1, 1),
        timesteps=timesteps,
        object_ids=objects,
        style_ids=np.full(len(xs), -1),
        object_names=["A", "B"],
        style_names=[],
        num_timesteps=num_timesteps,
    )


class TestComputeStats(unittest.TestCase):
    """Test cases for stratum means."""

    def test_two_sample_mean(self):
        data = tiny_dataset([0.0, 2.0], [0, 0], [0, 0])
        stats = compute_stats(selector_model(), data)
        np.testing.assert_allclose(stats.mean_all(0), [1.0, 0.0])
        np.testing.assert_allclose(stats.mean_concept("A", 0), [1.0, 0.0])

    def test_single_sample(self):
        data = tiny_dataset([3.0], [0], [1])
        stats = compute_stats(selector_model(), data)
        np.testing.assert_allclose(stats.mean_concept("B", 0), [3.0, 0.0])

    def test_complement_and_empty_strata(self):
        """Test D_!c means and the errors for empty strata."""
        data = tiny_dataset([1.0, 3.0, 5.0], [0, 0, 1], [0, 1, 0], num_timesteps=3)
        stats = compute_stats(selector_model(), data)
        np.testing.assert_allclose(stats.mean_not_concept("A", 0), [3.0, 0.0])
        self.assertIsNone(stats.mean_not_concept("A", 1))
        with self.assertRaises(EmptyStratumError):
            stats.mean_concept("B", 1)
        with self.assertRaises(EmptyStratumError):
            stats.mean_all(2)
        with self.assertRaises(RegistryError):
            stats.mean_all(3)

    def test_empty_dataset(self):
        with self.assertRaises(EmptyStratumError):
            compute_stats(selector_model(), tiny_dataset([], [], []))

    def test_missing_concept_at_scored_timestep(self):
        data = tiny_dataset([1.0, 3.0, 5.0], [0, 0, 1], [0, 1, 0], num_timesteps=2)
        with self.assertRaises(EmptyStratumError):
            build_score_table(compute_stats(selector_model(), data))


class TestScore(unittest.TestCase):
    """Test cases for the score function."""

    def test_hand_example(self):
        s = score([2.0, 1.0, 1.0], [1.0, 1.0, 2.0], delta=0.0)
        np.testing.assert_allclose(s, [0.25, 0.0, -0.25])
        self.assertAlmostEqual(score([2.0, 1.0, 1.0], [1.0, 1.0, 2.0], i=0, delta=0.0), 0.25)

    def test_exclusive_latent(self):
        s = score([4.0, 0.0, 0.0], [0.0, 0.0, 0.0])
        self.assertAlmostEqual(s[0], 1.0, places=6)
        np.testing.assert_array_equal(s[1:], [0.0, 0.0])

    def test_missing_complement_keeps_concept_term(self):
        np.testing.assert_allclose(score([1.0, 3.0], None, delta=0.0), [0.25, 0.75])

    def test_symmetric_cancellation_property(self):
        """Test that identical strata give a score of exactly 0 for every latent."""
        rng = np.random.default_rng(5)
        for _ in range(PROPERTY_CASES):
            n = int(rng.integers(1, 50))
            mu = rng.exponential(size=n) * (rng.random(n) < 0.7)
            s = score(mu, mu.copy())
            self.assertTrue(np.all(s == 0.0))

    def test_argmax_scale_invariance_property(self):
        """Test that scaling both strata by c > 0 keeps the best latent."""
        rng = np.random.default_rng(19)
        checked = 0
        for _ in range(PROPERTY_CASES):
            n = int(rng.integers(2, 40))
            mu_c = rng.exponential(size=n) * (rng.random(n) < 0.8)
            mu_n = rng.exponential(size=n) * (rng.random(n) < 0.8)
            if mu_c.sum() < 0.1 or 0 < mu_n.sum() < 0.1:
                continue
            s = score(mu_c, mu_n)
            top2 = np.sort(s)[-2:]
            # delta moves each score by at most 2e-5 here
            if top2[1] - top2[0] < 1e-4:
                continue
            c = 10.0 ** rng.uniform(-2, 2)
            self.assertEqual(int(np.argmax(score(c * mu_c, c * mu_n))), int(np.argmax(s)))
            checked += 1
        self.assertGreater(checked, PROPERTY_CASES // 4)

    def test_score_sum_bounds_property(self):
        """Test sum_i score in [-1, 1], and near 0 as delta vanishes."""
        rng = np.random.default_rng(23)
        for _ in range(PROPERTY_CASES):
            n = int(rng.integers(1, 40))
            mu_c = rng.exponential(size=n) * rng.uniform(0.0, 100.0)
            mu_n = rng.exponential(size=n) * rng.uniform(0.0, 100.0)
            total = float(score(mu_c, mu_n, delta=10.0 ** rng.uniform(-8, 1)).sum())
            self.assertLessEqual(abs(total), 1.0)
            self.assertLessEqual(0.0, float(score(mu_c, None).sum()))
            self.assertLessEqual(float(score(mu_c, None).sum()), 1.0)
            if mu_c.sum() > 1e-3 and mu_n.sum() > 1e-3:
                self.assertAlmostEqual(float(score(mu_c, mu_n, delta=0.0).sum()), 0.0, places=9)


class TestAssign(unittest.TestCase):
    """Test cases for concept assignment."""

    def test_argmax(self):
        a = assign(table_from([[0.1, 0.9, 0.2]]))
        self.assertEqual(a.latent("C0"), 1)

    def test_distinct_peaks_injective(self):
        a = assign(table_from([[0.9, 0.1, 0.0], [0.0, 0.2, 0.8]]))
        self.assertTrue(a.is_injective())
        self.assertEqual(a.phi, {"C0": 0, "C1": 2})

    def test_unique_resolves_collision(self):
        """Test that the stronger concept keeps the contested latent."""
        table = table_from([[0.5, 0.3, 0.0], [0.9, 0.0, 0.4]])
        self.assertFalse(assign(table).is_injective())
        a = assign(table, unique=True)
        self.assertEqual(a.phi, {"C0": 1, "C1": 0})

    def test_unique_too_many_concepts(self):
        with self.assertRaises(RegistryError):
            assign(table_from([[1.0], [1.0]]), unique=True)

    def test_max_aggregation(self):
        scores = np.array([[[0.4], [0.4]], [[0.0], [0.7]]])
        table = ScoreTable(scores=scores, timesteps=np.array([0, 1]), concepts=[Concept("X", STYLE, 0)])
        self.assertEqual(assign(table, t_select="mean").latent("X"), 0)
        self.assertEqual(assign(table, t_select="max").latent("X"), 1)
        with self.assertRaises(RegistryError):
            assign(table, t_select="median")

    def test_permutation_equivariance_property(self):
        """Test that relabeling latents relabels the assignment, for both modes."""
        rng = np.random.default_rng(29)
        for _ in range(PROPERTY_CASES):
            C = int(rng.integers(1, 6))
            n = int(rng.integers(C, 25))
            T = int(rng.integers(1, 4))
            concepts = [Concept(f"C{j}", OBJECT if j % 2 else STYLE, j) for j in range(C)]
            scores = rng.standard_normal((n, T, C))
            table = ScoreTable(scores=scores, timesteps=np.arange(T), concepts=concepts)
            perm = rng.permutation(n)
            relabeled = ScoreTable(scores=scores[perm], timesteps=np.arange(T), concepts=concepts)
            for unique in (False, True):
                a = assign(table, unique=unique)
                b = assign(relabeled, unique=unique)
                self.assertEqual({name: int(perm[j]) for name, j in b.phi.items()}, a.phi)
                self.assertEqual(assign(table, unique=unique).phi, a.phi)
                self.assertEqual(b.domains, a.domains)

    def test_round_trip_dict(self):
        a = ConceptAssignment(phi={"A": 3, "Ink": 5}, domains={"A": OBJECT, "Ink": STYLE})
        b = ConceptAssignment.from_dict(a.to_dict())
        self.assertEqual(a, b)
        np.testing.assert_array_equal(b.object_latents(), [3])
        np.testing.assert_array_equal(b.style_latents(), [5])

    def test_malformed_dict(self):
        with self.assertRaises(RegistryError):
            ConceptAssignment.from_dict({"concepts": [{"name": "A"}]})


class TestCentralization(unittest.TestCase):
    """Test cases for centralization_report and overlap_timesteps."""

    def test_one_hot_capped(self):
        table = table_from([[0.0, 1.0, 0.0]])
        row = centralization_report(table, assign(table))[0]
        self.assertEqual(row.ratio, RATIO_CAP)
        self.assertTrue(row.dominant)

    def test_uniform_not_dominant(self):
        table = table_from([[0.2, 0.2, 0.2]])
        row = centralization_report(table, assign(table))[0]
        self.assertAlmostEqual(row.ratio, 1.0)
        self.assertFalse(row.dominant)

    def test_reference_profile(self):
        """Test a 0.0404 peak over a 0.0166 runner-up."""
        table = table_from([[0.0166, 0.0404, 0.01]])
        row = centralization_report(table, assign(table))[0]
        self.assertAlmostEqual(row.ratio, 2.43, places=2)
        self.assertTrue(row.dominant)
        self.assertEqual(row.top_latent, 1)

    def test_not_dominant_when_top_is_not_assigned(self):
        table = table_from([[0.0, 1.0, 0.0]])
        other = ConceptAssignment(phi={"C0": 0}, domains={"C0": OBJECT})
        self.assertFalse(centralization_report(table, other)[0].dominant)

    def test_overlap(self):
        scores = np.zeros((3, 4, 2))
        scores[0, :, 0] = 1.0
        scores[0, :2, 1] = 1.0
        scores[2, 2:, 1] = 1.0
        concepts = [Concept("A", OBJECT, 0), Concept("B", OBJECT, 1)]
        table = ScoreTable(scores=scores, timesteps=np.arange(4), concepts=concepts)
        self.assertEqual(overlap_timesteps(table, "A", "A"), 4)
        self.assertEqual(overlap_timesteps(table, "A", "B"), 2)
        scores[0, :, 1] = 0.0
        scores[1, :2, 1] = 1.0
        self.assertEqual(overlap_timesteps(table, "A", "B"), 0)


if __name__ == "__main__":
    unittest.main()
