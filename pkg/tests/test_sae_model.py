"""
Tests for the TopK sparse autoencoder.
"""

import unittest
import os
import sys

import numpy as np

# Add parent directory to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

try:
    from src.saemnesia.core.numerics import make_rng
    from src.saemnesia.core.sae_model import (
        DeadLatentTracker,
        ModelError,
        SaeParams,
        decode,
        encode,
        encode_batch,
        init_params,
        update_dead_tracker,
        update_dead_tracker_batch,
    )
except ImportError:
    from unittest.case import SkipTest

    raise SkipTest("Could not import sae_model module")

# Randomized cases per property test
PROPERTY_CASES = 1000


def hand_params(W_enc, W_dec=None, b_pre=None, k=1):
    W_enc = np.asarray(W_enc, dtype=np.float32)
    n, d = W_enc.shape
    return SaeParams(
        W_enc=W_enc,
        b_enc=np.zeros(n, dtype=np.float32),
        W_dec=np.zeros((d, n), dtype=np.float32) if W_dec is None else np.asarray(W_dec, dtype=np.float32),
        b_pre=np.zeros(d, dtype=np.float32) if b_pre is None else np.asarray(b_pre, dtype=np.float32),
        k=k,
        k_aux=1,
    )


class TestEncode(unittest.TestCase):
    """Test cases for the forward pass."""

    def test_hand_example(self):
        """Test d=2, n=3, k=1 against a hand evaluation."""
        p = hand_params([[1, 0], [0, 1], [1, 1]])
        enc = encode(p, np.array([1.0, 2.0]))
        np.testing.assert_array_equal(enc.v, [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(enc.z_support, [2])
        np.testing.assert_array_equal(enc.z, [0.0, 0.0, 3.0])

    def test_zero_params(self):
        """Test that all-zero parameters give v = z = x_hat = 0."""
        p = hand_params(np.zeros((4, 3)), k=2)
        enc = encode(p, np.array([1.0, -2.0, 0.5]))
        self.assertFalse(enc.v.any())
        self.assertFalse(enc.z.any())
        self.assertFalse(enc.x_hat.any())

    def test_input_at_b_pre(self):
        """Test that centering makes v vanish when x = b_pre and b_enc = 0."""
        rng = np.random.default_rng(0)
        b_pre = rng.standard_normal(5)
        p = hand_params(rng.standard_normal((7, 5)), W_dec=rng.standard_normal((5, 7)), b_pre=b_pre, k=3)
        enc = encode(p, b_pre.astype(np.float32))
        np.testing.assert_allclose(enc.v, 0.0, atol=1e-6)

    def test_wrong_width(self):
        p = hand_params(np.zeros((3, 2)))
        with self.assertRaises(ModelError):
            encode(p, np.zeros(3))

    def test_batch_rows_match_single(self):
        """Test that batched encoding agrees with per-sample encoding."""
        p = init_params(6, 20, 4, 5, None, make_rng(1))
        X = make_rng(2).standard_normal((9, 6)).astype(np.float32)
        batch = encode_batch(p, X)
        for b in range(9):
            single = encode(p, X[b])
            np.testing.assert_array_equal(batch.row(b).z_support, single.z_support)
            np.testing.assert_allclose(batch.row(b).x_hat, single.x_hat)
        self.assertTrue(np.all(np.count_nonzero(batch.dense_z(), axis=1) <= 4))


class TestDecode(unittest.TestCase):
    """Test cases for decode."""

    def test_empty_support(self):
        p = hand_params(np.zeros((2, 2)), b_pre=[0.5, -1.0])
        np.testing.assert_array_equal(decode(p, [], []), [0.5, -1.0])

    def test_single_column(self):
        p = hand_params(np.zeros((2, 2)), W_dec=[[1, 0], [0, 1]])
        np.testing.assert_array_equal(decode(p, [0], [1.0]), [1.0, 0.0])

    def test_hand_example(self):
        """Test support {0, 1}, values [2, 3], identity columns, b_pre [1, 1]."""
        p = hand_params(np.zeros((2, 2)), W_dec=[[1, 0], [0, 1]], b_pre=[1, 1], k=2)
        np.testing.assert_array_equal(decode(p, [0, 1], [2.0, 3.0]), [3.0, 4.0])

    def test_out_of_range(self):
        p = hand_params(np.zeros((2, 2)))
        with self.assertRaises(ModelError):
            decode(p, [2], [1.0])


class TestInitParams(unittest.TestCase):
    """Test cases for init_params."""

    def test_unit_decoder_columns(self):
        p = init_params(16, 64, 4, 8, None, make_rng(5))
        np.testing.assert_allclose(p.decoder_norms(), 1.0, atol=1e-6)
        np.testing.assert_array_equal(p.W_enc, p.W_dec.T)
        self.assertFalse(p.b_enc.any())
        self.assertFalse(p.b_pre.any())

    def test_data_mean_sets_b_pre(self):
        mean = np.arange(4, dtype=np.float64)
        p = init_params(4, 8, 2, 2, mean, make_rng(0))
        np.testing.assert_array_equal(p.b_pre, mean.astype(np.float32))

    def test_same_seed_bit_identical(self):
        a = init_params(8, 32, 4, 4, None, make_rng(9))
        b = init_params(8, 32, 4, 4, None, make_rng(9))
        self.assertTrue(a.equal(b))

    def test_k_out_of_range(self):
        with self.assertRaises(ModelError):
            init_params(4, 8, 9, 2, None, make_rng(0))


class TestDeadLatentTracker(unittest.TestCase):
    """Test cases for dead-latent bookkeeping."""

    def test_empty_support_increments(self):
        t = update_dead_tracker(DeadLatentTracker.fresh(5, window=3), [])
        np.testing.assert_array_equal(t.last_fired, [1, 1, 1, 1, 1])

    def test_firing_resets(self):
        t = DeadLatentTracker(last_fired=np.array([2, 2]), window=3)
        t = update_dead_tracker(t, [0])
        np.testing.assert_array_equal(t.last_fired, [0, 3])
        self.assertFalse(t.is_dead(0))
        self.assertTrue(t.is_dead(1))
        np.testing.assert_array_equal(t.dead(), [1])

    def test_zero_value_does_not_fire(self):
        t = update_dead_tracker(DeadLatentTracker.fresh(3), [0, 1], values=[1.0, 0.0])
        np.testing.assert_array_equal(t.last_fired, [0, 1, 1])

    def test_batch_matches_sequential(self):
        """Test that the batched update equals row-by-row updates."""
        rng = np.random.default_rng(3)
        for _ in range(50):
            n, k, B = 12, 3, int(rng.integers(1, 10))
            support = np.stack([rng.choice(n, size=k, replace=False) for _ in range(B)])
            values = rng.integers(0, 2, size=(B, k)).astype(float)
            start = DeadLatentTracker(last_fired=rng.integers(0, 5, size=n), window=4)
            seq = start
            for b in range(B):
                seq = update_dead_tracker(seq, support[b], values[b])
            batched = update_dead_tracker_batch(start, support, values)
            np.testing.assert_array_equal(batched.last_fired, seq.last_fired)

class TestModelProperties(unittest.TestCase):
    """Randomized structural checks of the forward pass."""

    def test_full_width_reconstruction_identity(self):
        """Test x_hat = x when k = n = d and the decoder inverts the encoder."""
        rng = make_rng(41)
        for _ in range(PROPERTY_CASES):
            d = int(rng.integers(1, 9))
            Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
            W_enc = Q * rng.uniform(0.5, 2.0, size=d)
            p = SaeParams(
                W_enc=W_enc,
                b_enc=np.zeros(d),
                W_dec=np.linalg.inv(W_enc),
                b_pre=rng.standard_normal(d),
                k=d,
                k_aux=1,
            )
            v = rng.uniform(0.1, 3.0, size=(int(rng.integers(1, 5)), d))
            X = p.b_pre + v @ p.W_dec.T
            enc = encode_batch(p, X)
            np.testing.assert_allclose(enc.X_hat, X, rtol=0, atol=1e-4)

    def test_permutation_equivariance(self):
        """Test that relabeling latents permutes V and maps the support through perm."""
        rng = make_rng(43)
        for _ in range(PROPERTY_CASES):
            d, n = int(rng.integers(2, 9)), int(rng.integers(2, 33))
            k = int(rng.integers(1, n + 1))
            p = init_params(d, n, k, 1, None, rng)
            p.b_enc = rng.standard_normal(n).astype(p.dtype) * 0.1
            perm = rng.permutation(n)
            q = p.permuted(perm)
            X = rng.standard_normal((int(rng.integers(1, 5)), d)).astype(np.float32)
            ep, eq = encode_batch(p, X), encode_batch(q, X)
            np.testing.assert_allclose(eq.V, ep.V[:, perm], rtol=1e-12, atol=1e-12)
            np.testing.assert_allclose(eq.X_hat, ep.X_hat, rtol=1e-9, atol=1e-9)
            for b in range(X.shape[0]):
                live_p = set(ep.support[b][ep.values[b] > 0].tolist())
                live_q = set(perm[eq.support[b][eq.values[b] > 0]].tolist())
                self.assertEqual(live_q, live_p)



if __name__ == "__main__":
    unittest.main()
