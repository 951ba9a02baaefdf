import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hark import mixup
from hark.core import ScoreVector
from hark.errors import ValidationError
from hark.mixup import MixupConfig, mix, pair_probabilities, sample_lambda, sample_pair


class TestPairProbabilities:
    def test_frozen_example(self):
        # Hand-normalized e^{-1/2} and e^{-2} for labels [0, 1, 2], anchor 0.
        p = pair_probabilities([0.0, 1.0, 2.0], anchor=0, sigma=1.0)
        assert abs(p[1] - 0.8175744761936437) < 1e-5
        assert abs(p[2] - 0.18242552380635635) < 1e-5
        assert p[0] == 0.0

    def test_identical_labels_uniform(self):
        p = pair_probabilities([2.0] * 6, anchor=3, sigma=1.0)
        expected = np.full(6, 1 / 5)
        expected[3] = 0.0
        np.testing.assert_allclose(p, expected, atol=1e-12)

    def test_huge_sigma_flattens(self):
        p = pair_probabilities([0.0, 5.0, 9.0], anchor=1, sigma=1e6)
        np.testing.assert_allclose(p[[0, 2]], [0.5, 0.5], atol=1e-6)

    def test_sums_to_one(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            labels = rng.normal(size=rng.integers(2, 12))
            p = pair_probabilities(labels, anchor=0, sigma=rng.uniform(0.1, 4))
            assert abs(p.sum() - 1.0) < 1e-12

    @settings(max_examples=50, deadline=None)
    @given(
        shift=st.floats(-100, 100, allow_nan=False),
        seed=st.integers(0, 10_000),
        n=st.integers(2, 10),
    )
    def test_translation_invariance(self, shift, seed, n):
        rng = np.random.default_rng(seed)
        labels = rng.normal(size=(n, 5))
        p1 = pair_probabilities(labels, anchor=0, sigma=1.3)
        p2 = pair_probabilities(labels + shift, anchor=0, sigma=1.3)
        np.testing.assert_allclose(p1, p2, atol=1e-9)

    def test_accepts_score_vectors(self):
        labels = [ScoreVector(values=[v]) for v in (0.0, 1.0, 2.0)]
        p = pair_probabilities(labels, anchor=0, sigma=1.0)
        assert abs(p[1] - 0.81757) < 1e-4

    def test_single_item_rejected(self):
        with pytest.raises(ValidationError):
            pair_probabilities([1.0], anchor=0, sigma=1.0)


class TestSamplePair:
    def test_two_item_batch_always_other(self):
        rng = np.random.default_rng(0)
        cfg = MixupConfig()
        for _ in range(20):
            assert sample_pair([1.0, 9.0], 0, cfg, rng) == 1
            assert sample_pair([1.0, 9.0], 1, cfg, rng) == 0

    def test_empirical_frequency_matches_kernel(self):
        rng = np.random.default_rng(7)
        cfg = MixupConfig(sigma=1.0)
        n = 20000
        hits = sum(sample_pair([0.0, 1.0, 2.0], 0, cfg, rng) == 1 for _ in range(n))
        p = 0.8175744761936437
        se = math.sqrt(p * (1 - p) / n)
        assert abs(hits / n - p) <= 3 * se

    def test_same_seed_same_sequence(self):
        cfg = MixupConfig()
        labels = list(np.random.default_rng(3).normal(size=8))
        a = [sample_pair(labels, i % 8, cfg, np.random.default_rng(42)) for i in range(10)]
        b = [sample_pair(labels, i % 8, cfg, np.random.default_rng(42)) for i in range(10)]
        assert a == b


class TestSampleLambda:
    def test_mean_near_half(self):
        rng = np.random.default_rng(0)
        draws = np.array([sample_lambda(2.0, rng) for _ in range(100_000)])
        assert abs(draws.mean() - 0.5) < 0.005

    def test_variance_matches_beta(self):
        rng = np.random.default_rng(1)
        draws = np.array([sample_lambda(2.0, rng) for _ in range(100_000)])
        assert abs(draws.var() - 0.05) < 0.005  # within 10% of 1/20

    def test_symmetry_ks(self):
        rng = np.random.default_rng(2)
        draws = np.array([sample_lambda(2.0, rng) for _ in range(100_000)])
        a = np.sort(draws)
        b = np.sort(1.0 - draws)
        grid = np.linspace(0, 1, 2001)
        cdf_a = np.searchsorted(a, grid, side="right") / a.size
        cdf_b = np.searchsorted(b, grid, side="right") / b.size
        assert np.abs(cdf_a - cdf_b).max() < 0.01

    def test_open_interval(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            lam = sample_lambda(2.0, rng)
            assert 0.0 < lam < 1.0


class TestMix:
    def test_lambda_one_returns_anchor(self):
        pair = mix([1.0, 2.0], [5.0, 6.0], [3.0], [9.0], 1.0)
        np.testing.assert_array_equal(pair.features, [1.0, 2.0])
        np.testing.assert_array_equal(pair.labels, [3.0])

    def test_quarter_mix(self):
        pair = mix([1.0, 0.0], [0.0, 1.0], [0.0], [0.0], 0.25)
        np.testing.assert_allclose(pair.features, [0.25, 0.75])

    def test_label_midpoint(self):
        pair = mix([0.0], [0.0], [3.0], [5.0], 0.5)
        assert pair.labels[0] == 4.0

    @settings(max_examples=50, deadline=None)
    @given(lam=st.floats(0, 1, allow_nan=False), seed=st.integers(0, 1000))
    def test_symmetry_and_hull(self, lam, seed):
        rng = np.random.default_rng(seed)
        x_i, x_j = rng.normal(size=4), rng.normal(size=4)
        y_i, y_j = rng.normal(size=5), rng.normal(size=5)
        a = mix(x_i, x_j, y_i, y_j, lam)
        b = mix(x_j, x_i, y_j, y_i, 1.0 - lam)
        np.testing.assert_allclose(a.features, b.features, atol=1e-12)
        np.testing.assert_allclose(a.labels, b.labels, atol=1e-12)
        lo, hi = np.minimum(y_i, y_j), np.maximum(y_i, y_j)
        assert np.all(a.labels >= lo - 1e-12) and np.all(a.labels <= hi + 1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            mix([1.0, 2.0], [1.0], [0.0], [0.0], 0.5)
