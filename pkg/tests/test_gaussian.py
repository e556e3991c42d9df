"""Square-root Gaussian algebra against dense textbook formulas."""

import numpy as np
import pytest

from kalmanbvp.errors import DimensionMismatchError, RankDeficiencyError, SingularCovarianceError
from kalmanbvp.gaussian import AffineMap, Gaussian, condition, logpdf, marginal, sample, triangularize

from helpers import dense_condition, dense_marginal, random_spd_sqrt


class TestMarginal:
    def test_identity_map(self):
        g = Gaussian([1.0, 2.0], np.eye(2))
        out = marginal(g, AffineMap(np.eye(2), np.zeros(2)))
        np.testing.assert_allclose(out.mean, [1.0, 2.0])
        np.testing.assert_allclose(out.cov(), np.eye(2), atol=1e-14)

    def test_sum_map(self):
        g = Gaussian([0.0, 0.0], np.eye(2))
        out = marginal(g, AffineMap([[1.0, 1.0]], [0.0]))
        np.testing.assert_allclose(out.mean, [0.0])
        np.testing.assert_allclose(out.cov(), [[2.0]], atol=1e-14)

    def test_constant_map_gives_dirac(self):
        g = Gaussian([3.0], [[2.0]])
        out = marginal(g, AffineMap([[0.0]], [5.0]))
        np.testing.assert_allclose(out.mean, [5.0])
        np.testing.assert_allclose(out.cov(), [[0.0]], atol=1e-14)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            marginal(Gaussian([0.0], [[1.0]]), AffineMap([[1.0, 0.0]], [0.0]))

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            k, r = rng.integers(1, 6), rng.integers(1, 6)
            s = random_spd_sqrt(rng, k)
            g = Gaussian(rng.standard_normal(k), s)
            a = rng.standard_normal((r, k))
            b = rng.standard_normal(r)
            out = marginal(g, AffineMap(a, b))
            mean_ref, cov_ref = dense_marginal(g.mean, g.cov(), a, b)
            np.testing.assert_allclose(out.mean, mean_ref, atol=1e-12)
            np.testing.assert_allclose(out.cov(), cov_ref, atol=1e-10)

    def test_invertible_roundtrip_recovers(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            k = rng.integers(1, 11)
            g = Gaussian(rng.standard_normal(k), random_spd_sqrt(rng, k))
            a = random_spd_sqrt(rng, k)  # well-conditioned, invertible
            fwd = marginal(g, AffineMap(a, np.zeros(k)))
            back = marginal(fwd, AffineMap(np.linalg.inv(a), np.zeros(k)))
            np.testing.assert_allclose(back.mean, g.mean, atol=1e-12)
            np.testing.assert_allclose(back.cov(), g.cov(), atol=1e-10)


class TestCondition:
    def test_dirac_on_first_coordinate(self):
        g = Gaussian([0.0, 0.0], np.eye(2))
        post, innov = condition(g, AffineMap([[1.0, 0.0]], [0.0]), [1.0])
        np.testing.assert_allclose(post.mean, [1.0, 0.0], atol=1e-14)
        np.testing.assert_allclose(post.cov(), np.diag([0.0, 1.0]), atol=1e-14)
        np.testing.assert_allclose(innov.residual, [1.0])
        np.testing.assert_allclose(innov.sqrt_cov @ innov.sqrt_cov.T, [[1.0]], atol=1e-14)

    def test_scalar_noisy_conditioning(self):
        # Hand computation: posterior variance 1/(1/1 + 1/1) = 1/2.
        g = Gaussian([0.0], [[1.0]])
        post, _ = condition(g, AffineMap([[1.0]], [0.0]), [0.0], [[1.0]])
        np.testing.assert_allclose(post.cov(), [[0.5]], atol=1e-14)

    def test_dirac_prior_consistent_observation(self):
        g = Gaussian([3.0], [[0.0]])
        post, _ = condition(g, AffineMap([[1.0]], [0.0]), [3.0])
        np.testing.assert_allclose(post.mean, [3.0])
        np.testing.assert_allclose(post.cov(), [[0.0]], atol=1e-14)

    def test_dirac_prior_inconsistent_observation_raises(self):
        g = Gaussian([3.0], [[0.0]])
        with pytest.raises(RankDeficiencyError):
            condition(g, AffineMap([[1.0]], [0.0], label="pin"), [4.0])

    def test_redundant_inconsistent_dirac_raises(self):
        g = Gaussian([0.0, 0.0], np.eye(2))
        obs = AffineMap([[1.0, 0.0], [1.0, 0.0]], [0.0, 0.0], label="doubled row")
        with pytest.raises(RankDeficiencyError, match="doubled row"):
            condition(g, obs, [1.0, 2.0])

    def test_full_state_dirac_returns_dirac_at_data(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            k = rng.integers(1, 5)
            g = Gaussian(rng.standard_normal(k), random_spd_sqrt(rng, k))
            pred = marginal(g, AffineMap(np.eye(k), np.zeros(k)))
            data = rng.standard_normal(k)
            post, _ = condition(pred, AffineMap(np.eye(k), np.zeros(k)), data)
            np.testing.assert_allclose(post.mean, data, atol=1e-12)
            np.testing.assert_allclose(post.cov(), np.zeros((k, k)), atol=1e-12)

    def test_posterior_covariance_psd_property(self):
        rng = np.random.default_rng(29)
        for _ in range(120):
            k = rng.integers(1, 6)
            r = rng.integers(1, 4)
            g = Gaussian(rng.standard_normal(k), rng.standard_normal((k, rng.integers(1, 7))))
            a = rng.standard_normal((r, k))
            noise = rng.standard_normal((r, r)) if rng.random() < 0.5 else np.zeros((r, r))
            try:
                post, _ = condition(g, AffineMap(a, rng.standard_normal(r)), rng.standard_normal(r), noise)
            except RankDeficiencyError:
                continue
            eigs = np.linalg.eigvalsh(post.cov())
            assert eigs.min() >= -1e-12

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(41)
        for _ in range(60):
            k = rng.integers(1, 6)
            r = rng.integers(1, k + 1)
            g = Gaussian(rng.standard_normal(k), random_spd_sqrt(rng, k))
            a = rng.standard_normal((r, k))
            b = rng.standard_normal(r)
            data = rng.standard_normal(r)
            noise_sqrt = random_spd_sqrt(rng, r) if rng.random() < 0.5 else np.zeros((r, r))
            post, innov = condition(g, AffineMap(a, b), data, noise_sqrt)
            mean_ref, cov_ref, res_ref, s_ref = dense_condition(
                g.mean, g.cov(), a, b, data, noise_sqrt @ noise_sqrt.T
            )
            np.testing.assert_allclose(post.mean, mean_ref, atol=1e-10)
            np.testing.assert_allclose(post.cov(), cov_ref, atol=1e-10)
            np.testing.assert_allclose(innov.residual, res_ref, atol=1e-12)
            np.testing.assert_allclose(innov.sqrt_cov @ innov.sqrt_cov.T, s_ref, atol=1e-10)


class TestSample:
    def test_dirac_returns_mean(self):
        g = Gaussian([1.0, -2.0], np.zeros((2, 2)))
        np.testing.assert_allclose(sample(g, 0), [1.0, -2.0])

    def test_deterministic_per_seed(self):
        g = Gaussian([0.0, 0.0], np.eye(2))
        np.testing.assert_array_equal(sample(g, 123), sample(g, 123))

    def test_monte_carlo_mean(self):
        g = Gaussian([0.0], [[1.0]])
        rng = np.random.default_rng(0)
        draws = np.array([sample(g, rng) for _ in range(100_000)])
        assert abs(draws.mean()) < 0.02


class TestLogpdf:
    def test_standard_normal_at_mode(self):
        assert logpdf(Gaussian([0.0], [[1.0]]), [0.0]) == pytest.approx(-0.5 * np.log(2 * np.pi))

    def test_hand_evaluated_value(self):
        expected = -0.5 * np.log(8 * np.pi) - 0.5
        assert logpdf(Gaussian([0.0], [[2.0]]), [2.0]) == pytest.approx(expected, abs=1e-12)

    def test_maximized_at_mean(self):
        rng = np.random.default_rng(5)
        g = Gaussian(rng.standard_normal(3), random_spd_sqrt(rng, 3))
        at_mean = logpdf(g, g.mean)
        for _ in range(25):
            assert at_mean >= logpdf(g, g.mean + 0.1 * rng.standard_normal(3))

    def test_singular_covariance_raises(self):
        with pytest.raises(SingularCovarianceError):
            logpdf(Gaussian([0.0, 0.0], np.diag([1.0, 0.0])), [0.0, 0.0])


class TestTriangularize:
    def test_preserves_outer_product(self):
        rng = np.random.default_rng(13)
        for _ in range(30):
            k, r = rng.integers(1, 7), rng.integers(1, 7)
            m = rng.standard_normal((k, r))
            t = triangularize(m)
            assert t.shape == (k, k)
            np.testing.assert_allclose(t @ t.T, m @ m.T, atol=1e-12)
