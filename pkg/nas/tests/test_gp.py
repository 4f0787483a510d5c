"""
Unit tests for the Matérn-5/2 Gaussian-process surrogate.
"""

import math
from unittest.mock import patch

import numpy as np
import pytest
from hypothesis import given, settings as hypothesis_settings
from hypothesis import strategies as st
from scipy.linalg import LinAlgError

from nas.gp import (
    GPConfig,
    GPFitError,
    KernelParams,
    build_model,
    fit,
    kernel_matrix,
    log_marginal_likelihood,
    matern52,
    model_summary,
    posterior,
    predict,
)

FAST = GPConfig(restarts=3, max_evals=150)


def dense_posterior(xs, ys, params, x_new):
    """Textbook posterior with an explicit inverse, in standardized units."""
    y_mean, y_std = ys.mean(), ys.std()
    y = (ys - y_mean) / y_std
    gram = kernel_matrix(xs, xs, params) + params.noise_var * np.eye(len(xs))
    inverse = np.linalg.inv(gram)
    cross = kernel_matrix(x_new, xs, params)
    mean = cross @ inverse @ y
    var = params.signal_var - np.einsum("ij,jk,ik->i", cross, inverse, cross)
    return mean * y_std + y_mean, np.maximum(var, 0.0) * y_std**2


def random_problem(rng, n=12):
    xs = rng.uniform(0, 1, (n, 6))
    ys = rng.normal(size=n) * rng.uniform(0.1, 5.0) + rng.uniform(-10.0, 10.0)
    params = KernelParams(
        signal_var=float(rng.uniform(0.5, 2)),
        lengthscales=tuple(rng.uniform(0.3, 2, 6)),
        noise_var=1e-3,
    )
    return xs, ys, params


class TestKernel:
    """Tests for the Matérn-5/2 kernel."""

    def test_zero_distance(self):
        """Test k(x, x) is the signal variance."""
        params = KernelParams(signal_var=2.5, lengthscales=(0.3, 0.7))

        assert matern52(np.array([0.2, 0.4]), np.array([0.2, 0.4]), params) == 2.5

    def test_unit_distance(self):
        """Test the closed form at r = 1."""
        params = KernelParams(signal_var=1.0, lengthscales=(1.0,))
        expected = (1 + math.sqrt(5) + 5 / 3) * math.exp(-math.sqrt(5))

        assert matern52(np.array([0.0]), np.array([1.0]), params) == pytest.approx(expected)
        assert expected == pytest.approx(0.52399, abs=1e-5)

    def test_decay(self):
        """Test the kernel decays monotonically to zero."""
        params = KernelParams(signal_var=1.0, lengthscales=(1.0,))
        values = [matern52(np.array([0.0]), np.array([r]), params) for r in (1, 2, 5, 10, 50)]

        assert values == sorted(values, reverse=True)
        assert values[-1] < 1e-30

    def test_matrix_agrees_with_pairwise(self):
        """Test the vectorized Gram matrix matches pairwise evaluation."""
        rng = np.random.default_rng(0)
        xs = rng.uniform(0, 1, (7, 6))
        params = KernelParams(signal_var=1.3, lengthscales=tuple(rng.uniform(0.2, 2, 6)))

        gram = kernel_matrix(xs, xs, params)

        for i in range(7):
            for j in range(7):
                assert gram[i, j] == pytest.approx(matern52(xs[i], xs[j], params), rel=1e-12)

    def test_gram_is_psd(self):
        """Test Gram matrices of random inputs are positive semi-definite."""
        rng = np.random.default_rng(1)
        for _ in range(20):
            xs = rng.uniform(0, 1, (15, 6))
            params = KernelParams(signal_var=1.0, lengthscales=tuple(rng.uniform(0.05, 5, 6)))

            assert np.linalg.eigvalsh(kernel_matrix(xs, xs, params)).min() >= -1e-8

    def test_invalid_params(self):
        """Test non-positive hyperparameters are rejected."""
        with pytest.raises(ValueError):
            KernelParams(signal_var=0.0, lengthscales=(1.0,))
        with pytest.raises(ValueError):
            KernelParams(signal_var=1.0, lengthscales=(-1.0,))


class TestBuildModel:
    """Tests for conditioning with fixed hyperparameters."""

    def test_single_point_likelihood(self):
        """Test the one-point marginal likelihood is -log(2 pi) / 2."""
        params = KernelParams(signal_var=1.0, lengthscales=(1.0,), noise_var=1e-8)

        model = build_model(np.array([[0.5]]), np.array([3.0]), params)

        assert log_marginal_likelihood(model) == pytest.approx(
            -0.5 * math.log(2 * math.pi), abs=1e-6
        )
        assert log_marginal_likelihood(model) == pytest.approx(-0.91894, abs=1e-5)

    def test_matches_dense_solve(self):
        """Test posterior moments against an explicit inverse on random problems."""
        rng = np.random.default_rng(2)
        for _ in range(20):
            xs = rng.uniform(0, 1, (15, 6))
            ys = rng.normal(size=15)
            params = KernelParams(
                signal_var=float(rng.uniform(0.5, 2)),
                lengthscales=tuple(rng.uniform(0.5, 2, 6)),
                noise_var=1e-3,
            )
            x_new = rng.uniform(0, 1, (10, 6))

            model = build_model(xs, ys, params)
            mean, var = predict(model, x_new)
            dense_mean, dense_var = dense_posterior(xs, ys, params, x_new)

            np.testing.assert_allclose(mean, dense_mean, atol=1e-8)
            np.testing.assert_allclose(var, dense_var, atol=1e-8)

    def test_duplicate_inputs_use_jitter(self):
        """Test duplicated inputs still factor."""
        params = KernelParams(signal_var=1.0, lengthscales=(1.0, 1.0), noise_var=1e-8)
        xs = np.array([[0.1, 0.2]] * 4 + [[0.5, 0.5]])
        ys = np.array([1.0, 1.0, 1.0, 1.0, 2.0])

        model = build_model(xs, ys, params)

        assert np.all(np.isfinite(model.alpha))

    def test_degenerate_inputs_fail(self):
        """Test a factorization that never succeeds raises GPFitError."""
        params = KernelParams(signal_var=1.0, lengthscales=(1.0,))

        with patch("nas.gp.linalg.cho_factor", side_effect=LinAlgError("not positive definite")):
            with pytest.raises(GPFitError, match="jitter"):
                build_model(np.array([[0.0], [1.0]]), np.array([1.0, 2.0]), params)

    def test_rejects_non_finite_training_data(self):
        """Test NaN targets are rejected."""
        params = KernelParams(signal_var=1.0, lengthscales=(1.0,))

        with pytest.raises(ValueError):
            build_model(np.array([[0.0], [1.0]]), np.array([0.0, np.nan]), params)

    @hypothesis_settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_training_row_order_is_irrelevant(self, seed):
        """Test permuting the training rows leaves the posterior unchanged."""
        rng = np.random.default_rng(seed)
        xs, ys, params = random_problem(rng)
        order = rng.permutation(len(xs))
        x_new = rng.uniform(0, 1, (8, 6))

        mean, var = predict(build_model(xs, ys, params), x_new)
        mean_p, var_p = predict(build_model(xs[order], ys[order], params), x_new)

        np.testing.assert_allclose(mean_p, mean, rtol=1e-10, atol=1e-10)
        np.testing.assert_allclose(var_p, var, rtol=1e-10, atol=1e-10)

    @hypothesis_settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_variance_never_exceeds_prior(self, seed):
        """Test posterior variance stays below signal_var in target units."""
        rng = np.random.default_rng(seed)
        xs, ys, params = random_problem(rng)
        x_new = np.vstack([rng.uniform(0, 1, (20, 6)), xs, rng.uniform(-5, 5, (5, 6))])

        model = build_model(xs, ys, params)
        _, var = predict(model, x_new)

        assert np.all(var >= 0.0)
        assert np.all(var <= params.signal_var * model.y_std**2 + 1e-8)


class TestFit:
    """Tests for hyperparameter fitting and prediction."""

    def test_interpolates_training_points(self):
        """Test noise-free interpolation at the training inputs."""
        rng = np.random.default_rng(3)
        xs = rng.uniform(0, 1, (12, 6))
        ys = np.sin(3 * xs).sum(axis=1)

        model = fit(xs, ys, FAST, seed=0)
        mean, var = predict(model, xs)

        np.testing.assert_allclose(mean, ys, atol=1e-5)
        assert np.all(var <= 1e-6 * max(1.0, model.y_std**2))

    def test_two_points(self):
        """Test two distinct points are interpolated."""
        xs = np.array([[0.1] * 6, [0.9] * 6])
        ys = np.array([1.0, 3.0])

        model = fit(xs, ys, FAST, seed=0)

        for x, y in zip(xs, ys, strict=True):
            assert posterior(model, x)[0] == pytest.approx(y, abs=1e-5)

    def test_linear_function_generalizes(self):
        """Test held-out error on f(x) = sum(x) from 20 samples."""
        rng = np.random.default_rng(4)
        xs = rng.uniform(0, 1, (20, 6))
        test = rng.uniform(0, 1, (100, 6))

        model = fit(xs, xs.sum(axis=1), GPConfig(), seed=0)
        mean, _ = predict(model, test)

        assert math.sqrt(np.mean((mean - test.sum(axis=1)) ** 2)) <= 0.05

    def test_constant_targets(self):
        """Test constant data yields that constant with negligible spread."""
        rng = np.random.default_rng(5)
        xs = rng.uniform(0, 1, (8, 6))

        model = fit(xs, np.full(8, 7.5), FAST, seed=0)
        mean, var = predict(model, rng.uniform(0, 1, (5, 6)))

        np.testing.assert_allclose(mean, 7.5, atol=1e-9)
        assert np.all(np.sqrt(var) <= 1e-3)

    def test_prior_reversion_far_away(self):
        """Test predictions far from the data revert to the prior."""
        rng = np.random.default_rng(6)
        xs = rng.uniform(0, 1, (10, 6))
        ys = rng.normal(size=10)
        model = fit(xs, ys, FAST, seed=0)
        far = np.full((1, 6), 1e6)

        mean, var = predict(model, far)

        assert mean[0] == pytest.approx(model.y_mean, rel=1e-6, abs=1e-9)
        assert var[0] == pytest.approx(model.params.signal_var * model.y_std**2, rel=1e-6)

    def test_deterministic_for_seed(self):
        """Test the same seed gives identical hyperparameters."""
        rng = np.random.default_rng(7)
        xs = rng.uniform(0, 1, (10, 6))
        ys = rng.normal(size=10)

        first = fit(xs, ys, FAST, seed=11)
        second = fit(xs, ys, FAST, seed=11)

        assert first.params == second.params
        assert first.restarts_log == second.restarts_log

    def test_thread_pool_matches_serial(self):
        """Test parallel restarts choose the same optimum as serial ones."""
        rng = np.random.default_rng(8)
        xs = rng.uniform(0, 1, (10, 6))
        ys = rng.normal(size=10)

        serial = fit(xs, ys, GPConfig(restarts=4, max_evals=100), seed=3)
        parallel = fit(xs, ys, GPConfig(restarts=4, max_evals=100, n_workers=4), seed=3)

        assert serial.params == parallel.params

    def test_noise_optimization_stays_in_bounds(self):
        """Test a fitted noise variance respects its bounds."""
        rng = np.random.default_rng(9)
        xs = rng.uniform(0, 1, (15, 6))
        ys = xs.sum(axis=1) + rng.normal(scale=0.1, size=15)
        config = GPConfig(restarts=2, max_evals=150, optimize_noise=True)

        model = fit(xs, ys, config, seed=0)

        low, high = config.noise_var_bounds
        assert low * (1 - 1e-9) <= model.params.noise_var <= high * (1 + 1e-9)

    def test_needs_two_points(self):
        """Test fitting a single point is rejected."""
        with pytest.raises(ValueError, match="at least 2"):
            fit(np.array([[0.5] * 6]), np.array([1.0]))

    def test_summary_fields(self):
        """Test the log summary carries hyperparameters and likelihood."""
        rng = np.random.default_rng(10)
        xs = rng.uniform(0, 1, (6, 6))
        model = fit(xs, xs.sum(axis=1), FAST, seed=0)

        summary = model_summary(model)

        assert summary["n"] == 6
        assert len(summary["lengthscales"]) == 6
        assert math.isfinite(summary["log_marginal_likelihood"])
