"""
Unit tests for Fréchet statistics and distances.
"""

import tempfile
from pathlib import Path

import numpy as np
import pytest
from scipy import linalg
from scipy.stats import ortho_group

from nas.frechet import (
    FrechetError,
    GaussianStats,
    accumulate_stats,
    frechet_distance,
    load_stats,
    matrix_sqrt_psd,
    save_stats,
    tafid,
    tafid_record,
)


def random_stats(rng, d=8, n=100):
    b = rng.normal(size=(d, d))
    return GaussianStats(mean=rng.normal(size=d), cov=b @ b.T + 0.1 * np.eye(d), n_samples=n)


class TestAccumulateStats:
    """Tests for single-pass statistics."""

    def test_two_samples(self):
        """Test the hand-computed two-sample case."""
        stats = accumulate_stats([(0.0, 0.0), (2.0, 2.0)])

        assert stats.n_samples == 2
        np.testing.assert_allclose(stats.mean, [1.0, 1.0])
        np.testing.assert_allclose(stats.cov, [[2.0, 2.0], [2.0, 2.0]])

    def test_repeated_vector(self):
        """Test copies of one vector give zero covariance."""
        stats = accumulate_stats([np.array([1.0, -2.0, 3.0])] * 5)

        np.testing.assert_allclose(stats.mean, [1.0, -2.0, 3.0])
        np.testing.assert_allclose(stats.cov, np.zeros((3, 3)), atol=1e-15)

    def test_matches_numpy_and_is_order_invariant(self):
        """Test agreement with numpy and invariance to sample order."""
        rng = np.random.default_rng(3)
        samples = rng.normal(size=(200, 5))

        stats = accumulate_stats(samples)
        shuffled = accumulate_stats(samples[rng.permutation(200)])

        np.testing.assert_allclose(stats.mean, samples.mean(axis=0), atol=1e-12)
        np.testing.assert_allclose(stats.cov, np.cov(samples, rowvar=False), atol=1e-12)
        np.testing.assert_allclose(stats.mean, shuffled.mean, atol=1e-12)
        np.testing.assert_allclose(stats.cov, shuffled.cov, atol=1e-12)

    def test_single_sample_rejected(self):
        """Test fewer than two samples are rejected."""
        with pytest.raises(FrechetError, match="At least 2"):
            accumulate_stats([(1.0, 2.0)])

    def test_ragged_samples_rejected(self):
        """Test samples of different dimension are rejected."""
        with pytest.raises(FrechetError, match="dimension"):
            accumulate_stats([(1.0, 2.0), (1.0, 2.0, 3.0)])

    def test_non_finite_sample_rejected(self):
        """Test NaN features are rejected."""
        with pytest.raises(FrechetError, match="non-finite"):
            accumulate_stats([(1.0, 2.0), (np.nan, 0.0)])


class TestMatrixSqrt:
    """Tests for the PSD square root."""

    def test_identity_and_diagonal(self):
        """Test closed-form diagonal roots."""
        np.testing.assert_allclose(matrix_sqrt_psd(np.eye(3)), np.eye(3), atol=1e-12)
        np.testing.assert_allclose(
            matrix_sqrt_psd(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), atol=1e-12
        )

    def test_random_psd(self):
        """Test S @ S reproduces a random PSD matrix."""
        rng = np.random.default_rng(5)
        b = rng.normal(size=(8, 8))
        a = b @ b.T

        root = matrix_sqrt_psd(a)

        assert np.linalg.norm(root @ root - a, "fro") <= 1e-6
        np.testing.assert_allclose(root, root.T, atol=1e-12)

    def test_roundoff_negative_eigenvalue_is_clamped(self):
        """Test tiny negative eigenvalues are treated as zero."""
        m = np.diag([1.0, -1e-12])

        np.testing.assert_allclose(matrix_sqrt_psd(m), np.diag([1.0, 0.0]), atol=1e-12)

    def test_indefinite_matrix_rejected(self):
        """Test a genuinely negative eigenvalue is rejected."""
        with pytest.raises(FrechetError, match="positive semi-definite"):
            matrix_sqrt_psd(np.diag([1.0, -0.5]))

    def test_asymmetric_matrix_rejected(self):
        """Test asymmetric input is rejected."""
        with pytest.raises(FrechetError, match="symmetric"):
            matrix_sqrt_psd(np.array([[1.0, 0.5], [0.0, 1.0]]))


class TestFrechetDistance:
    """Tests for the Fréchet distance."""

    def test_identical_statistics(self):
        """Test identical statistics are at distance zero."""
        stats = random_stats(np.random.default_rng(0))

        assert frechet_distance(stats, stats) <= 1e-9
        assert tafid(stats, stats) <= 1e-9

    def test_one_dimensional_closed_form(self):
        """Test (0, 1) vs (3, 4) gives (0-3)^2 + (1-2)^2 = 10."""
        a = GaussianStats(mean=[0.0], cov=[[1.0]], n_samples=10)
        b = GaussianStats(mean=[3.0], cov=[[4.0]], n_samples=10)

        assert frechet_distance(a, b) == pytest.approx(10.0, abs=1e-8)

    def test_commuting_diagonal_covariances(self):
        """Test diag(1, 4) vs diag(4, 1) with equal means gives 2."""
        a = GaussianStats(mean=[0.0, 0.0], cov=np.diag([1.0, 4.0]), n_samples=10)
        b = GaussianStats(mean=[0.0, 0.0], cov=np.diag([4.0, 1.0]), n_samples=10)

        assert frechet_distance(a, b) == pytest.approx(2.0, abs=1e-8)

    def test_commuting_rotated_covariances(self):
        """Test the symmetrized trace term matches tr((S_a S_b)^1/2) when S_a and S_b commute."""
        rng = np.random.default_rng(6)
        for _ in range(20):
            q = ortho_group.rvs(8, random_state=rng)
            eig_a, eig_b = rng.uniform(0.2, 4.0, 8), rng.uniform(0.2, 4.0, 8)
            cov_a = q @ np.diag(eig_a) @ q.T
            cov_b = q @ np.diag(eig_b) @ q.T
            a = GaussianStats(mean=rng.normal(size=8), cov=(cov_a + cov_a.T) / 2, n_samples=50)
            b = GaussianStats(mean=rng.normal(size=8), cov=(cov_b + cov_b.T) / 2, n_samples=50)
            diff = a.mean - b.mean

            product_root = np.real(linalg.sqrtm(a.cov @ b.cov))
            product_form = (
                diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * np.trace(product_root)
            )
            spectral_form = diff @ diff + np.sum((np.sqrt(eig_a) - np.sqrt(eig_b)) ** 2)

            assert frechet_distance(a, b) == pytest.approx(product_form, rel=1e-8, abs=1e-8)
            assert frechet_distance(a, b) == pytest.approx(spectral_form, rel=1e-8, abs=1e-8)

    def test_mean_shift(self):
        """Test a uniform shift of delta in d coordinates adds d * delta^2."""
        rng = np.random.default_rng(9)
        teacher = random_stats(rng, d=6)
        student = GaussianStats(mean=teacher.mean + 0.5, cov=teacher.cov, n_samples=100)

        assert tafid(student, teacher) == pytest.approx(6 * 0.25, abs=1e-6)

    def test_symmetry_and_positivity(self):
        """Test d(a, b) == d(b, a) > 0 for distinct statistics."""
        rng = np.random.default_rng(1)
        a, b = random_stats(rng), random_stats(rng)

        assert frechet_distance(a, b) > 0
        assert frechet_distance(a, b) == pytest.approx(frechet_distance(b, a), rel=1e-6)

    def test_rotation_invariance(self):
        """Test one orthogonal transform applied to both sides keeps the distance."""
        rng = np.random.default_rng(2)
        for _ in range(20):
            a, b = random_stats(rng), random_stats(rng)
            q = ortho_group.rvs(8, random_state=rng)
            ra = GaussianStats(mean=q @ a.mean, cov=q @ a.cov @ q.T, n_samples=100)
            rb = GaussianStats(mean=q @ b.mean, cov=q @ b.cov @ q.T, n_samples=100)

            assert frechet_distance(ra, rb) == pytest.approx(frechet_distance(a, b), rel=1e-6)

    def test_dimension_mismatch(self):
        """Test statistics of different dimension are rejected."""
        rng = np.random.default_rng(4)

        with pytest.raises(FrechetError, match="Dimension mismatch"):
            frechet_distance(random_stats(rng, d=3), random_stats(rng, d=4))

    def test_invalid_covariance_shape(self):
        """Test a covariance that does not match the mean is rejected."""
        with pytest.raises(FrechetError, match="shape"):
            GaussianStats(mean=[0.0, 0.0], cov=np.eye(3), n_samples=2)

    def test_record_carries_provenance(self):
        """Test the report record lists both sides' provenance."""
        rng = np.random.default_rng(6)
        a = random_stats(rng, d=3)
        b = GaussianStats(a.mean, a.cov, 50, provenance={"prompt_set": "coco-2k"})

        record = tafid_record(a, b)

        assert record["tafid"] <= 1e-9
        assert record["dim"] == 3
        assert record["teacher"] == {"n_samples": 50, "prompt_set": "coco-2k"}


class TestStatsFiles:
    """Tests for the statistics containers."""

    @pytest.mark.parametrize("suffix", [".npz", ".json"])
    def test_save_and_load(self, suffix):
        """Test both containers preserve moments and provenance."""
        rng = np.random.default_rng(8)
        stats = random_stats(rng, d=4, n=321)
        stats = GaussianStats(
            stats.mean,
            stats.cov,
            stats.n_samples,
            provenance={"feature_extractor": "inception-v3", "prompt_set": "p", "seed_set": "s"},
        )
        with tempfile.TemporaryDirectory() as tmpdir:
            path = save_stats(Path(tmpdir) / f"student{suffix}", stats)
            loaded = load_stats(path)

        np.testing.assert_allclose(loaded.mean, stats.mean, rtol=0, atol=0)
        np.testing.assert_allclose(loaded.cov, stats.cov, rtol=1e-15)
        assert loaded.n_samples == 321
        assert loaded.provenance["feature_extractor"] == "inception-v3"
        assert loaded.provenance["seed_set"] == "s"

    def test_missing_file(self):
        """Test a missing statistics file is reported."""
        with pytest.raises(FrechetError, match="not found"):
            load_stats("/nonexistent/stats.npz")

    def test_malformed_json(self):
        """Test a JSON container without moments is rejected."""
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "bad.json"
            path.write_text('{"d": 2, "mean": [0, 0]}', encoding="utf-8")

            with pytest.raises(FrechetError, match="Malformed"):
                load_stats(path)
