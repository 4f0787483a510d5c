"""
Unit tests for Pareto, hypervolume and EHVI primitives.
"""

import csv
import math
from pathlib import Path

import numpy as np
import pytest
from django.conf import settings
from hypothesis import given, settings as hypothesis_settings
from hypothesis import strategies as st
from scipy.stats import qmc

from nas.moo import (
    ObjectivePoint,
    ParetoArchive,
    ParetoError,
    dominates,
    ehvi_2d,
    erf_based_normal,
    hypervolume,
    hypervolume_2d,
    hypervolume_improvement,
    hypervolume_regret,
    pareto_front,
    select_operating_points,
)

FAMILY_TABLE = Path(settings.BASE_DIR) / "profiles" / "nanosd_family.csv"

finite = st.floats(-100.0, 100.0, allow_nan=False, allow_infinity=False)
points_strategy = st.lists(st.tuples(finite, finite), min_size=1, max_size=25).map(
    lambda rows: [ObjectivePoint(a, b, f"p{i}") for i, (a, b) in enumerate(rows)]
)


def family_points(column):
    with FAMILY_TABLE.open(encoding="utf-8") as handle:
        return [
            ObjectivePoint(float(row["tafid"]), float(row[column]), row["model"])
            for row in csv.DictReader(handle)
        ]


def random_archive(rng, size, ref=(1.0, 1.0)):
    f1 = np.sort(rng.uniform(0, ref[0], size))
    f2 = np.sort(rng.uniform(0, ref[1], size))[::-1]
    points = [ObjectivePoint(a, b, i) for i, (a, b) in enumerate(zip(f1, f2, strict=True))]
    return ParetoArchive.from_points(points, ObjectivePoint(*ref))


def brute_force_front(points):
    return [p for p in points if not any(dominates(q, p) for q in points)]


def covered_fraction(archive, m, seed):
    """Share of 2^m scrambled Sobol points in the unit box dominated by the archive.

    Returns the estimate and its binomial standard error.
    """
    sampler = qmc.Sobol(d=2, scramble=True, seed=seed)
    f1 = np.array([p.f1 for p in archive.points])
    f2 = np.array([p.f2 for p in archive.points])
    hits = 0
    total = 2**m
    for _ in range(max(1, total // 2**16)):
        samples = sampler.random(min(total, 2**16))
        hits += int(
            np.any(
                (samples[:, None, 0] >= f1[None, :]) & (samples[:, None, 1] >= f2[None, :]),
                axis=1,
            ).sum()
        )
    p_hat = hits / total
    return p_hat, math.sqrt(max(p_hat * (1 - p_hat), 1e-12) / total)


class TestDominance:
    """Tests for weak Pareto dominance."""

    def test_table_rows(self):
        """Test NanoSD 2 dominates NanoSD 1 on the latency problem."""
        assert dominates(ObjectivePoint(10, 27), ObjectivePoint(10, 41))
        assert not dominates(ObjectivePoint(10, 41), ObjectivePoint(10, 27))

    def test_irreflexive(self):
        """Test no point dominates itself."""
        p = ObjectivePoint(1, 2)

        assert not dominates(p, p)

    def test_incomparable(self):
        """Test trade-off points do not dominate each other."""
        a, b = ObjectivePoint(1, 9), ObjectivePoint(2, 8)

        assert not dominates(a, b)
        assert not dominates(b, a)

    def test_non_finite_rejected(self):
        """Test NaN objectives are rejected at construction."""
        with pytest.raises(ParetoError):
            ObjectivePoint(math.nan, 1.0)


class TestParetoFront:
    """Tests for front extraction."""

    def test_latency_problem(self):
        """Test the (taFID, latency) front of the model family."""
        front = pareto_front(family_points("latency_ms"))

        assert [p.id for p in front] == ["NanoSD 2", "NanoSD 3", "NanoSD 4", "NanoSD 5"]

    def test_params_problem(self):
        """Test the (taFID, params) front of the model family."""
        front = pareto_front(family_points("params_m"))

        assert {p.id for p in front} == {
            "NanoSD 7",
            "NanoSD 6",
            "NanoSD 5",
            "NanoSD 4",
            "NanoSD 3",
            "NanoSD 1",
        }

    def test_single_point(self):
        """Test a single point is its own front."""
        p = ObjectivePoint(1, 1, "only")

        assert pareto_front([p]) == [p]

    def test_empty_input(self):
        """Test extracting from nothing is an error."""
        with pytest.raises(ParetoError):
            pareto_front([])

    def test_duplicates_keep_smallest_id(self):
        """Test exact duplicates keep the smallest id regardless of order."""
        a, b = ObjectivePoint(1, 1, "b"), ObjectivePoint(1, 1, "a")

        assert [p.id for p in pareto_front([a, b])] == ["a"]
        assert [p.id for p in pareto_front([b, a])] == ["a"]

    @hypothesis_settings(max_examples=200, deadline=None)
    @given(points_strategy)
    def test_matches_brute_force(self, points):
        """Test the sweep agrees with quadratic dominance checks."""
        front = pareto_front(points)
        expected = brute_force_front(points)

        assert {(p.f1, p.f2) for p in front} == {(p.f1, p.f2) for p in expected}
        assert [p.f1 for p in front] == sorted(p.f1 for p in front)

    @hypothesis_settings(max_examples=100, deadline=None)
    @given(points_strategy, st.randoms(use_true_random=False))
    def test_idempotent_and_order_invariant(self, points, random):
        """Test re-extraction and shuffling leave the front unchanged."""
        front = pareto_front(points)
        shuffled = list(points)
        random.shuffle(shuffled)

        assert pareto_front(front) == front
        assert pareto_front(shuffled) == front

    def test_merge_of_disjoint_fronts(self):
        """Test the joint front drops members dominated across inputs."""
        first = [ObjectivePoint(1, 5, "a"), ObjectivePoint(3, 3, "b")]
        second = [ObjectivePoint(2, 2, "c"), ObjectivePoint(4, 1, "d")]

        joint = pareto_front(first + second)

        assert [p.id for p in joint] == ["a", "c", "d"]
        assert {p.id for p in joint} == {p.id for p in brute_force_front(first + second)}


class TestHypervolume:
    """Tests for exact 2-D hypervolume."""

    def test_unit_box(self):
        """Test a single origin point fills the unit box."""
        archive = ParetoArchive.from_points([ObjectivePoint(0, 0)], ObjectivePoint(1, 1))

        assert hypervolume_2d(archive) == 1.0

    def test_two_boxes(self):
        """Test inclusion-exclusion of two boxes."""
        archive = ParetoArchive.from_points(
            [ObjectivePoint(0, 0.5), ObjectivePoint(0.5, 0)], ObjectivePoint(1, 1)
        )

        assert hypervolume_2d(archive) == pytest.approx(0.75)

    def test_empty_archive(self):
        """Test the empty archive has zero hypervolume."""
        assert hypervolume_2d(ParetoArchive((), ObjectivePoint(1, 1))) == 0.0

    def test_points_outside_box_add_nothing(self):
        """Test points beyond the reference point are ignored."""
        ref = ObjectivePoint(1, 1)

        assert hypervolume([ObjectivePoint(0, 0), ObjectivePoint(2, -1)], ref) == 1.0

    def test_archive_rejects_points_outside_box(self):
        """Test archives must lie strictly inside the reference box."""
        with pytest.raises(ParetoError):
            ParetoArchive((ObjectivePoint(1, 0),), ObjectivePoint(1, 1))

    def test_archive_rejects_dominated_members(self):
        """Test archive members must be mutually non-dominated."""
        with pytest.raises(ParetoError):
            ParetoArchive((ObjectivePoint(0, 0), ObjectivePoint(0.5, 0.5)), ObjectivePoint(1, 1))

    @hypothesis_settings(max_examples=100, deadline=None)
    @given(points_strategy, finite, finite)
    def test_translation_invariance(self, points, dx, dy):
        """Test shifting points and reference together keeps the hypervolume."""
        ref = ObjectivePoint(101, 101)
        shifted = [ObjectivePoint(p.f1 + dx, p.f2 + dy, p.id) for p in points]
        shifted_ref = ObjectivePoint(ref.f1 + dx, ref.f2 + dy)

        assert hypervolume(shifted, shifted_ref) == pytest.approx(
            hypervolume(points, ref), rel=1e-9, abs=1e-6
        )

    def test_monte_carlo_agreement(self):
        """Test exact hypervolume against a box Monte Carlo estimate."""
        rng = np.random.default_rng(21)
        for size in (1, 3, 8, 30):
            archive = random_archive(rng, size)

            p_hat, stderr = covered_fraction(archive, m=17, seed=size)

            assert abs(hypervolume_2d(archive) - p_hat) <= 3 * stderr + 1e-12

    @pytest.mark.slow
    def test_monte_carlo_agreement_full_scale(self):
        """Test 50 random fronts of size 1-30 against 2^20-sample estimates."""
        rng = np.random.default_rng(22)
        for case in range(50):
            archive = random_archive(rng, int(rng.integers(1, 31)))

            p_hat, stderr = covered_fraction(archive, m=20, seed=case)

            assert abs(hypervolume_2d(archive) - p_hat) <= 3 * stderr + 1e-12


class TestEHVI:
    """Tests for exact expected hypervolume improvement."""

    def test_point_mass_on_empty_front(self):
        """Test a deterministic origin candidate gains the whole box."""
        archive = ParetoArchive((), ObjectivePoint(1, 1))

        assert ehvi_2d(0.0, 0.0, 0.0, 0.0, archive) == pytest.approx(1.0)

    def test_dominated_point_mass(self):
        """Test a deterministic dominated candidate gains nothing."""
        archive = ParetoArchive.from_points([ObjectivePoint(0.2, 0.2)], ObjectivePoint(1, 1))

        assert ehvi_2d(0.5, 0.0, 0.5, 0.0, archive) == 0.0

    def test_point_mass_equals_improvement(self):
        """Test zero-variance EHVI equals deterministic improvement on random fronts."""
        rng = np.random.default_rng(31)
        for _ in range(100):
            archive = random_archive(rng, int(rng.integers(0, 12)))
            y = ObjectivePoint(*rng.uniform(-0.2, 1.2, 2))

            expected = hypervolume_improvement(y, archive)

            assert ehvi_2d(y.f1, 0.0, y.f2, 0.0, archive) == pytest.approx(expected, abs=1e-9)

    def test_vectorized_matches_scalar(self):
        """Test array inputs agree with scalar calls."""
        rng = np.random.default_rng(32)
        archive = random_archive(rng, 5)
        mu1, mu2 = rng.uniform(0, 1, 10), rng.uniform(0, 1, 10)
        var1, var2 = rng.uniform(0, 0.1, 10), rng.uniform(0, 0.1, 10)

        values = ehvi_2d(mu1, var1, mu2, var2, archive)

        for i in range(10):
            assert values[i] == pytest.approx(
                ehvi_2d(mu1[i], var1[i], mu2[i], var2[i], archive), rel=1e-12
            )

    def test_vanishes_deep_in_dominated_region(self):
        """Test EHVI tends to zero for confident dominated candidates."""
        archive = ParetoArchive.from_points([ObjectivePoint(0.1, 0.1)], ObjectivePoint(1, 1))

        assert ehvi_2d(5.0, 1e-6, 5.0, 1e-6, archive) < 1e-12

    def test_negative_variance_rejected(self):
        """Test negative variances are rejected."""
        with pytest.raises(ParetoError):
            ehvi_2d(0.0, -1.0, 0.0, 1.0, ParetoArchive((), ObjectivePoint(1, 1)))

    @hypothesis_settings(max_examples=200, deadline=None)
    @given(
        st.floats(-2, 2),
        st.floats(0, 2),
        st.floats(-2, 2),
        st.floats(0, 2),
        st.integers(0, 2**32 - 1),
    )
    def test_non_negative(self, mu1, var1, mu2, var2, seed):
        """Test EHVI is never negative."""
        archive = random_archive(np.random.default_rng(seed), 4)

        assert ehvi_2d(mu1, var1, mu2, var2, archive) >= 0.0

    def test_monte_carlo_agreement(self):
        """Test exact EHVI against sampled hypervolume improvement."""
        rng = np.random.default_rng(41)
        draws = 2_000
        passed = 0
        cases = 10
        for _ in range(cases):
            archive = random_archive(rng, int(rng.integers(0, 8)))
            mu = rng.uniform(0, 1, 2)
            sd = rng.uniform(0.05, 0.5, 2)
            ys = rng.normal(mu, sd, (draws, 2))
            gains = np.array(
                [hypervolume_improvement(ObjectivePoint(a, b), archive) for a, b in ys]
            )
            stderr = gains.std(ddof=1) / math.sqrt(draws)
            exact = ehvi_2d(mu[0], sd[0] ** 2, mu[1], sd[1] ** 2, archive)
            if abs(exact - gains.mean()) <= 3 * stderr + 1e-12:
                passed += 1

        assert passed >= cases - 2

    @pytest.mark.slow
    def test_monte_carlo_agreement_full_scale(self):
        """Test 100 random configurations against 10^5-draw estimates."""
        rng = np.random.default_rng(42)
        draws = 100_000
        passed = 0
        for _ in range(100):
            archive = random_archive(rng, int(rng.integers(0, 16)))
            mu = rng.uniform(-0.2, 1.2, 2)
            sd = rng.uniform(0.01, 0.6, 2)
            ys = rng.normal(mu, sd, (draws, 2))
            # Point-mass EHVI is the deterministic improvement (checked above).
            gains = ehvi_2d(ys[:, 0], 0.0, ys[:, 1], 0.0, archive)
            stderr = gains.std(ddof=1) / math.sqrt(draws)
            exact = ehvi_2d(mu[0], sd[0] ** 2, mu[1], sd[1] ** 2, archive)
            if abs(exact - gains.mean()) <= 3 * stderr + 1e-12:
                passed += 1

        assert passed >= 97


class TestNormal:
    """Tests for the erfc-based normal helpers."""

    def test_reference_values(self):
        """Test pdf and cdf at known points."""
        pdf, cdf = erf_based_normal(0.0)
        _, tail = erf_based_normal(1.96)

        assert pdf == pytest.approx(0.3989423, abs=1e-7)
        assert cdf == 0.5
        assert tail == pytest.approx(0.9750021, abs=1e-7)

    def test_far_tail_is_not_zero(self):
        """Test the lower tail keeps precision where 1 - cdf would underflow."""
        _, cdf = erf_based_normal(-30.0)

        assert 0.0 < cdf < 1e-190


class TestRegretAndOperatingPoints:
    """Tests for regret and operating-point selection."""

    def test_regret_zero_for_true_front(self):
        """Test finding the true front gives zero regret."""
        front = [ObjectivePoint(0, 1), ObjectivePoint(1, 0)]

        assert hypervolume_regret(front, front, ObjectivePoint(2, 2)) == 0.0

    def test_regret_fraction(self):
        """Test regret is the missing share of true hypervolume."""
        true_front = [ObjectivePoint(0, 0)]
        found = [ObjectivePoint(1, 0)]

        assert hypervolume_regret(found, true_front, ObjectivePoint(2, 2)) == pytest.approx(0.5)

    def test_operating_points(self):
        """Test lowest-f1, lowest-f2 and balanced selections on the latency front."""
        front = pareto_front(family_points("latency_ms"))

        picks = select_operating_points(front)

        assert picks["lowest_f1"].id == "NanoSD 2"
        assert picks["lowest_f2"].id == "NanoSD 5"
        assert picks["balanced"].id in {"NanoSD 3", "NanoSD 4"}

    def test_operating_points_empty(self):
        """Test selection from an empty front is an error."""
        with pytest.raises(ParetoError):
            select_operating_points([])
