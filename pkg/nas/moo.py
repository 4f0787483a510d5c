"""
Bi-objective primitives for minimization.

Weak Pareto dominance, front extraction, exact 2-D hypervolume, and exact 2-D
Expected Hypervolume Improvement for independent Gaussian objectives.

EHVI decomposes the region not yet dominated by the front into vertical strips.
With the front sorted by f1 (p_1 .. p_k) and reference point r, strip i spans
f1 in [l_i, u_i) and is free below height h_i:

    strip 0:      l = -inf,      u = p_1.f1,    h = r.f2
    strip i:      l = p_i.f1,    u = p_i+1.f1,  h = p_i.f2   (u_k = r.f1)

A new point y gains (u_i - max(l_i, y1))+ * (h_i - y2)+ in strip i, and the two
factors are independent, so the expectation is a sum of products of two
one-dimensional Gaussian partial expectations.
"""

from __future__ import annotations

import itertools
import logging
import math
from collections.abc import Hashable, Sequence
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

logger = logging.getLogger(__name__)

INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
SQRT2 = math.sqrt(2.0)


class ParetoError(ValueError):
    """Raised for empty inputs, non-finite objectives, or invalid archives."""


@dataclass(frozen=True)
class ObjectivePoint:
    f1: float
    f2: float
    id: Hashable = None

    def __post_init__(self):
        object.__setattr__(self, "f1", float(self.f1))
        object.__setattr__(self, "f2", float(self.f2))
        if not (math.isfinite(self.f1) and math.isfinite(self.f2)):
            raise ParetoError(f"Objective point {self.id!r} is not finite: ({self.f1}, {self.f2})")


@dataclass(frozen=True)
class ParetoArchive:
    """Mutually non-dominated points sorted by f1, strictly inside the reference box."""

    points: tuple[ObjectivePoint, ...]
    ref_point: ObjectivePoint

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        for prev, cur in itertools.pairwise(self.points):
            if not (prev.f1 < cur.f1 and prev.f2 > cur.f2):
                raise ParetoError(
                    f"Archive members {prev.id!r} and {cur.id!r} are not a sorted "
                    "non-dominated sequence"
                )
        for p in self.points:
            if not (p.f1 < self.ref_point.f1 and p.f2 < self.ref_point.f2):
                raise ParetoError(
                    f"Archive member {p.id!r} ({p.f1}, {p.f2}) is not strictly below the "
                    f"reference point ({self.ref_point.f1}, {self.ref_point.f2})"
                )

    @classmethod
    def from_points(
        cls, points: Sequence[ObjectivePoint], ref_point: ObjectivePoint
    ) -> ParetoArchive:
        """Archive of the front of ``points``; empty input gives an empty archive."""
        return cls(tuple(pareto_front(points)) if points else (), ref_point)

    @property
    def ids(self) -> list[Hashable]:
        return [p.id for p in self.points]

    def __len__(self) -> int:
        return len(self.points)


def dominates(a: ObjectivePoint, b: ObjectivePoint) -> bool:
    """Weak Pareto dominance for minimization."""
    return a.f1 <= b.f1 and a.f2 <= b.f2 and (a.f1 < b.f1 or a.f2 < b.f2)


def pareto_front(points: Sequence[ObjectivePoint]) -> list[ObjectivePoint]:
    """Non-dominated subset sorted by f1.

    Inputs are stable-sorted by id first, so among exact objective-space
    duplicates the smallest id is kept regardless of input order.
    """
    if not points:
        raise ParetoError("Cannot extract a Pareto front from an empty point set")
    ordered = sorted(points, key=lambda p: str(p.id))
    ordered.sort(key=lambda p: (p.f1, p.f2))

    front: list[ObjectivePoint] = []
    best_f2 = math.inf
    for p in ordered:
        if p.f2 < best_f2:
            front.append(p)
            best_f2 = p.f2
    return front


def hypervolume_2d(front: ParetoArchive) -> float:
    """Exact staircase area dominated by the archive inside the reference box."""
    ref = front.ref_point
    points = front.points
    total = 0.0
    for i, p in enumerate(points):
        next_f1 = points[i + 1].f1 if i + 1 < len(points) else ref.f1
        total += (next_f1 - p.f1) * (ref.f2 - p.f2)
    return total


def hypervolume(points: Sequence[ObjectivePoint], ref_point: ObjectivePoint) -> float:
    """Hypervolume of arbitrary points; those outside the reference box add nothing."""
    inside = [p for p in points if p.f1 < ref_point.f1 and p.f2 < ref_point.f2]
    return hypervolume_2d(ParetoArchive.from_points(inside, ref_point))


def erf_based_normal(x):
    """Standard normal (pdf, cdf); vectorized, cdf from erfc for tail accuracy."""
    x = np.asarray(x, dtype=float)
    pdf = INV_SQRT_2PI * np.exp(-0.5 * x * x)
    cdf = 0.5 * erfc(-x / SQRT2)
    if pdf.ndim == 0:
        return float(pdf), float(cdf)
    return pdf, cdf


def _strips(front: ParetoArchive) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    ref = front.ref_point
    f1 = np.array([p.f1 for p in front.points], dtype=float)
    f2 = np.array([p.f2 for p in front.points], dtype=float)
    lower = np.concatenate(([-np.inf], f1))
    upper = np.concatenate((f1, [ref.f1]))
    height = np.concatenate(([ref.f2], f2))
    return lower, upper, height


def ehvi_2d(mu1, var1, mu2, var2, front: ParetoArchive):
    """Exact EHVI of independent Gaussian objectives against ``front``.

    Accepts scalars or equal-length arrays of posterior moments; zero variances
    reduce to the deterministic hypervolume improvement.
    """
    mu1_arr, var1_arr, mu2_arr, var2_arr = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (mu1, var1, mu2, var2))
    )
    if np.any(var1_arr < 0) or np.any(var2_arr < 0):
        raise ParetoError("Posterior variances must be non-negative")
    scalar = mu1_arr.ndim == 0

    lower, upper, height = _strips(front)
    m1 = np.atleast_1d(mu1_arr)[:, None]
    m2 = np.atleast_1d(mu2_arr)[:, None]
    s1 = np.sqrt(np.atleast_1d(var1_arr))[:, None]
    s2 = np.sqrt(np.atleast_1d(var2_arr))[:, None]

    width = _expected_width(lower[None, :], upper[None, :], m1, s1)
    rise = _expected_shortfall(height[None, :], m2, s2)
    value = np.maximum(np.sum(width * rise, axis=1), 0.0)
    return float(value[0]) if scalar else value


def _expected_shortfall(h: np.ndarray, mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """E[(h - Y)+] for Y ~ N(mu, sigma^2)."""
    safe = np.where(sigma > 0, sigma, 1.0)
    z = (h - mu) / safe
    pdf, cdf = erf_based_normal(z)
    stochastic = (h - mu) * cdf + safe * pdf
    return np.where(sigma > 0, stochastic, np.maximum(h - mu, 0.0))


def _expected_width(
    lower: np.ndarray, upper: np.ndarray, mu: np.ndarray, sigma: np.ndarray
) -> np.ndarray:
    """E[(u - max(l, Y))+] for Y ~ N(mu, sigma^2), l < u (l may be -inf)."""
    safe = np.where(sigma > 0, sigma, 1.0)
    z_u = (upper - mu) / safe
    pdf_u, cdf_u = erf_based_normal(z_u)
    finite_lower = np.isfinite(lower)
    l_safe = np.where(finite_lower, lower, 0.0)
    z_l = np.where(finite_lower, (l_safe - mu) / safe, -np.inf)
    pdf_l, cdf_l = erf_based_normal(z_l)

    below = np.where(finite_lower, (upper - l_safe) * cdf_l, 0.0)
    inside = (upper - mu) * (cdf_u - cdf_l) + safe * (pdf_u - pdf_l)
    stochastic = below + inside

    deterministic = np.maximum(upper - np.maximum(lower, mu), 0.0)
    return np.where(sigma > 0, stochastic, deterministic)


def hypervolume_improvement(point: ObjectivePoint, archive: ParetoArchive) -> float:
    """Deterministic hypervolume gain from adding ``point`` to ``archive``."""
    ref = archive.ref_point
    if not (point.f1 < ref.f1 and point.f2 < ref.f2):
        return 0.0
    before = hypervolume_2d(archive)
    after = hypervolume_2d(ParetoArchive.from_points([*archive.points, point], ref))
    return max(after - before, 0.0)


def hypervolume_regret(
    found: Sequence[ObjectivePoint],
    true_front: Sequence[ObjectivePoint],
    ref_point: ObjectivePoint,
) -> float:
    """(HV(true) - HV(found)) / HV(true) under a shared reference point.

    True-front points outside the reference box are dropped before measuring.
    """
    true_hv = hypervolume(true_front, ref_point)
    if true_hv <= 0.0:
        return 0.0
    found_hv = hypervolume(found, ref_point)
    return max((true_hv - found_hv) / true_hv, 0.0)


def select_operating_points(front: Sequence[ObjectivePoint]) -> dict[str, ObjectivePoint]:
    """Lowest-f1, lowest-f2 and balanced members of a front.

    Balanced minimizes distance to the utopia corner after min-max scaling
    both objectives to [0, 1]; ties go to the smaller f1.
    """
    if not front:
        raise ParetoError("Cannot select operating points from an empty front")
    f1 = np.array([p.f1 for p in front])
    f2 = np.array([p.f2 for p in front])
    span1 = float(np.ptp(f1)) or 1.0
    span2 = float(np.ptp(f2)) or 1.0
    distance = np.hypot((f1 - f1.min()) / span1, (f2 - f2.min()) / span2)

    indices = range(len(front))
    return {
        "lowest_f1": front[min(indices, key=lambda i: (f1[i], f2[i]))],
        "lowest_f2": front[min(indices, key=lambda i: (f2[i], f1[i]))],
        "balanced": front[min(indices, key=lambda i: (distance[i], f1[i]))],
    }
