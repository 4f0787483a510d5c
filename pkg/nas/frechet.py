"""
Fréchet distance between Gaussian feature statistics.

The teacher-aligned FID (taFID) compares feature statistics of a candidate
model's samples against the teacher's samples on identical prompt/seed pairs.
Feature extraction happens elsewhere; this module consumes statistics files.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Iterable
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from scipy import linalg

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-8
EIGENVALUE_CLAMP = -1e-8
DISTANCE_CLAMP = -1e-6
PROVENANCE_FIELDS = ("feature_extractor", "prompt_set", "seed_set")


class FrechetError(ValueError):
    """Raised for invalid statistics or numerical breakdown."""


@dataclass(frozen=True, eq=False)
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray
    n_samples: int
    provenance: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.asarray(self.cov, dtype=float)
        d = mean.shape[0]
        if cov.shape != (d, d):
            raise FrechetError(f"Covariance shape {cov.shape} does not match mean dimension {d}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise FrechetError("Statistics contain non-finite values")
        scale = max(1.0, float(np.max(np.abs(cov)))) if d else 1.0
        if d and np.max(np.abs(cov - cov.T)) > SYMMETRY_TOL * scale:
            raise FrechetError("Covariance is not symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", (cov + cov.T) / 2.0)
        object.__setattr__(self, "n_samples", int(self.n_samples))

    @property
    def dim(self) -> int:
        return int(self.mean.shape[0])


def accumulate_stats(
    samples: Iterable[Any], provenance: dict[str, str] | None = None
) -> GaussianStats:
    """Single-pass mean and unbiased covariance (Welford's update)."""
    n = 0
    mean: np.ndarray | None = None
    m2: np.ndarray | None = None
    for sample in samples:
        x = np.asarray(sample, dtype=float).reshape(-1)
        if not np.all(np.isfinite(x)):
            raise FrechetError(f"Sample {n} contains non-finite values")
        if mean is None:
            mean = np.zeros_like(x)
            m2 = np.zeros((x.shape[0], x.shape[0]))
        elif x.shape != mean.shape:
            raise FrechetError(
                f"Sample {n} has dimension {x.shape[0]}, expected {mean.shape[0]}"
            )
        n += 1
        delta = x - mean
        mean = mean + delta / n
        m2 = m2 + np.outer(delta, x - mean)

    if n < 2 or mean is None or m2 is None:
        raise FrechetError(f"At least 2 samples are required, got {n}")
    return GaussianStats(mean=mean, cov=m2 / (n - 1), n_samples=n, provenance=provenance or {})


def matrix_sqrt_psd(m: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Eigenvalues in [-1e-8 * scale, 0) are treated as roundoff and clamped;
    anything more negative is rejected.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise FrechetError(f"Expected a square matrix, got shape {m.shape}")
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    if m.size and np.max(np.abs(m - m.T)) > SYMMETRY_TOL * scale:
        raise FrechetError("Matrix is not symmetric")

    eigvals, eigvecs = linalg.eigh((m + m.T) / 2.0)
    if eigvals.size and eigvals.min() < EIGENVALUE_CLAMP * scale:
        raise FrechetError(f"Matrix is not positive semi-definite (eigenvalue {eigvals.min():.3e})")
    root = (eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))) @ eigvecs.T
    return (root + root.T) / 2.0


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)."""
    if a.dim != b.dim:
        raise FrechetError(f"Dimension mismatch: {a.dim} vs {b.dim}")

    diff = a.mean - b.mean
    sqrt_a = matrix_sqrt_psd(a.cov)
    inner = sqrt_a @ b.cov @ sqrt_a
    covmean = matrix_sqrt_psd((inner + inner.T) / 2.0)
    value = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * np.trace(covmean))

    if value < DISTANCE_CLAMP:
        raise FrechetError(f"Negative Fréchet distance {value:.3e}: numerical breakdown")
    return max(value, 0.0)


def tafid(student_stats: GaussianStats, teacher_stats: GaussianStats) -> float:
    """Teacher-aligned FID: distance of student statistics from the teacher's."""
    return frechet_distance(student_stats, teacher_stats)


def tafid_record(student_stats: GaussianStats, teacher_stats: GaussianStats) -> dict[str, Any]:
    """taFID value together with both sides' provenance, for reports."""
    return {
        "tafid": tafid(student_stats, teacher_stats),
        "dim": student_stats.dim,
        "student": {"n_samples": student_stats.n_samples, **student_stats.provenance},
        "teacher": {"n_samples": teacher_stats.n_samples, **teacher_stats.provenance},
    }


def save_stats(path: str | Path, stats: GaussianStats) -> Path:
    """Write ``.npz`` (binary) or ``.json`` (text) depending on the suffix."""
    path = Path(path)
    provenance = {k: stats.provenance.get(k, "") for k in PROVENANCE_FIELDS}
    if path.suffix == ".json":
        document = {
            "d": stats.dim,
            "n_samples": stats.n_samples,
            "mean": stats.mean.tolist(),
            "cov": stats.cov.reshape(-1).tolist(),
            **provenance,
        }
        path.write_text(json.dumps(document, indent=2) + "\n", encoding="utf-8")
    else:
        with path.open("wb") as handle:
            np.savez(
                handle,
                mean=stats.mean,
                cov=stats.cov,
                n_samples=np.int64(stats.n_samples),
                **{k: np.array(v) for k, v in provenance.items()},
            )
    return path


def load_stats(path: str | Path) -> GaussianStats:
    path = Path(path)
    if not path.exists():
        raise FrechetError(f"Statistics file not found: {path}")

    if path.suffix == ".json":
        try:
            document = json.loads(path.read_text(encoding="utf-8"))
            d = int(document["d"])
            mean = np.asarray(document["mean"], dtype=float)
            cov = np.asarray(document["cov"], dtype=float).reshape(d, d)
            n_samples = int(document["n_samples"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FrechetError(f"Malformed statistics file {path}: {exc}") from exc
        provenance = {k: str(document.get(k, "")) for k in PROVENANCE_FIELDS}
    else:
        try:
            with np.load(path, allow_pickle=False) as data:
                mean = data["mean"]
                cov = data["cov"]
                n_samples = int(data["n_samples"])
                provenance = {
                    k: str(data[k]) if k in data.files else "" for k in PROVENANCE_FIELDS
                }
        except (KeyError, OSError, ValueError) as exc:
            raise FrechetError(f"Malformed statistics file {path}: {exc}") from exc

    stats = GaussianStats(mean=mean, cov=cov, n_samples=n_samples, provenance=provenance)
    logger.debug("Loaded %d-dim statistics from %s", stats.dim, path)
    return stats
