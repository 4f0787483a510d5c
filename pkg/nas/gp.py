"""
Gaussian-process surrogate with a Matérn-5/2 ARD kernel.

One independent GP per objective. Targets are standardized before fitting;
hyperparameters (signal variance, per-dimension lengthscales, optionally the
noise variance) are fitted by maximizing the log marginal likelihood with a
multi-start bounded Powell search in log space.

Usage:
    model = fit(xs, ys, GPConfig(), seed=0)
    mean, var = posterior(model, x)
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np
from scipy import linalg, optimize
from scipy.spatial.distance import cdist

logger = logging.getLogger(__name__)

SQRT5 = math.sqrt(5.0)
JITTER_SEQUENCE = (0.0, 1e-8, 1e-6, 1e-4, 1e-2)
MIN_NOISE_VAR = 1e-8
VARIANCE_CLAMP = -1e-10
LOG_2PI = math.log(2.0 * math.pi)
_PENALTY = 1e25


class GPFitError(RuntimeError):
    """Raised when the Gram matrix cannot be factored even after jitter escalation."""


@dataclass
class GPConfig:
    """Hyperparameter search settings for one surrogate fit."""

    restarts: int = 8
    max_evals: int = 200
    lengthscale_bounds: tuple[float, float] = (1e-3, 1e3)
    signal_var_bounds: tuple[float, float] = (1e-2, 1e2)
    noise_var: float = MIN_NOISE_VAR
    optimize_noise: bool = False
    noise_var_bounds: tuple[float, float] = (MIN_NOISE_VAR, 1e-1)
    n_workers: int = 1

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        for key in ("lengthscale_bounds", "signal_var_bounds", "noise_var_bounds"):
            data[key] = list(data[key])
        return data


@dataclass(frozen=True)
class KernelParams:
    signal_var: float
    lengthscales: tuple[float, ...]
    noise_var: float = MIN_NOISE_VAR

    def __post_init__(self):
        object.__setattr__(self, "lengthscales", tuple(float(v) for v in self.lengthscales))
        if not (self.signal_var > 0 and math.isfinite(self.signal_var)):
            raise ValueError(f"signal_var must be positive, got {self.signal_var}")
        if not self.lengthscales or any(
            not (ls > 0 and math.isfinite(ls)) for ls in self.lengthscales
        ):
            raise ValueError(f"lengthscales must be positive, got {self.lengthscales}")
        # Allow for float roundoff when the value came back through exp(log(.)).
        if not self.noise_var >= MIN_NOISE_VAR * (1 - 1e-9):
            raise ValueError(f"noise_var must be at least {MIN_NOISE_VAR}, got {self.noise_var}")

    @property
    def dim(self) -> int:
        return len(self.lengthscales)

    def to_dict(self) -> dict[str, Any]:
        return {
            "signal_var": self.signal_var,
            "lengthscales": list(self.lengthscales),
            "noise_var": self.noise_var,
        }


@dataclass(frozen=True, eq=False)
class GPModel:
    """A conditioned GP; immutable, safe to query concurrently."""

    params: KernelParams
    train_x: np.ndarray
    train_y_standardized: np.ndarray
    y_mean: float
    y_std: float
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float = 0.0
    restarts_log: tuple[float, ...] = field(default_factory=tuple)

    @property
    def n(self) -> int:
        return int(self.train_x.shape[0])

    @property
    def y_scale(self) -> float:
        return self.y_std if self.y_std > 0 else 1.0


def matern52(x1: np.ndarray, x2: np.ndarray, params: KernelParams) -> float:
    """k(x1, x2) = s2 (1 + sqrt5 r + 5 r^2 / 3) exp(-sqrt5 r), r the ARD distance."""
    diff = (np.asarray(x1, dtype=float) - np.asarray(x2, dtype=float)) / np.asarray(
        params.lengthscales
    )
    r = float(np.sqrt(diff @ diff))
    return params.signal_var * (1.0 + SQRT5 * r + 5.0 * r * r / 3.0) * math.exp(-SQRT5 * r)


def kernel_matrix(x1: np.ndarray, x2: np.ndarray, params: KernelParams) -> np.ndarray:
    scale = np.asarray(params.lengthscales, dtype=float)
    r = cdist(np.atleast_2d(x1) / scale, np.atleast_2d(x2) / scale)
    return params.signal_var * (1.0 + SQRT5 * r + (5.0 / 3.0) * r * r) * np.exp(-SQRT5 * r)


def _factor(gram: np.ndarray, noise_var: float) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of gram + noise I, escalating jitter on failure."""
    eye = np.eye(gram.shape[0])
    for jitter in JITTER_SEQUENCE:
        try:
            chol, _ = linalg.cho_factor(gram + (noise_var + jitter) * eye, lower=True)
        except linalg.LinAlgError:
            continue
        return np.tril(chol), jitter
    raise GPFitError(
        f"Cholesky failed after jitter escalation to {JITTER_SEQUENCE[-1]:g} "
        f"(n={gram.shape[0]}); training data is degenerate"
    )


def _standardize(ys: np.ndarray) -> tuple[np.ndarray, float, float]:
    y_mean = float(np.mean(ys))
    y_std = float(np.std(ys))
    if y_std <= 1e-12 * max(1.0, abs(y_mean)):
        y_std = 0.0
    return (ys - y_mean) / (y_std if y_std > 0 else 1.0), y_mean, y_std


def _validate_training(xs: np.ndarray, ys: np.ndarray) -> None:
    if xs.ndim != 2 or ys.ndim != 1 or xs.shape[0] != ys.shape[0]:
        raise ValueError(f"Expected xs (n, d) and ys (n,), got {xs.shape} and {ys.shape}")
    if xs.shape[0] < 1:
        raise ValueError("At least one training point is required")
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise ValueError("Training data contains non-finite values")


def build_model(xs: np.ndarray, ys: np.ndarray, params: KernelParams) -> GPModel:
    """Condition a GP on (xs, ys) with fixed hyperparameters."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float).reshape(-1)
    _validate_training(xs, ys)
    y_std_values, y_mean, y_std = _standardize(ys)
    chol, jitter = _factor(kernel_matrix(xs, xs, params), params.noise_var)
    alpha = linalg.cho_solve((chol, True), y_std_values)
    return GPModel(
        params=params,
        train_x=xs,
        train_y_standardized=y_std_values,
        y_mean=y_mean,
        y_std=y_std,
        chol=chol,
        alpha=alpha,
        jitter=jitter,
    )


def log_marginal_likelihood(model: GPModel) -> float:
    """-1/2 y^T alpha - sum(log diag L) - n/2 log(2 pi), on standardized targets."""
    y = model.train_y_standardized
    return float(
        -0.5 * y @ model.alpha - np.sum(np.log(np.diag(model.chol))) - 0.5 * model.n * LOG_2PI
    )


class _Objective:
    """Negative log marginal likelihood over log-hyperparameters."""

    def __init__(self, xs: np.ndarray, y: np.ndarray, config: GPConfig):
        self.xs = xs
        self.y = y
        self.config = config
        self.dim = xs.shape[1]

    def params_from(self, theta: np.ndarray) -> KernelParams:
        values = np.exp(theta)
        noise = float(values[1 + self.dim]) if self.config.optimize_noise else self.config.noise_var
        return KernelParams(
            signal_var=float(values[0]),
            lengthscales=tuple(float(v) for v in values[1 : 1 + self.dim]),
            noise_var=max(noise, MIN_NOISE_VAR),
        )

    def bounds(self) -> list[tuple[float, float]]:
        cfg = self.config
        bounds = [tuple(map(math.log, cfg.signal_var_bounds))]
        bounds += [tuple(map(math.log, cfg.lengthscale_bounds))] * self.dim
        if cfg.optimize_noise:
            bounds.append(tuple(map(math.log, cfg.noise_var_bounds)))
        return bounds  # type: ignore[return-value]

    def __call__(self, theta: np.ndarray) -> float:
        params = self.params_from(theta)
        gram = kernel_matrix(self.xs, self.xs, params)
        try:
            chol, _ = linalg.cho_factor(
                gram + params.noise_var * np.eye(gram.shape[0]), lower=True
            )
        except linalg.LinAlgError:
            return _PENALTY
        alpha = linalg.cho_solve((chol, True), self.y)
        value = 0.5 * self.y @ alpha + np.sum(np.log(np.diag(chol))) + 0.5 * len(self.y) * LOG_2PI
        return float(value) if np.isfinite(value) else _PENALTY


def _starting_points(objective: _Objective, config: GPConfig, seed: int) -> list[np.ndarray]:
    bounds = np.array(objective.bounds())
    default = [0.0] + [math.log(0.5)] * objective.dim
    if config.optimize_noise:
        default.append(math.log(max(config.noise_var, config.noise_var_bounds[0])))
    starts = [np.clip(np.array(default), bounds[:, 0], bounds[:, 1])]

    rng = np.random.default_rng([seed, 0x6770])
    for _ in range(max(config.restarts, 1) - 1):
        starts.append(rng.uniform(bounds[:, 0], bounds[:, 1]))
    return starts


def fit(xs: np.ndarray, ys: np.ndarray, config: GPConfig | None = None, seed: int = 0) -> GPModel:
    """Fit hyperparameters by multi-start Powell search, then condition.

    Restart 0 starts from unit signal variance and lengthscale 0.5; the others
    start from log-uniform draws within the bounds. Restarts may run on a
    thread pool; the best restart is chosen by (objective, restart index), so
    the result does not depend on completion order.
    """
    config = config or GPConfig()
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float).reshape(-1)
    _validate_training(xs, ys)
    if xs.shape[0] < 2:
        raise ValueError(f"Fitting needs at least 2 training points, got {xs.shape[0]}")

    y_standardized, _, y_std = _standardize(ys)
    objective = _Objective(xs, y_standardized, config)
    bounds = objective.bounds()
    starts = _starting_points(objective, config, seed)

    def run(start: np.ndarray) -> tuple[float, np.ndarray]:
        result = optimize.minimize(
            objective,
            start,
            method="Powell",
            bounds=bounds,
            options={"maxfev": config.max_evals, "xtol": 1e-4, "ftol": 1e-9},
        )
        return float(result.fun), np.asarray(result.x, dtype=float)

    if config.n_workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=config.n_workers) as executor:
            results = list(executor.map(run, starts))
    else:
        results = [run(start) for start in starts]

    best_index = min(range(len(results)), key=lambda i: (results[i][0], i))
    best_value, best_theta = results[best_index]
    params = objective.params_from(best_theta)
    if y_std == 0.0:
        logger.debug("Constant targets; surrogate reduces to the mean")

    model = build_model(xs, ys, params)
    logger.debug(
        "GP fit n=%d best restart=%d nlml=%.6f signal_var=%.4g",
        model.n,
        best_index,
        best_value,
        params.signal_var,
    )
    return GPModel(
        params=model.params,
        train_x=model.train_x,
        train_y_standardized=model.train_y_standardized,
        y_mean=model.y_mean,
        y_std=model.y_std,
        chol=model.chol,
        alpha=model.alpha,
        jitter=model.jitter,
        restarts_log=tuple(value for value, _ in results),
    )


def predict(model: GPModel, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized posterior mean and variance, in original target units."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    cross = kernel_matrix(xs, model.train_x, model.params)
    mean_std = cross @ model.alpha
    v = linalg.solve_triangular(model.chol, cross.T, lower=True)
    var_std = model.params.signal_var - np.sum(v * v, axis=0)
    if np.any(var_std < VARIANCE_CLAMP):
        logger.debug("Clamped posterior variance %.3e to zero", float(var_std.min()))
    var_std = np.maximum(var_std, 0.0)
    return mean_std * model.y_scale + model.y_mean, var_std * model.y_std**2


def posterior(model: GPModel, x: np.ndarray) -> tuple[float, float]:
    mean, var = predict(model, np.asarray(x, dtype=float).reshape(1, -1))
    return float(mean[0]), float(var[0])


def model_summary(model: GPModel) -> dict[str, Any]:
    """Hyperparameters and conditioning info for the run log."""
    return {
        **model.params.to_dict(),
        "n": model.n,
        "y_mean": model.y_mean,
        "y_std": model.y_std,
        "jitter": model.jitter,
        "log_marginal_likelihood": log_marginal_likelihood(model),
    }
