"""
Search Run Configuration Module

Provides configuration for a single architecture-search run: the search space
and objective pair, the evaluation budget, the surrogate and reference-point
policies, and the oracle. Supports JSON config files, dictionaries, and
NAS_* environment overrides.
"""

import json
import logging
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from django.conf import settings

from nanosearch.runtime_paths import resolve_data_file
from nas.gp import GPConfig

logger = logging.getLogger(__name__)

OBJECTIVE_PAIRS = (("tafid", "latency_ms"), ("tafid", "params_m"))
ORACLE_KINDS = ("synthetic", "lookup", "subprocess")
INIT_DESIGNS = ("uniform", "sobol")


class ConfigError(ValueError):
    """Raised for invalid run configuration; names the offending field."""

    def __init__(self, field_name: str, message: str):
        self.field_name = field_name
        super().__init__(f"{field_name}: {message}")


@dataclass
class ReferencePointConfig:
    """Reference point = max observed + margin * (range, or 1 when degenerate)."""

    margin: float = 0.1


@dataclass
class OracleConfig:
    """Which oracle evaluates candidates and how to reach it.

    Attributes:
        kind: "synthetic", "lookup" or "subprocess"
        benchmark: synthetic benchmark id ("additive" or "conflicting")
        table: lookup CSV path (``arch,tafid,latency_ms,params_m``)
        command: evaluator command line for the subprocess oracle
        timeout_s: per-evaluation timeout for the subprocess oracle
        seed: synthetic benchmark seed; defaults to the run seed
        profile: block latency profile used by the conflicting benchmark
        planted: architecture string whose synthetic objectives are zeroed
        n_samples: optional sample-count hint forwarded to evaluators
    """

    kind: str = "synthetic"
    benchmark: str = "conflicting"
    table: str = "profiles/nanosd_family"
    command: str | list[str] | None = None
    timeout_s: float = field(default_factory=lambda: float(settings.NAS_ORACLE_TIMEOUT_S))
    seed: int | None = None
    profile: str = "profiles/sm8750_fp16"
    planted: str | None = None
    n_samples: int | None = None


@dataclass
class LoggingConfig:
    """Configuration for logging behavior."""

    level: str = "INFO"
    log_to_file: bool = True
    log_file_name: str = "search.log"
    max_log_size: int = 10 * 1024 * 1024  # 10 MB
    backup_count: int = 5
    structured_logging: bool = True


_SECTIONS = {
    "gp": GPConfig,
    "reference_point": ReferencePointConfig,
    "oracle": OracleConfig,
    "logging": LoggingConfig,
}
_TUPLE_FIELDS = {"lengthscale_bounds", "signal_var_bounds", "noise_var_bounds"}


@dataclass
class RunConfig:
    """Main configuration for one search run.

    Aggregates all configuration sections and provides factory methods for
    creating configuration from files, dictionaries and the environment.
    """

    name: str = "search"
    space: str = field(default_factory=lambda: settings.NAS_DEFAULT_SPACE)
    objectives: tuple[str, str] = ("tafid", "latency_ms")

    # Budget
    n_init: int = 15
    n_iter: int = 120
    seed: int = 0
    candidate_pool_size: int = 4096
    init_design: str = "uniform"
    restrict_to: list[str] = field(default_factory=list)
    enumerate_cap: int = field(default_factory=lambda: int(settings.NAS_ENUMERATE_CAP))

    # Component configs
    gp: GPConfig = field(default_factory=GPConfig)
    reference_point: ReferencePointConfig = field(default_factory=ReferencePointConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    logging: LoggingConfig = field(default_factory=LoggingConfig)

    # Paths (runtime locations, not echoed into the run header)
    base_dir: Path = field(default_factory=lambda: Path(settings.BASE_DIR))
    run_dir: Path | None = None

    def __post_init__(self):
        self.objectives = tuple(self.objectives)  # type: ignore[assignment]
        self.base_dir = Path(self.base_dir)
        if self.run_dir is not None:
            self.run_dir = Path(self.run_dir)

    def validate(self) -> "RunConfig":
        """Check invariants; raises ConfigError naming the first bad field."""
        if self.objectives not in OBJECTIVE_PAIRS:
            pairs = " or ".join(",".join(p) for p in OBJECTIVE_PAIRS)
            raise ConfigError("objectives", f"must be {pairs}, got {','.join(self.objectives)}")
        if self.n_init < 2:
            raise ConfigError("n_init", f"must be at least 2, got {self.n_init}")
        if self.n_iter < 0:
            raise ConfigError("n_iter", f"must be non-negative, got {self.n_iter}")
        if self.candidate_pool_size < 1:
            raise ConfigError(
                "candidate_pool_size", f"must be at least 1, got {self.candidate_pool_size}"
            )
        if self.init_design not in INIT_DESIGNS:
            raise ConfigError("init_design", f"must be one of {', '.join(INIT_DESIGNS)}")
        if self.enumerate_cap < 1:
            raise ConfigError("enumerate_cap", "must be positive")
        if self.gp.restarts < 1:
            raise ConfigError("gp.restarts", f"must be at least 1, got {self.gp.restarts}")
        if self.gp.max_evals < 1:
            raise ConfigError("gp.max_evals", "must be at least 1")
        for name in _TUPLE_FIELDS:
            low, high = getattr(self.gp, name)
            if not 0 < low <= high:
                raise ConfigError(f"gp.{name}", f"must satisfy 0 < low <= high, got {low}, {high}")
        if self.gp.noise_var < 1e-8:
            raise ConfigError("gp.noise_var", "must be at least 1e-8")
        if self.reference_point.margin < 0:
            raise ConfigError("reference_point.margin", "must be non-negative")
        if self.oracle.kind not in ORACLE_KINDS:
            raise ConfigError("oracle.kind", f"must be one of {', '.join(ORACLE_KINDS)}")
        if self.oracle.kind == "subprocess" and not self.oracle.command:
            raise ConfigError("oracle.command", "is required for the subprocess oracle")
        if self.oracle.timeout_s <= 0:
            raise ConfigError("oracle.timeout_s", "must be positive")
        return self

    @property
    def oracle_seed(self) -> int:
        return self.seed if self.oracle.seed is None else int(self.oracle.seed)

    def resolve_data_path(self, value: str, suffix: str) -> Path:
        """Resolve a shipped/user data file relative to cwd or the project base."""
        return resolve_data_file(self.base_dir, value, (suffix,))

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunConfig":
        """Create configuration from a dictionary."""
        config = cls()
        config.apply_dict(data)
        return config

    def apply_dict(self, data: dict[str, Any]) -> "RunConfig":
        known = {f.name for f in fields(self)}
        for key, value in data.items():
            if key in _SECTIONS:
                section = getattr(self, key)
                if not isinstance(value, dict):
                    raise ConfigError(key, "must be an object")
                for sub_key, sub_value in value.items():
                    if not hasattr(section, sub_key):
                        raise ConfigError(f"{key}.{sub_key}", "unknown setting")
                    if sub_key in _TUPLE_FIELDS:
                        sub_value = tuple(float(v) for v in sub_value)
                    setattr(section, sub_key, sub_value)
            elif key in {"base_dir", "run_dir"}:
                setattr(self, key, Path(value) if value is not None else None)
            elif key in known:
                setattr(self, key, value)
            else:
                raise ConfigError(key, "unknown setting")
        self.__post_init__()
        self._coerce_types()
        return self

    def _coerce_types(self) -> None:
        try:
            for key in ("n_init", "n_iter", "seed", "candidate_pool_size", "enumerate_cap"):
                setattr(self, key, int(getattr(self, key)))
            self.restrict_to = [str(a) for a in self.restrict_to]
            self.gp.restarts = int(self.gp.restarts)
            self.gp.max_evals = int(self.gp.max_evals)
            self.gp.n_workers = int(self.gp.n_workers)
            self.gp.noise_var = float(self.gp.noise_var)
            self.oracle.timeout_s = float(self.oracle.timeout_s)
        except (TypeError, ValueError) as exc:
            raise ConfigError("config", f"invalid value type ({exc})") from exc

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        """Create configuration from a JSON file."""
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError("config", f"file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"{path} line {exc.lineno}: {exc.msg}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config", f"{path} must contain a JSON object")
        return cls.from_dict(data)

    @classmethod
    def from_env(cls) -> "RunConfig":
        """Create configuration from environment variables."""
        return cls().apply_env()

    def apply_env(self) -> "RunConfig":
        """Override fields from NAS_* environment variables."""
        for var, key in (
            ("NAS_SEED", "seed"),
            ("NAS_N_INIT", "n_init"),
            ("NAS_N_ITER", "n_iter"),
            ("NAS_POOL_SIZE", "candidate_pool_size"),
        ):
            value = os.getenv(var)
            if value:
                try:
                    setattr(self, key, int(value))
                except ValueError:
                    raise ConfigError(key, f"{var}={value!r} is not an integer") from None

        log_level = os.getenv("NAS_LOG_LEVEL")
        if log_level:
            self.logging.level = log_level
        return self

    def to_dict(self) -> dict[str, Any]:
        """Convert configuration to a dictionary for the run header."""
        return {
            "name": self.name,
            "space": self.space,
            "objectives": list(self.objectives),
            "n_init": self.n_init,
            "n_iter": self.n_iter,
            "seed": self.seed,
            "candidate_pool_size": self.candidate_pool_size,
            "init_design": self.init_design,
            "restrict_to": list(self.restrict_to),
            "enumerate_cap": self.enumerate_cap,
            "gp": self.gp.to_dict(),
            "reference_point": {"margin": self.reference_point.margin},
            "oracle": {f.name: getattr(self.oracle, f.name) for f in fields(self.oracle)},
            "logging": {f.name: getattr(self.logging, f.name) for f in fields(self.logging)},
        }
