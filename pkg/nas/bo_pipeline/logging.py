"""
Search Run Logging Module

Structured logging for search runs: a JSON line formatter that carries the
iteration context (stage, iteration index, architecture, hypervolume), a
rotating file under the run directory, and per-stage metrics.
"""

import json
import logging
import logging.handlers
import time
from collections.abc import Generator
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

PLAIN_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"


def _iso(timestamp: float | None) -> str | None:
    if timestamp is None:
        return None
    return datetime.fromtimestamp(timestamp, tz=timezone.utc).isoformat()


@dataclass
class StageMetrics:
    """Counters and timings for one stage (init, optimize, finalize) of a run."""

    start_time: float = field(default_factory=time.time)
    end_time: float | None = None
    evaluations: int = 0
    infeasible: int = 0
    iteration_times: list[float] = field(default_factory=list)
    notes: list[dict[str, Any]] = field(default_factory=list)

    @property
    def duration(self) -> float:
        return (self.end_time or time.time()) - self.start_time

    @property
    def mean_iteration_time(self) -> float:
        if not self.iteration_times:
            return 0.0
        return sum(self.iteration_times) / len(self.iteration_times)

    def record_iteration(self, seconds: float) -> None:
        self.iteration_times.append(seconds)

    def note(self, level: int, message: str, context: dict[str, Any] | None = None) -> None:
        """Keep a warning or error raised while the stage was active."""
        self.notes.append(
            {
                "level": logging.getLevelName(level),
                "message": message,
                "at": _iso(time.time()),
                "context": context or {},
            }
        )

    def count(self, level: int) -> int:
        name = logging.getLevelName(level)
        return sum(1 for n in self.notes if n["level"] == name)

    def to_dict(self) -> dict[str, Any]:
        return {
            "start_time": _iso(self.start_time),
            "end_time": _iso(self.end_time),
            "duration_seconds": round(self.duration, 3),
            "evaluations": self.evaluations,
            "infeasible": self.infeasible,
            "iterations": len(self.iteration_times),
            "mean_iteration_seconds": round(self.mean_iteration_time, 4),
            "error_count": self.count(logging.ERROR),
            "warning_count": self.count(logging.WARNING),
        }


class StructuredLogFormatter(logging.Formatter):
    """One JSON object per record, with the search context fields when present."""

    CONTEXT_FIELDS = ("run", "stage", "iteration", "arch", "values", "hypervolume", "metrics")

    def format(self, record: logging.LogRecord) -> str:
        line: dict[str, Any] = {
            "timestamp": _iso(record.created),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
        }
        line.update(
            (name, getattr(record, name)) for name in self.CONTEXT_FIELDS if hasattr(record, name)
        )
        if record.exc_info:
            line["exception"] = self.formatException(record.exc_info)
        return json.dumps(line, default=str)


class SearchLogger:
    """Logger owned by one search run.

    Warnings and errors emitted while a stage is active are also kept on that
    stage's StageMetrics, so the run result can report them.
    """

    def __init__(
        self,
        name: str = "nas.search",
        log_level: str = "INFO",
        log_dir: Path | None = None,
        log_to_file: bool = True,
        structured: bool = True,
        max_bytes: int = 10 * 1024 * 1024,
        backup_count: int = 5,
        log_file_name: str = "search.log",
        console_level: str | None = None,
        run: str | None = None,
    ):
        self.name = name
        self.run = run
        self.level = logging.getLevelName(log_level.upper())
        if not isinstance(self.level, int):
            self.level = logging.INFO
        console = logging.getLevelName((console_level or log_level).upper())
        self.console_level = console if isinstance(console, int) else self.level
        self.log_path = Path(log_dir) / log_file_name if log_dir and log_to_file else None

        self.logger = logging.getLogger(name)
        self.logger.setLevel(min(self.level, self.console_level))
        self.logger.propagate = False
        self.close()

        formatter = StructuredLogFormatter() if structured else logging.Formatter(PLAIN_FORMAT)
        console_handler = logging.StreamHandler()
        console_handler.setLevel(self.console_level)
        console_handler.setFormatter(formatter)
        self.logger.addHandler(console_handler)
        if self.log_path is not None:
            self.log_path.parent.mkdir(parents=True, exist_ok=True)
            file_handler = logging.handlers.RotatingFileHandler(
                self.log_path, maxBytes=max_bytes, backupCount=backup_count, encoding="utf-8"
            )
            file_handler.setLevel(self.level)
            file_handler.setFormatter(formatter)
            self.logger.addHandler(file_handler)

        self.metrics: dict[str, StageMetrics] = {}
        self._active: str | None = None

    def close(self) -> None:
        """Detach and close every handler on the underlying logger."""
        for handler in list(self.logger.handlers):
            self.logger.removeHandler(handler)
            handler.close()

    def _emit(self, level: int, msg: str, fields: dict[str, Any], exc_info: bool = False) -> None:
        if self.run is not None:
            fields.setdefault("run", self.run)
        if self._active is not None:
            fields.setdefault("stage", self._active)
        self.logger.log(level, msg, exc_info=exc_info, extra=fields)
        if level >= logging.WARNING and self._active in self.metrics:
            self.metrics[self._active].note(level, msg, fields)

    def debug(self, msg: str, **fields: Any) -> None:
        self._emit(logging.DEBUG, msg, fields)

    def info(self, msg: str, **fields: Any) -> None:
        self._emit(logging.INFO, msg, fields)

    def warning(self, msg: str, **fields: Any) -> None:
        self._emit(logging.WARNING, msg, fields)

    def error(self, msg: str, **fields: Any) -> None:
        self._emit(logging.ERROR, msg, fields)

    def exception(self, msg: str, **fields: Any) -> None:
        self._emit(logging.ERROR, msg, fields, exc_info=True)

    @contextmanager
    def stage(self, name: str) -> Generator[StageMetrics, None, None]:
        """Track one stage; metrics are logged when it ends, even on failure."""
        metrics = self.metrics[name] = StageMetrics()
        outer, self._active = self._active, name
        self.info(f"Starting stage: {name}")
        try:
            yield metrics
        except Exception as exc:
            metrics.note(logging.ERROR, str(exc))
            raise
        finally:
            metrics.end_time = time.time()
            self.info(f"Finished stage: {name}", metrics=metrics.to_dict())
            self._active = outer

    def get_all_metrics(self) -> dict[str, dict[str, Any]]:
        return {name: m.to_dict() for name, m in self.metrics.items()}

    def log_iteration(
        self, iteration: int, arch: str, values: dict[str, float], hypervolume: float
    ) -> None:
        summary = ", ".join(f"{k}={v:.4g}" for k, v in values.items())
        self.info(
            f"Evaluation {iteration}: {arch} -> {summary}, hypervolume {hypervolume:.6g}",
            iteration=iteration,
            arch=arch,
            values=dict(values),
            hypervolume=hypervolume,
        )
