"""
Black-box objective evaluation.

Every oracle maps an EvaluationRequest to an EvaluationRecord:

    LookupOracle      replays a fixed table of measured architectures
    SubprocessOracle  talks to a user evaluator over one JSON line on stdin/stdout
    SyntheticOracle   enumerable benchmarks with exactly computable true fronts

Wire protocol (UTF-8, newline-terminated, one request per process):
    -> {"request_id": "...", "decision": [..], "arch": "R|RA|..",
        "objectives_requested": ["tafid", "latency_ms"], "n_samples": 5000}
    <- {"request_id": "...", "values": {"tafid": 10.0, "latency_ms": 27.0}}
An evaluator may instead answer {"request_id": "...", "error": "..."} to
report that the architecture cannot be evaluated.
"""

from __future__ import annotations

import json
import logging
import math
import os
import shlex
import shutil
import subprocess
import time
from abc import ABC, abstractmethod
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import numpy as np

from nas.cost_model import CostModelError, CostTable, impute_missing, read_annotated_csv
from nas.moo import ObjectivePoint, pareto_front
from nas.search_space import (
    DecisionVector,
    SearchSpace,
    SearchSpaceError,
    StageId,
    cardinality,
    encode_arch,
)

logger = logging.getLogger(__name__)

OBJECTIVES = ("tafid", "latency_ms", "params_m")
SYNTHETIC_BENCHMARKS = ("additive", "conflicting")
DEFAULT_TIMEOUT_S = 3600.0


class OracleError(RuntimeError):
    """Base class for evaluation failures."""

    exit_code = 3

    def __init__(self, message: str, *, request_id: str | None = None):
        self.request_id = request_id
        self.iteration: int | None = None
        super().__init__(message)


class OracleMiss(OracleError):
    """The oracle cannot evaluate this architecture."""


class OracleTimeout(OracleError):
    pass


class OracleProcessError(OracleError):
    """Evaluator missing, not executable, or exited nonzero."""


class OracleProtocolError(OracleError):
    """Malformed response or request_id mismatch."""

    def __init__(self, message: str, *, request_id: str | None = None, retryable: bool = True):
        super().__init__(message, request_id=request_id)
        self.retryable = retryable


class OracleValueError(OracleError):
    """A requested objective came back non-finite."""


class LookupTableError(ValueError):
    """Malformed lookup-table document."""


@dataclass(frozen=True)
class EvaluationRequest:
    decision: tuple[int, ...]
    arch: str
    objectives_requested: tuple[str, ...]
    request_id: str
    n_samples: int | None = None

    def __post_init__(self):
        unknown = [o for o in self.objectives_requested if o not in OBJECTIVES]
        if unknown:
            raise ValueError(f"Unknown objective(s): {', '.join(unknown)}")

    def to_wire(self) -> str:
        message: dict[str, Any] = {
            "request_id": self.request_id,
            "decision": list(self.decision),
            "arch": self.arch,
            "objectives_requested": list(self.objectives_requested),
        }
        if self.n_samples is not None:
            message["n_samples"] = self.n_samples
        return json.dumps(message, separators=(",", ":")) + "\n"

    def to_dict(self) -> dict[str, Any]:
        return json.loads(self.to_wire())

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> EvaluationRequest:
        return cls(
            decision=tuple(int(i) for i in data["decision"]),
            arch=str(data["arch"]),
            objectives_requested=tuple(data["objectives_requested"]),
            request_id=str(data["request_id"]),
            n_samples=data.get("n_samples"),
        )


@dataclass(frozen=True)
class EvaluationRecord:
    request: EvaluationRequest
    values: dict[str, float]
    source: str
    wall_time_s: float = 0.0
    timestamp: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())

    def to_dict(self) -> dict[str, Any]:
        return {
            "request": self.request.to_dict(),
            "values": dict(self.values),
            "source": self.source,
            "wall_time_s": self.wall_time_s,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> EvaluationRecord:
        return cls(
            request=EvaluationRequest.from_dict(data["request"]),
            values={k: float(v) for k, v in data["values"].items()},
            source=str(data["source"]),
            wall_time_s=float(data.get("wall_time_s", 0.0)),
            timestamp=str(data.get("timestamp", "")),
        )


def make_request(
    z: DecisionVector,
    space: SearchSpace,
    objectives: Sequence[str],
    request_id: str,
    n_samples: int | None = None,
) -> EvaluationRequest:
    return EvaluationRequest(
        decision=z.indices,
        arch=encode_arch(z, space),
        objectives_requested=tuple(objectives),
        request_id=request_id,
        n_samples=n_samples,
    )


def _check_values(request: EvaluationRequest, values: Mapping[str, Any]) -> dict[str, float]:
    checked: dict[str, float] = {}
    for objective in request.objectives_requested:
        if objective not in values:
            raise OracleProtocolError(
                f"Response for {request.arch} is missing objective {objective!r}",
                request_id=request.request_id,
            )
        try:
            value = float(values[objective])
        except (TypeError, ValueError):
            raise OracleProtocolError(
                f"Objective {objective!r} is not a number: {values[objective]!r}",
                request_id=request.request_id,
            ) from None
        if not math.isfinite(value):
            raise OracleValueError(
                f"Objective {objective!r} for {request.arch} is not finite ({value})",
                request_id=request.request_id,
            )
        checked[objective] = value
    return checked


class Oracle(ABC):
    """Uniform evaluation boundary used by the search loop."""

    source: str = "oracle"

    @abstractmethod
    def _values(self, request: EvaluationRequest) -> Mapping[str, Any]:
        """Return raw objective values for the request."""

    def preflight(self) -> None:
        """Fail fast before any evaluation when the oracle is unusable."""

    def evaluate(self, request: EvaluationRequest) -> EvaluationRecord:
        started = time.perf_counter()
        values = _check_values(request, self._values(request))
        return EvaluationRecord(
            request=request,
            values=values,
            source=self.source,
            wall_time_s=time.perf_counter() - started,
        )


@dataclass(frozen=True)
class LookupRow:
    arch: str
    values: dict[str, float]
    model: str | None = None


def load_lookup_table(document: str) -> list[LookupRow]:
    """Parse ``[model,]arch,tafid,latency_ms,params_m`` rows."""
    try:
        parsed = read_annotated_csv(document)
    except CostModelError as exc:
        raise LookupTableError(str(exc)) from exc
    if parsed.columns and "arch" not in parsed.columns:
        raise LookupTableError("Lookup table header must contain an 'arch' column")

    rows: list[LookupRow] = []
    seen: set[str] = set()
    for line, row in parsed.rows:
        arch = row["arch"]
        if arch in seen:
            raise LookupTableError(f"line {line}: duplicate architecture {arch!r}")
        seen.add(arch)
        values: dict[str, float] = {}
        for objective in OBJECTIVES:
            raw = row.get(objective, "")
            if raw == "":
                continue
            try:
                values[objective] = float(raw)
            except ValueError:
                raise LookupTableError(
                    f"line {line}: {objective} is not a number: {raw!r}"
                ) from None
        rows.append(LookupRow(arch=arch, values=values, model=row.get("model") or None))
    return rows


class LookupOracle(Oracle):
    """Constant-time replay of measured architectures; anything else is a miss."""

    source = "lookup"

    def __init__(
        self,
        table: Mapping[str, Mapping[str, float]],
        names: Mapping[str, str] | None = None,
    ):
        self.table = {arch: dict(values) for arch, values in table.items()}
        self.names = dict(names or {})

    @classmethod
    def from_rows(cls, rows: Sequence[LookupRow]) -> LookupOracle:
        return cls(
            {row.arch: row.values for row in rows},
            {row.arch: row.model for row in rows if row.model},
        )

    @classmethod
    def from_file(cls, path: str | Path) -> LookupOracle:
        return cls.from_rows(load_lookup_table(Path(path).read_text(encoding="utf-8")))

    def archs(self) -> list[str]:
        return list(self.table)

    def _values(self, request: EvaluationRequest) -> Mapping[str, Any]:
        try:
            return self.table[request.arch]
        except KeyError:
            raise OracleMiss(
                f"{request.arch} is not in the lookup table", request_id=request.request_id
            ) from None


class SubprocessOracle(Oracle):
    """Runs a user evaluator once per request and validates its single-line reply."""

    source = "subprocess"
    max_attempts = 2

    def __init__(self, command: str | Sequence[str], timeout_s: float = DEFAULT_TIMEOUT_S):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        if not self.command:
            raise OracleProcessError("Evaluator command is empty")
        self.timeout_s = float(timeout_s)

    def preflight(self) -> None:
        program = self.command[0]
        resolved = shutil.which(program)
        if resolved is None and not (os.path.isfile(program) and os.access(program, os.X_OK)):
            raise OracleProcessError(f"Evaluator is not an executable: {program}")

    def _values(self, request: EvaluationRequest) -> Mapping[str, Any]:
        last_error: OracleProtocolError | None = None
        for attempt in range(1, self.max_attempts + 1):
            try:
                return self._exchange(request)
            except OracleProtocolError as exc:
                if not exc.retryable:
                    raise
                last_error = exc
                logger.warning(
                    "Malformed evaluator output for %s (attempt %d/%d): %s",
                    request.request_id,
                    attempt,
                    self.max_attempts,
                    exc,
                )
        assert last_error is not None
        raise last_error

    def _exchange(self, request: EvaluationRequest) -> Mapping[str, Any]:
        try:
            completed = subprocess.run(
                self.command,
                input=request.to_wire(),
                capture_output=True,
                text=True,
                encoding="utf-8",
                timeout=self.timeout_s,
                check=False,
            )
        except subprocess.TimeoutExpired:
            raise OracleTimeout(
                f"Evaluator exceeded {self.timeout_s:g}s on {request.arch}",
                request_id=request.request_id,
            ) from None
        except OSError as exc:
            raise OracleProcessError(
                f"Could not start evaluator {self.command[0]}: {exc}",
                request_id=request.request_id,
            ) from exc

        if completed.returncode != 0:
            stderr_tail = (completed.stderr or "").strip().splitlines()[-3:]
            raise OracleProcessError(
                f"Evaluator exited with status {completed.returncode}: {' | '.join(stderr_tail)}",
                request_id=request.request_id,
            )

        lines = [line for line in (completed.stdout or "").splitlines() if line.strip()]
        if len(lines) != 1:
            raise OracleProtocolError(
                f"Expected one response line, got {len(lines)}", request_id=request.request_id
            )
        try:
            response = json.loads(lines[0])
        except json.JSONDecodeError as exc:
            raise OracleProtocolError(
                f"Response is not valid JSON: {exc.msg}", request_id=request.request_id
            ) from None
        if not isinstance(response, dict):
            raise OracleProtocolError("Response must be an object", request_id=request.request_id)
        if response.get("request_id") != request.request_id:
            raise OracleProtocolError(
                f"request_id mismatch: sent {request.request_id!r}, "
                f"got {response.get('request_id')!r}",
                request_id=request.request_id,
                retryable=False,
            )
        if "error" in response:
            raise OracleMiss(
                f"Evaluator declined {request.arch}: {response['error']}",
                request_id=request.request_id,
            )
        values = response.get("values")
        if not isinstance(values, dict):
            raise OracleProtocolError(
                "Response has no 'values' object", request_id=request.request_id
            )
        return values


class SyntheticOracle(Oracle):
    """Seeded benchmarks defined by per-stage coefficient tables.

    f1(z) = sum_s a[s][z_s] and f2(z) = sum_s b[s][z_s], so the whole space can
    be scored at once by broadcasting and the true front is exact.

    additive:    a, b ~ U(0, 1) per (stage, variant).
    conflicting: b is the block latency from a device profile (imputing
                 unprofiled blocks); a = w_s * (1 - t) + 0.02 u with t the
                 stage-normalized latency, w_s ~ U(0.5, 2), u ~ U(0, 1).
                 Faster blocks cost fidelity.
    """

    source = "synthetic"

    def __init__(
        self,
        kind: str,
        space: SearchSpace,
        seed: int = 0,
        *,
        profile: CostTable | None = None,
        coefficients: tuple[Sequence[Sequence[float]], Sequence[Sequence[float]]] | None = None,
        planted: DecisionVector | None = None,
    ):
        if kind not in SYNTHETIC_BENCHMARKS:
            choices = ", ".join(SYNTHETIC_BENCHMARKS)
            raise OracleError(f"Unknown synthetic benchmark {kind!r}; choose from {choices}")
        self.kind = kind
        self.space = space
        self.seed = int(seed)
        if coefficients is not None:
            a = [np.array(row, dtype=float) for row in coefficients[0]]
            b = [np.array(row, dtype=float) for row in coefficients[1]]
        elif kind == "additive":
            a, b = self._additive_tables()
        else:
            if profile is None:
                raise OracleError("The conflicting benchmark needs a latency profile")
            a, b = self._conflicting_tables(profile)

        for stage in StageId:
            for table in (a, b):
                if table[stage].shape != (space.count(stage),):
                    raise OracleError(
                        f"Coefficient table for {stage.name} has shape {table[stage].shape}, "
                        f"expected ({space.count(stage)},)"
                    )
        if planted is not None:
            planted.validate(space)
            for stage in StageId:
                a[stage][planted.indices[stage]] = 0.0
                b[stage][planted.indices[stage]] = 0.0
        self.planted = planted
        self.f1_table = a
        self.f2_table = b

    def _rng(self, purpose: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, purpose])

    def _additive_tables(self) -> tuple[list[np.ndarray], list[np.ndarray]]:
        rng = self._rng(0xADD)
        a = [rng.uniform(0.0, 1.0, self.space.count(stage)) for stage in StageId]
        b = [rng.uniform(0.0, 1.0, self.space.count(stage)) for stage in StageId]
        return a, b

    def _conflicting_tables(self, profile: CostTable) -> tuple[list[np.ndarray], list[np.ndarray]]:
        table = impute_missing(profile, self.space)
        rng = self._rng(0xC0F)
        weights = rng.uniform(0.5, 2.0, len(StageId))
        a: list[np.ndarray] = []
        b: list[np.ndarray] = []
        for stage in StageId:
            latency = np.array(
                [table.entries[(stage, label)].latency_ms for label in self.space.labels(stage)]
            )
            span = float(np.ptp(latency)) or 1.0
            share = (latency - latency.min()) / span
            noise = rng.uniform(0.0, 1.0, latency.shape[0])
            a.append(weights[stage] * (1.0 - share) + 0.02 * noise)
            b.append(latency)
        return a, b

    def objectives_for(self, z: DecisionVector) -> tuple[float, float]:
        # Same summation order as objective_grid so both agree bitwise.
        f1 = 0.0
        f2 = 0.0
        for stage in StageId:
            f1 += float(self.f1_table[stage][z.indices[stage]])
            f2 += float(self.f2_table[stage][z.indices[stage]])
        return f1, f2

    def _values(self, request: EvaluationRequest) -> Mapping[str, Any]:
        f1, f2 = self.objectives_for(DecisionVector(request.decision).validate(self.space))
        return {
            objective: (f1 if objective == "tafid" else f2)
            for objective in request.objectives_requested
        }

    def objective_grid(self, cap: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """f1, f2 for every decision vector, flattened in enumeration order."""
        if cap is not None and cardinality(self.space) > cap:
            raise SearchSpaceError(
                f"Space {self.space.name} has {cardinality(self.space):,} architectures, "
                f"above the enumeration cap {cap:,}"
            )
        total = len(self.space.counts)
        grids = []
        for tables in (self.f1_table, self.f2_table):
            acc = np.zeros(self.space.counts)
            for stage in StageId:
                shape = [1] * total
                shape[stage] = self.space.count(stage)
                acc = acc + tables[stage].reshape(shape)
            grids.append(acc.reshape(-1))
        return grids[0], grids[1]

    def true_front(self, cap: int | None = None) -> list[ObjectivePoint]:
        """Exact Pareto front over the whole space, ids are architecture strings."""
        f1, f2 = self.objective_grid(cap)
        # Sweep the grid first; ties are kept so pareto_front picks the smallest id.
        order = np.lexsort((f2, f1))
        keep = []
        best = math.inf
        for flat in order:
            if f2[flat] <= best:
                keep.append(int(flat))
                best = f2[flat]
        points = []
        for flat in keep:
            z = DecisionVector(tuple(int(i) for i in np.unravel_index(flat, self.space.counts)))
            f1_exact, f2_exact = self.objectives_for(z)
            points.append(ObjectivePoint(f1_exact, f2_exact, encode_arch(z, self.space)))
        return pareto_front(points)
