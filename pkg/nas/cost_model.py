"""
Block-profile cost model.

Ingests per-(stage, variant) latency/parameter profiles measured on one device
and precision, and composes whole-architecture efficiency objectives
(latency_ms, params_m) as a fixed overhead plus the sum of the selected blocks.

Profile format:
    # device=qualcomm-sm8750
    # precision=fp16
    # overhead_ms=0
    stage,label,latency_ms[,params_m]
    E1,R,3
    ...
"""

from __future__ import annotations

import csv
import io
import logging
import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from nas.search_space import (
    DecisionVector,
    SearchSpace,
    SearchSpaceError,
    StageId,
    decode_arch,
)

logger = logging.getLogger(__name__)

PROFILE_COLUMNS = ("stage", "label", "latency_ms", "params_m")
REQUIRED_COLUMNS = ("stage", "label", "latency_ms")


class CostModelError(ValueError):
    """Raised for malformed profiles or incomplete cost lookups."""


@dataclass(frozen=True)
class CostEntry:
    stage: StageId
    label: str
    latency_ms: float
    params_m: float | None = None
    imputed: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.latency_ms) and self.latency_ms >= 0):
            raise CostModelError(
                f"latency_ms must be a non-negative number, got {self.latency_ms!r} "
                f"for ({self.stage.name}, {self.label})"
            )
        if self.params_m is not None and not (math.isfinite(self.params_m) and self.params_m >= 0):
            raise CostModelError(
                f"params_m must be a non-negative number, got {self.params_m!r} "
                f"for ({self.stage.name}, {self.label})"
            )


@dataclass(frozen=True)
class CostTable:
    """Per-block measurements for one device + precision profile."""

    device: str = "unknown"
    precision: str = "unknown"
    entries: Mapping[tuple[StageId, str], CostEntry] = field(default_factory=dict)
    fixed_overhead_ms: float = 0.0
    metadata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not (math.isfinite(self.fixed_overhead_ms) and self.fixed_overhead_ms >= 0):
            raise CostModelError(f"overhead_ms must be non-negative, got {self.fixed_overhead_ms}")

    def get(self, stage: StageId, label: str) -> CostEntry | None:
        return self.entries.get((stage, label))

    def missing_entries(self, space: SearchSpace) -> list[tuple[StageId, str]]:
        return [
            (stage, label)
            for stage in StageId
            for label in space.labels(stage)
            if (stage, label) not in self.entries
        ]

    def is_complete(self, space: SearchSpace) -> bool:
        return not self.missing_entries(space)

    @property
    def has_params(self) -> bool:
        return any(e.params_m is not None for e in self.entries.values())


@dataclass(frozen=True)
class MeasuredModel:
    model: str
    arch: str
    latency_ms: float


@dataclass(frozen=True)
class MeasuredModels:
    """Whole-model latencies measured on one device."""

    device: str
    precision: str
    models: tuple[MeasuredModel, ...]

    def latency_by_model(self) -> dict[str, float]:
        return {m.model: m.latency_ms for m in self.models}

    def arch_by_model(self) -> dict[str, str]:
        return {m.model: m.arch for m in self.models}


@dataclass(frozen=True)
class AnnotatedCSV:
    """CSV rows plus the ``# key=value`` metadata lines preceding them."""

    metadata: dict[str, str]
    columns: tuple[str, ...]
    rows: list[tuple[int, dict[str, str]]]


def read_annotated_csv(document: str) -> AnnotatedCSV:
    """Split ``# key=value`` metadata lines from CSV rows.

    Rows carry their 1-based source line number for diagnostics. Blank lines
    are skipped; a document with no header yields no rows.
    """
    metadata: dict[str, str] = {}
    data_lines: list[tuple[int, str]] = []
    for number, raw in enumerate(document.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                key, value = body.split("=", 1)
                metadata[key.strip()] = value.strip()
            continue
        data_lines.append((number, raw))

    if not data_lines:
        return AnnotatedCSV(metadata=metadata, columns=(), rows=[])

    header = tuple(h.strip() for h in next(csv.reader([data_lines[0][1]])))
    rows: list[tuple[int, dict[str, str]]] = []
    for number, raw in data_lines[1:]:
        values = next(csv.reader([raw]))
        if len(values) != len(header):
            raise CostModelError(
                f"line {number}: expected {len(header)} fields ({','.join(header)}), "
                f"got {len(values)}"
            )
        rows.append((number, {k: v.strip() for k, v in zip(header, values, strict=True)}))
    return AnnotatedCSV(metadata=metadata, columns=header, rows=rows)


def require_columns(parsed: AnnotatedCSV, required: Iterable[str], what: str) -> None:
    if not parsed.columns:
        return
    missing = [c for c in required if c not in parsed.columns]
    if missing:
        raise CostModelError(f"{what} header is missing column(s): {', '.join(missing)}")


def _parse_number(value: str, column: str, line: int) -> float:
    try:
        number = float(value)
    except ValueError:
        raise CostModelError(f"line {line}: {column} is not a number: {value!r}") from None
    if not math.isfinite(number):
        raise CostModelError(f"line {line}: {column} must be finite, got {value!r}")
    if number < 0:
        raise CostModelError(f"line {line}: {column} must be non-negative, got {value!r}")
    return number


def _imputed_keys(value: str) -> list[tuple[StageId, str]]:
    """Parse the ``# imputed=E1:RARA;E2:RARA`` metadata written by impute_missing."""
    keys: list[tuple[StageId, str]] = []
    for item in filter(None, (part.strip() for part in value.split(";"))):
        stage, _, label = item.partition(":")
        try:
            keys.append((StageId.parse(stage), label))
        except SearchSpaceError:
            raise CostModelError(f"imputed metadata names unknown stage {stage!r}") from None
    return keys


def ingest_profile(document: str) -> CostTable:
    """Parse profile text into a validated CostTable."""
    parsed = read_annotated_csv(document)
    require_columns(parsed, REQUIRED_COLUMNS, "Profile")
    metadata, rows = parsed.metadata, parsed.rows

    try:
        overhead = float(metadata.get("overhead_ms", "0"))
    except ValueError:
        raise CostModelError(f"overhead_ms is not a number: {metadata['overhead_ms']!r}") from None

    entries: dict[tuple[StageId, str], CostEntry] = {}
    for line, row in rows:
        try:
            stage = StageId.parse(row["stage"])
        except SearchSpaceError:
            raise CostModelError(f"line {line}: unknown stage id {row['stage']!r}") from None
        label = row["label"]
        if not label or any(ch not in "RA" for ch in label):
            raise CostModelError(f"line {line}: malformed label {label!r}")
        key = (stage, label)
        if key in entries:
            raise CostModelError(f"line {line}: duplicate entry ({stage.name}, {label})")
        params_raw = row.get("params_m", "")
        entries[key] = CostEntry(
            stage=stage,
            label=label,
            latency_ms=_parse_number(row["latency_ms"], "latency_ms", line),
            params_m=_parse_number(params_raw, "params_m", line) if params_raw else None,
        )

    for key in _imputed_keys(metadata.get("imputed", "")):
        if key not in entries:
            raise CostModelError(f"imputed entry {key[0].name}:{key[1]} is not in the profile")
        entries[key] = replace(entries[key], imputed=True)

    extra = {k: v for k, v in metadata.items() if k not in {"device", "precision", "overhead_ms"}}
    table = CostTable(
        device=metadata.get("device", "unknown"),
        precision=metadata.get("precision", "unknown"),
        entries=entries,
        fixed_overhead_ms=overhead,
        metadata=extra,
    )
    logger.debug("Ingested %d cost entries for %s/%s", len(entries), table.device, table.precision)
    return table


def load_profile(path: str | Path) -> CostTable:
    return ingest_profile(Path(path).read_text(encoding="utf-8"))


def _format_number(value: float) -> str:
    return repr(float(value)) if not float(value).is_integer() else str(int(value))


def serialize_profile(table: CostTable) -> str:
    """Render a table in the profile format; ingest_profile parses it back equal."""
    out = io.StringIO()
    out.write(f"# device={table.device}\n")
    out.write(f"# precision={table.precision}\n")
    out.write(f"# overhead_ms={_format_number(table.fixed_overhead_ms)}\n")
    for key, value in table.metadata.items():
        out.write(f"# {key}={value}\n")

    with_params = table.has_params
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(PROFILE_COLUMNS if with_params else REQUIRED_COLUMNS)
    ordered = sorted(table.entries.values(), key=lambda e: (int(e.stage), len(e.label), e.label))
    for entry in ordered:
        row = [entry.stage.name, entry.label, _format_number(entry.latency_ms)]
        if with_params:
            row.append("" if entry.params_m is None else _format_number(entry.params_m))
        writer.writerow(row)
    return out.getvalue()


def _selected_entries(z: DecisionVector, space: SearchSpace, table: CostTable) -> list[CostEntry]:
    z.validate(space)
    selected = []
    for stage in StageId:
        label = space.variant(stage, z.indices[stage]).label
        entry = table.get(stage, label)
        if entry is None:
            raise CostModelError(
                f"Profile {table.device}/{table.precision} has no entry for ({stage.name}, {label})"
            )
        selected.append(entry)
    return selected


def estimate_latency(z: DecisionVector, space: SearchSpace, table: CostTable) -> float:
    """fixed_overhead_ms plus the latency of every selected block."""
    return table.fixed_overhead_ms + sum(e.latency_ms for e in _selected_entries(z, space, table))


def estimate_params(z: DecisionVector, space: SearchSpace, table: CostTable) -> float:
    total = 0.0
    for entry in _selected_entries(z, space, table):
        if entry.params_m is None:
            raise CostModelError(
                f"Profile {table.device}/{table.precision} has no params_m for "
                f"({entry.stage.name}, {entry.label})"
            )
        total += entry.params_m
    return total


def rank_consistency(estimates: Mapping[str, float], measured: Mapping[str, float]) -> float:
    """Spearman rank correlation over matching keys, ties averaged.

    Raises CostModelError when the key sets differ, when there are fewer than
    three keys, or when either side is constant (rho is undefined).
    """
    if set(estimates) != set(measured):
        only_est = sorted(set(estimates) - set(measured))
        only_meas = sorted(set(measured) - set(estimates))
        raise CostModelError(
            f"Key sets differ (only in estimates: {only_est}, only in measured: {only_meas})"
        )
    if len(estimates) < 3:
        raise CostModelError(f"Rank correlation needs at least 3 points, got {len(estimates)}")

    keys = sorted(estimates)
    a = np.array([estimates[k] for k in keys], dtype=float)
    b = np.array([measured[k] for k in keys], dtype=float)
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise CostModelError("Rank correlation is undefined for constant input")
    rho = float(spearmanr(a, b)[0])
    return max(-1.0, min(1.0, rho))


def impute_missing(table: CostTable, space: SearchSpace) -> CostTable:
    """Fill absent latency entries from a per-stage token-count model.

    For each stage, latency ~ r * count(R) + a * count(A) is fitted by least
    squares on the measured variants and evaluated at the missing labels,
    clamped at zero.
    """
    missing = table.missing_entries(space)
    if not missing:
        return table

    entries = dict(table.entries)
    imputed_keys: list[str] = []
    for stage in StageId:
        stage_missing = [label for s, label in missing if s == stage]
        if not stage_missing:
            continue
        measured = [e for (s, _), e in table.entries.items() if s == stage]
        if not measured:
            raise CostModelError(f"Cannot impute stage {stage.name}: no measured variants")
        design = np.array([[e.label.count("R"), e.label.count("A")] for e in measured], dtype=float)
        target = np.array([e.latency_ms for e in measured], dtype=float)
        coef, *_ = np.linalg.lstsq(design, target, rcond=None)
        for label in stage_missing:
            predicted = float(coef[0] * label.count("R") + coef[1] * label.count("A"))
            entries[(stage, label)] = CostEntry(
                stage=stage, label=label, latency_ms=max(0.0, predicted), imputed=True
            )
            imputed_keys.append(f"{stage.name}:{label}")
            logger.info("Imputed %s %s latency %.3f ms", stage.name, label, max(0.0, predicted))

    metadata = dict(table.metadata)
    earlier = [k for k in metadata.get("imputed", "").split(";") if k]
    metadata["imputed"] = ";".join(earlier + imputed_keys)
    return replace(table, entries=entries, metadata=metadata)


def load_measured_models(document: str) -> MeasuredModels:
    """Parse a ``model,arch,latency_ms`` table of whole-model measurements."""
    parsed = read_annotated_csv(document)
    require_columns(parsed, ("model", "arch", "latency_ms"), "Measured-model")
    metadata, rows = parsed.metadata, parsed.rows

    models: list[MeasuredModel] = []
    seen: set[str] = set()
    for line, row in rows:
        if row["model"] in seen:
            raise CostModelError(f"line {line}: duplicate model {row['model']!r}")
        seen.add(row["model"])
        models.append(
            MeasuredModel(
                model=row["model"],
                arch=row["arch"],
                latency_ms=_parse_number(row["latency_ms"], "latency_ms", line),
            )
        )
    return MeasuredModels(
        device=metadata.get("device", "unknown"),
        precision=metadata.get("precision", "unknown"),
        models=tuple(models),
    )


def estimates_for(
    archs: Mapping[str, str], space: SearchSpace, table: CostTable
) -> dict[str, float]:
    """Composed latency for each ``{id: arch string}``."""
    return {
        key: estimate_latency(decode_arch(arch, space), space, table) for key, arch in archs.items()
    }


def read_measured_models(path: str | Path) -> MeasuredModels:
    return load_measured_models(Path(path).read_text(encoding="utf-8"))

