"""
Stage-wise block search space.

Encodes the six retained U-Net stages (three encoders, three decoders), the
shape-preserving residual/attention block variants available at each stage,
decision vectors selecting one variant per stage, pipe-joined architecture
strings, and the deterministic relax-and-project map from [0, 1]^6 onto
decision vectors.

Usage:
    from nas.search_space import load_space, project, encode_arch

    space = load_space("spaces/nanosd_default.json")
    z = project(ContinuousPoint((0.49, 0.51, 0.26, 0.12, 0.88, 0.99)), space)
    encode_arch(z, space)  # "RA|RR|RA|R|RARA|RARA"
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Any

import numpy as np

logger = logging.getLogger(__name__)

TOKEN_ALPHABET = frozenset("RA")
ARCH_SEPARATOR = "|"
DEFAULT_ENUMERATE_CAP = 10**7


class SearchSpaceError(ValueError):
    """Raised for invalid space documents, labels, or decision vectors."""

    def __init__(self, message: str, *, stage: str | None = None, line: int | None = None):
        self.stage = stage
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{prefix}{message}")


class StageId(IntEnum):
    """Retained U-Net stages in serialization order."""

    E1 = 0
    E2 = 1
    E3 = 2
    D3 = 3
    D2 = 4
    D1 = 5

    @classmethod
    def parse(cls, value: str) -> StageId:
        try:
            return cls[str(value).strip().upper()]
        except KeyError:
            raise SearchSpaceError(f"Unknown stage id: {value!r}", stage=str(value)) from None


STAGE_COUNT = len(StageId)


@dataclass(frozen=True)
class BlockVariant:
    """A residual/attention token sequence substitutable for one stage."""

    tokens: tuple[str, ...]
    is_teacher: bool = False

    def __post_init__(self):
        if not self.tokens:
            raise SearchSpaceError("Block variant must contain at least one token")
        unknown = [t for t in self.tokens if t not in TOKEN_ALPHABET]
        if unknown:
            raise SearchSpaceError(
                f"Unknown token character(s) {''.join(unknown)!r} in {''.join(self.tokens)!r}"
            )
        if self.tokens[0] != "R":
            raise SearchSpaceError(
                f"Block variant {''.join(self.tokens)!r} must begin with a residual module"
            )

    @property
    def label(self) -> str:
        return "".join(self.tokens)

    @classmethod
    def from_label(cls, label: str, is_teacher: bool = False) -> BlockVariant:
        return cls(tokens=tuple(label), is_teacher=is_teacher)

    def count(self, token: str) -> int:
        return self.tokens.count(token)


@dataclass(frozen=True)
class SearchSpace:
    """Ordered block variants per stage; immutable once parsed."""

    name: str
    variants: tuple[tuple[BlockVariant, ...], ...]

    def __post_init__(self):
        if len(self.variants) != STAGE_COUNT:
            raise SearchSpaceError(
                f"Search space needs {STAGE_COUNT} stages, got {len(self.variants)}"
            )
        for stage in StageId:
            stage_variants = self.variants[stage]
            if not stage_variants:
                raise SearchSpaceError("Empty variant list", stage=stage.name)
            labels = [v.label for v in stage_variants]
            duplicates = sorted({label for label in labels if labels.count(label) > 1})
            if duplicates:
                raise SearchSpaceError(
                    f"Duplicate variant label(s) {', '.join(duplicates)} in stage {stage.name}",
                    stage=stage.name,
                )

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(len(v) for v in self.variants)

    def count(self, stage: StageId) -> int:
        return len(self.variants[stage])

    def labels(self, stage: StageId) -> list[str]:
        return [v.label for v in self.variants[stage]]

    def variant(self, stage: StageId, index: int) -> BlockVariant:
        return self.variants[stage][index]

    def index_of(self, stage: StageId, label: str) -> int:
        for index, variant in enumerate(self.variants[stage]):
            if variant.label == label:
                return index
        raise SearchSpaceError(f"Unknown label {label!r} at {stage.name}", stage=stage.name)

    def to_dict(self) -> dict[str, Any]:
        """Convert to the config-document structure accepted by parse_space."""
        return {
            "name": self.name,
            "stages": [
                {
                    "id": stage.name,
                    "variants": [
                        {"label": v.label, "teacher": True} if v.is_teacher else {"label": v.label}
                        for v in self.variants[stage]
                    ],
                }
                for stage in StageId
            ],
        }


@dataclass(frozen=True)
class DecisionVector:
    """One variant index per stage, in StageId order."""

    indices: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))
        if len(self.indices) != STAGE_COUNT:
            raise SearchSpaceError(
                f"Decision vector needs {STAGE_COUNT} indices, got {len(self.indices)}"
            )

    def validate(self, space: SearchSpace) -> DecisionVector:
        for stage in StageId:
            index = self.indices[stage]
            if not 0 <= index < space.count(stage):
                raise SearchSpaceError(
                    f"Index {index} out of range 0..{space.count(stage) - 1} at {stage.name}",
                    stage=stage.name,
                )
        return self

    def as_list(self) -> list[int]:
        return list(self.indices)

    def __str__(self) -> str:
        return "[" + ",".join(str(i) for i in self.indices) + "]"


@dataclass(frozen=True)
class ContinuousPoint:
    """The relaxed representation x in [0, 1]^6 searched by the optimizer."""

    coords: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "coords", tuple(float(c) for c in self.coords))
        if len(self.coords) != STAGE_COUNT:
            raise SearchSpaceError(
                f"Continuous point needs {STAGE_COUNT} coordinates, got {len(self.coords)}"
            )
        for c in self.coords:
            if not (math.isfinite(c) and 0.0 <= c <= 1.0):
                raise SearchSpaceError(f"Coordinate {c!r} outside the unit interval")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.coords, dtype=float)


def _line_of(text: str | None, needle: str) -> int | None:
    """Best-effort line number of the first occurrence of ``needle``."""
    if not text:
        return None
    offset = text.find(needle)
    if offset < 0:
        return None
    return text.count("\n", 0, offset) + 1


def parse_space(config_document: str | Mapping[str, Any]) -> SearchSpace:
    """Parse and validate a search-space document.

    Accepts JSON text or an already-decoded mapping with ``name`` and
    ``stages`` (list of ``{id, variants: [{label, teacher?}]}``). Stages may
    appear in any order but each of the six ids exactly once.
    """
    text: str | None = None
    if isinstance(config_document, str):
        text = config_document
        try:
            data = json.loads(config_document)
        except json.JSONDecodeError as exc:
            raise SearchSpaceError(f"Malformed space document: {exc.msg}", line=exc.lineno) from exc
    else:
        data = config_document

    if not isinstance(data, Mapping):
        raise SearchSpaceError("Space document must be an object with name and stages")

    name = str(data.get("name") or "unnamed")
    stages = data.get("stages")
    if not isinstance(stages, list):
        raise SearchSpaceError("Space document is missing the 'stages' list")

    by_stage: dict[StageId, tuple[BlockVariant, ...]] = {}
    for entry in stages:
        if not isinstance(entry, Mapping) or "id" not in entry:
            raise SearchSpaceError("Every stage entry needs an 'id'")
        raw_id = str(entry["id"])
        line = _line_of(text, f'"{raw_id}"')
        try:
            stage = StageId.parse(raw_id)
        except SearchSpaceError as exc:
            raise SearchSpaceError(str(exc), stage=raw_id, line=line) from None
        if stage in by_stage:
            raise SearchSpaceError(f"Stage {stage.name} listed twice", stage=stage.name, line=line)

        raw_variants = entry.get("variants") or []
        if not raw_variants:
            raise SearchSpaceError(
                f"Empty variant list in stage {stage.name}", stage=stage.name, line=line
            )

        variants: list[BlockVariant] = []
        seen: set[str] = set()
        for raw in raw_variants:
            if isinstance(raw, str):
                label, teacher = raw, False
            else:
                label, teacher = str(raw.get("label", "")), bool(raw.get("teacher", False))
            label = label.strip()
            try:
                variant = BlockVariant.from_label(label, is_teacher=teacher)
            except SearchSpaceError as exc:
                raise SearchSpaceError(
                    f"{exc} in stage {stage.name}", stage=stage.name, line=line
                ) from None
            if variant.label in seen:
                raise SearchSpaceError(
                    f"Duplicate variant label {variant.label} in stage {stage.name}",
                    stage=stage.name,
                    line=line,
                )
            seen.add(variant.label)
            variants.append(variant)
        by_stage[stage] = tuple(variants)

    missing = [s.name for s in StageId if s not in by_stage]
    if missing:
        raise SearchSpaceError(f"Missing stage(s): {', '.join(missing)}", stage=missing[0])

    space = SearchSpace(name=name, variants=tuple(by_stage[s] for s in StageId))
    logger.debug("Parsed space %s with counts %s", space.name, space.counts)
    return space


def load_space(path: str | Path) -> SearchSpace:
    """Read and parse a space config file."""
    return parse_space(Path(path).read_text(encoding="utf-8"))


def cardinality(space: SearchSpace) -> int:
    """Number of architectures in the space (Python ints never overflow)."""
    return math.prod(space.counts)


def project(x: ContinuousPoint, space: SearchSpace) -> DecisionVector:
    """Deterministic thresholding map: floor(x * n) clamped to n - 1 per stage."""
    return DecisionVector(
        tuple(
            min(int(math.floor(c * n)), n - 1) for c, n in zip(x.coords, space.counts, strict=True)
        )
    )


def project_many(coords: np.ndarray, space: SearchSpace) -> np.ndarray:
    """Vectorized project() over an (m, 6) array; returns (m, 6) int indices."""
    counts = np.asarray(space.counts, dtype=np.int64)
    indices = np.floor(np.asarray(coords, dtype=float) * counts).astype(np.int64)
    return np.minimum(indices, counts - 1)


def cell_center(z: DecisionVector, space: SearchSpace) -> ContinuousPoint:
    """Center of the projection cell of ``z``; project(cell_center(z)) == z."""
    return ContinuousPoint(
        tuple((i + 0.5) / n for i, n in zip(z.indices, space.counts, strict=True))
    )


def cell_centers(indices: np.ndarray, space: SearchSpace) -> np.ndarray:
    counts = np.asarray(space.counts, dtype=float)
    return (np.asarray(indices, dtype=float) + 0.5) / counts


def encode_arch(z: DecisionVector, space: SearchSpace) -> str:
    """Pipe-joined stage labels in E1, E2, E3, D3, D2, D1 order."""
    z.validate(space)
    return ARCH_SEPARATOR.join(space.variant(stage, z.indices[stage]).label for stage in StageId)


def decode_arch(s: str, space: SearchSpace) -> DecisionVector:
    """Inverse of encode_arch."""
    segments = s.split(ARCH_SEPARATOR)
    if len(segments) != STAGE_COUNT:
        raise SearchSpaceError(
            f"Architecture {s!r} has {len(segments)} segments, expected {STAGE_COUNT}"
        )
    return DecisionVector(
        tuple(space.index_of(stage, label) for stage, label in zip(StageId, segments, strict=True))
    )


def enumerate_space(
    space: SearchSpace, cap: int = DEFAULT_ENUMERATE_CAP
) -> Iterator[DecisionVector]:
    """Every decision vector exactly once, in lexicographic order.

    The cap is checked eagerly so oversize spaces fail at call time.
    """
    total = cardinality(space)
    if total > cap:
        raise SearchSpaceError(
            f"Space {space.name} has {total:,} architectures, above the enumeration cap {cap:,}"
        )
    return (DecisionVector(idx) for idx in itertools.product(*(range(n) for n in space.counts)))


def decision_vectors(indices: Sequence[Sequence[int]]) -> list[DecisionVector]:
    return [DecisionVector(tuple(row)) for row in indices]
