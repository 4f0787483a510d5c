"""
Search run state and its reconstruction from the event log.

Everything here is a pure function of the ordered evaluation history, so a
live run, a resumed run and a replay all derive the same archive, reference
point and hypervolume trace.
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any

from nas.bo_pipeline.config import RunConfig
from nas.bo_pipeline.event_log import RunEvent
from nas.gp import GPModel
from nas.moo import ObjectivePoint, ParetoArchive, hypervolume_2d
from nas.oracle import EvaluationRecord
from nas.search_space import ContinuousPoint, SearchSpace, parse_space

logger = logging.getLogger(__name__)


def set_reference_point(
    points: Sequence[ObjectivePoint], margin: float = 0.1
) -> ObjectivePoint:
    """Per objective: max + margin * (max - min), or max + 1 when all values agree."""
    if not points:
        raise ValueError("A reference point needs at least one observation")
    coords = []
    for values in ([p.f1 for p in points], [p.f2 for p in points]):
        spread = max(values) - min(values)
        coords.append(max(values) + (margin * spread if spread > 0 else 1.0))
    return ObjectivePoint(coords[0], coords[1], "ref")


def reference_history(
    points: Sequence[ObjectivePoint], n_init: int, margin: float = 0.1
) -> list[tuple[int, ObjectivePoint]]:
    """Reference-point changes as (history length, ref) pairs.

    The point is set once the first ``n_init`` observations exist and only
    recomputed when a later observation reaches or exceeds it.
    """
    if len(points) < n_init or not points:
        return []
    ref = set_reference_point(points[:n_init], margin)
    changes = [(n_init, ref)]
    for k in range(n_init, len(points)):
        p = points[k]
        if p.f1 >= ref.f1 or p.f2 >= ref.f2:
            ref = set_reference_point(points[: k + 1], margin)
            changes.append((k + 1, ref))
    return changes


def inside(points: Sequence[ObjectivePoint], ref: ObjectivePoint) -> list[ObjectivePoint]:
    return [p for p in points if p.f1 < ref.f1 and p.f2 < ref.f2]


def hypervolume_trace(points: Sequence[ObjectivePoint], ref: ObjectivePoint) -> list[float]:
    """Hypervolume of every history prefix under one fixed reference point."""
    trace: list[float] = []
    front: list[ObjectivePoint] = []
    for p in points:
        if p.f1 < ref.f1 and p.f2 < ref.f2:
            archive = ParetoArchive.from_points([*front, p], ref)
            front = list(archive.points)
            trace.append(hypervolume_2d(archive))
        else:
            trace.append(trace[-1] if trace else 0.0)
    return trace


@dataclass
class RunState:
    """Mutable bookkeeping for one run, rebuilt identically from its log."""

    config: RunConfig
    space: SearchSpace
    history: list[EvaluationRecord] = field(default_factory=list)
    inputs: list[ContinuousPoint] = field(default_factory=list)
    infeasible: set[tuple[int, ...]] = field(default_factory=set)
    init_attempts: int = 0
    proposals: int = 0
    requests: int = 0
    completed: bool = False
    exhausted: bool = False
    gp1: GPModel | None = None
    gp2: GPModel | None = None

    @property
    def evaluated(self) -> set[tuple[int, ...]]:
        return {record.request.decision for record in self.history}

    @property
    def init_done(self) -> bool:
        return len(self.history) >= self.config.n_init

    @property
    def iteration(self) -> int:
        return max(0, len(self.history) - self.config.n_init)

    def objective_points(self) -> list[ObjectivePoint]:
        key1, key2 = self.config.objectives
        return [
            ObjectivePoint(record.values[key1], record.values[key2], record.request.arch)
            for record in self.history
        ]

    def sources(self) -> dict[str, str]:
        return {record.request.arch: record.source for record in self.history}

    @property
    def ref_point(self) -> ObjectivePoint | None:
        changes = reference_history(
            self.objective_points(), self.config.n_init, self.config.reference_point.margin
        )
        return changes[-1][1] if changes else None

    @property
    def archive(self) -> ParetoArchive | None:
        ref = self.ref_point
        if ref is None:
            return None
        return ParetoArchive.from_points(inside(self.objective_points(), ref), ref)

    def hypervolume_trace(self) -> list[float]:
        ref = self.ref_point
        return hypervolume_trace(self.objective_points(), ref) if ref else []

    def add_record(self, record: EvaluationRecord, x: ContinuousPoint) -> None:
        self.history.append(record)
        self.inputs.append(x)
        self.gp1 = None
        self.gp2 = None

    def apply_event(self, event: RunEvent) -> None:
        payload = event.payload
        if event.kind in ("init_eval", "bo_eval"):
            self.requests += 1
            if event.kind == "init_eval":
                self.init_attempts += 1
            else:
                self.proposals += 1
            decision = tuple(int(i) for i in payload["decision"])
            if payload["status"] == "ok":
                self.add_record(
                    EvaluationRecord.from_dict(payload["record"]),
                    ContinuousPoint(tuple(payload["x"])),
                )
            else:
                self.infeasible.add(decision)
        elif event.kind == "run_end":
            self.completed = True
            self.exhausted = bool(payload.get("exhausted", False))


def header_config(header: RunEvent) -> dict[str, Any]:
    return dict(header.payload["config"])


def rebuild_state(events: Sequence[RunEvent], config: RunConfig | None = None) -> RunState:
    """Reconstruct run state strictly from logged events (no oracle calls)."""
    header = events[0]
    if config is None:
        config = RunConfig.from_dict(header_config(header))
    space = parse_space(header.payload["space"])
    state = RunState(config=config, space=space)
    for event in events[1:]:
        state.apply_event(event)
    logger.debug(
        "Rebuilt state: %d evaluations, %d infeasible, completed=%s",
        len(state.history),
        len(state.infeasible),
        state.completed,
    )
    return state
