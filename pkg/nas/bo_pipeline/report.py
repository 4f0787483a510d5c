"""
Run reports: front tables, hypervolume traces, SVG plots and a text summary.

Plots are drawn with matplotlib's Agg/SVG backends into self-contained vector
files. With ``no_timestamp`` the SVG date metadata is dropped and element ids
are salted with a fixed string, so identical runs give identical files.
"""

import csv
import io
import logging
import platform
import sys
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import matplotlib

matplotlib.use("Agg")

import numpy as np  # noqa: E402
import scipy  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

from nas import __version__ as ENGINE_VERSION  # noqa: E402
from nas.bo_pipeline.event_log import read_events  # noqa: E402
from nas.bo_pipeline.loaders import build_oracle  # noqa: E402
from nas.bo_pipeline.state import RunState, rebuild_state  # noqa: E402
from nas.moo import ObjectivePoint, hypervolume_regret, select_operating_points  # noqa: E402
from nas.oracle import Oracle, SyntheticOracle  # noqa: E402
from nas.search_space import SearchSpaceError  # noqa: E402

logger = logging.getLogger(__name__)

FRONT_COLUMNS = ("arch", "f1", "f2", "source")
HYPERVOLUME_COLUMNS = ("evaluation", "hypervolume")
SVG_HASH_SALT = "nanosearch"
PARETO_COLOR = "#2ca02c"
EVALUATED_COLOR = "#9e9e9e"


def format_value(value: float) -> str:
    """Shortest repr that round-trips the float exactly."""
    return repr(float(value))


def front_csv_text(
    front: Sequence[ObjectivePoint], sources: Mapping[str, str] | None = None
) -> str:
    """The one renderer for front tables, so every producer emits identical bytes."""
    sources = sources or {}
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(FRONT_COLUMNS)
    for p in sorted(front, key=lambda p: (p.f1, p.f2)):
        writer.writerow([p.id, format_value(p.f1), format_value(p.f2), sources.get(str(p.id), "")])
    return buffer.getvalue()


def write_front_csv(
    path: str | Path, front: Sequence[ObjectivePoint], sources: Mapping[str, str] | None = None
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(front_csv_text(front, sources), encoding="utf-8", newline="")
    return path


def write_hypervolume_csv(path: str | Path, trace: Sequence[float]) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(HYPERVOLUME_COLUMNS)
        for index, value in enumerate(trace, start=1):
            writer.writerow([index, format_value(value)])
    return path


@dataclass
class ReportResult:
    """What a report run produced."""

    out_dir: Path
    points: int = 0
    pareto_members: int = 0
    hypervolume: float = 0.0
    regret: float | None = None
    files: list[Path] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "out_dir": str(self.out_dir),
            "points": self.points,
            "pareto_members": self.pareto_members,
            "hypervolume": self.hypervolume,
            "regret": self.regret,
            "files": [str(f) for f in self.files],
        }


def _save(fig: Figure, path: Path, no_timestamp: bool) -> None:
    metadata = {"Date": None} if no_timestamp else {}
    with matplotlib.rc_context({"svg.hashsalt": SVG_HASH_SALT if no_timestamp else None}):
        fig.savefig(path, format="svg", metadata=metadata)


def plot_front(
    path: Path,
    points: Sequence[ObjectivePoint],
    front: Sequence[ObjectivePoint],
    labels: tuple[str, str],
    no_timestamp: bool = False,
) -> Path:
    """Scatter of every evaluated point with Pareto members in green."""
    fig = Figure(figsize=(6.4, 4.8))
    ax = fig.subplots()
    members = {p.id for p in front}
    others = [p for p in points if p.id not in members]
    if others:
        ax.scatter(
            [p.f2 for p in others],
            [p.f1 for p in others],
            s=18,
            c=EVALUATED_COLOR,
            label="evaluated",
            gid="evaluated",
        )
    ordered = sorted(front, key=lambda p: p.f2)
    ax.scatter(
        [p.f2 for p in ordered],
        [p.f1 for p in ordered],
        s=36,
        c=PARETO_COLOR,
        label="Pareto-optimal",
        gid="pareto",
    )
    if len(ordered) > 1:
        ax.step([p.f2 for p in ordered], [p.f1 for p in ordered], where="post", c=PARETO_COLOR)
    ax.set_xlabel(labels[1])
    ax.set_ylabel(labels[0])
    ax.set_title(f"{labels[1]} vs {labels[0]}: {len(front)} of {len(points)} on the front")
    ax.legend(loc="upper right")
    fig.tight_layout()
    _save(fig, path, no_timestamp)
    return path


def plot_hypervolume(
    path: Path, trace: Sequence[float], n_init: int, no_timestamp: bool = False
) -> Path:
    fig = Figure(figsize=(6.4, 3.6))
    ax = fig.subplots()
    ax.plot(np.arange(1, len(trace) + 1), trace, marker=".", gid="hypervolume")
    if 0 < n_init < len(trace):
        ax.axvline(n_init + 0.5, linestyle="--", c=EVALUATED_COLOR)
    ax.set_xlabel("evaluation")
    ax.set_ylabel("hypervolume")
    fig.tight_layout()
    _save(fig, path, no_timestamp)
    return path


def environment_stamp() -> dict[str, str]:
    return {
        "engine": ENGINE_VERSION,
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "matplotlib": matplotlib.__version__,
        "platform": platform.platform(),
    }


def synthetic_regret(state: RunState, oracle: Oracle | None = None) -> float | None:
    """Hypervolume regret against the enumerated true front, synthetic oracles only.

    ``oracle`` is reused when given; otherwise one is built from the run config.
    """
    config = state.config
    ref = state.ref_point
    archive = state.archive
    if config.oracle.kind != "synthetic" or ref is None or archive is None:
        return None
    oracle = oracle or build_oracle(config, state.space)
    if not isinstance(oracle, SyntheticOracle):
        return None
    try:
        true_front = oracle.true_front(config.enumerate_cap)
    except SearchSpaceError as exc:
        logger.warning("Skipping regret: %s", exc)
        return None
    return hypervolume_regret(list(archive.points), true_front, ref)


def write_summary(
    path: Path,
    state: RunState,
    regret: float | None,
    header: Mapping[str, Any],
    no_timestamp: bool = False,
) -> Path:
    config = state.config
    archive = state.archive
    trace = state.hypervolume_trace()
    front = list(archive.points) if archive else []
    key1, key2 = config.objectives

    lines = [
        f"run: {config.name}",
        f"space: {state.space.name} ({'x'.join(str(c) for c in state.space.counts)})",
        f"objectives: {key1}, {key2}",
        f"oracle: {config.oracle.kind}"
        + (f" ({config.oracle.benchmark})" if config.oracle.kind == "synthetic" else ""),
        f"seed: {config.seed}",
        f"evaluations: {len(state.history)} (init {min(len(state.history), config.n_init)}, "
        f"iterations {state.iteration}, infeasible {len(state.infeasible)})",
        f"status: {'complete' if state.completed else 'incomplete'}"
        + (" (space exhausted)" if state.exhausted else ""),
    ]
    if archive is not None:
        lines.append(
            f"reference point: ({format_value(archive.ref_point.f1)}, "
            f"{format_value(archive.ref_point.f2)})"
        )
    lines.append(f"final hypervolume: {format_value(trace[-1]) if trace else 'n/a'}")
    if regret is not None:
        lines.append(f"hypervolume regret: {regret:.6f}")

    if front:
        lines.append("")
        lines.append(f"pareto front ({len(front)} members):")
        for p in front:
            lines.append(f"  {p.id}  {key1}={format_value(p.f1)}  {key2}={format_value(p.f2)}")
        lines.append("")
        lines.append("operating points:")
        for role, p in select_operating_points(front).items():
            lines.append(f"  {role}: {p.id}")

    lines.append("")
    lines.append("config:")
    for key, value in config.to_dict().items():
        lines.append(f"  {key}: {value}")
    lines.append("")
    lines.append("environment:")
    stamp = environment_stamp()
    if not no_timestamp:
        stamp["generated"] = datetime.now(timezone.utc).isoformat()
        stamp["log_engine"] = str(header.get("engine_version", ""))
    for key, value in stamp.items():
        lines.append(f"  {key}: {value}")

    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def generate_report(
    run_dir: str | Path, out_dir: str | Path | None = None, no_timestamp: bool = False
) -> ReportResult:
    """Render plots and a summary for a run directory from its event log alone."""
    run_dir = Path(run_dir)
    events = read_events(run_dir)
    state = rebuild_state(events)
    out = Path(out_dir) if out_dir else run_dir / "report"
    out.mkdir(parents=True, exist_ok=True)

    points = state.objective_points()
    archive = state.archive
    front = list(archive.points) if archive else []
    trace = state.hypervolume_trace()
    regret = synthetic_regret(state)

    result = ReportResult(
        out_dir=out,
        points=len(points),
        pareto_members=len(front),
        hypervolume=trace[-1] if trace else 0.0,
        regret=regret,
    )
    result.files.append(write_front_csv(out / "front.csv", front, state.sources()))
    result.files.append(write_hypervolume_csv(out / "hypervolume.csv", trace))
    if points:
        result.files.append(
            plot_front(out / "front.svg", points, front, state.config.objectives, no_timestamp)
        )
    result.files.append(
        plot_hypervolume(out / "hypervolume.svg", trace, state.config.n_init, no_timestamp)
    )
    result.files.append(
        write_summary(out / "summary.txt", state, regret, events[0].payload, no_timestamp)
    )
    logger.info("Report for %s written to %s", run_dir, out)
    return result
