"""
Search Loop Orchestrator

Runs the relax-and-project EHVI loop: initial design, surrogate fitting,
acquisition over a seeded candidate pool, projection, evaluation and archive
update. Every evaluation is appended to the run's event log before the
in-memory state changes, and the state is updated by applying that event, so
a live run, a resumed run and a replay go through the same code path.
"""

import itertools
import json
import math
import time
from collections.abc import Callable, Iterator
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
from django.conf import settings
from scipy.stats import qmc

from nas.bo_pipeline.config import ConfigError, RunConfig
from nas.bo_pipeline.event_log import EventLog, read_events
from nas.bo_pipeline.loaders import allowed_cells, build_oracle, load_run_space
from nas.bo_pipeline.logging import SearchLogger
from nas.bo_pipeline.report import synthetic_regret, write_front_csv, write_hypervolume_csv
from nas.bo_pipeline.state import RunState, rebuild_state
from nas.gp import GPFitError, fit, model_summary, predict
from nas.moo import ObjectivePoint, ehvi_2d, hypervolume_2d
from nas.oracle import (
    Oracle,
    OracleError,
    OracleMiss,
    make_request,
)
from nas.search_space import (
    STAGE_COUNT,
    ContinuousPoint,
    DecisionVector,
    SearchSpace,
    SearchSpaceError,
    cardinality,
    cell_center,
    cell_centers,
    enumerate_space,
    project,
    project_many,
)

# Purpose keys for default_rng([seed, purpose, counter]).
PURPOSE_INIT = 0x1417
PURPOSE_SOBOL = 0x50B0
PURPOSE_POOL = 0x9001
PURPOSE_GP = 0x6F17

MAX_REDRAWS = 100
FRONT_FILE = "front.csv"
HYPERVOLUME_FILE = "hypervolume.csv"
GP_FAILURE_FILE = "gp_failure.json"


class SearchExhausted(Exception):
    """Every reachable cell has been evaluated or ruled out; the run is complete."""


class SearchStage(Enum):
    INIT = "init"
    OPTIMIZE = "optimize"
    FINALIZE = "finalize"


class RunStatus(Enum):
    NOT_STARTED = "not_started"
    RUNNING = "running"
    COMPLETED = "completed"
    EXHAUSTED = "exhausted"
    FAILED = "failed"


@dataclass
class StepResult:
    """Outcome of one evaluation, initial or proposed."""

    kind: str
    arch: str
    status: str
    iteration: int | None = None
    values: dict[str, float] = field(default_factory=dict)
    ehvi: float | None = None
    hypervolume: float = 0.0
    seconds: float = 0.0


@dataclass
class Proposal:
    x: ContinuousPoint
    z: DecisionVector
    ehvi: float
    pool_size: int


@dataclass
class RunResult:
    """Overall search execution result."""

    status: RunStatus
    started_at: datetime
    run_dir: Path
    completed_at: datetime | None = None
    evaluations: int = 0
    iterations: int = 0
    infeasible: int = 0
    hypervolume: float = 0.0
    regret: float | None = None
    front: list[ObjectivePoint] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    metrics: dict[str, Any] = field(default_factory=dict)

    @property
    def duration(self) -> float:
        if self.completed_at:
            return (self.completed_at - self.started_at).total_seconds()
        return 0.0

    @property
    def success(self) -> bool:
        return self.status in (RunStatus.COMPLETED, RunStatus.EXHAUSTED)

    def to_dict(self) -> dict[str, Any]:
        """Convert to dictionary for serialization."""
        return {
            "status": self.status.value,
            "run_dir": str(self.run_dir),
            "started_at": self.started_at.isoformat(),
            "completed_at": self.completed_at.isoformat() if self.completed_at else None,
            "duration_seconds": round(self.duration, 2),
            "evaluations": self.evaluations,
            "iterations": self.iterations,
            "infeasible": self.infeasible,
            "hypervolume": self.hypervolume,
            "regret": self.regret,
            "front": [[str(p.id), p.f1, p.f2] for p in self.front],
            "errors": self.errors,
            "warnings": self.warnings,
            "metrics": self.metrics,
        }


def gp_seed(seed: int, evaluations: int, objective: int) -> int:
    """Restart seed for one surrogate fit, keyed on the history length."""
    sequence = np.random.SeedSequence([seed, PURPOSE_GP, evaluations, objective])
    return int(sequence.generate_state(1)[0])


def _sobol_block(config: RunConfig) -> np.ndarray:
    sampler = qmc.Sobol(
        d=STAGE_COUNT, scramble=True, seed=np.random.default_rng([config.seed, PURPOSE_SOBOL])
    )
    return sampler.random_base2(m=max(1, math.ceil(math.log2(max(config.n_init, 2)))))


def init_candidates(
    config: RunConfig, space: SearchSpace, allowed: np.ndarray | None = None
) -> Iterator[tuple[ContinuousPoint, DecisionVector]]:
    """Deterministic stream of initial-design points with pairwise distinct cells.

    Candidates come from the uniform stream (or a scrambled Sobol block for
    ``init_design="sobol"``); a candidate whose cell was already produced is
    re-drawn from the uniform stream, up to MAX_REDRAWS times. With ``allowed``
    cells a cell is picked uniformly among them and the point is its center.
    The stream ends once every reachable cell has been produced.
    """
    rng = np.random.default_rng([config.seed, PURPOSE_INIT])
    sobol = _sobol_block(config) if config.init_design == "sobol" and allowed is None else None
    total = len(allowed) if allowed is not None else cardinality(space)
    seen: set[tuple[int, ...]] = set()

    def draw(first: bool) -> tuple[ContinuousPoint, DecisionVector]:
        if allowed is not None:
            z = DecisionVector(tuple(int(i) for i in allowed[rng.integers(len(allowed))]))
            return cell_center(z, space), z
        if first and sobol is not None and len(seen) < len(sobol):
            coords = sobol[len(seen)]
        else:
            coords = rng.uniform(0.0, 1.0, STAGE_COUNT)
        x = ContinuousPoint(tuple(float(c) for c in coords))
        return x, project(x, space)

    while len(seen) < total:
        for attempt in range(MAX_REDRAWS + 1):
            x, z = draw(first=attempt == 0)
            if z.indices not in seen:
                break
        else:
            raise ConfigError(
                "n_init",
                f"could not find a new distinct architecture after {MAX_REDRAWS} re-draws "
                f"({len(seen)} of {total} already drawn)",
            )
        seen.add(z.indices)
        yield x, z


def init_design(
    config: RunConfig,
    space: SearchSpace,
    allowed: np.ndarray | None = None,
    n: int | None = None,
) -> list[ContinuousPoint]:
    """The first ``n`` (default ``n_init``) points of the initial design."""
    n = config.n_init if n is None else n
    available = len(allowed) if allowed is not None else cardinality(space)
    if n > available:
        raise ConfigError(
            "n_init", f"needs {n} distinct architectures but only {available} are available"
        )
    return [x for x, _ in itertools.islice(init_candidates(config, space, allowed), n)]


def _fallback_cells(state: RunState, allowed: np.ndarray | None) -> np.ndarray:
    """Unevaluated cells by enumeration, for when the random pool found none."""
    excluded = state.evaluated | state.infeasible
    if allowed is not None:
        rows = [tuple(int(i) for i in row) for row in allowed]
    else:
        try:
            rows = [z.indices for z in enumerate_space(state.space, state.config.enumerate_cap)]
        except SearchSpaceError as exc:
            raise SearchExhausted(f"Candidate pool exhausted and {exc}") from None
    remaining = [row for row in rows if row not in excluded]
    if not remaining:
        raise SearchExhausted("Every reachable architecture has been evaluated")
    return np.array(remaining, dtype=np.int64)


def propose(state: RunState, allowed: np.ndarray | None = None) -> Proposal:
    """EHVI argmax over a seeded candidate pool of unevaluated cells.

    Ties go to the lexicographically smallest decision vector.
    """
    config = state.config
    space = state.space
    archive = state.archive
    if state.gp1 is None or state.gp2 is None or archive is None:
        raise RuntimeError("propose() needs fitted surrogates and an initialized archive")

    rng = np.random.default_rng([config.seed, PURPOSE_POOL, state.proposals])
    if allowed is None:
        coords = rng.uniform(0.0, 1.0, (config.candidate_pool_size, STAGE_COUNT))
        cells = project_many(coords, space)
    else:
        cells = allowed[rng.integers(len(allowed), size=config.candidate_pool_size)]
        coords = cell_centers(cells, space)

    _, first = np.unique(cells, axis=0, return_index=True)
    first.sort()
    excluded = state.evaluated | state.infeasible
    keep = [i for i in first if tuple(int(v) for v in cells[i]) not in excluded]
    if keep:
        cells, coords = cells[keep], coords[keep]
    else:
        cells = _fallback_cells(state, allowed)
        coords = cell_centers(cells, space)

    centers = cell_centers(cells, space)
    mu1, var1 = predict(state.gp1, centers)
    mu2, var2 = predict(state.gp2, centers)
    scores = np.atleast_1d(ehvi_2d(mu1, var1, mu2, var2, archive))

    # lexsort's last key is primary, so feed stage columns in reverse.
    order = np.lexsort(cells.T[::-1])
    best = int(order[int(np.argmax(scores[order]))])
    z = DecisionVector(tuple(int(i) for i in cells[best]))
    x = ContinuousPoint(tuple(float(c) for c in coords[best]))
    return Proposal(x=x, z=z, ehvi=float(scores[best]), pool_size=len(cells))


class SearchOrchestrator:
    """Coordinates one search run with event logging, metrics and callbacks.

    Features:
    - Fresh runs, resume from a validated log, and oracle-free replay
    - Per-evaluation events appended before state changes
    - Structured logging with per-stage metrics
    - Step and completion callbacks
    """

    def __init__(
        self,
        config: RunConfig | None = None,
        logger: SearchLogger | None = None,
        oracle: Oracle | None = None,
        console_level: str | None = None,
    ):
        self.config = config or RunConfig.from_env()
        self.run_dir = (
            Path(self.config.run_dir)
            if self.config.run_dir
            else Path(settings.NAS_RUN_DIR) / self.config.name
        )
        self.logger = logger or SearchLogger(
            name="nas.search",
            log_level=self.config.logging.level,
            log_dir=self.run_dir,
            log_to_file=self.config.logging.log_to_file,
            structured=self.config.logging.structured_logging,
            max_bytes=self.config.logging.max_log_size,
            backup_count=self.config.logging.backup_count,
            log_file_name=self.config.logging.log_file_name,
            console_level=console_level,
            run=self.config.name,
        )
        self.oracle = oracle
        self.event_log = EventLog(self.run_dir)
        self.state: RunState | None = None
        self.allowed: np.ndarray | None = None
        self.current_stage: SearchStage | None = None
        self.result: RunResult | None = None
        self._last_ref: ObjectivePoint | None = None

        self._step_callbacks: list[Callable[[StepResult], None]] = []
        self._completion_callbacks: list[Callable[[RunResult], None]] = []

    def register_step_callback(self, callback: Callable[[StepResult], None]) -> None:
        """Register a callback invoked after every evaluation."""
        self._step_callbacks.append(callback)

    def register_completion_callback(self, callback: Callable[[RunResult], None]) -> None:
        """Register a callback for run completion."""
        self._completion_callbacks.append(callback)

    def _run_step_callbacks(self, result: StepResult) -> None:
        for callback in self._step_callbacks:
            try:
                callback(result)
            except Exception as e:
                self.logger.warning(f"Step callback error: {e}")

    def _run_completion_callbacks(self, result: RunResult) -> None:
        for callback in self._completion_callbacks:
            try:
                callback(result)
            except Exception as e:
                self.logger.warning(f"Completion callback error: {e}")

    # ------------------------------------------------------------------ setup

    def _prepare_oracle(self, space: SearchSpace) -> Oracle:
        oracle = self.oracle or build_oracle(self.config, space)
        oracle.preflight()
        self.oracle = oracle
        self.allowed = allowed_cells(self.config, space, oracle)
        return oracle

    def start(self) -> RunState:
        """Validate, preflight the oracle, and write the run header of a fresh log."""
        self.config.validate()
        space = load_run_space(self.config)
        self._prepare_oracle(space)
        available = len(self.allowed) if self.allowed is not None else cardinality(space)
        if available < self.config.n_init:
            raise ConfigError(
                "n_init",
                f"needs {self.config.n_init} distinct architectures but only "
                f"{available} are available",
            )

        self.event_log.acquire()
        self.event_log.create(
            {
                "config": self.config.to_dict(),
                "space": space.to_dict(),
                "cardinality": cardinality(space),
                "oracle_source": self.oracle.source if self.oracle else None,
                "reference_policy": {
                    "margin": self.config.reference_point.margin,
                    "rule": "max + margin * range (+1 when degenerate), "
                    "recomputed when an observation reaches it",
                },
            }
        )
        self.state = RunState(config=self.config, space=space)
        self.logger.info(
            f"Started run {self.config.name} in {self.run_dir}: space {space.name} "
            f"({cardinality(space):,} architectures), budget "
            f"{self.config.n_init}+{self.config.n_iter}, seed {self.config.seed}"
        )
        return self.state

    def open(self) -> RunState:
        """Reopen an existing log for appending and rebuild its state."""
        self.event_log.acquire()
        events = self.event_log.open_existing()
        self.state = rebuild_state(events, self.config)
        self.config.validate()
        if not self.state.completed:
            self._prepare_oracle(self.state.space)
        self._last_ref = self.state.ref_point
        self.logger.info(
            f"Resuming run {self.config.name} from {len(events)} events: "
            f"{len(self.state.history)} evaluations, {len(self.state.infeasible)} infeasible"
        )
        return self.state

    def close(self) -> None:
        self.event_log.release()

    # --------------------------------------------------------------- evaluation

    def _request_id(self, state: RunState) -> str:
        return f"{self.config.name}-{self.config.seed}-{state.requests:06d}"

    def _evaluate(
        self,
        x: ContinuousPoint,
        z: DecisionVector,
        kind: str,
        extra: dict[str, Any] | None = None,
    ) -> StepResult:
        state = self._require_state()
        assert self.oracle is not None
        started = time.perf_counter()
        iteration = state.iteration + 1 if kind == "bo_eval" else None
        request = make_request(
            z,
            state.space,
            self.config.objectives,
            self._request_id(state),
            self.config.oracle.n_samples,
        )
        payload: dict[str, Any] = {
            "decision": list(z.indices),
            "arch": request.arch,
            "x": list(x.coords),
            "request_id": request.request_id,
            **(extra or {}),
        }
        if iteration is not None:
            payload["iteration"] = iteration

        try:
            record = self.oracle.evaluate(request)
        except OracleMiss as exc:
            payload.update(status="infeasible", reason=str(exc))
            state.apply_event(self.event_log.append(kind, payload))
            self.logger.warning(
                f"Infeasible architecture {request.arch}: {exc}", arch=request.arch
            )
            result = StepResult(kind=kind, arch=request.arch, status="infeasible")
            self._run_step_callbacks(result)
            return result
        except OracleError as exc:
            exc.iteration = iteration
            raise

        payload.update(status="ok", record=record.to_dict())
        state.apply_event(self.event_log.append(kind, payload))
        self._note_reference_point()

        archive = state.archive
        hv = hypervolume_2d(archive) if archive is not None else 0.0
        seconds = time.perf_counter() - started
        self.logger.log_iteration(
            iteration if iteration is not None else len(state.history),
            request.arch,
            record.values,
            hv,
        )
        result = StepResult(
            kind=kind,
            arch=request.arch,
            status="ok",
            iteration=iteration,
            values=dict(record.values),
            ehvi=(extra or {}).get("ehvi"),
            hypervolume=hv,
            seconds=seconds,
        )
        self._run_step_callbacks(result)
        return result

    def _require_state(self) -> RunState:
        if self.state is None:
            raise RuntimeError("The run has not been started or opened")
        return self.state

    def _note_reference_point(self) -> None:
        state = self._require_state()
        ref = state.ref_point
        if ref is None or ref == self._last_ref:
            return
        reason = "initialized" if self._last_ref is None else "exceeded"
        self.event_log.append(
            "refpoint_update",
            {"ref": [ref.f1, ref.f2], "reason": reason, "evaluations": len(state.history)},
        )
        if self._last_ref is not None:
            self.logger.warning(
                f"Reference point exceeded after {len(state.history)} evaluations; "
                f"re-based to ({ref.f1:.6g}, {ref.f2:.6g})"
            )
        self._last_ref = ref

    def _snapshot_front(self) -> None:
        state = self._require_state()
        archive = state.archive
        if archive is None:
            return
        self.event_log.append(
            "front_snapshot",
            {
                "evaluations": len(state.history),
                "front": [[str(p.id), p.f1, p.f2] for p in archive.points],
                "hypervolume": hypervolume_2d(archive),
            },
        )

    # ---------------------------------------------------------------- the loop

    def initialize(self) -> None:
        """Evaluate the initial design, continuing after any logged attempts."""
        state = self._require_state()
        candidates = init_candidates(self.config, state.space, self.allowed)
        for _ in itertools.islice(candidates, state.init_attempts):
            pass
        evaluated = False
        while not state.init_done:
            try:
                x, z = next(candidates)
            except StopIteration:
                state.exhausted = True
                self.logger.warning(
                    f"Initial design exhausted the reachable space after "
                    f"{len(state.history)} feasible evaluations"
                )
                return
            self._evaluate(x, z, "init_eval")
            evaluated = True
        if evaluated:
            self._snapshot_front()

    def fit_surrogates(self) -> None:
        """Refit both GPs from scratch on every feasible evaluation."""
        state = self._require_state()
        xs = cell_centers(np.array([r.request.decision for r in state.history]), state.space)
        models = []
        for k, key in enumerate(self.config.objectives):
            ys = np.array([r.values[key] for r in state.history], dtype=float)
            try:
                models.append(fit(xs, ys, self.config.gp, gp_seed(self.config.seed, len(ys), k)))
            except GPFitError as exc:
                self._write_gp_failure(key, xs, ys, exc)
                raise
        state.gp1, state.gp2 = models
        self.event_log.append(
            "refit",
            {
                "evaluations": len(state.history),
                "gp1": model_summary(models[0]),
                "gp2": model_summary(models[1]),
            },
        )

    def _write_gp_failure(self, key: str, xs: np.ndarray, ys: np.ndarray, exc: Exception) -> None:
        path = self.run_dir / GP_FAILURE_FILE
        path.write_text(
            json.dumps(
                {
                    "objective": key,
                    "error": str(exc),
                    "inputs": xs.tolist(),
                    "targets": ys.tolist(),
                    "gp": self.config.gp.to_dict(),
                },
                indent=2,
            ),
            encoding="utf-8",
        )
        self.logger.error(f"Surrogate fit for {key} failed; diagnostics in {path}")

    def step(self) -> StepResult:
        """One iteration: refit, propose, evaluate, append, update."""
        state = self._require_state()
        if not state.init_done:
            raise RuntimeError("step() needs a completed initial design")
        self.fit_surrogates()
        proposal = propose(state, self.allowed)
        self.logger.debug(
            f"Proposal {proposal.z} from {proposal.pool_size} candidates, "
            f"EHVI {proposal.ehvi:.6g}",
            iteration=state.iteration + 1,
        )
        return self._evaluate(proposal.x, proposal.z, "bo_eval", {"ehvi": proposal.ehvi})

    def optimize(self) -> None:
        state = self._require_state()
        metrics = self.logger.metrics.get(SearchStage.OPTIMIZE.value)
        while state.init_done and not state.exhausted and state.iteration < self.config.n_iter:
            started = time.perf_counter()
            try:
                result = self.step()
            except SearchExhausted as exc:
                state.exhausted = True
                self.logger.info(f"Search space exhausted: {exc}")
                break
            if metrics is not None:
                if result.status == "ok":
                    metrics.evaluations += 1
                    metrics.record_iteration(time.perf_counter() - started)
                else:
                    metrics.infeasible += 1

    def finalize(self) -> RunResult:
        """Write front and hypervolume tables and close the log with run_end."""
        state = self._require_state()
        self.run_dir.mkdir(parents=True, exist_ok=True)
        archive = state.archive
        front = list(archive.points) if archive else []
        trace = state.hypervolume_trace()
        write_front_csv(self.run_dir / FRONT_FILE, front, state.sources())
        write_hypervolume_csv(self.run_dir / HYPERVOLUME_FILE, trace)

        regret = synthetic_regret(state, self.oracle)
        if not state.completed:
            self._snapshot_front()
            self.event_log.append(
                "run_end",
                {
                    "status": "exhausted" if state.exhausted else "completed",
                    "evaluations": len(state.history),
                    "infeasible": len(state.infeasible),
                    "hypervolume": trace[-1] if trace else 0.0,
                    "exhausted": state.exhausted,
                    "regret": regret,
                },
            )
            state.completed = True

        result = self.result or RunResult(
            status=RunStatus.RUNNING, started_at=datetime.now(), run_dir=self.run_dir
        )
        result.status = RunStatus.EXHAUSTED if state.exhausted else RunStatus.COMPLETED
        result.evaluations = len(state.history)
        result.iterations = state.iteration
        result.infeasible = len(state.infeasible)
        result.hypervolume = trace[-1] if trace else 0.0
        result.regret = regret
        result.front = front
        return result

    def execute(self, resume: bool = False) -> RunResult:
        """Run (or resume) the search to completion.

        Errors are recorded on the result and re-raised once the run lock is
        released; the log stays resumable.
        """
        self.result = RunResult(
            status=RunStatus.RUNNING, started_at=datetime.now(), run_dir=self.run_dir
        )
        error: BaseException | None = None
        try:
            state = self.open() if resume else self.start()
            if not state.completed:
                self.current_stage = SearchStage.INIT
                with self.logger.stage(SearchStage.INIT.value) as metrics:
                    before = len(state.history)
                    self.initialize()
                    metrics.evaluations = len(state.history) - before
                    metrics.infeasible = len(state.infeasible)

                self.current_stage = SearchStage.OPTIMIZE
                with self.logger.stage(SearchStage.OPTIMIZE.value):
                    self.optimize()

            self.current_stage = SearchStage.FINALIZE
            self.finalize()
        except Exception as e:
            self.result.status = RunStatus.FAILED
            self.result.errors.append(str(e))
            stage = self.current_stage.value if self.current_stage else None
            if isinstance(e, OracleError | ConfigError | SearchSpaceError):
                self.logger.error(f"Search failed: {e}", stage=stage)
            else:
                self.logger.exception("Search failed", stage=stage)
            error = e
        finally:
            self.close()
            self.result.completed_at = datetime.now()
            self.result.metrics = self.logger.get_all_metrics()
            self._run_completion_callbacks(self.result)
            self.logger.info(
                f"Search {self.result.status.value}: {self.result.evaluations} evaluations, "
                f"hypervolume {self.result.hypervolume:.6g}, {self.result.duration:.1f}s total"
            )
            self.logger.close()

        if error is not None:
            raise error
        return self.result

    def run(self) -> RunResult:
        return self.execute(resume=False)

    def resume(self) -> RunResult:
        return self.execute(resume=True)

    @classmethod
    def for_run_dir(cls, run_dir: str | Path, **kwargs: Any) -> "SearchOrchestrator":
        """Orchestrator configured from an existing run's header."""
        run_dir = Path(run_dir)
        events = read_events(run_dir)
        config = RunConfig.from_dict(dict(events[0].payload["config"]))
        config.run_dir = run_dir
        return cls(config, **kwargs)


def replay(run_dir: str | Path, out_dir: str | Path | None = None) -> RunResult:
    """Rebuild a run strictly from its log and rewrite its tables; no oracle is built."""
    run_dir = Path(run_dir)
    out = Path(out_dir) if out_dir else run_dir / "replay"
    started = datetime.now()
    state = rebuild_state(read_events(run_dir))
    archive = state.archive
    front = list(archive.points) if archive else []
    trace = state.hypervolume_trace()
    write_front_csv(out / FRONT_FILE, front, state.sources())
    write_hypervolume_csv(out / HYPERVOLUME_FILE, trace)
    if not state.completed:
        status = RunStatus.RUNNING
    else:
        status = RunStatus.EXHAUSTED if state.exhausted else RunStatus.COMPLETED
    return RunResult(
        status=status,
        started_at=started,
        completed_at=datetime.now(),
        run_dir=out,
        evaluations=len(state.history),
        iterations=state.iteration,
        infeasible=len(state.infeasible),
        hypervolume=trace[-1] if trace else 0.0,
        front=front,
    )


def run(config: RunConfig, **kwargs: Any) -> RunResult:
    """Execute a fresh search for ``config``."""
    return SearchOrchestrator(config, **kwargs).execute()
