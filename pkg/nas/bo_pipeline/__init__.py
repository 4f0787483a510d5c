"""
Search Pipeline Package for latency-aware architecture search

This package runs the multi-objective Bayesian-optimization loop over the
stage-wise block search space and keeps every run reproducible through an
append-only event log.

Modules:
    config: Run configuration (budget, surrogate, reference point, oracle)
    loaders: Search space, oracle and restricted-cell loading
    event_log: Checksummed append-only run log with single-writer locking
    state: Run state rebuilt from the log (archive, reference point, trace)
    orchestrator: Initial design, proposal, step, run, resume and replay
    report: Front and hypervolume tables, SVG plots and text summaries
    logging: Structured logging infrastructure

Usage:
    from nas.bo_pipeline import RunConfig, SearchOrchestrator

    config = RunConfig.from_file("runs/conflicting.json")
    result = SearchOrchestrator(config).execute()
"""

from .config import ConfigError, RunConfig
from .event_log import EventLog, EventLogError, read_events
from .logging import SearchLogger
from .orchestrator import RunResult, SearchExhausted, SearchOrchestrator, replay
from .report import generate_report
from .state import RunState, rebuild_state, set_reference_point

__all__ = [
    "RunConfig",
    "ConfigError",
    "EventLog",
    "EventLogError",
    "read_events",
    "SearchLogger",
    "SearchOrchestrator",
    "SearchExhausted",
    "RunResult",
    "replay",
    "generate_report",
    "RunState",
    "rebuild_state",
    "set_reference_point",
]
