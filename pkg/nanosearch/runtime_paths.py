"""
Runtime locations for search runs and the lookup of shipped data files.

Run directories, logs and reports live under ``var/`` in the project unless
NAS_RUN_DIR, NAS_LOG_DIR or NAS_REPORT_DIR point elsewhere; relative overrides
are taken relative to the project, not the working directory.
"""

from __future__ import annotations

import os
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path

RUNTIME_ROOT_DIRNAME = "var"
RUNTIME_DIRS = {
    "run_dir": ("NAS_RUN_DIR", "runs"),
    "log_dir": ("NAS_LOG_DIR", "logs"),
    "report_dir": ("NAS_REPORT_DIR", "reports"),
}

# Documented names of shipped data files that live under another name.
DATA_ALIASES = {"profiles/table1_reference": "profiles/nanosd_family"}


@dataclass(frozen=True)
class RuntimePaths:
    run_dir: Path
    log_dir: Path
    report_dir: Path


def resolve_from_base(base_dir: str | os.PathLike[str], value: str | os.PathLike[str]) -> Path:
    candidate = Path(value)
    if candidate.is_absolute():
        return candidate
    return Path(base_dir) / candidate


def resolve_runtime_paths(
    base_dir: str | os.PathLike[str], env: Mapping[str, str] | None = None
) -> RuntimePaths:
    environ = os.environ if env is None else env
    resolved = {
        field_name: resolve_from_base(
            base_dir, environ.get(var) or Path(RUNTIME_ROOT_DIRNAME) / default
        )
        for field_name, (var, default) in RUNTIME_DIRS.items()
    }
    return RuntimePaths(**resolved)


def resolve_data_file(
    base_dir: str | os.PathLike[str],
    value: str | os.PathLike[str],
    suffixes: tuple[str, ...] = (),
) -> Path:
    """Locate a shipped or user data file.

    Tries the path as given (relative to the working directory), then relative
    to ``base_dir``; each attempt also tries the path with each of ``suffixes``
    appended, so ``spaces/nanosd_default`` finds ``spaces/nanosd_default.json``.
    Names in DATA_ALIASES resolve to the file they stand for. Returns the first
    existing candidate, or the literal path when none exists so the caller's
    open() reports the user's spelling.
    """
    raw = Path(value)
    roots = [raw] if raw.is_absolute() else [raw, resolve_from_base(base_dir, raw)]
    for root in roots:
        if root.is_file():
            return root
        for suffix in suffixes:
            candidate = root.with_name(root.name + suffix)
            if candidate.is_file():
                return candidate
    key = raw.as_posix()
    for suffix in suffixes:
        key = key.removesuffix(suffix)
    if key in DATA_ALIASES:
        return resolve_data_file(base_dir, DATA_ALIASES[key], suffixes)
    return raw
