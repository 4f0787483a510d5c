"""
Append-only run event log.

One JSON object per line: ``{"seq", "kind", "payload", "checksum"}``. The
checksum is an 8-byte BLAKE2b digest over the previous checksum and the
canonical JSON of the event body, so the whole chain validates end to end.
A trailing line without a newline (crash mid-write) is dropped on read;
every complete prefix is a valid, replayable log.
"""

import hashlib
import json
import logging
import os
from collections.abc import Iterator
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from nas import __version__ as ENGINE_VERSION

logger = logging.getLogger(__name__)

LOG_FILE_NAME = "events.jsonl"
LOCK_FILE_NAME = "run.lock"
FORMAT_VERSION = 1
GENESIS_CHECKSUM = "0" * 16
EVENT_KINDS = (
    "run_header",
    "init_eval",
    "bo_eval",
    "refit",
    "refpoint_update",
    "front_snapshot",
    "run_end",
)


class EventLogError(ValueError):
    """Raised for corrupted, missing, or locked run logs."""


class EventLogVersionError(EventLogError):
    """The log was written by an incompatible engine version."""


def _canonical(seq: int, kind: str, payload: dict[str, Any]) -> str:
    return json.dumps(
        {"seq": seq, "kind": kind, "payload": payload},
        sort_keys=True,
        separators=(",", ":"),
        allow_nan=False,
    )


def chain_checksum(previous: str, seq: int, kind: str, payload: dict[str, Any]) -> str:
    digest = hashlib.blake2b(digest_size=8)
    digest.update(previous.encode("ascii"))
    digest.update(_canonical(seq, kind, payload).encode("utf-8"))
    return digest.hexdigest()


@dataclass(frozen=True)
class RunEvent:
    seq: int
    kind: str
    payload: dict[str, Any]
    checksum: str

    def to_line(self) -> str:
        return (
            json.dumps(
                {
                    "seq": self.seq,
                    "kind": self.kind,
                    "payload": self.payload,
                    "checksum": self.checksum,
                },
                sort_keys=True,
                separators=(",", ":"),
                allow_nan=False,
            )
            + "\n"
        )


def read_events(path: str | Path) -> list[RunEvent]:
    """Read and validate a log; the incomplete trailing line, if any, is dropped."""
    path = Path(path)
    if path.is_dir():
        path = path / LOG_FILE_NAME
    if not path.exists():
        raise EventLogError(f"No event log at {path}")

    text = path.read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] != "":
        logger.warning("Dropping incomplete trailing event in %s", path)
    complete = lines[:-1]

    events: list[RunEvent] = []
    previous = GENESIS_CHECKSUM
    for number, line in enumerate(complete, start=1):
        try:
            data = json.loads(line)
            event = RunEvent(
                seq=int(data["seq"]),
                kind=str(data["kind"]),
                payload=dict(data["payload"]),
                checksum=str(data["checksum"]),
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise EventLogError(f"{path} line {number}: malformed event ({exc})") from exc
        if event.seq != len(events):
            raise EventLogError(
                f"{path} line {number}: sequence gap (expected {len(events)}, got {event.seq})"
            )
        if event.kind not in EVENT_KINDS:
            raise EventLogError(f"{path} line {number}: unknown event kind {event.kind!r}")
        expected = chain_checksum(previous, event.seq, event.kind, event.payload)
        if event.checksum != expected:
            raise EventLogError(
                f"{path} line {number}: checksum chain broken at seq {event.seq}; "
                "the log was modified or corrupted"
            )
        previous = event.checksum
        events.append(event)

    if not events:
        raise EventLogError(f"{path} contains no complete events")
    check_header(events[0], path)
    return events


def check_header(event: RunEvent, path: Path | None = None) -> None:
    where = f"{path}: " if path else ""
    if event.kind != "run_header":
        raise EventLogError(f"{where}first event must be run_header, got {event.kind}")
    format_version = event.payload.get("format_version")
    engine_version = event.payload.get("engine_version")
    if format_version != FORMAT_VERSION or engine_version != ENGINE_VERSION:
        raise EventLogVersionError(
            f"{where}log written by engine {engine_version} (format {format_version}); "
            f"this is engine {ENGINE_VERSION} (format {FORMAT_VERSION}). Replay it with the "
            "matching engine version or start a new run."
        )


class EventLog:
    """Single-writer appender for one run directory."""

    def __init__(self, run_dir: str | Path):
        self.run_dir = Path(run_dir)
        self.path = self.run_dir / LOG_FILE_NAME
        self.lock_path = self.run_dir / LOCK_FILE_NAME
        self._last_checksum = GENESIS_CHECKSUM
        self._next_seq = 0
        self._locked = False

    @property
    def next_seq(self) -> int:
        return self._next_seq

    def acquire(self) -> None:
        self.run_dir.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY, 0o644)
        except FileExistsError:
            owner = self.lock_path.read_text(encoding="utf-8").strip() or "unknown"
            raise EventLogError(
                f"{self.run_dir} is locked by process {owner}; remove {self.lock_path} "
                "if that process is no longer running"
            ) from None
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(f"{os.getpid()}\n")
        self._locked = True

    def release(self) -> None:
        if self._locked:
            self.lock_path.unlink(missing_ok=True)
            self._locked = False

    @contextmanager
    def locked(self) -> Iterator["EventLog"]:
        self.acquire()
        try:
            yield self
        finally:
            self.release()

    def create(self, header_payload: dict[str, Any]) -> RunEvent:
        """Start a fresh log; refuses to overwrite an existing one."""
        if self.path.exists() and self.path.stat().st_size > 0:
            raise EventLogError(
                f"{self.path} already exists; use 'search resume' or choose another --out"
            )
        self.path.write_text("", encoding="utf-8")
        payload = {
            "engine_version": ENGINE_VERSION,
            "format_version": FORMAT_VERSION,
            **header_payload,
        }
        return self.append("run_header", payload)

    def open_existing(self) -> list[RunEvent]:
        """Validate the existing log and position the writer after its last complete event."""
        events = read_events(self.path)
        # Rewrite without an incomplete tail so new events start on a fresh line.
        complete = "".join(event.to_line() for event in events)
        if self.path.read_text(encoding="utf-8") != complete:
            self.path.write_text(complete, encoding="utf-8")
        self._last_checksum = events[-1].checksum
        self._next_seq = len(events)
        return events

    def append(self, kind: str, payload: dict[str, Any]) -> RunEvent:
        if kind not in EVENT_KINDS:
            raise EventLogError(f"Unknown event kind {kind!r}")
        event = RunEvent(
            seq=self._next_seq,
            kind=kind,
            payload=payload,
            checksum=chain_checksum(self._last_checksum, self._next_seq, kind, payload),
        )
        line = event.to_line()
        with self.path.open("a", encoding="utf-8") as handle:
            handle.write(line)
            handle.flush()
            os.fsync(handle.fileno())
        self._last_checksum = event.checksum
        self._next_seq += 1
        return event
