"""
Management command for Pareto-front extraction from objective tables.

Usage:
    python manage.py pareto extract profiles/nanosd_family --f1 tafid --f2 latency_ms
    python manage.py pareto merge var/runs/seed-0/front.csv var/runs/seed-1/front.csv
    python manage.py pareto family profiles/nanosd_family
"""

import csv
import io
from pathlib import Path

from django.core.management.base import CommandError

from nas.bo_pipeline.report import format_value, front_csv_text
from nas.cost_model import read_annotated_csv
from nas.management.base import EXIT_USAGE, SearchCommand
from nas.moo import ObjectivePoint, ParetoError, pareto_front

FAMILY_PROBLEMS = (("latency_ms", "latency_front"), ("params_m", "params_front"))


def load_objective_points(
    path: Path, f1: str, f2: str, id_column: str | None = None
) -> list[ObjectivePoint]:
    """Rows of a CSV table as objective points.

    The id comes from ``id_column``, else ``model`` when present, else ``arch``.
    """
    parsed = read_annotated_csv(path.read_text(encoding="utf-8"))
    if not parsed.rows:
        raise ParetoError(f"{path} has no rows")
    key = id_column or ("model" if "model" in parsed.columns else "arch")
    missing = [c for c in (key, f1, f2) if c not in parsed.columns]
    if missing:
        raise ParetoError(f"{path} is missing column(s): {', '.join(missing)}")

    points = []
    for line, row in parsed.rows:
        try:
            points.append(ObjectivePoint(float(row[f1]), float(row[f2]), row[key]))
        except ValueError as exc:
            raise ParetoError(f"{path} line {line}: {exc}") from None
    return points


class Command(SearchCommand):
    help = "Extract non-dominated rows from objective tables"
    subcommands = ("extract", "merge", "family")

    def add_arguments(self, parser):
        subparsers = self.add_subcommands(parser)

        for name, help_text in (
            ("extract", "Non-dominated subset of one table"),
            ("merge", "Joint front of the union of several tables"),
        ):
            sub = subparsers.add_parser(name, help=help_text)
            sub.add_argument("paths", nargs="+", help="Objective CSV file(s)")
            sub.add_argument("--f1", default="f1", help="First objective column (default: f1)")
            sub.add_argument("--f2", default="f2", help="Second objective column (default: f2)")
            sub.add_argument("--id", dest="id_column", help="Id column (default: model or arch)")

        family_parser = subparsers.add_parser(
            "family", help="Union of the tafid/latency and tafid/params fronts"
        )
        family_parser.add_argument("path", help="Table with tafid, latency_ms, params_m")
        family_parser.add_argument("--id", dest="id_column", help="Id column")

    def _emit(self, options, text: str, rows: int):
        out = self.out_path(options)
        if out:
            out.parent.mkdir(parents=True, exist_ok=True)
            out.write_text(text, encoding="utf-8", newline="")
            self.note(options, f"Wrote {rows} front members to {out}")
        else:
            self.stdout.write(text, ending="")

    def _front(self, options, paths: list[str]):
        points: list[ObjectivePoint] = []
        sources: dict[str, str] = {}
        for value in paths:
            path = self.data_path(value, ".csv")
            for point in load_objective_points(
                path, options["f1"], options["f2"], options.get("id_column")
            ):
                points.append(point)
                sources.setdefault(str(point.id), path.stem)
        front = pareto_front(points)
        self.note(options, f"{len(front)} of {len(points)} rows are non-dominated")
        self._emit(options, front_csv_text(front, sources), len(front))

    def handle_extract(self, options: dict):
        if len(options["paths"]) != 1:
            raise CommandError("extract takes exactly one table; use merge", returncode=EXIT_USAGE)
        self._front(options, options["paths"])

    def handle_merge(self, options: dict):
        self._front(options, options["paths"])

    def handle_family(self, options: dict):
        path = self.data_path(options["path"], ".csv")
        members: dict[str, dict[str, str]] = {}
        flags: dict[str, set[str]] = {}
        for column, flag in FAMILY_PROBLEMS:
            points = load_objective_points(path, "tafid", column, options.get("id_column"))
            for point in pareto_front(points):
                flags.setdefault(str(point.id), set()).add(flag)

        parsed = read_annotated_csv(path.read_text(encoding="utf-8"))
        key = options.get("id_column") or ("model" if "model" in parsed.columns else "arch")
        for _, row in parsed.rows:
            if row[key] in flags:
                members[row[key]] = row

        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["id", "tafid", "latency_ms", "params_m", *(f for _, f in FAMILY_PROBLEMS)])
        for name, row in sorted(members.items(), key=lambda item: float(item[1]["tafid"])):
            writer.writerow(
                [
                    name,
                    format_value(float(row["tafid"])),
                    format_value(float(row["latency_ms"])),
                    format_value(float(row["params_m"])),
                    *(int(f in flags[name]) for _, f in FAMILY_PROBLEMS),
                ]
            )
        self.note(options, f"{len(members)} distinct architectures across both problems")
        self._emit(options, buffer.getvalue(), len(members))
