"""
Management command for the additive latency model.

Usage:
    python manage.py cost estimate profiles/sm8750_fp16 "R|RA|RA|RARA|RR|RR"
    python manage.py cost estimate profiles/sm8750_fp16 --file profiles/nanosd_family
    python manage.py cost rank profiles/sm8750_fp16 --measured profiles/sm8750_measured_models
    python manage.py cost compare profiles/sm8750_measured_models \
        profiles/apple_a17_measured_models
"""

import csv
import io

from django.conf import settings
from django.core.management.base import CommandError

from nas.cost_model import (
    estimate_latency,
    estimate_params,
    estimates_for,
    load_profile,
    rank_consistency,
    read_annotated_csv,
    read_measured_models,
)
from nas.management.base import EXIT_USAGE, SearchCommand
from nas.search_space import decode_arch, load_space


def _number(value: float) -> str:
    return format(value, ".6g")


class Command(SearchCommand):
    help = "Compose per-block latency profiles into architecture estimates"
    subcommands = ("estimate", "rank", "compare")

    def add_arguments(self, parser):
        subparsers = self.add_subcommands(parser)

        estimate_parser = subparsers.add_parser(
            "estimate", help="Print composed latency for architectures"
        )
        estimate_parser.add_argument("profile", help="Block latency profile CSV")
        estimate_parser.add_argument("archs", nargs="*", help="Architecture strings")
        estimate_parser.add_argument(
            "--file", help="CSV with an 'arch' column (and optional 'model') or one arch per line"
        )
        estimate_parser.add_argument("--space", default=None, help="Search space file")
        estimate_parser.add_argument(
            "--params", action="store_true", help="Also print composed parameter counts"
        )

        rank_parser = subparsers.add_parser(
            "rank", help="Spearman rho of composed estimates against measured latencies"
        )
        rank_parser.add_argument("profile", help="Block latency profile CSV")
        rank_parser.add_argument(
            "--measured", required=True, help="Measured-model table (model,arch,latency_ms)"
        )
        rank_parser.add_argument("--models", help="Comma-separated model names to compare")
        rank_parser.add_argument("--space", default=None, help="Search space file")

        compare_parser = subparsers.add_parser(
            "compare", help="Spearman rho between two measured-model tables"
        )
        compare_parser.add_argument("first", help="Measured-model table")
        compare_parser.add_argument("second", help="Measured-model table")
        compare_parser.add_argument("--models", help="Comma-separated model names to compare")

    def _space(self, options):
        value = options.get("space") or settings.NAS_DEFAULT_SPACE
        return load_space(self.data_path(value, ".json"))

    def _targets(self, options) -> list[tuple[str, str]]:
        targets = [(arch, arch) for arch in options.get("archs") or []]
        if options.get("file"):
            text = self.data_path(options["file"], ".csv").read_text(encoding="utf-8")
            parsed = read_annotated_csv(text)
            if "arch" in parsed.columns:
                for _, row in parsed.rows:
                    targets.append((row.get("model") or row["arch"], row["arch"]))
            else:
                lines = [line.strip() for line in text.splitlines()]
                targets.extend((line, line) for line in lines if line and not line.startswith("#"))
        if not targets:
            raise CommandError("Give architecture strings or --file", returncode=EXIT_USAGE)
        return targets

    def _emit(self, options, header: list[str], rows: list[list[str]]):
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        out = self.out_path(options)
        if out:
            out.parent.mkdir(parents=True, exist_ok=True)
            out.write_text(buffer.getvalue(), encoding="utf-8")
            self.note(options, f"Wrote {len(rows)} rows to {out}")
        else:
            self.stdout.write(buffer.getvalue(), ending="")

    def handle_estimate(self, options: dict):
        space = self._space(options)
        table = load_profile(self.data_path(options["profile"], ".csv"))
        self.note(options, f"Profile {table.device}/{table.precision}")

        header = ["id", "arch", "latency_ms"] + (["params_m"] if options.get("params") else [])
        rows = []
        for name, arch in self._targets(options):
            z = decode_arch(arch, space)
            row = [name, arch, _number(estimate_latency(z, space, table))]
            if options.get("params"):
                row.append(_number(estimate_params(z, space, table)))
            rows.append(row)
        self._emit(options, header, rows)

    def _select(self, latencies: dict[str, float], options) -> dict[str, float]:
        if not options.get("models"):
            return latencies
        names = [name.strip() for name in options["models"].split(",") if name.strip()]
        unknown = [name for name in names if name not in latencies]
        if unknown:
            raise CommandError(f"Unknown model(s): {', '.join(unknown)}", returncode=EXIT_USAGE)
        return {name: latencies[name] for name in names}

    def handle_rank(self, options: dict):
        space = self._space(options)
        table = load_profile(self.data_path(options["profile"], ".csv"))
        measured_models = read_measured_models(self.data_path(options["measured"], ".csv"))
        measured = self._select(measured_models.latency_by_model(), options)
        archs = measured_models.arch_by_model()
        estimates = estimates_for({name: archs[name] for name in measured}, space, table)
        rho = rank_consistency(estimates, measured)

        rows = [
            [name, archs[name], _number(estimates[name]), _number(measured[name])]
            for name in measured
        ]
        self._emit(options, ["model", "arch", "estimate_ms", "measured_ms"], rows)
        self.stdout.write(f"spearman_rho={rho:.4f}")

    def handle_compare(self, options: dict):
        first = read_measured_models(self.data_path(options["first"], ".csv"))
        second = read_measured_models(self.data_path(options["second"], ".csv"))
        a = self._select(first.latency_by_model(), options)
        b = second.latency_by_model()
        b = {name: b[name] for name in a if name in b}
        rho = rank_consistency({name: a[name] for name in b}, b)

        rows = [[name, _number(a[name]), _number(b[name])] for name in b]
        self._emit(options, ["model", first.device, second.device], rows)
        self.stdout.write(f"spearman_rho={rho:.4f}")
