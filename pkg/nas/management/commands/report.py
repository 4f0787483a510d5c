"""
Management command for run reports.

Usage:
    python manage.py report var/runs/conflicting
    python manage.py report var/runs/conflicting --out var/reports/conflicting --no-timestamp
"""

from pathlib import Path

from nas.bo_pipeline import generate_report
from nas.management.base import SearchCommand


class Command(SearchCommand):
    help = "Render front and hypervolume plots plus a text summary for a run"

    def add_arguments(self, parser):
        parser.add_argument("run_dir", help="Run directory holding events.jsonl")
        parser.add_argument(
            "--no-timestamp",
            action="store_true",
            help="Omit timestamps so identical runs produce identical files",
        )

    def handle(self, *args, **options):
        options["subcommand"] = "render"
        return super().handle(*args, **options)

    def handle_render(self, options: dict):
        result = generate_report(
            Path(options["run_dir"]),
            self.out_path(options),
            no_timestamp=options.get("no_timestamp", False),
        )
        self.stdout.write(self.style.WARNING("Report:"))
        self.stdout.write(f"  Points: {result.points}")
        self.stdout.write(f"  Pareto members: {result.pareto_members}")
        self.stdout.write(f"  Hypervolume: {result.hypervolume:.6g}")
        if result.regret is not None:
            self.stdout.write(f"  Hypervolume regret: {result.regret:.4%}")
        for path in result.files:
            self.stdout.write(f"  {path}")
        self.stdout.write(self.style.SUCCESS(f"Report written to {result.out_dir}"))
