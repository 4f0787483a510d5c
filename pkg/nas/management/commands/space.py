"""
Management command for search-space files.

Usage:
    python manage.py space validate spaces/nanosd_default
    python manage.py space show spaces/nanosd_default
    python manage.py space enumerate-count spaces/nanosd_default
"""

import json

from nas.management.base import SearchCommand
from nas.search_space import StageId, cardinality, load_space


class Command(SearchCommand):
    help = "Validate and summarize search-space configuration files"
    subcommands = ("validate", "show", "enumerate-count")

    def add_arguments(self, parser):
        subparsers = self.add_subcommands(parser)

        validate_parser = subparsers.add_parser("validate", help="Parse and check a space file")
        validate_parser.add_argument("config", help="Space file (.json suffix optional)")

        show_parser = subparsers.add_parser("show", help="List stages and their variants")
        show_parser.add_argument("config", help="Space file (.json suffix optional)")
        show_parser.add_argument("--json", action="store_true", help="Output as JSON")

        count_parser = subparsers.add_parser(
            "enumerate-count", help="Print the number of architectures"
        )
        count_parser.add_argument("config", help="Space file (.json suffix optional)")

    def _load(self, options):
        return load_space(self.data_path(options["config"], ".json"))

    def handle_validate(self, options: dict):
        space = self._load(options)
        self.stdout.write(
            self.style.SUCCESS(
                f"{space.name}: valid, {len(space.counts)} stages, "
                f"{cardinality(space):,} architectures"
            )
        )

    def handle_show(self, options: dict):
        space = self._load(options)
        if options.get("json"):
            self.stdout.write(json.dumps(space.to_dict(), indent=2))
            return

        self.stdout.write(self.style.WARNING(f"Search space: {space.name}"))
        for stage in StageId:
            labels = []
            for variant in space.variants[stage]:
                labels.append(f"{variant.label}*" if variant.is_teacher else variant.label)
            self.stdout.write(f"  {stage.name}: {space.count(stage)}  {' '.join(labels)}")
        self.stdout.write(f"  cardinality: {cardinality(space)}")

    def handle_enumerate_count(self, options: dict):
        self.stdout.write(str(cardinality(self._load(options))))
