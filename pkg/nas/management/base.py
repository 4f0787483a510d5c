"""
Shared plumbing for the search-engine management commands.

Every command accepts the global ``--seed``, ``--out`` and ``--quiet`` flags,
routes to a ``handle_<subcommand>`` method, and maps engine exceptions onto
the exit codes: 1 usage, 2 data error, 3 oracle error.
"""

import logging
import sys
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError, CommandParser

from nanosearch.runtime_paths import resolve_data_file
from nas.bo_pipeline.config import ConfigError
from nas.bo_pipeline.event_log import EventLogError
from nas.cost_model import CostModelError
from nas.frechet import FrechetError
from nas.gp import GPFitError
from nas.moo import ParetoError
from nas.oracle import LookupTableError, OracleError
from nas.search_space import SearchSpaceError

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_ORACLE = 3

DATA_ERRORS: tuple[type[Exception], ...] = (
    SearchSpaceError,
    CostModelError,
    FrechetError,
    ParetoError,
    LookupTableError,
    EventLogError,
    GPFitError,
    FileNotFoundError,
    IsADirectoryError,
    UnicodeDecodeError,
)


class UsageErrorParser(CommandParser):
    """CommandParser whose argument errors exit with the usage code."""

    def error(self, message):
        if self.called_from_command_line:
            self.print_usage(sys.stderr)
            self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")
        raise CommandError(f"Error: {message}", returncode=EXIT_USAGE)


class SearchCommand(BaseCommand):
    """Base for commands with subcommands and engine exit codes."""

    subcommands: tuple[str, ...] = ()

    def create_parser(self, prog_name, subcommand, **kwargs):
        parser = super().create_parser(prog_name, subcommand, **kwargs)
        parser.__class__ = UsageErrorParser
        parser.add_argument("--seed", type=int, help="Random seed override")
        parser.add_argument("--out", type=str, help="Output file or directory")
        parser.add_argument(
            "--quiet", action="store_true", help="Only print warnings, errors and results"
        )
        return parser

    def add_subcommands(self, parser):
        return parser.add_subparsers(dest="subcommand", parser_class=UsageErrorParser)

    def handle(self, *args, **options):
        subcommand = options.get("subcommand")
        if not subcommand:
            raise CommandError(
                f"Choose a subcommand: {', '.join(self.subcommands)}", returncode=EXIT_USAGE
            )
        if options.get("quiet"):
            logging.getLogger("nas").setLevel(logging.WARNING)

        handler = getattr(self, f"handle_{subcommand.replace('-', '_')}")
        try:
            handler(options)
        except CommandError:
            raise
        except ConfigError as exc:
            raise CommandError(f"Invalid configuration: {exc}", returncode=EXIT_USAGE) from exc
        except OracleError as exc:
            where = f" (iteration {exc.iteration})" if exc.iteration is not None else ""
            raise CommandError(f"Oracle error{where}: {exc}", returncode=EXIT_ORACLE) from exc
        except DATA_ERRORS as exc:
            raise CommandError(str(exc), returncode=EXIT_DATA) from exc

    def note(self, options, message: str) -> None:
        """Progress text suppressed by --quiet."""
        if not options.get("quiet"):
            self.stdout.write(self.style.WARNING(message))

    def out_path(self, options, default: Path | None = None) -> Path | None:
        value = options.get("out")
        if value:
            return Path(value)
        return default

    def data_path(self, value: str, suffix: str) -> Path:
        path = resolve_data_file(settings.BASE_DIR, value, (suffix,))
        if not path.is_file():
            raise CommandError(f"File not found: {value}", returncode=EXIT_DATA)
        return path
