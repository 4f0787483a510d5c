"""
Management command for architecture-search runs.

Usage:
    python manage.py search run runs/conflicting.json --out var/runs/conflicting
    python manage.py search run runs/conflicting.json --seeds 0,1,2,3,4 --out var/runs/sweep
    python manage.py search resume var/runs/conflicting
    python manage.py search replay var/runs/conflicting --out /tmp/replay
"""

from pathlib import Path

from django.conf import settings
from django.core.management.base import CommandError

from nas.bo_pipeline import RunConfig, RunResult, SearchOrchestrator, replay
from nas.management.base import EXIT_USAGE, SearchCommand


def parse_seeds(value: str) -> list[int]:
    try:
        seeds = [int(part) for part in value.split(",") if part.strip()]
    except ValueError:
        raise CommandError(f"--seeds must be comma-separated integers: {value!r}") from None
    if not seeds or len(set(seeds)) != len(seeds):
        raise CommandError(f"--seeds must list distinct integers: {value!r}")
    return seeds


class Command(SearchCommand):
    help = "Run, resume, or replay multi-objective architecture searches"
    subcommands = ("run", "resume", "replay")

    def add_arguments(self, parser):
        subparsers = self.add_subcommands(parser)

        run_parser = subparsers.add_parser("run", help="Start a new search run")
        run_parser.add_argument("config", nargs="?", help="Run configuration JSON file")
        run_parser.add_argument("--seeds", help="Comma-separated seeds for independent runs")
        run_parser.add_argument("--n-init", type=int, help="Initial design size override")
        run_parser.add_argument("--n-iter", type=int, help="Iteration budget override")

        resume_parser = subparsers.add_parser("resume", help="Continue an interrupted run")
        resume_parser.add_argument("run_dir", help="Run directory holding events.jsonl")

        replay_parser = subparsers.add_parser(
            "replay", help="Rebuild a run from its log without evaluating anything"
        )
        replay_parser.add_argument("run_dir", help="Run directory holding events.jsonl")

    def _config(self, options) -> RunConfig:
        if options.get("config"):
            path = self.data_path(options["config"], ".json")
            config = RunConfig.from_file(path)
        else:
            config = RunConfig()
        config.apply_env()
        if options.get("seed") is not None:
            config.seed = options["seed"]
        if options.get("n_init") is not None:
            config.n_init = options["n_init"]
        if options.get("n_iter") is not None:
            config.n_iter = options["n_iter"]
        return config.validate()

    def _console_level(self, options) -> str | None:
        return "WARNING" if options.get("quiet") else None

    def _report(self, label: str, result: RunResult):
        self.stdout.write("")
        self.stdout.write(self.style.WARNING(f"{label}:"))
        self.stdout.write(f"  Status: {result.status.value}")
        self.stdout.write(f"  Evaluations: {result.evaluations} ({result.infeasible} infeasible)")
        self.stdout.write(f"  Iterations: {result.iterations}")
        self.stdout.write(f"  Hypervolume: {result.hypervolume:.6g}")
        if result.regret is not None:
            self.stdout.write(f"  Hypervolume regret: {result.regret:.4%}")
        self.stdout.write(f"  Front: {len(result.front)} members -> {result.run_dir / 'front.csv'}")

    def handle_run(self, options: dict):
        config = self._config(options)
        out = self.out_path(options, Path(settings.NAS_RUN_DIR) / config.name)
        assert out is not None

        if options.get("seeds"):
            if options.get("seed") is not None:
                raise CommandError("Use either --seed or --seeds", returncode=EXIT_USAGE)
            seeds = parse_seeds(options["seeds"])
        else:
            seeds = [config.seed]

        for seed in seeds:
            run_config = RunConfig.from_dict(config.to_dict())
            run_config.base_dir = config.base_dir
            run_config.seed = seed
            run_config.run_dir = out / f"seed-{seed}" if options.get("seeds") else out
            self.note(
                options,
                f"Starting search {run_config.name} (seed={seed}, "
                f"budget={run_config.n_init}+{run_config.n_iter}) in {run_config.run_dir}",
            )
            orchestrator = SearchOrchestrator(
                run_config, console_level=self._console_level(options)
            )
            result = orchestrator.execute()
            self._report(f"Search results (seed {seed})", result)

        self.stdout.write(self.style.SUCCESS("Search completed successfully!"))

    def handle_resume(self, options: dict):
        run_dir = Path(options["run_dir"])
        orchestrator = SearchOrchestrator.for_run_dir(
            run_dir, console_level=self._console_level(options)
        )
        self.note(options, f"Resuming {run_dir}")
        result = orchestrator.resume()
        self._report("Search results", result)

    def handle_replay(self, options: dict):
        run_dir = Path(options["run_dir"])
        result = replay(run_dir, self.out_path(options))
        self._report("Replay results", result)
