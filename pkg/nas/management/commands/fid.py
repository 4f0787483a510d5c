"""
Management command for Fréchet statistics.

Usage:
    python manage.py fid distance student.npz teacher.npz
    python manage.py fid accumulate features.npy --out student.json --prompt-set coco-2k
"""

import json
from pathlib import Path

import numpy as np
from django.core.management.base import CommandError

from nas.frechet import FrechetError, accumulate_stats, load_stats, save_stats, tafid_record
from nas.management.base import EXIT_USAGE, SearchCommand


def read_samples(path: Path) -> np.ndarray:
    """Feature rows from ``.npy`` or a comma-separated text file."""
    if not path.exists():
        raise FrechetError(f"Samples file not found: {path}")
    try:
        if path.suffix == ".npy":
            samples = np.load(path, allow_pickle=False)
        else:
            samples = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    except ValueError as exc:
        raise FrechetError(f"Malformed samples file {path}: {exc}") from exc
    return np.atleast_2d(samples)


class Command(SearchCommand):
    help = "Compute teacher-aligned Fréchet distances between feature statistics"
    subcommands = ("distance", "accumulate")

    def add_arguments(self, parser):
        subparsers = self.add_subcommands(parser)

        distance_parser = subparsers.add_parser(
            "distance", help="Distance between student and teacher statistics files"
        )
        distance_parser.add_argument("student", help="Student statistics (.npz or .json)")
        distance_parser.add_argument("teacher", help="Teacher statistics (.npz or .json)")
        distance_parser.add_argument("--json", action="store_true", help="Output as JSON")

        accumulate_parser = subparsers.add_parser(
            "accumulate", help="Build a statistics file from feature samples"
        )
        accumulate_parser.add_argument("samples", help="Feature rows (.npy or CSV)")
        accumulate_parser.add_argument("--feature-extractor", default="")
        accumulate_parser.add_argument("--prompt-set", default="")
        accumulate_parser.add_argument("--seed-set", default="")

    def handle_distance(self, options: dict):
        student = load_stats(options["student"])
        teacher = load_stats(options["teacher"])
        if student.dim != teacher.dim:
            raise FrechetError(f"Dimension mismatch: {student.dim} vs {teacher.dim}")
        record = tafid_record(student, teacher)
        if options.get("json"):
            self.stdout.write(json.dumps(record, indent=2))
        else:
            self.stdout.write(f"tafid={record['tafid']:.6f}")

    def handle_accumulate(self, options: dict):
        out = self.out_path(options)
        if out is None:
            raise CommandError("accumulate needs --out", returncode=EXIT_USAGE)
        provenance = {
            "feature_extractor": options.get("feature_extractor") or "",
            "prompt_set": options.get("prompt_set") or "",
            "seed_set": options.get("seed_set") or "",
        }
        stats = accumulate_stats(read_samples(Path(options["samples"])), provenance)
        out.parent.mkdir(parents=True, exist_ok=True)
        save_stats(out, stats)
        self.note(options, f"Wrote {stats.dim}-dim statistics over {stats.n_samples} samples")
        self.stdout.write(str(out))
