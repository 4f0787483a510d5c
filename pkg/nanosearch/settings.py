"""
Django settings for the nanosearch project.

The project has no web surface: Django provides the management-command
framework (the engine's CLI) and the settings/logging plumbing.
"""

import os
from pathlib import Path

from dotenv import load_dotenv

from nanosearch.runtime_paths import resolve_runtime_paths

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent
PROJECT_PATHS = resolve_runtime_paths(BASE_DIR)
NAS_RUN_DIR = PROJECT_PATHS.run_dir
NAS_LOG_DIR = PROJECT_PATHS.log_dir
NAS_REPORT_DIR = PROJECT_PATHS.report_dir

# Load .env from project root when present (development convenience)
env_path = os.path.join(BASE_DIR, ".env")
try:
    load_dotenv(env_path)
except PermissionError:
    # Bind-mounted .env files may be unreadable to a non-root user; the
    # environment still carries the values.
    pass


def _env_bool(name: str, default: bool = False) -> bool:
    value = os.environ.get(name)
    if value is None:
        return default
    return value.strip().lower() in {"1", "true", "yes", "on"}


# No sessions, cookies or signed data are ever produced; the key only satisfies
# Django's startup checks.
SECRET_KEY = os.environ.get("DJANGO_SECRET_KEY", "nanosearch-cli-no-web-surface")

DEBUG = _env_bool("DEBUG", default=False)

ALLOWED_HOSTS: list[str] = []

INSTALLED_APPS = [
    "nas",
]

# Runs persist to the event log under NAS_RUN_DIR, not to a database.
DATABASES: dict[str, dict[str, str]] = {}

LANGUAGE_CODE = "en-us"

TIME_ZONE = "UTC"

USE_I18N = False

USE_TZ = True

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

# Search defaults that individual run configs may override
NAS_DEFAULT_SPACE = os.environ.get("NAS_DEFAULT_SPACE", "spaces/nanosd_default")
NAS_ENUMERATE_CAP = int(os.environ.get("NAS_ENUMERATE_CAP", str(10**7)))
NAS_ORACLE_TIMEOUT_S = float(os.environ.get("NAS_ORACLE_TIMEOUT_S", "3600"))

NAS_LOG_LEVEL = os.environ.get("NAS_LOG_LEVEL", os.environ.get("LOG_LEVEL", "INFO")).upper()

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "plain": {"format": "%(asctime)s %(levelname)-7s %(name)s: %(message)s"},
    },
    "handlers": {
        "stderr": {
            "class": "logging.StreamHandler",
            "stream": "ext://sys.stderr",
            "formatter": "plain",
        },
    },
    "loggers": {
        "django": {"handlers": ["stderr"], "level": "WARNING", "propagate": False},
        "nas": {"handlers": ["stderr"], "level": NAS_LOG_LEVEL, "propagate": False},
    },
}
