"""
Django settings for the region-mining workbench

The project has no web surface: Django provides the app registry,
settings, logging configuration and management commands that drive the
pipeline.

This file contains:
- App registration
- REST Framework settings (serializers validate run configurations)
- Pipeline settings read from the environment
- Logging
"""

from pathlib import Path

from decouple import config

# Build paths inside the project
BASE_DIR = Path(__file__).resolve().parent.parent

# No request handling, but Django still requires a key
SECRET_KEY = config("SECRET_KEY", default="django-insecure-workbench-key")

DEBUG = config("DEBUG", default=False, cast=bool)

ALLOWED_HOSTS = []

# Application definition
INSTALLED_APPS = [
    # Third party apps
    "rest_framework",  # Serializers for RunConfig validation
    # Local apps
    "apps.core",  # Errors, validators, seeding, blobs, run log
    "apps.autodiff",  # Tensors, ops, optimizers, checkpoints
    "apps.scenes",  # Synthetic scenes with ground-truth masks
    "apps.miner",  # Networks, pretraining and region mining
    "apps.distmap",  # Toy distribution mapping
    "apps.evaluation",  # Metrics of mined regions
    "apps.reports",  # Figures, tables and documents
    "apps.pipeline",  # RunConfig, run directories and commands
]

# Internationalization
LANGUAGE_CODE = "en-us"
TIME_ZONE = "UTC"
USE_I18N = False
USE_TZ = True

# Django REST Framework Configuration
# Only serializers are used; there is no request user
REST_FRAMEWORK = {
    "UNAUTHENTICATED_USER": None,
}

# Pipeline Configuration
# Output root for run directories. When set it overrides the config's
# output_dir (but not --out); unset, runs go to output_dir or MINER_RUNS_ROOT
MINER_OUTPUT_DIR = config("MINER_OUTPUT_DIR", default=None)
MINER_RUNS_ROOT = BASE_DIR / "runs"

# RunConfig used when a command gets no --config
MINER_DEFAULT_CONFIG = config(
    "MINER_DEFAULT_CONFIG", default=str(BASE_DIR / "config" / "runs" / "default.json")
)

# File name of the JSON-lines training event log inside a run directory
MINER_RUN_LOG_NAME = config("MINER_RUN_LOG_NAME", default="run_log.jsonl")

# Level of the "apps" logger
MINER_LOG_LEVEL = config("MINER_LOG_LEVEL", default="INFO")

# Logging Configuration
LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "verbose": {
            # Log format: LEVEL TIMESTAMP MODULE MESSAGE
            "format": "{levelname} {asctime} {module} {message}",
            "style": "{",
        },
    },
    "handlers": {
        "console": {
            # Print logs to terminal
            "class": "logging.StreamHandler",
            "formatter": "verbose",
        },
    },
    "root": {
        "handlers": ["console"],
        "level": "WARNING",
    },
    "loggers": {
        "django": {
            "handlers": ["console"],
            "level": "WARNING",
            "propagate": False,
        },
        "apps": {
            # Our application logs
            "handlers": ["console"],
            "level": MINER_LOG_LEVEL,
            "propagate": False,
        },
    },
}
