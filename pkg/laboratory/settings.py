"""
Django settings for the Gauss-Codazzi laboratory.

The project has no web surface: Django provides the management commands,
the run registry ORM and configuration validation through REST framework
serializers.
"""

import os
from pathlib import Path

BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = os.getenv(
    "DJANGO_SECRET_KEY",
    "django-insecure-laboratory-local-key-only-used-for-command-line-runs",
)

DEBUG = os.getenv("DJANGO_DEBUG", "false").lower() == "true"

ALLOWED_HOSTS = []

# rest_framework is needed for its serializers only
INSTALLED_APPS = [
    "django.contrib.auth",
    "django.contrib.contenttypes",
    "rest_framework",
    "immersion",
]

# Run registry on PostgreSQL when configured, SQLite otherwise
if os.getenv("POSTGRES_DB"):
    DATABASES = {
        "default": {
            "ENGINE": "django.db.backends.postgresql",
            "NAME": os.getenv("POSTGRES_DB", "laboratory"),
            "USER": os.getenv("POSTGRES_USER", "laboratory"),
            "PASSWORD": os.getenv("POSTGRES_PASSWORD", "laboratory"),
            "HOST": os.getenv("POSTGRES_HOST", "db"),
            "PORT": os.getenv("POSTGRES_PORT", "5432"),
        }
    }
else:
    DATABASES = {
        "default": {
            "ENGINE": "django.db.backends.sqlite3",
            "NAME": BASE_DIR / "db.sqlite3",
        }
    }

TIME_ZONE = "UTC"
USE_TZ = True

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

# Experiment outputs
OUTPUT_DIR = Path(os.getenv("OUTPUT_DIR", BASE_DIR / "output"))

DEFAULT_CONFIG = BASE_DIR / "configs" / "demo.ini"

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "simple": {"format": "{levelname} {name}: {message}", "style": "{"},
    },
    "handlers": {
        "console": {"class": "logging.StreamHandler", "formatter": "simple"},
    },
    "root": {"handlers": ["console"], "level": "WARNING"},
    "loggers": {
        "immersion": {
            "handlers": ["console"],
            "level": os.getenv("LABORATORY_LOG_LEVEL", "WARNING"),
            "propagate": False,
        },
    },
}
