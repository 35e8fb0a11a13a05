import logging
import os
from pathlib import Path

from app import __version__

logger = logging.getLogger(__name__)

DEBUG = os.environ.get("DEBUG", "").lower() in {"1", "true", "yes"}

WORKERS = int(
    os.environ.get("CORRUPTLAB_WORKERS", max((os.cpu_count() or 1) - 2, 1))
)
OUTPUT_DIR = os.environ.get("CORRUPTLAB_OUTPUT_DIR", "results")

TOOL_VERSION = __version__

BASE_DIR = Path(__file__).resolve().parent.parent.parent

LOG_LEVEL = "DEBUG" if DEBUG is True else "INFO"

RESULT_HEADER = ["task", "p", "q", "size", "seed", "score", "duration_s", "manifest"]


log_config = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "simple": {
            "format": "[%(asctime)s] - [%(name)s] - [%(levelname)s] - %(message)s",
            "datefmt": "%Y-%m-%dT%H:%M:%S%z",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "level": LOG_LEVEL,
            "formatter": "simple",
            "stream": "ext://sys.stderr",
        },
    },
    "loggers": {
        "app": {"handlers": ["console"], "level": LOG_LEVEL, "propagate": False},
    },
    "root": {"level": LOG_LEVEL, "handlers": ["console"]},
}
