import logging
import os

from dotenv import load_dotenv

load_dotenv()

_LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


def _env_flag(name: str, default: str = "false") -> bool:
    return os.environ.get(name, default).lower() in ("1", "true", "yes")


class Config:
    ENVIRONMENT = os.environ.get("ENVIRONMENT", "development")
    LOG_LEVEL = os.environ.get("LOG_LEVEL", "INFO").upper()
    # Run registry (default to local SQLite)
    DATABASE_URL = os.environ.get("DATABASE_URL", "sqlite:///./dreamdesk.db")
    DEFAULT_OUT_DIR = os.environ.get("DEFAULT_OUT_DIR", "runs")
    WORKERS = int(os.environ.get("WORKERS", 1))
    RECORD_WALLCLOCK = _env_flag("RECORD_WALLCLOCK")

    @classmethod
    def validate(cls) -> None:
        """Validate environment settings before any command runs."""
        if cls.LOG_LEVEL not in _LOG_LEVELS:
            raise ValueError(f"LOG_LEVEL must be one of {', '.join(_LOG_LEVELS)}, got {cls.LOG_LEVEL!r}.")
        if cls.WORKERS < 1:
            raise ValueError(f"WORKERS must be a positive integer, got {cls.WORKERS}.")

    @classmethod
    def log_level(cls) -> int:
        return getattr(logging, cls.LOG_LEVEL, logging.INFO)
