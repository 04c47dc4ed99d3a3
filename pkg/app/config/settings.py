"""
Environment settings for the command-line tools.

Values come from the process environment (optionally seeded from a .env
file by python-dotenv at start-up) and fall back to the defaults below.
"""

import os
from typing import Optional


class Settings:
    """Environment-driven defaults; command-line flags take precedence."""

    DEFAULT_LOG_LEVEL = "INFO"
    DEFAULT_LOG_FORMAT = "json"
    DEFAULT_OUTPUT_DIR = "runs"
    DEFAULT_SEED = 0
    DEFAULT_JOBS = 1

    LOG_FORMATS = ("json", "console")

    @classmethod
    def get_log_level(cls) -> str:
        return os.getenv("CGS_LOG_LEVEL", cls.DEFAULT_LOG_LEVEL).upper()

    @classmethod
    def get_log_format(cls) -> str:
        value = os.getenv("CGS_LOG_FORMAT", cls.DEFAULT_LOG_FORMAT).lower()
        return value if value in cls.LOG_FORMATS else cls.DEFAULT_LOG_FORMAT

    @classmethod
    def get_output_dir(cls) -> str:
        return os.getenv("CGS_OUTPUT_DIR", cls.DEFAULT_OUTPUT_DIR)

    @classmethod
    def get_default_seed(cls) -> int:
        return _int_env("CGS_DEFAULT_SEED", cls.DEFAULT_SEED)

    @classmethod
    def get_jobs(cls) -> int:
        return max(1, _int_env("CGS_JOBS", cls.DEFAULT_JOBS))


def _int_env(key: str, default: int) -> int:
    raw: Optional[str] = os.getenv(key)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError:
        return default
