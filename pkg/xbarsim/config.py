"""
Configuration management for xbarsim.

This module handles environment variables (optionally loaded from a .env
file), logging setup, and the defaults shared by the CLI and the library.
"""

import logging
import os
from typing import Optional

from dotenv import load_dotenv

from .errors import ConfigurationError

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")

logger = logging.getLogger(__name__)


class Config:
    """Configuration class for the xbarsim application."""

    def __init__(self):
        """Initialize configuration by loading environment variables."""
        load_dotenv()

    @staticmethod
    def _int_env(name: str, default: int) -> int:
        raw = os.getenv(name)
        if raw is None or raw == "":
            return default
        try:
            return int(raw)
        except ValueError:
            raise ConfigurationError(f"{name} must be an integer, got {raw!r}")

    @property
    def log_level(self) -> str:
        """Get log level from environment or use default."""
        return os.getenv("XBARSIM_LOG_LEVEL", "INFO").upper()

    @property
    def log_file(self) -> Optional[str]:
        """Get optional log file path; no file handler when unset."""
        return os.getenv("XBARSIM_LOG_FILE") or None

    @property
    def seed(self) -> int:
        """Get the master seed used when neither the CLI nor a config sets one."""
        return self._int_env("XBARSIM_SEED", 0)

    @property
    def threads(self) -> int:
        """Get the worker count for parallel sweeps and quantization."""
        threads = self._int_env("XBARSIM_THREADS", os.cpu_count() or 1)
        if threads < 1:
            raise ConfigurationError(f"XBARSIM_THREADS must be >= 1, got {threads}")
        return threads

    @property
    def out_dir(self) -> str:
        """Get the default output directory for traces, CSVs and plots."""
        return os.getenv("XBARSIM_OUT_DIR", "results")

    @property
    def max_pulses(self) -> int:
        """Get the default pulse budget for pulsed crossbar programming."""
        max_pulses = self._int_env("XBARSIM_MAX_PULSES", 1000)
        if max_pulses < 1:
            raise ConfigurationError(f"XBARSIM_MAX_PULSES must be >= 1, got {max_pulses}")
        return max_pulses

    def setup_logging(self, level: Optional[str] = None) -> None:
        """Setup logging configuration."""
        level_name = (level or self.log_level).upper()
        numeric_level = getattr(logging, level_name, None)
        if level_name not in LOG_LEVELS or not isinstance(numeric_level, int):
            raise ConfigurationError(f"Invalid log level: {level_name}")

        handlers: list = [logging.StreamHandler()]
        if self.log_file:
            handlers.append(logging.FileHandler(self.log_file))

        root = logging.getLogger()
        for handler in list(root.handlers):
            root.removeHandler(handler)
        formatter = logging.Formatter(LOG_FORMAT)
        for handler in handlers:
            handler.setFormatter(formatter)
            root.addHandler(handler)
        root.setLevel(numeric_level)
        logger.debug(f"Logging level set to {level_name}")


# Global configuration instance (lazy initialization)
_config_instance = None


def get_config() -> Config:
    """Get the global configuration instance (lazy initialization)."""
    global _config_instance
    if _config_instance is None:
        _config_instance = Config()
    return _config_instance


class ConfigProxy:
    """Proxy object that provides lazy access to config properties."""

    def __getattr__(self, name):
        return getattr(get_config(), name)


config = ConfigProxy()
