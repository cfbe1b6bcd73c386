"""
Logging system for SAEmnesia.

One process-wide ``saemnesia`` logger, configured once from the ``logging``
section of the run configuration.
"""

import os
import sys
import json
import logging
import threading
from typing import Optional, Dict, Any

_logger_lock = threading.RLock()
_logger_initialized = False
_logger: Optional[logging.Logger] = None

LOGGER_NAME = "saemnesia"
LOG_FILE_NAME = "saemnesia.log"


def setup_logger(
    log_dir: Optional[str] = None,
    level: str = "INFO",
    file_enabled: bool = True,
    console_enabled: bool = True,
) -> logging.Logger:
    """
    Set up and configure the SAEmnesia logger.

    Args:
        log_dir: Directory for the log file (ignored when file logging is off)
        level: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        file_enabled: Whether to log to a file
        console_enabled: Whether to log to the console

    Returns:
        Configured logger instance
    """
    global _logger, _logger_initialized

    with _logger_lock:
        if _logger_initialized and _logger is not None:
            return _logger

        logger = logging.getLogger(LOGGER_NAME)
        logger.setLevel(getattr(logging, level.upper()))
        logger.propagate = False

        if logger.handlers:
            logger.handlers.clear()

        console_formatter = logging.Formatter("%(levelname)s: %(message)s")
        file_formatter = logging.Formatter(
            "%(asctime)s - %(levelname)s - %(filename)s:%(lineno)d - %(message)s"
        )

        if console_enabled:
            console_handler = logging.StreamHandler(sys.stderr)
            console_handler.setFormatter(console_formatter)
            logger.addHandler(console_handler)

        if file_enabled and log_dir:
            os.makedirs(log_dir, exist_ok=True)
            file_handler = logging.FileHandler(os.path.join(log_dir, LOG_FILE_NAME))
            file_handler.setFormatter(file_formatter)
            logger.addHandler(file_handler)

        _logger = logger
        _logger_initialized = True
        return logger


def get_logger() -> logging.Logger:
    """
    Get the SAEmnesia logger instance.

    The same logger object is reconfigured by setup_logger, so module-level
    references taken at import time stay valid.

    Returns:
        Logger instance (console-only at WARNING until setup_logger runs)
    """
    with _logger_lock:
        if _logger is not None:
            return _logger

        default_logger = logging.getLogger(LOGGER_NAME)
        if not default_logger.handlers:
            default_logger.setLevel(logging.WARNING)
            default_logger.propagate = False
            handler = logging.StreamHandler(sys.stderr)
            handler.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
            default_logger.addHandler(handler)
        return default_logger


def update_logger_config(config: Dict[str, Any]) -> None:
    """
    Update logger configuration based on settings.

    Args:
        config: The ``logging`` section of the run configuration
    """
    with _logger_lock:
        if _logger is None:
            return

        if "level" in config:
            _logger.setLevel(getattr(logging, str(config["level"]).upper()))

        for handler in list(_logger.handlers):
            if isinstance(handler, logging.FileHandler):
                if not config.get("file_enabled", True):
                    _logger.removeHandler(handler)
                    handler.close()
            elif isinstance(handler, logging.StreamHandler):
                if not config.get("console_enabled", True):
                    _logger.removeHandler(handler)


def reset_logger() -> None:
    """Drop the configured logger so the next setup_logger call starts fresh."""
    global _logger, _logger_initialized

    with _logger_lock:
        if _logger is not None:
            for handler in list(_logger.handlers):
                _logger.removeHandler(handler)
                handler.close()
        _logger = None
        _logger_initialized = False


def log_record(logger: logging.Logger, event: str, **fields: Any) -> None:
    """Emit one structured record as ``event {json}`` at INFO level."""
    logger.info("%s %s", event, json.dumps(fields, sort_keys=True, default=str))
