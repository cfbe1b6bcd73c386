"""
Logging utilities for SAEmnesia.

This package provides centralized logging functionality.
"""

from .logger import setup_logger, get_logger, update_logger_config, reset_logger, log_record

__all__ = [
    'setup_logger',
    'get_logger',
    'update_logger_config',
    'reset_logger',
    'log_record'
]
