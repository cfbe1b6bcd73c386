"""
Configuration management for SAEmnesia.
"""

from .config_manager import (
    ConfigManager,
    ConfigError,
    ConfigLoadError,
    ConfigSaveError,
    ConfigValidationError,
    DEFAULT_CONFIG
)

__all__ = [
    'ConfigManager',
    'ConfigError',
    'ConfigLoadError',
    'ConfigSaveError',
    'ConfigValidationError',
    'DEFAULT_CONFIG'
]
