"""
Run configuration for SAEmnesia.

A run configuration is a JSON file merged over DEFAULT_CONFIG. Unknown keys
are rejected and the merged result is validated before any work starts.
"""

import copy
import json
import os
import threading
from typing import Any, Dict, Optional

from ..losses import LossWeights
from ..trainer import (
    LABEL_DOMAINS,
    SCHEDULES,
    SUPERVISED,
    UNSUPERVISED,
    ModelConfig,
    TrainConfig,
    TrainingError,
)
from ...concepts.registry import AGGREGATIONS
from ...concepts.steering import MULTIPLIER_PRESETS
from ..numerics import SEED_LIMIT
from ...data.synth_activations import (
    MIN_SIGNAL_TO_NOISE,
    SynthError,
    SynthSpec,
    build_spec,
    default_modulation,
    make_near_duplicates,
)

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")

DEFAULT_CONFIG: Dict[str, Any] = {
    "seed": 0,
    "synth": {
        "d": 64,
        "num_objects": 20,
        "num_styles": 10,
        "timesteps": 10,
        "samples_per_pair": 20,
        "noise_sigma": 0.05,
        "amplitude_range": [1.25, 2.0],
        "near_duplicates": [],
        "near_duplicate_cosine": 0.95,
    },
    "model": {
        "n": 1024,
        "k": 8,
        "k_aux": 32,
    },
    "train": {
        "schedule": "finetune",
        "unsupervised": {
            "epochs": 30,
            "batch_size": 64,
            "learning_rate": 1e-3,
            "beta1": 0.9,
            "beta2": 0.999,
            "eps": 1e-8,
            "dead_window": 1000,
            "grad_clip": 1.0,
        },
        "supervised": {
            "epochs": 100,
            "batch_size": 64,
            "learning_rate": 3e-4,
            "beta1": 0.9,
            "beta2": 0.999,
            "eps": 1e-8,
            "dead_window": 1000,
            "grad_clip": 1.0,
            "supervision": "ca",
            "label_domains": "objects+styles",
        },
    },
    "loss": {
        "alpha": 1.0 / 32.0,
        "beta": 3.0,
        "gamma": 0.1,
        "lambda": 0.01,
    },
    "assignment": {
        "t_select": "mean",
        "unique": True,
        "delta": 1e-8,
        "margin": 2.0,
    },
    "steering": {
        "candidates": [-1.0, -5.0, -10.0, -15.0, -20.0, -25.0, -30.0],
        "multiplier": -5.0,
        "preset": None,
    },
    "evaluation": {
        "workers": 1,
        "heldout_fraction": 0.0,
        "sequential_order": None,
    },
    "logging": {
        "level": "INFO",
        "file_enabled": True,
        "console_enabled": True,
    },
    "output": {
        "dir": None,
    },
}


class ConfigError(Exception):
    """Base exception for configuration errors."""
    pass


class ConfigLoadError(ConfigError):
    """Exception raised when configuration loading fails."""
    pass


class ConfigSaveError(ConfigError):
    """Exception raised when configuration saving fails."""
    pass


class ConfigValidationError(ConfigError):
    """Exception raised for unknown keys or out-of-range values."""
    pass


class ConfigManager:
    """Thread-safe run configuration for SAEmnesia."""

    def __init__(
        self, config_path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None
    ):
        """
        Initialize the configuration manager.

        Args:
            config_path: Optional JSON file merged over the defaults
            overrides: Optional nested dict merged last (e.g. CLI flags)

        Raises:
            ConfigLoadError: If the file exists but cannot be read
            ConfigValidationError: If the merged configuration is invalid
        """
        self.config_path = config_path
        self._lock = threading.RLock()
        self._settings = copy.deepcopy(DEFAULT_CONFIG)

        if config_path is not None:
            self.load(config_path)
        if overrides:
            with self._lock:
                self._update_nested_dict(self._settings, overrides, "")
        self.validate()

    def load(self, path: Optional[str] = None) -> Dict[str, Any]:
        """
        Merge a JSON configuration file over the current settings.

        Returns:
            Copy of the merged settings

        Raises:
            ConfigLoadError: If the file cannot be read or is not a JSON object
            ConfigValidationError: If the file uses an unknown key
        """
        path = path or self.config_path
        with self._lock:
            if not path or not os.path.exists(path):
                raise ConfigLoadError(f"config file not found: {path}")
            try:
                with open(path, "r") as f:
                    saved_config = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigLoadError(f"Invalid JSON in config file: {e}")
            except IOError as e:
                raise ConfigLoadError(f"Could not read config file: {e}")
            if not isinstance(saved_config, dict):
                raise ConfigLoadError("config file must contain a JSON object")
            self._update_nested_dict(self._settings, saved_config, "")
            return copy.deepcopy(self._settings)

    def save(self, path: Optional[str] = None) -> None:
        """
        Write the full effective configuration as JSON.

        Raises:
            ConfigSaveError: If the configuration cannot be saved
        """
        path = path or self.config_path
        with self._lock:
            try:
                directory = os.path.dirname(os.path.abspath(path))
                os.makedirs(directory, exist_ok=True)
                with open(path, "w") as f:
                    json.dump(self._settings, f, indent=2, sort_keys=True)
            except (IOError, TypeError) as e:
                raise ConfigSaveError(f"Could not write config file: {e}")

    def get(self, key: str, default: Any = None) -> Any:
        """
        Get a configuration value in a thread-safe manner.

        Args:
            key: Configuration key (dot notation for nested keys, e.g. "loss.beta")
            default: Value returned when the key does not exist
        """
        with self._lock:
            value = self._settings
            for part in key.split("."):
                if not isinstance(value, dict) or part not in value:
                    return default
                value = value[part]
            return copy.deepcopy(value)

    def set(self, key: str, value: Any) -> None:
        """
        Set an existing configuration value.

        Raises:
            ConfigValidationError: If the key is not part of the schema
        """
        with self._lock:
            parts = key.split(".")
            update: Dict[str, Any] = {parts[-1]: value}
            for part in reversed(parts[:-1]):
                update = {part: update}
            self._update_nested_dict(self._settings, update, "")

    def get_all(self) -> Dict[str, Any]:
        with self._lock:
            return copy.deepcopy(self._settings)

    def resolved(self) -> Dict[str, Any]:
        """The full effective configuration, defaults included."""
        return self.get_all()

    def reset(self) -> None:
        """Reset all settings to default values."""
        with self._lock:
            self._settings = copy.deepcopy(DEFAULT_CONFIG)

    def reset_key(self, key: str) -> None:
        """Reset one key (dot notation) to its default value."""
        with self._lock:
            default_value: Any = DEFAULT_CONFIG
            for part in key.split("."):
                if not isinstance(default_value, dict) or part not in default_value:
                    return
                default_value = default_value[part]
            self.set(key, copy.deepcopy(default_value))

    def _update_nested_dict(
        self, original: Dict[str, Any], update: Dict[str, Any], prefix: str
    ) -> None:
        """
        Merge ``update`` into ``original`` without dropping unspecified nested values.

        Raises:
            ConfigValidationError: On a key that does not exist in ``original``
                or a section replaced by a scalar
        """
        for key, value in update.items():
            path = f"{prefix}{key}"
            if key not in original:
                raise ConfigValidationError(f"unknown config key '{path}'")
            if isinstance(original[key], dict):
                if not isinstance(value, dict):
                    raise ConfigValidationError(f"config key '{path}' must be a section")
                self._update_nested_dict(original[key], value, f"{path}.")
            else:
                original[key] = value

    # Typed views

    def synth_spec(self, seed: Optional[int] = None) -> SynthSpec:
        s = self.get("synth")
        spec = build_spec(
            d=int(s["d"]),
            num_objects=int(s["num_objects"]),
            num_styles=int(s["num_styles"]),
            timesteps=int(s["timesteps"]),
            samples_per_pair=int(s["samples_per_pair"]),
            noise_sigma=float(s["noise_sigma"]),
            amplitude_range=tuple(float(a) for a in s["amplitude_range"]),
            seed=self.get("seed") if seed is None else seed,
        )
        for pair in s["near_duplicates"]:
            spec = make_near_duplicates(spec, tuple(pair), cosine=float(s["near_duplicate_cosine"]))
        return spec

    def model_config(self) -> ModelConfig:
        return ModelConfig.from_dict(self.get("model"), seed=int(self.get("seed")))

    def train_config(self, phase: str, log_path: Optional[str] = None) -> TrainConfig:
        section = self.get("train.unsupervised" if phase == UNSUPERVISED else "train.supervised")
        section["log_path"] = log_path
        return TrainConfig.from_dict(phase, section, self.get("loss"), seed=int(self.get("seed")))

    def loss_weights(self) -> LossWeights:
        return LossWeights.from_dict(self.get("loss"))

    def validate(self) -> None:
        """
        Check every section by building the objects it configures.

        Raises:
            ConfigValidationError: On the first invalid value found
        """
        with self._lock:
            try:
                if not 0 <= int(self.get("seed")) < SEED_LIMIT:
                    raise ConfigValidationError("seed must be in [0, 2**64)")
                model = self.model_config()
                if not 1 <= model.k <= model.n or not 1 <= model.k_aux <= model.n:
                    raise ConfigValidationError("model: need 1 <= k <= n and 1 <= k_aux <= n")
                self.train_config(UNSUPERVISED)
                self.train_config(SUPERVISED)
                self._validate_synth()
            except (TrainingError, SynthError, KeyError, TypeError, ValueError) as e:
                raise ConfigValidationError(str(e))

            if self.get("train.schedule") not in SCHEDULES:
                raise ConfigValidationError(f"train.schedule must be one of {SCHEDULES}")
            if self.get("train.supervised.label_domains") not in LABEL_DOMAINS:
                raise ConfigValidationError(
                    f"train.supervised.label_domains must be one of {LABEL_DOMAINS}"
                )
            if self.get("assignment.t_select") not in AGGREGATIONS:
                raise ConfigValidationError(f"assignment.t_select must be one of {AGGREGATIONS}")
            if not isinstance(self.get("assignment.unique"), bool):
                raise ConfigValidationError("assignment.unique must be true or false")
            if any(not float(self.get(f"assignment.{key}")) > 0 for key in ("delta", "margin")):
                raise ConfigValidationError("assignment.delta and margin must be positive")

            candidates = self.get("steering.candidates")
            if not isinstance(candidates, list) or not candidates:
                raise ConfigValidationError("steering.candidates must be a non-empty list")
            multipliers = list(candidates) + [self.get("steering.multiplier")]
            if any(not float(g) < 0 for g in multipliers):
                raise ConfigValidationError("steering multipliers must be negative")
            preset = self.get("steering.preset")
            if preset is not None and preset not in MULTIPLIER_PRESETS:
                raise ConfigValidationError(
                    f"steering.preset must be one of {sorted(MULTIPLIER_PRESETS)} or null"
                )

            if int(self.get("evaluation.workers")) < 1:
                raise ConfigValidationError("evaluation.workers must be >= 1")
            if not 0.0 <= float(self.get("evaluation.heldout_fraction")) < 1.0:
                raise ConfigValidationError("evaluation.heldout_fraction must be in [0, 1)")
            order = self.get("evaluation.sequential_order")
            if order is not None and (not isinstance(order, list) or not order):
                raise ConfigValidationError(
                    "evaluation.sequential_order must be a non-empty list or null"
                )

            if str(self.get("logging.level")).upper() not in LOG_LEVELS:
                raise ConfigValidationError(f"logging.level must be one of {LOG_LEVELS}")

    def _validate_synth(self) -> None:
        s = self.get("synth")
        for key in ("d", "num_objects", "num_styles", "timesteps", "samples_per_pair"):
            if int(s[key]) < 1:
                raise ConfigValidationError(f"synth.{key} must be >= 1")
        lo, hi = (float(a) for a in s["amplitude_range"])
        if not 0 < lo <= hi:
            raise ConfigValidationError("synth.amplitude_range must satisfy 0 < lo <= hi")
        if float(s["noise_sigma"]) < 0:
            raise ConfigValidationError("synth.noise_sigma must be >= 0")
        floor = float(default_modulation(int(s["timesteps"])).min()) * lo
        if floor < MIN_SIGNAL_TO_NOISE * float(s["noise_sigma"]) - 1e-12:
            raise ConfigValidationError(
                f"synth: weakest signal {floor:.4g} must be at least "
                f"{MIN_SIGNAL_TO_NOISE:g} x noise_sigma"
            )
        for pair in s["near_duplicates"]:
            if not isinstance(pair, list) or len(pair) != 2:
                raise ConfigValidationError(
                    "synth.near_duplicates entries must be [name, name] pairs"
                )
        if not 0.9 <= float(s["near_duplicate_cosine"]) < 1.0:
            raise ConfigValidationError("synth.near_duplicate_cosine must be in [0.9, 1)")
