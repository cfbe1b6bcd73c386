"""
Concept scoring, assignment and single-latent steering.
"""

from .registry import (
    RegistryError,
    EmptyStratumError,
    ActivationStats,
    ScoreTable,
    ConceptAssignment,
    CentralizationRow,
    compute_stats,
    score,
    build_score_table,
    assign,
    centralization_report,
    overlap_timesteps,
    score_model,
)
from .steering import (
    SteeringError,
    SteeringPlan,
    SteeredEncodeResult,
    build_plan,
    apply,
    apply_batch,
    multiplier_sweep,
    preset_multipliers,
    DEFAULT_CANDIDATES,
    MULTIPLIER_PRESETS,
)

__all__ = [
    "RegistryError",
    "EmptyStratumError",
    "ActivationStats",
    "ScoreTable",
    "ConceptAssignment",
    "CentralizationRow",
    "compute_stats",
    "score",
    "build_score_table",
    "assign",
    "centralization_report",
    "overlap_timesteps",
    "score_model",
    "SteeringError",
    "SteeringPlan",
    "SteeredEncodeResult",
    "build_plan",
    "apply",
    "apply_batch",
    "multiplier_sweep",
    "preset_multipliers",
    "DEFAULT_CANDIDATES",
    "MULTIPLIER_PRESETS",
]
