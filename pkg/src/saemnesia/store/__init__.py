"""
Persistence for datasets, checkpoints and JSON artifacts.
"""

from .errors import (
    StoreError,
    BadMagicError,
    VersionMismatchError,
    TruncatedError,
    DimensionMismatchError,
    CorruptArtifactError,
)
from .binary import (
    Checkpoint,
    atomic_write,
    save_checkpoint,
    load_checkpoint,
    checkpoint_to_bytes,
    checkpoint_from_bytes,
    save_dataset,
    load_dataset,
    dataset_to_bytes,
    dataset_from_bytes,
)
from .artifacts import (
    save_artifact,
    load_artifact,
    save_assignment,
    load_assignment,
    save_plan,
    load_plan,
    save_score_table,
    load_score_table,
    save_report,
    load_report,
)

__all__ = [
    "StoreError",
    "BadMagicError",
    "VersionMismatchError",
    "TruncatedError",
    "DimensionMismatchError",
    "CorruptArtifactError",
    "Checkpoint",
    "atomic_write",
    "save_checkpoint",
    "load_checkpoint",
    "checkpoint_to_bytes",
    "checkpoint_from_bytes",
    "save_dataset",
    "load_dataset",
    "dataset_to_bytes",
    "dataset_from_bytes",
    "save_artifact",
    "load_artifact",
    "save_assignment",
    "load_assignment",
    "save_plan",
    "load_plan",
    "save_score_table",
    "load_score_table",
    "save_report",
    "load_report",
]
