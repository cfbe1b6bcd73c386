"""
Labeled activation datasets.

A sample is one d-dimensional activation vector with its timestep and its
object/style labels. Unlabeled fields are stored as -1.
"""

from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from ..core.numerics import STORAGE_DTYPE, make_rng

OBJECT = "object"
STYLE = "style"
DOMAINS = (OBJECT, STYLE)
UNLABELED = -1


class DatasetError(ValueError):
    """Raised when a dataset violates its invariants."""
    pass


@dataclass(frozen=True)
class ActivationSample:
    x: np.ndarray
    timestep: int
    object_id: Optional[int]
    style_id: Optional[int]


@dataclass(frozen=True)
class Concept:
    name: str
    domain: str
    index: int  # position inside its domain vocabulary


@dataclass
class Dataset:
    """Columnar store of samples plus the two label vocabularies."""

    X: np.ndarray
    timesteps: np.ndarray
    object_ids: np.ndarray
    style_ids: np.ndarray
    object_names: List[str] = field(default_factory=list)
    style_names: List[str] = field(default_factory=list)
    num_timesteps: int = 1

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=STORAGE_DTYPE)
        self.timesteps = np.asarray(self.timesteps, dtype=np.int64)
        self.object_ids = np.asarray(self.object_ids, dtype=np.int64)
        self.style_ids = np.asarray(self.style_ids, dtype=np.int64)
        self.object_names = list(self.object_names)
        self.style_names = list(self.style_names)
        self.validate()

    def validate(self) -> None:
        """
        Raises:
            DatasetError: On shape mismatch, out-of-vocabulary labels,
                out-of-range timesteps or non-finite vectors
        """
        if self.X.ndim != 2:
            raise DatasetError(f"X must be 2-D, got shape {self.X.shape}")
        N = self.X.shape[0]
        for name in ("timesteps", "object_ids", "style_ids"):
            if getattr(self, name).shape != (N,):
                raise DatasetError(f"{name} has shape {getattr(self, name).shape}, expected ({N},)")
        if self.num_timesteps < 1:
            raise DatasetError("num_timesteps must be >= 1")
        if N and (self.timesteps.min() < 0 or self.timesteps.max() >= self.num_timesteps):
            raise DatasetError(f"timestep outside [0, {self.num_timesteps})")
        for ids, names, label in (
            (self.object_ids, self.object_names, "object"),
            (self.style_ids, self.style_names, "style"),
        ):
            if N and (ids.min() < UNLABELED or ids.max() >= len(names)):
                raise DatasetError(f"{label} id outside vocabulary of size {len(names)}")
        overlap = set(self.object_names) & set(self.style_names)
        if overlap:
            raise DatasetError(f"names used in both vocabularies: {sorted(overlap)}")
        if any(len(set(names)) != len(names) for names in (self.object_names, self.style_names)):
            raise DatasetError("duplicate concept names in a vocabulary")
        if not np.all(np.isfinite(self.X)):
            raise DatasetError("dataset contains non-finite activations")

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def sample(self, i: int) -> ActivationSample:
        obj = int(self.object_ids[i])
        sty = int(self.style_ids[i])
        return ActivationSample(
            x=self.X[i],
            timestep=int(self.timesteps[i]),
            object_id=None if obj == UNLABELED else obj,
            style_id=None if sty == UNLABELED else sty,
        )

    def __iter__(self) -> Iterator[ActivationSample]:
        for i in range(len(self)):
            yield self.sample(i)

    @property
    def samples(self) -> List[ActivationSample]:
        return list(self)

    def concepts(self, domains: Sequence[str] = DOMAINS) -> List[Concept]:
        """Objects first, then styles, each in vocabulary order."""
        out: List[Concept] = []
        if OBJECT in domains:
            out += [Concept(name, OBJECT, i) for i, name in enumerate(self.object_names)]
        if STYLE in domains:
            out += [Concept(name, STYLE, i) for i, name in enumerate(self.style_names)]
        return out

    def concept(self, name: str) -> Concept:
        if name in self.object_names:
            return Concept(name, OBJECT, self.object_names.index(name))
        if name in self.style_names:
            return Concept(name, STYLE, self.style_names.index(name))
        raise DatasetError(f"unknown concept '{name}'")

    def labels_for(self, domain: str) -> np.ndarray:
        return self.object_ids if domain == OBJECT else self.style_ids

    def concept_mask(self, name: str) -> np.ndarray:
        """Boolean mask of samples carrying the named concept."""
        c = self.concept(name)
        return self.labels_for(c.domain) == c.index

    def label_matrix(self, concepts: Optional[Sequence[Concept]] = None) -> np.ndarray:
        """(N, C) boolean membership matrix for the given concepts (default: all)."""
        concepts = self.concepts() if concepts is None else concepts
        M = np.zeros((len(self), len(concepts)), dtype=bool)
        for j, c in enumerate(concepts):
            M[:, j] = self.labels_for(c.domain) == c.index
        return M

    def subset(self, index: np.ndarray) -> "Dataset":
        index = np.asarray(index)
        return Dataset(
            X=self.X[index],
            timesteps=self.timesteps[index],
            object_ids=self.object_ids[index],
            style_ids=self.style_ids[index],
            object_names=self.object_names,
            style_names=self.style_names,
            num_timesteps=self.num_timesteps,
        )

    def split(self, heldout_fraction: float, seed: int) -> Tuple["Dataset", "Dataset"]:
        """Deterministic (train, held-out) partition."""
        if not 0.0 < heldout_fraction < 1.0:
            raise DatasetError(f"held-out fraction must be in (0, 1), got {heldout_fraction}")
        order = make_rng(seed, 0x5EED).permutation(len(self))
        cut = int(round(len(self) * (1.0 - heldout_fraction)))
        return self.subset(np.sort(order[:cut])), self.subset(np.sort(order[cut:]))

    def mean(self) -> np.ndarray:
        return self.X.astype(np.float64).mean(axis=0)

    def equal(self, other: "Dataset") -> bool:
        return (
            self.object_names == other.object_names
            and self.style_names == other.style_names
            and self.num_timesteps == other.num_timesteps
            and np.array_equal(self.timesteps, other.timesteps)
            and np.array_equal(self.object_ids, other.object_ids)
            and np.array_equal(self.style_ids, other.style_ids)
            and self.X.tobytes() == other.X.tobytes()
        )
