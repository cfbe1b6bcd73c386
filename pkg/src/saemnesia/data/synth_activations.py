"""
Synthetic labeled activations with planted object and style directions.

Each sample of the (object, style) cell at timestep t is

    x = m(t) * (a * dir_object + b * dir_style) + noise

with a, b drawn uniformly from a positive range and isotropic Gaussian noise.
This is a desk-scale stand-in for "a [object] in [style] style" diffusion
activations, not a model of them.
"""

from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from ..core.numerics import ACCUM_DTYPE, STORAGE_DTYPE, make_rng
from .dataset import Dataset

OBJECT_NAMES = [
    "Architectures", "Bears", "Birds", "Butterfly", "Cats", "Dogs", "Fishes",
    "Flame", "Flowers", "Frogs", "Horses", "Human", "Jellyfish", "Rabbits",
    "Sandwiches", "Sea", "Statues", "Towers", "Trees", "Waterfalls",
]
STYLE_NAMES = [
    "Impressionism", "Cubism", "Watercolor", "Van_Gogh", "Pop_Art",
    "Sketch", "Mosaic", "Expressionism", "Fauvism", "Crayon",
]

MAX_DIRECTION_DOT = 0.5
NEAR_DUPLICATE_COSINE = 0.95
# Lower bound on min(modulation) * amplitude_lo / noise_sigma
MIN_SIGNAL_TO_NOISE = 10.0
_MAX_DRAWS = 10000


class SynthError(ValueError):
    """Raised for an invalid synthetic-data specification."""
    pass


def default_names(prefix: str, known: Sequence[str], count: int) -> List[str]:
    """Known names first, then ``<prefix>NN`` placeholders."""
    return list(known[:count]) + [f"{prefix}{i:02d}" for i in range(len(known), count)]


def default_modulation(timesteps: int) -> np.ndarray:
    """Concept signal strength per timestep, decaying linearly from 1.0 to 0.8."""
    if timesteps == 1:
        return np.ones(1)
    return np.linspace(1.0, 0.8, timesteps)


@dataclass
class SynthSpec:
    d: int
    object_names: List[str]
    style_names: List[str]
    timesteps: int
    samples_per_pair: int
    object_directions: np.ndarray  # (num_objects, d), unit rows
    style_directions: np.ndarray  # (num_styles, d), unit rows
    modulation: np.ndarray  # (timesteps,)
    noise_sigma: float = 0.05
    amplitude_range: Tuple[float, float] = (1.25, 2.0)
    seed: int = 0
    near_duplicates: Tuple[Tuple[str, str], ...] = field(default_factory=tuple)

    @property
    def num_objects(self) -> int:
        return len(self.object_names)

    @property
    def num_styles(self) -> int:
        return len(self.style_names)

    def object_index(self, name: Union[str, int]) -> int:
        if isinstance(name, (int, np.integer)):
            if not 0 <= name < self.num_objects:
                raise SynthError(f"object index {name} out of range")
            return int(name)
        if name not in self.object_names:
            raise SynthError(f"unknown object '{name}'")
        return self.object_names.index(name)

    def validate(self) -> None:
        """
        Raises:
            SynthError: If the specification breaks any invariant
        """
        if self.d < 1 or self.timesteps < 1 or self.samples_per_pair < 1:
            raise SynthError("d, timesteps and samples_per_pair must be >= 1")
        if not self.object_names or not self.style_names:
            raise SynthError("at least one object and one style are required")
        if self.object_directions.shape != (self.num_objects, self.d):
            raise SynthError(f"object directions have shape {self.object_directions.shape}")
        if self.style_directions.shape != (self.num_styles, self.d):
            raise SynthError(f"style directions have shape {self.style_directions.shape}")
        if self.modulation.shape != (self.timesteps,) or np.any(self.modulation <= 0):
            raise SynthError("modulation must hold one positive value per timestep")
        for dirs in (self.object_directions, self.style_directions):
            if not np.allclose(np.linalg.norm(dirs, axis=1), 1.0, atol=1e-6):
                raise SynthError("direction rows must have unit L2 norm")
        lo, hi = self.amplitude_range
        if not 0 < lo <= hi:
            raise SynthError(f"amplitude range {self.amplitude_range} must satisfy 0 < lo <= hi")
        if self.noise_sigma < 0:
            raise SynthError("noise_sigma must be >= 0")
        floor = float(np.min(self.modulation)) * lo
        if floor < MIN_SIGNAL_TO_NOISE * self.noise_sigma - 1e-12:
            raise SynthError(
                f"weakest signal {floor:.4g} is below {MIN_SIGNAL_TO_NOISE:g} x noise_sigma "
                f"({self.noise_sigma:g}); raise amplitude_range or lower noise_sigma"
            )
        allowed = {frozenset(p) for p in self.near_duplicates}
        G = self.object_directions @ self.object_directions.T
        for i in range(self.num_objects):
            for j in range(i + 1, self.num_objects):
                pair = frozenset((self.object_names[i], self.object_names[j]))
                if G[i, j] > MAX_DIRECTION_DOT + 1e-9 and pair not in allowed:
                    raise SynthError(
                        f"objects '{self.object_names[i]}' and '{self.object_names[j]}' "
                        f"are too close (dot {G[i, j]:.3f})"
                    )


def _draw_directions(
    rng: np.random.Generator, count: int, d: int, existing: np.ndarray
) -> np.ndarray:
    """Unit vectors whose dot with every earlier one is at most MAX_DIRECTION_DOT."""
    out = list(existing)
    for _ in range(count):
        for _attempt in range(_MAX_DRAWS):
            u = rng.standard_normal(d)
            u /= np.linalg.norm(u)
            if not out or np.max(np.asarray(out) @ u) <= MAX_DIRECTION_DOT:
                out.append(u)
                break
        else:
            raise SynthError(f"could not place {count} separated directions in d={d}")
    return np.asarray(out[len(existing):], dtype=ACCUM_DTYPE).reshape(count, d)


def build_spec(
    d: int = 64,
    num_objects: int = 20,
    num_styles: int = 10,
    timesteps: int = 10,
    samples_per_pair: int = 20,
    noise_sigma: float = 0.05,
    amplitude_range: Tuple[float, float] = (1.25, 2.0),
    seed: int = 0,
    object_names: Optional[Sequence[str]] = None,
    style_names: Optional[Sequence[str]] = None,
    modulation: Optional[np.ndarray] = None,
) -> SynthSpec:
    """
    Desk-scale specification with seed-derived planted directions.

    Defaults shrink 20 objects x 50 styles x 50 timesteps x 80 samples to
    20 x 10 x 10 x 20.
    """
    if not object_names:
        object_names = default_names("Object", OBJECT_NAMES, num_objects)
    if not style_names:
        style_names = default_names("Style", STYLE_NAMES, num_styles)
    object_names, style_names = list(object_names), list(style_names)
    rng = make_rng(seed, 0xD1)
    obj = _draw_directions(rng, len(object_names), d, np.zeros((0, d)))
    sty = _draw_directions(rng, len(style_names), d, obj)
    spec = SynthSpec(
        d=d,
        object_names=object_names,
        style_names=style_names,
        timesteps=timesteps,
        samples_per_pair=samples_per_pair,
        object_directions=obj,
        style_directions=sty,
        modulation=(
            default_modulation(timesteps)
            if modulation is None
            else np.asarray(modulation, dtype=ACCUM_DTYPE)
        ),
        noise_sigma=noise_sigma,
        amplitude_range=tuple(amplitude_range),
        seed=seed,
    )
    spec.validate()
    return spec


def full_scale_spec(d: int = 64, seed: int = 0) -> SynthSpec:
    """Full 20 objects x 50 styles x 50 timesteps x 80 samples-per-pair grid."""
    return build_spec(
        d=d, num_objects=20, num_styles=50, timesteps=50, samples_per_pair=80, seed=seed
    )


def timestep_counts(samples_per_pair: int, timesteps: int) -> np.ndarray:
    """Samples per timestep in one cell; the remainder goes to the earliest timesteps."""
    counts = np.full(timesteps, samples_per_pair // timesteps, dtype=np.int64)
    counts[: samples_per_pair % timesteps] += 1
    return counts


def generate(spec: SynthSpec) -> Dataset:
    """
    Draw the full object x style x timestep grid.

    Each cell has its own RNG stream derived from (seed, object, style), so
    the result does not depend on generation order.
    """
    spec.validate()
    counts = timestep_counts(spec.samples_per_pair, spec.timesteps)
    cell_t = np.repeat(np.arange(spec.timesteps), counts)
    m = len(cell_t)
    lo, hi = spec.amplitude_range
    X_parts, t_parts, o_parts, s_parts = [], [], [], []

    for o in range(spec.num_objects):
        for s in range(spec.num_styles):
            rng = make_rng(spec.seed, 0xCE11, o, s)
            a = rng.uniform(lo, hi, size=m) if hi > lo else np.full(m, lo)
            b = rng.uniform(lo, hi, size=m) if hi > lo else np.full(m, lo)
            noise = rng.standard_normal((m, spec.d)) * spec.noise_sigma
            signal = a[:, None] * spec.object_directions[o] + b[:, None] * spec.style_directions[s]
            X_parts.append(spec.modulation[cell_t][:, None] * signal + noise)
            t_parts.append(cell_t)
            o_parts.append(np.full(m, o))
            s_parts.append(np.full(m, s))

    return Dataset(
        X=np.concatenate(X_parts).astype(STORAGE_DTYPE),
        timesteps=np.concatenate(t_parts),
        object_ids=np.concatenate(o_parts),
        style_ids=np.concatenate(s_parts),
        object_names=spec.object_names,
        style_names=spec.style_names,
        num_timesteps=spec.timesteps,
    )


def make_near_duplicates(
    spec: SynthSpec,
    pair: Tuple[Union[str, int], Union[str, int]],
    cosine: float = NEAR_DUPLICATE_COSINE,
) -> SynthSpec:
    """
    Copy of ``spec`` in which the second object's direction is rotated towards
    the first until their cosine equals ``cosine``. Other directions are kept.
    """
    if not 0.9 <= cosine < 1.0:
        raise SynthError(f"near-duplicate cosine must be in [0.9, 1), got {cosine}")
    ia, ib = spec.object_index(pair[0]), spec.object_index(pair[1])
    if ia == ib:
        raise SynthError("a near-duplicate pair needs two distinct objects")
    dirs = spec.object_directions.copy()
    u_a = dirs[ia]
    ortho = dirs[ib] - (dirs[ib] @ u_a) * u_a
    ortho /= np.linalg.norm(ortho)
    dirs[ib] = cosine * u_a + np.sqrt(1.0 - cosine ** 2) * ortho
    dirs[ib] /= np.linalg.norm(dirs[ib])
    names = (spec.object_names[ia], spec.object_names[ib])
    pairs = tuple(spec.near_duplicates) + (names,)
    out = replace(spec, object_directions=dirs, near_duplicates=pairs)
    out.validate()
    return out


def direction_cosine(spec: SynthSpec, a: Union[str, int], b: Union[str, int]) -> float:
    u = spec.object_directions[spec.object_index(a)]
    v = spec.object_directions[spec.object_index(b)]
    return float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))


__all__ = [
    "SynthError",
    "MIN_SIGNAL_TO_NOISE",
    "SynthSpec",
    "build_spec",
    "full_scale_spec",
    "generate",
    "make_near_duplicates",
    "direction_cosine",
    "timestep_counts",
    "OBJECT_NAMES",
    "STYLE_NAMES",
]
