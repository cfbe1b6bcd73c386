"""
Single-latent concept steering.

For every active concept c with assigned latent i, at timestep t:

    z_i <- gamma_c * mu(i, t, D_c) * z_i    if z_i > mu(i, t, D)

and every other latent is left untouched. The steered code is decoded back
into a reconstruction.
"""

from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from ..core.numerics import ACCUM_DTYPE
from ..core.sae_model import BatchEncoding, EncodeResult, SaeParams, decode, decode_batch
from ..utils.log import get_logger
from .registry import ActivationStats, ConceptAssignment

logger = get_logger()

DEFAULT_CANDIDATES = (-1.0, -5.0, -10.0, -15.0, -20.0, -25.0, -30.0)

# Per-object multipliers of the baseline multi-latent method and of the
# from-scratch and fine-tuned single-latent variants.
_PRESET_OBJECTS = (
    "Architectures", "Bears", "Birds", "Butterfly", "Cats", "Dogs", "Fishes",
    "Flame", "Flowers", "Frogs", "Horses", "Human", "Jellyfish", "Rabbits",
    "Sandwiches", "Sea", "Statues", "Towers", "Trees", "Waterfalls",
)
_PRESET_COLUMNS = {
    "baseline": (-20, -30, -10, -15, -15, -20, -30, -25, -20, -5,
                 -25, -20, -15, -30, -15, -30, -30, -20, -25, -30),
    "from_scratch": (-5, -10, -5, -5, -1, -5, -5, -1, -5, -5,
                     -10, -5, -1, -10, -25, -5, -1, -5, -5, -10),
    "finetuned": (-5, -5, -5, -5, -10, -5, -5, -1, -5, -10,
                  -15, -5, -1, -5, -5, -5, -10, -5, -5, -20),
}
MULTIPLIER_PRESETS: Dict[str, Dict[str, float]] = {
    name: {obj: float(g) for obj, g in zip(_PRESET_OBJECTS, column)}
    for name, column in _PRESET_COLUMNS.items()
}

Multipliers = Union[float, Mapping[str, float]]


class SteeringError(ValueError):
    """Raised for invalid steering plans or their misuse."""
    pass


@dataclass(frozen=True)
class SteeringEntry:
    """Intervention on one concept: its latent, multiplier, and per-timestep statistics."""

    concept: str
    latent: int
    multiplier: float
    gate: np.ndarray  # (T,) mu(latent, t, D)
    scale: np.ndarray  # (T,) mu(latent, t, D_c)

    def factor(self, t) -> np.ndarray:
        return self.multiplier * self.scale[t]


@dataclass(frozen=True)
class SteeringPlan:
    entries: Dict[str, SteeringEntry] = field(default_factory=dict)
    num_timesteps: int = 0
    n: int = 0

    def __contains__(self, concept: str) -> bool:
        return concept in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def concepts(self) -> List[str]:
        return list(self.entries)

    def latents(self) -> Dict[str, int]:
        return {c: e.latent for c, e in self.entries.items()}

    def multipliers(self) -> Dict[str, float]:
        return {c: e.multiplier for c, e in self.entries.items()}

    def with_multipliers(self, multipliers: Multipliers) -> "SteeringPlan":
        """Copy with replaced multipliers (a scalar applies to every concept)."""
        gammas = _expand_multipliers(self.concepts(), multipliers, partial=True)
        entries = {
            c: replace(e, multiplier=gammas.get(c, e.multiplier)) for c, e in self.entries.items()
        }
        return replace(self, entries=entries)

    def restricted(self, concepts: Iterable[str]) -> "SteeringPlan":
        keep = list(concepts)
        for c in keep:
            if c not in self.entries:
                raise SteeringError(f"concept '{c}' is not in the plan")
        return replace(self, entries={c: self.entries[c] for c in keep})

    def to_dict(self) -> Dict:
        return {
            "num_timesteps": self.num_timesteps,
            "n": self.n,
            "entries": [
                {
                    "concept": e.concept,
                    "latent": int(e.latent),
                    "multiplier": float(e.multiplier),
                    "gate": [float(g) for g in e.gate],
                    "scale": [float(s) for s in e.scale],
                }
                for e in self.entries.values()
            ],
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "SteeringPlan":
        try:
            entries = {}
            for raw in data["entries"]:
                entry = SteeringEntry(
                    concept=raw["concept"],
                    latent=int(raw["latent"]),
                    multiplier=float(raw["multiplier"]),
                    gate=np.asarray(raw["gate"], dtype=ACCUM_DTYPE),
                    scale=np.asarray(raw["scale"], dtype=ACCUM_DTYPE),
                )
                entries[entry.concept] = entry
            plan = cls(entries=entries, num_timesteps=int(data["num_timesteps"]), n=int(data["n"]))
        except (KeyError, TypeError, ValueError) as e:
            raise SteeringError(f"malformed steering plan: {e}")
        plan.validate()
        return plan

    def validate(self) -> None:
        """
        Raises:
            SteeringError: On a non-negative multiplier, out-of-range latent, or
                statistics of the wrong length
        """
        for c, e in self.entries.items():
            if not e.multiplier < 0:
                raise SteeringError(f"multiplier for '{c}' must be negative, got {e.multiplier}")
            if not 0 <= e.latent < self.n:
                raise SteeringError(f"latent {e.latent} of '{c}' outside [0, {self.n})")
            if e.gate.shape != (self.num_timesteps,) or e.scale.shape != (self.num_timesteps,):
                raise SteeringError(
                    f"statistics of '{c}' do not cover {self.num_timesteps} timesteps"
                )


def _expand_multipliers(
    concepts: Sequence[str], multipliers: Multipliers, partial: bool = False
) -> Dict[str, float]:
    if isinstance(multipliers, (int, float, np.floating, np.integer)):
        gammas = {c: float(multipliers) for c in concepts}
    else:
        gammas = {c: float(g) for c, g in multipliers.items() if c in concepts}
        missing = [c for c in concepts if c not in gammas]
        if missing and not partial:
            raise SteeringError(f"no multiplier given for {missing}")
    for c, g in gammas.items():
        if not g < 0:
            raise SteeringError(f"multiplier for '{c}' must be negative, got {g}")
    return gammas


def build_plan(
    model: SaeParams,
    stats: ActivationStats,
    assignment: ConceptAssignment,
    concepts: Iterable[str],
    multipliers: Multipliers,
) -> SteeringPlan:
    """
    Plan that steers the assigned latent of each concept.

    Gate and scale are copied from ``stats`` for every timestep; a timestep
    without data keeps NaN and is rejected when steered.

    Args:
        model: Model whose encodings will be steered
        stats: Activation statistics of that model
        assignment: Concept-to-latent map covering every concept
        concepts: Concepts to include in the plan
        multipliers: One negative multiplier per concept, or a single value

    Raises:
        SteeringError: On a non-negative or missing multiplier, or an
            unassigned concept
    """
    concepts = list(dict.fromkeys(concepts))
    if stats.n != model.n:
        raise SteeringError(f"statistics cover {stats.n} latents, model has {model.n}")
    gammas = _expand_multipliers(concepts, multipliers)
    entries: Dict[str, SteeringEntry] = {}
    for c in concepts:
        if c not in assignment:
            raise SteeringError(f"concept '{c}' has no assigned latent")
        i = assignment.latent(c)
        j = stats.concept_index(c)
        entries[c] = SteeringEntry(
            concept=c,
            latent=i,
            multiplier=gammas[c],
            gate=stats.mu_all[i, :].astype(ACCUM_DTYPE),
            scale=stats.mu_concept[i, :, j].astype(ACCUM_DTYPE),
        )
    plan = SteeringPlan(entries=entries, num_timesteps=stats.num_timesteps, n=model.n)
    plan.validate()
    logger.debug(f"steering plan for {len(entries)} concepts")
    return plan


def _active_entries(plan: SteeringPlan, active: Optional[Iterable[str]]) -> List[SteeringEntry]:
    names = plan.concepts() if active is None else list(dict.fromkeys(active))
    for c in names:
        if c not in plan.entries:
            raise SteeringError(f"active concept '{c}' is not in the plan")
    return [plan.entries[c] for c in names]


def _check_timesteps(plan: SteeringPlan, entries: List[SteeringEntry], ts: np.ndarray) -> None:
    if ts.size and (ts.min() < 0 or ts.max() >= plan.num_timesteps):
        raise SteeringError(f"timestep outside [0, {plan.num_timesteps})")
    for e in entries:
        if np.any(np.isnan(e.gate[ts])) or np.any(np.isnan(e.scale[ts])):
            raise SteeringError(f"no statistics for '{e.concept}' at some requested timestep")


@dataclass
class SteeredEncodeResult:
    original: EncodeResult
    z_support: np.ndarray
    z_values: np.ndarray  # steered values on the support
    intervened: np.ndarray  # latent ids that were rescaled
    x_hat: np.ndarray  # steered reconstruction

    @property
    def z_original(self) -> np.ndarray:
        return self.original.z

    @property
    def z(self) -> np.ndarray:
        dense = np.zeros_like(self.original.v)
        dense[self.z_support] = self.z_values
        return dense


def _steer_values(
    entries: List[SteeringEntry], support: np.ndarray, values: np.ndarray, ts: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Rescale (B, k) support values. Every gate is tested against the original
    value, so the result does not depend on the order of ``entries``.
    """
    factor = np.ones_like(values, dtype=ACCUM_DTYPE)
    hit = np.zeros(values.shape, dtype=bool)
    for e in entries:
        fires = (support == e.latent) & (values > e.gate[ts][:, None])
        factor = np.where(fires, factor * e.factor(ts)[:, None], factor)
        hit |= fires
    return values * factor, hit


def apply(
    plan: SteeringPlan,
    enc: EncodeResult,
    t: int,
    active: Optional[Iterable[str]] = None,
    model: Optional[SaeParams] = None,
) -> SteeredEncodeResult:
    """
    Steer one encoding at timestep ``t``.

    ``active`` defaults to every concept in the plan. ``model`` is needed to
    decode the steered code whenever some latent was actually rescaled.

    Raises:
        SteeringError: If ``t`` is outside the statistics range or a concept
            is not in the plan
    """
    entries = _active_entries(plan, active)
    ts = np.asarray([t], dtype=np.int64)
    _check_timesteps(plan, entries, ts)
    row_values = enc.z_values[None, :].astype(ACCUM_DTYPE)
    values, hit = _steer_values(entries, enc.z_support[None, :], row_values, ts)
    values, hit = values[0], hit[0]
    if not hit.any():
        x_hat = enc.x_hat.copy()
    elif model is not None:
        x_hat = decode(model, enc.z_support, values)
    else:
        raise SteeringError("model is required to reconstruct a steered encoding")
    return SteeredEncodeResult(
        original=enc,
        z_support=enc.z_support.copy(),
        z_values=values,
        intervened=enc.z_support[hit].copy(),
        x_hat=x_hat,
    )


@dataclass
class SteeredBatch:
    support: np.ndarray  # (B, k)
    original_values: np.ndarray  # (B, k)
    values: np.ndarray  # (B, k)
    intervened: np.ndarray  # (B, k) bool
    X_hat: np.ndarray  # (B, d)

    def num_intervened(self) -> int:
        return int(np.count_nonzero(self.intervened))


def apply_batch(
    plan: SteeringPlan,
    model: SaeParams,
    enc: BatchEncoding,
    timesteps: np.ndarray,
    active: Optional[Iterable[str]] = None,
) -> SteeredBatch:
    """Vectorized apply over a batch encoding with one timestep per row."""
    entries = _active_entries(plan, active)
    ts = np.asarray(timesteps, dtype=np.int64).reshape(-1)
    if ts.shape[0] != enc.batch_size:
        raise SteeringError(f"{ts.shape[0]} timesteps for a batch of {enc.batch_size}")
    _check_timesteps(plan, entries, ts)
    values, hit = _steer_values(entries, enc.support, enc.values, ts)
    X_hat = decode_batch(model, enc.support, values) if hit.any() else enc.X_hat.copy()
    return SteeredBatch(
        support=enc.support, original_values=enc.values, values=values, intervened=hit, X_hat=X_hat
    )


@dataclass
class MultiplierSweepResult:
    best: Dict[str, float]
    table: Dict[str, List[Tuple[float, float]]]  # concept -> [(multiplier, metric)]
    evaluations: int

    def best_plan(self, template: SteeringPlan) -> SteeringPlan:
        return template.with_multipliers(self.best)


def multiplier_sweep(
    template: SteeringPlan,
    evaluate: Callable[[SteeringPlan, str], float],
    candidates: Sequence[float] = DEFAULT_CANDIDATES,
    concepts: Optional[Sequence[str]] = None,
) -> MultiplierSweepResult:
    """
    Pick, per concept, the candidate multiplier with the highest metric.

    ``evaluate(plan, concept)`` scores a plan whose multiplier for
    ``concept`` has been set to one candidate. Exactly len(candidates)
    evaluations are performed per concept; the first best candidate wins ties.

    Raises:
        SteeringError: If candidates are empty or not all negative
    """
    candidates = [float(g) for g in candidates]
    if not candidates:
        raise SteeringError("multiplier sweep needs at least one candidate")
    for g in candidates:
        if not g < 0:
            raise SteeringError(f"candidate multiplier must be negative, got {g}")
    names = template.concepts() if concepts is None else list(concepts)

    best: Dict[str, float] = {}
    table: Dict[str, List[Tuple[float, float]]] = {}
    count = 0
    for c in names:
        rows = []
        for g in candidates:
            metric = float(evaluate(template.with_multipliers({c: g}), c))
            count += 1
            rows.append((g, metric))
        table[c] = rows
        best[c] = _first_argmax(rows)
        logger.debug(f"sweep '{c}': best multiplier {best[c]}")
    return MultiplierSweepResult(best=best, table=table, evaluations=count)


def _first_argmax(rows: List[Tuple[float, float]]) -> float:
    metrics = np.asarray([m for _, m in rows])
    metrics = np.where(np.isnan(metrics), -np.inf, metrics)
    return rows[int(np.argmax(metrics))][0]


def preset_multipliers(
    name: str, concepts: Optional[Sequence[str]] = None, fallback: float = -5.0
) -> Dict[str, float]:
    """
    Named multiplier column; concepts missing from the preset get ``fallback``.

    Raises:
        SteeringError: If the preset is unknown
    """
    if name not in MULTIPLIER_PRESETS:
        raise SteeringError(
            f"unknown multiplier preset '{name}', expected one of {sorted(MULTIPLIER_PRESETS)}"
        )
    preset = MULTIPLIER_PRESETS[name]
    if concepts is None:
        return dict(preset)
    return {c: preset.get(c, fallback) for c in concepts}


def multiplier_summary(multipliers: Mapping[str, float]) -> Tuple[float, float]:
    """Mean and sample standard deviation of a multiplier column."""
    values = np.asarray(list(multipliers.values()), dtype=ACCUM_DTYPE)
    if values.size == 0:
        return float("nan"), float("nan")
    std = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return float(values.mean()), std


__all__ = [
    "SteeringError",
    "SteeringEntry",
    "SteeringPlan",
    "SteeredEncodeResult",
    "SteeredBatch",
    "MultiplierSweepResult",
    "build_plan",
    "apply",
    "apply_batch",
    "multiplier_sweep",
    "preset_multipliers",
    "multiplier_summary",
    "DEFAULT_CANDIDATES",
    "MULTIPLIER_PRESETS",
]
