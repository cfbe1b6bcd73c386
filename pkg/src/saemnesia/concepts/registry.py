"""
Concept scoring and concept-to-latent assignment.

For latent i, timestep t and concept c:

    score(i, t, c) = mu(i, t, D_c)  / (sum_j mu(j, t, D_c)  + delta)
                   - mu(i, t, D_!c) / (sum_j mu(j, t, D_!c) + delta)

where mu is the mean post-TopK activation over a stratum of the data.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..core.numerics import ACCUM_DTYPE
from ..core.sae_model import SaeParams, encode_batch
from ..data.dataset import DOMAINS, OBJECT, STYLE, Concept, Dataset
from ..utils.log import get_logger

logger = get_logger()

DEFAULT_DELTA = 1e-8
DEFAULT_MARGIN = 2.0
RATIO_CAP = 1e6
AGGREGATIONS = ("mean", "max")
STATS_BATCH = 1024


class RegistryError(ValueError):
    """Base exception for scoring and assignment errors."""
    pass


class EmptyStratumError(RegistryError):
    """Raised when a mean over an empty set of samples is requested."""
    pass


@dataclass
class ActivationStats:
    """
    Mean post-TopK activations per latent and timestep.

    Arrays are (n, T) for the whole dataset and (n, T, C) per concept; empty
    strata hold NaN and are rejected by the accessors.
    """

    concepts: List[Concept]
    mu_all: np.ndarray
    mu_concept: np.ndarray
    mu_not_concept: np.ndarray
    count_all: np.ndarray  # (T,)
    count_concept: np.ndarray  # (T, C)

    @property
    def n(self) -> int:
        return self.mu_all.shape[0]

    @property
    def num_timesteps(self) -> int:
        return self.mu_all.shape[1]

    def concept_index(self, name: str) -> int:
        for j, c in enumerate(self.concepts):
            if c.name == name:
                return j
        raise RegistryError(f"concept '{name}' not covered by these statistics")

    def timesteps_with_data(self) -> np.ndarray:
        return np.flatnonzero(self.count_all > 0)

    def _check_t(self, t: int) -> None:
        if not 0 <= t < self.num_timesteps:
            raise RegistryError(f"timestep {t} outside [0, {self.num_timesteps})")

    def mean_all(self, t: int) -> np.ndarray:
        """mu(., t, D) over all latents."""
        self._check_t(t)
        if self.count_all[t] == 0:
            raise EmptyStratumError(f"no samples at timestep {t}")
        return self.mu_all[:, t]

    def mean_concept(self, name: str, t: int) -> np.ndarray:
        """mu(., t, D_c) over all latents."""
        self._check_t(t)
        j = self.concept_index(name)
        if self.count_concept[t, j] == 0:
            raise EmptyStratumError(f"no samples of '{name}' at timestep {t}")
        return self.mu_concept[:, t, j]

    def mean_not_concept(self, name: str, t: int) -> Optional[np.ndarray]:
        """mu(., t, D_!c), or None when every sample at t carries the concept."""
        self._check_t(t)
        j = self.concept_index(name)
        if self.count_all[t] - self.count_concept[t, j] == 0:
            return None
        return self.mu_not_concept[:, t, j]


def compute_stats(
    model: SaeParams,
    data: Dataset,
    concepts: Optional[Sequence[Concept]] = None,
    batch_size: int = STATS_BATCH,
) -> ActivationStats:
    """
    Exact per-stratum means of post-TopK activations.

    A multi-label sample counts towards D_c of each of its concepts and
    towards D_!c of every other concept.

    Raises:
        EmptyStratumError: If the dataset is empty
    """
    if len(data) == 0:
        raise EmptyStratumError("cannot compute statistics on an empty dataset")
    concepts = data.concepts() if concepts is None else list(concepts)
    n, T, C = model.n, data.num_timesteps, len(concepts)
    sum_all = np.zeros((T, n), dtype=ACCUM_DTYPE)
    sum_c = np.zeros((T, C, n), dtype=ACCUM_DTYPE)
    count_all = np.zeros(T, dtype=np.int64)
    count_c = np.zeros((T, C), dtype=np.int64)
    labels = data.label_matrix(concepts)

    for start in range(0, len(data), batch_size):
        stop = min(start + batch_size, len(data))
        Z = encode_batch(model, data.X[start:stop]).dense_z()
        L = labels[start:stop].astype(ACCUM_DTYPE)
        ts = data.timesteps[start:stop]
        for t in np.unique(ts):
            rows = ts == t
            sum_all[t] += Z[rows].sum(axis=0)
            sum_c[t] += L[rows].T @ Z[rows]
            count_all[t] += int(rows.sum())
            count_c[t] += labels[start:stop][rows].sum(axis=0)

    with np.errstate(invalid="ignore", divide="ignore"):
        mu_all = (sum_all / count_all[:, None]).T
        mu_c = sum_c / count_c[:, :, None]
        not_count = count_all[:, None] - count_c
        mu_not = (sum_all[:, None, :] - sum_c) / not_count[:, :, None]
    mu_all[:, count_all == 0] = np.nan
    mu_c[count_c == 0] = np.nan
    mu_not[not_count == 0] = np.nan

    return ActivationStats(
        concepts=concepts,
        mu_all=mu_all,
        mu_concept=np.transpose(mu_c, (2, 0, 1)),
        mu_not_concept=np.transpose(mu_not, (2, 0, 1)),
        count_all=count_all,
        count_concept=count_c,
    )


def score(
    mu_concept: np.ndarray,
    mu_not_concept: Optional[np.ndarray],
    i: Optional[int] = None,
    delta: float = DEFAULT_DELTA,
):
    """
    Score of latent i (or of every latent when i is None) from the two
    strata means at one timestep. A missing complement drops its term.
    """
    mu_c = np.asarray(mu_concept, dtype=ACCUM_DTYPE)
    s = mu_c / (mu_c.sum() + delta)
    if mu_not_concept is not None:
        mu_n = np.asarray(mu_not_concept, dtype=ACCUM_DTYPE)
        s = s - mu_n / (mu_n.sum() + delta)
    return s if i is None else float(s[i])


@dataclass
class ScoreTable:
    """scores[i, t, c] for the timesteps that have data."""

    scores: np.ndarray  # (n, T', C)
    timesteps: np.ndarray  # (T',) timestep ids
    concepts: List[Concept]
    delta: float = DEFAULT_DELTA

    @property
    def n(self) -> int:
        return self.scores.shape[0]

    def concept_index(self, name: str) -> int:
        for j, c in enumerate(self.concepts):
            if c.name == name:
                return j
        raise RegistryError(f"concept '{name}' not in score table")

    def concept_names(self) -> List[str]:
        return [c.name for c in self.concepts]

    def column(self, name: str) -> np.ndarray:
        """(n, T') scores of one concept."""
        return self.scores[:, :, self.concept_index(name)]

    def aggregate(self, name: str, how: str = "mean") -> np.ndarray:
        """Per-latent aggregate over timesteps."""
        if how not in AGGREGATIONS:
            raise RegistryError(f"unknown timestep aggregation '{how}'")
        col = self.column(name)
        return col.mean(axis=1) if how == "mean" else col.max(axis=1)

    def peak_latents(self, name: str) -> np.ndarray:
        """Argmax latent at every scored timestep (lowest index on ties)."""
        return np.argmax(self.column(name), axis=0)


def build_score_table(stats: ActivationStats, delta: float = DEFAULT_DELTA) -> ScoreTable:
    """
    Evaluate the score for every latent, timestep with data, and concept.

    Raises:
        EmptyStratumError: If a concept has no samples at a timestep with data
    """
    ts = stats.timesteps_with_data()
    if ts.size == 0:
        raise EmptyStratumError("statistics cover no timestep")
    table = np.zeros((stats.n, ts.size, len(stats.concepts)), dtype=ACCUM_DTYPE)
    for j, c in enumerate(stats.concepts):
        for col, t in enumerate(ts):
            mu_c = stats.mean_concept(c.name, int(t))
            mu_n = stats.mean_not_concept(c.name, int(t))
            table[:, col, j] = score(mu_c, mu_n, delta=delta)
    return ScoreTable(scores=table, timesteps=ts, concepts=list(stats.concepts), delta=delta)


@dataclass
class ConceptAssignment:
    """Phi: concept name -> latent index, with each concept's domain."""

    phi: Dict[str, int] = field(default_factory=dict)
    domains: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        missing = set(self.phi) ^ set(self.domains)
        if missing:
            raise RegistryError(f"phi and domains disagree on {sorted(missing)}")
        for name, domain in self.domains.items():
            if domain not in DOMAINS:
                raise RegistryError(f"unknown domain '{domain}' for '{name}'")

    def __contains__(self, name: str) -> bool:
        return name in self.phi

    def __len__(self) -> int:
        return len(self.phi)

    def latent(self, name: str) -> int:
        if name not in self.phi:
            raise RegistryError(f"concept '{name}' has no assigned latent")
        return self.phi[name]

    def concepts(self, domain: Optional[str] = None) -> List[str]:
        return [c for c in self.phi if domain is None or self.domains[c] == domain]

    def latents(self, domain: Optional[str] = None) -> np.ndarray:
        return np.asarray(sorted({self.phi[c] for c in self.concepts(domain)}), dtype=np.int64)

    def object_latents(self) -> np.ndarray:
        return self.latents(OBJECT)

    def style_latents(self) -> np.ndarray:
        return self.latents(STYLE)

    def is_injective(self) -> bool:
        return len(set(self.phi.values())) == len(self.phi)

    def to_dict(self) -> Dict:
        return {
            "concepts": [
                {"name": c, "domain": self.domains[c], "latent": int(self.phi[c])} for c in self.phi
            ]
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "ConceptAssignment":
        try:
            entries = data["concepts"]
            return cls(
                phi={e["name"]: int(e["latent"]) for e in entries},
                domains={e["name"]: e["domain"] for e in entries},
            )
        except (KeyError, TypeError) as e:
            raise RegistryError(f"malformed assignment: {e}")


def assign(
    score_table: ScoreTable,
    concepts: Optional[Sequence[str]] = None,
    t_select: str = "mean",
    unique: bool = False,
) -> ConceptAssignment:
    """
    Map each concept to the latent with the highest aggregate score.

    Args:
        score_table: Scores to assign from
        concepts: Concept names to assign (default: every concept in the table)
        t_select: Timestep aggregation, "mean" or "max"
        unique: Resolve collisions greedily so no two concepts share a latent;
            concepts with higher best scores choose first

    Returns:
        ConceptAssignment covering exactly the requested concepts
    """
    names = score_table.concept_names() if concepts is None else list(concepts)
    domains = {c.name: c.domain for c in score_table.concepts}
    agg = {name: score_table.aggregate(name, t_select) for name in names}

    if not unique:
        phi = {name: int(np.argmax(agg[name])) for name in names}
        return ConceptAssignment(phi=phi, domains={name: domains[name] for name in names})

    if len(names) > score_table.n:
        raise RegistryError(
            f"cannot assign {len(names)} concepts to {score_table.n} latents uniquely"
        )
    order = sorted(range(len(names)), key=lambda j: (-float(agg[names[j]].max()), j))
    claimed = np.zeros(score_table.n, dtype=bool)
    chosen: Dict[str, int] = {}
    for j in order:
        name = names[j]
        masked = np.where(claimed, -np.inf, agg[name])
        latent = int(np.argmax(masked))
        if latent != int(np.argmax(agg[name])):
            logger.debug(f"assignment collision: '{name}' moved to latent {latent}")
        claimed[latent] = True
        chosen[name] = latent
    phi = {name: chosen[name] for name in names}
    return ConceptAssignment(phi=phi, domains={name: domains[name] for name in names})


@dataclass(frozen=True)
class CentralizationRow:
    concept: str
    assigned_latent: int
    top_latent: int
    top_score: float
    runner_up_score: float
    ratio: float
    dominant: bool


def centralization_report(
    score_table: ScoreTable,
    assignment: ConceptAssignment,
    margin: float = DEFAULT_MARGIN,
    t_select: str = "mean",
) -> List[CentralizationRow]:
    """
    Top versus runner-up aggregate score for each assigned concept.

    ratio = top / max(runner_up, delta), capped at RATIO_CAP; a concept is
    dominant when its top latent is the assigned one and ratio >= margin.
    """
    rows: List[CentralizationRow] = []
    for name in assignment.concepts():
        agg = score_table.aggregate(name, t_select)
        order = np.argsort(-agg, kind="stable")
        top = float(agg[order[0]])
        runner = float(agg[order[1]]) if agg.size > 1 else 0.0
        ratio = min(top / max(runner, score_table.delta), RATIO_CAP)
        rows.append(
            CentralizationRow(
                concept=name,
                assigned_latent=assignment.latent(name),
                top_latent=int(order[0]),
                top_score=top,
                runner_up_score=runner,
                ratio=ratio,
                dominant=bool(int(order[0]) == assignment.latent(name) and ratio >= margin),
            )
        )
    return rows


def overlap_timesteps(score_table: ScoreTable, concept_a: str, concept_b: str) -> int:
    """Number of scored timesteps at which both concepts peak on the same latent."""
    same = score_table.peak_latents(concept_a) == score_table.peak_latents(concept_b)
    return int(np.count_nonzero(same))


def score_model(
    model: SaeParams,
    data: Dataset,
    concepts: Optional[Sequence[Concept]] = None,
    delta: float = DEFAULT_DELTA,
):
    """Convenience: statistics and score table of a model on a dataset."""
    stats = compute_stats(model, data, concepts)
    return stats, build_score_table(stats, delta)


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
    "DEFAULT_DELTA",
    "DEFAULT_MARGIN",
    "OBJECT",
    "STYLE",
]
