"""
Probe-based unlearning metrics.

Linear probes are trained once on the model's unsteered reconstructions;
every steered configuration is then scored by running those probes on the
steered reconstructions:

    UA   fraction of target-concept samples the probe no longer recognises
    IRA  probe accuracy on samples of the other concepts of the target domain
    CRA  probe accuracy on the cross domain (styles while erasing objects)
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from ..concepts.steering import (
    DEFAULT_CANDIDATES,
    MultiplierSweepResult,
    SteeringPlan,
    apply_batch,
    multiplier_sweep,
)
from ..core.numerics import ACCUM_DTYPE
from ..core.sae_model import BatchEncoding, SaeParams, encode_batch
from ..data.dataset import DOMAINS, OBJECT, STYLE, Dataset, DatasetError
from ..data.probe import LinearProbe, ProbeError, accuracy_from_predictions, probe_train
from ..utils.log import get_logger, log_record

logger = get_logger()

SEQUENTIAL_LENGTH = 9
SEQUENTIAL_LEAD = ("Bears", "Cats")
BASELINE_FEATURE_COUNTS = 30
EVAL_BATCH = 2048


class EvaluationError(ValueError):
    """Raised for evaluation requests that cannot be answered."""
    pass


@dataclass
class UnlearnReport:
    targets: List[str]
    ua: float
    ira: float
    cra: float
    average: float
    ua_per_concept: Dict[str, float] = field(default_factory=dict)
    evaluations: int = 1
    multiplier: Optional[float] = None

    def as_dict(self) -> Dict:
        return {
            "targets": list(self.targets),
            "ua": self.ua,
            "ira": self.ira,
            "cra": self.cra,
            "average": self.average,
            "ua_per_concept": dict(self.ua_per_concept),
            "evaluations": self.evaluations,
            "multiplier": self.multiplier,
        }


def _mean_ignoring_nan(values: Sequence[float]) -> float:
    arr = np.asarray(values, dtype=ACCUM_DTYPE)
    arr = arr[~np.isnan(arr)]
    return float(arr.mean()) if arr.size else float("nan")


@dataclass
class SweepPoint:
    multiplier: float
    ua: float
    ira: float
    cra: float
    average: float


@dataclass
class SweepCurve:
    points: List[SweepPoint]
    evaluations: int

    @property
    def multipliers(self) -> List[float]:
        return [p.multiplier for p in self.points]

    def averages(self) -> List[float]:
        return [p.average for p in self.points]

    def spread(self, lo: float = -20.0, hi: float = -5.0) -> float:
        """Best minus worst average over multipliers in [lo, hi]."""
        sel = [p.average for p in self.points if lo <= p.multiplier <= hi]
        return float(max(sel) - min(sel)) if sel else float("nan")


@dataclass
class SequentialTask:
    index: int
    erased: List[str]
    ua: float
    ra: float
    cra: float
    ua_per_concept: Dict[str, float]


@dataclass
class SequentialReport:
    tasks: List[SequentialTask]

    def min_ua(self) -> float:
        return float(min(t.ua for t in self.tasks))

    def final_ra(self) -> float:
        return float(self.tasks[-1].ra)

    def ra_range(self):
        ras = [t.ra for t in self.tasks]
        return float(min(ras)), float(max(ras))


@dataclass
class SearchCost:
    mode: str
    evaluations: int
    baseline_evaluations: int

    @property
    def reduction(self) -> float:
        return 1.0 - self.evaluations / self.baseline_evaluations

    @property
    def reduction_percent(self) -> float:
        return round(100.0 * self.reduction, 2)


def search_cost(
    mode: str = "single-latent",
    num_candidates: int = len(DEFAULT_CANDIDATES),
    feature_counts: int = BASELINE_FEATURE_COUNTS,
) -> SearchCost:
    """
    Evaluations needed to tune one concept.

    A single assigned latent only needs one evaluation per multiplier
    candidate; the multi-latent baseline also searches over how many
    latents to steer.
    """
    baseline = num_candidates * feature_counts
    if mode == "single-latent":
        return SearchCost(mode, num_candidates, baseline)
    if mode == "baseline-grid":
        return SearchCost(mode, baseline, baseline)
    raise EvaluationError(f"unknown search-cost mode '{mode}'")


class UnlearningEvaluator:
    """
    Encodes a dataset once and scores steering plans on it.

    Args:
        model: Trained SAE
        data: Evaluation dataset
        probe_data: Dataset the probes are fit on (defaults to ``data``)
        workers: Threads used for sweeps; results keep candidate order
    """

    def __init__(
        self,
        model: SaeParams,
        data: Dataset,
        probe_data: Optional[Dataset] = None,
        workers: int = 1,
        batch_size: int = EVAL_BATCH,
    ):
        if len(data) == 0:
            raise EvaluationError("evaluation dataset is empty")
        self.model = model
        self.data = data
        self.workers = max(1, int(workers))
        starts = range(0, len(data), batch_size)
        self._chunks = [self._slim(encode_batch(model, data.X[s:s + batch_size])) for s in starts]
        self._bounds = [(s, min(s + batch_size, len(data))) for s in starts]
        self.clean = np.concatenate([c.X_hat for c in self._chunks])

        train = data if probe_data is None else probe_data
        train_recon = self.clean if probe_data is None else self._reconstruct(train)
        self.probes: Dict[str, LinearProbe] = {}
        for domain in DOMAINS:
            try:
                self.probes[domain] = probe_train(train, lambda _d: train_recon, domain=domain)
            except ProbeError as e:
                logger.info(f"no {domain} probe: {e}")
        if not self.probes:
            raise EvaluationError("no domain has enough classes to train a probe")
        self.clean_predictions = {d: p.predict(self.clean) for d, p in self.probes.items()}

    @staticmethod
    def _slim(enc: BatchEncoding) -> BatchEncoding:
        # pre-activations are not needed for steering; keep only the row count
        return BatchEncoding(
            X=enc.X[:, :0],
            C=enc.C[:, :0],
            V=enc.V[:, :0],
            support=enc.support,
            values=enc.values,
            X_hat=enc.X_hat,
        )

    def _reconstruct(self, data: Dataset) -> np.ndarray:
        starts = range(0, len(data), EVAL_BATCH)
        parts = [encode_batch(self.model, data.X[s:s + EVAL_BATCH]).X_hat for s in starts]
        return np.concatenate(parts)

    def probe(self, domain: str) -> LinearProbe:
        if domain not in self.probes:
            raise EvaluationError(f"no trained {domain} probe")
        return self.probes[domain]

    def steered_reconstruction(self, plan: SteeringPlan, active: Sequence[str]) -> np.ndarray:
        """(N, d) reconstructions with ``active`` concepts steered."""
        if not active:
            return self.clean
        parts = []
        for enc, (s, e) in zip(self._chunks, self._bounds):
            parts.append(apply_batch(plan, self.model, enc, self.data.timesteps[s:e], active).X_hat)
        return np.concatenate(parts)

    def domain_of(self, concept: str) -> str:
        try:
            return self.data.concept(concept).domain
        except DatasetError as e:
            raise EvaluationError(f"unknown concept '{concept}': {e}")

    def evaluate(
        self, plan: SteeringPlan, targets: Sequence[str], domain: Optional[str] = None
    ) -> UnlearnReport:
        """
        Steer every concept in ``targets`` at once and score the result.

        With no targets the report describes the clean model: UA is NaN and
        IRA/CRA are the clean accuracies over the whole domain.
        """
        targets = list(dict.fromkeys(targets))
        for c in targets:
            if c not in plan:
                raise EvaluationError(f"target '{c}' is not in the steering plan")
        domains = {self.domain_of(c) for c in targets}
        if len(domains) > 1:
            raise EvaluationError("targets must share one domain")
        domain = domains.pop() if domains else (domain or OBJECT)
        cross = STYLE if domain == OBJECT else OBJECT
        probe = self.probe(domain)

        recon = self.steered_reconstruction(plan, targets)
        labels = self.data.labels_for(domain)
        pred = probe.predict(recon) if targets else self.clean_predictions[domain]

        ua_per: Dict[str, float] = {}
        target_rows = np.zeros(len(self.data), dtype=bool)
        for c in targets:
            rows = self.data.concept_mask(c)
            target_rows |= rows
            ua_per[c] = float(1.0 - np.mean(pred[rows] == labels[rows])) if rows.any() else np.nan
        ua = _mean_ignoring_nan(list(ua_per.values()))
        ira = accuracy_from_predictions(probe, labels, pred, mask=~target_rows).overall

        if cross in self.probes:
            cross_probe = self.probes[cross]
            cross_pred = cross_probe.predict(recon) if targets else self.clean_predictions[cross]
            cross_labels = self.data.labels_for(cross)
            cra = accuracy_from_predictions(cross_probe, cross_labels, cross_pred).overall
        else:
            cra = float("nan")

        return UnlearnReport(
            targets=targets,
            ua=ua,
            ira=ira,
            cra=cra,
            average=_mean_ignoring_nan([ua, ira, cra]),
            ua_per_concept=ua_per,
        )

    def _map(self, fn: Callable, items: Sequence) -> List:
        if self.workers == 1 or len(items) < 2:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            return list(pool.map(fn, items))


def evaluate_unlearning(
    evaluator: UnlearningEvaluator, plan: SteeringPlan, target: str
) -> UnlearnReport:
    """Single-concept erasure: only ``target`` is steered."""
    report = evaluator.evaluate(plan, [target])
    report.multiplier = plan.entries[target].multiplier
    log_record(logger, "unlearn", target=target, ua=report.ua, ira=report.ira, cra=report.cra)
    return report


def clean_report(evaluator: UnlearningEvaluator, target: Optional[str] = None) -> UnlearnReport:
    """No-op plan: UA is 1 - clean accuracy on ``target`` when one is named."""
    if target is None:
        return evaluator.evaluate(SteeringPlan(), [])
    domain = evaluator.domain_of(target)
    probe = evaluator.probe(domain)
    labels = evaluator.data.labels_for(domain)
    pred = evaluator.clean_predictions[domain]
    rows = evaluator.data.concept_mask(target)
    base = evaluator.evaluate(SteeringPlan(), [], domain=domain)
    ua = float(1.0 - np.mean(pred[rows] == labels[rows]))
    ira = accuracy_from_predictions(probe, labels, pred, mask=~rows).overall
    return UnlearnReport(
        targets=[target],
        ua=ua,
        ira=ira,
        cra=base.cra,
        average=_mean_ignoring_nan([ua, ira, base.cra]),
        ua_per_concept={target: ua},
        evaluations=0,
    )


def tune_multipliers(
    evaluator: UnlearningEvaluator,
    template: SteeringPlan,
    candidates: Sequence[float] = DEFAULT_CANDIDATES,
    concepts: Optional[Sequence[str]] = None,
) -> MultiplierSweepResult:
    """Per-concept multiplier search maximizing the average of UA, IRA and CRA."""
    return multiplier_sweep(
        template,
        lambda plan, c: evaluator.evaluate(plan, [c]).average,
        candidates=candidates,
        concepts=concepts,
    )


def uniform_sweep(
    evaluator: UnlearningEvaluator,
    template: SteeringPlan,
    candidates: Sequence[float] = DEFAULT_CANDIDATES,
    concepts: Optional[Sequence[str]] = None,
) -> SweepCurve:
    """
    One curve point per candidate: every concept is erased in turn with the
    same multiplier and the point is the mean report.
    """
    candidates = [float(g) for g in candidates]
    if not candidates:
        raise EvaluationError("uniform sweep needs at least one candidate")
    names = template.concepts() if concepts is None else list(concepts)

    def point(g: float) -> SweepPoint:
        if not names:
            r = clean_report(evaluator)
            return SweepPoint(g, r.ua, r.ira, r.cra, r.average)
        plan = template.with_multipliers(g)
        reports = [evaluator.evaluate(plan, [c]) for c in names]
        return SweepPoint(
            multiplier=g,
            ua=_mean_ignoring_nan([r.ua for r in reports]),
            ira=_mean_ignoring_nan([r.ira for r in reports]),
            cra=_mean_ignoring_nan([r.cra for r in reports]),
            average=_mean_ignoring_nan([r.average for r in reports]),
        )

    points = evaluator._map(point, candidates)
    for p in points:
        log_record(logger, "uniform_sweep", multiplier=p.multiplier, ua=p.ua, ira=p.ira, cra=p.cra)
    return SweepCurve(points=points, evaluations=len(candidates) * max(1, len(names)))


def default_sequential_order(data: Dataset, length: int = SEQUENTIAL_LENGTH) -> List[str]:
    """Bears and Cats first when present, then the remaining objects in vocabulary order."""
    if len(data.object_names) < length:
        raise EvaluationError(
            f"sequential unlearning needs {length} objects, vocabulary has {len(data.object_names)}"
        )
    lead = [c for c in SEQUENTIAL_LEAD if c in data.object_names]
    rest = [c for c in data.object_names if c not in lead]
    return (lead + rest)[:length]


def sequential_unlearning(
    evaluator: UnlearningEvaluator,
    plan: SteeringPlan,
    order: Optional[Sequence[str]] = None,
) -> SequentialReport:
    """
    Task j steers the first j + 1 concepts of ``order`` together.

    UA is averaged over the erased set; RA is same-domain probe accuracy over
    samples of every concept not yet erased.

    Raises:
        EvaluationError: On an unknown, repeated or unplanned concept
    """
    order = default_sequential_order(evaluator.data) if order is None else list(order)
    if not order:
        raise EvaluationError("sequential order is empty")
    if len(set(order)) != len(order):
        raise EvaluationError("sequential order repeats a concept")
    for c in order:
        evaluator.domain_of(c)
        if c not in plan:
            raise EvaluationError(f"concept '{c}' is not in the steering plan")

    def task(j: int) -> SequentialTask:
        r = evaluator.evaluate(plan, order[: j + 1])
        return SequentialTask(
            index=j,
            erased=list(order[: j + 1]),
            ua=r.ua,
            ra=r.ira,
            cra=r.cra,
            ua_per_concept=r.ua_per_concept,
        )

    tasks = evaluator._map(task, list(range(len(order))))
    for t in tasks:
        log_record(logger, "sequential", task=t.index, erased=len(t.erased), ua=t.ua, ra=t.ra)
    return SequentialReport(tasks=tasks)


__all__ = [
    "EvaluationError",
    "UnlearnReport",
    "SweepPoint",
    "SweepCurve",
    "SequentialTask",
    "SequentialReport",
    "SearchCost",
    "UnlearningEvaluator",
    "evaluate_unlearning",
    "clean_report",
    "tune_multipliers",
    "uniform_sweep",
    "sequential_unlearning",
    "default_sequential_order",
    "search_cost",
]
