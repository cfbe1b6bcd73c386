"""
Tab-separated tables for external plotting, plus JSON report bodies.
"""

import csv
import io
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence

from ..concepts.registry import (
    CentralizationRow,
    ConceptAssignment,
    ScoreTable,
    centralization_report,
)
from ..concepts.steering import MultiplierSweepResult, multiplier_summary
from ..store.binary import atomic_write
from .unlearning import SequentialReport, SweepCurve, UnlearnReport


def _fmt(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def to_tsv(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter="\t", lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def write_tsv(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    atomic_write(path, to_tsv(header, rows).encode("utf-8"))


def score_histogram_rows(
    table: ScoreTable,
    assignment: Optional[ConceptAssignment] = None,
    concepts: Optional[Sequence[str]] = None,
    t_select: str = "mean",
) -> List[List[Any]]:
    """One row per (concept, latent) with the aggregate score."""
    names = table.concept_names() if concepts is None else list(concepts)
    rows: List[List[Any]] = []
    for name in names:
        agg = table.aggregate(name, t_select)
        assigned = assignment.latent(name) if assignment is not None and name in assignment else -1
        for i, s in enumerate(agg):
            rows.append([name, i, float(s), int(i == assigned)])
    return rows


HISTOGRAM_HEADER = ("concept", "latent", "score", "assigned")
CENTRALIZATION_HEADER = (
    "concept",
    "assigned_latent",
    "top_latent",
    "top_score",
    "runner_up_score",
    "ratio",
    "dominant",
)


def centralization_rows(rows: Sequence[CentralizationRow]) -> List[List[Any]]:
    return [
        [
            r.concept,
            r.assigned_latent,
            r.top_latent,
            r.top_score,
            r.runner_up_score,
            r.ratio,
            int(r.dominant),
        ]
        for r in rows
    ]


def write_score_histograms(
    prefix: str,
    table: ScoreTable,
    assignment: ConceptAssignment,
    margin: float,
    t_select: str = "mean",
) -> List[str]:
    """Writes ``<prefix>.scores.tsv`` and ``<prefix>.centralization.tsv``."""
    hist = f"{prefix}.scores.tsv"
    cent = f"{prefix}.centralization.tsv"
    write_tsv(hist, HISTOGRAM_HEADER, score_histogram_rows(table, assignment, t_select=t_select))
    report = centralization_report(table, assignment, margin=margin, t_select=t_select)
    write_tsv(cent, CENTRALIZATION_HEADER, centralization_rows(report))
    return [hist, cent]


SWEEP_HEADER = ("multiplier", "ua", "ira", "cra", "average")


def sweep_rows(curve: SweepCurve) -> List[List[Any]]:
    return [[p.multiplier, p.ua, p.ira, p.cra, p.average] for p in curve.points]


SEQUENTIAL_HEADER = ("task", "erased", "num_erased", "ua", "ra", "cra")


def sequential_rows(report: SequentialReport) -> List[List[Any]]:
    return [[t.index, "+".join(t.erased), len(t.erased), t.ua, t.ra, t.cra] for t in report.tasks]


MULTIPLIER_HEADER = ("concept", "multiplier")


def multiplier_rows(multipliers: Mapping[str, float]) -> List[List[Any]]:
    """Per-concept rows followed by ``mean`` and ``std`` summary rows."""
    mean, std = multiplier_summary(multipliers)
    rows = [[c, float(g)] for c, g in multipliers.items()]
    rows.append(["mean", mean])
    rows.append(["std", std])
    return rows


def sweep_result_rows(result: MultiplierSweepResult) -> List[List[Any]]:
    return [
        [c, g, metric, int(g == result.best[c])]
        for c, rows in result.table.items()
        for g, metric in rows
    ]


SWEEP_RESULT_HEADER = ("concept", "multiplier", "metric", "selected")


def unlearn_summary(reports: Sequence[UnlearnReport]) -> Dict[str, Any]:
    """Mean UA, IRA, CRA and average over single-concept reports."""
    if not reports:
        return {"count": 0}
    n = len(reports)
    return {
        "count": n,
        "ua": sum(r.ua for r in reports) / n,
        "ira": sum(r.ira for r in reports) / n,
        "cra": sum(r.cra for r in reports) / n,
        "average": sum(r.average for r in reports) / n,
        "evaluations": sum(r.evaluations for r in reports),
    }


__all__ = [
    "to_tsv",
    "write_tsv",
    "score_histogram_rows",
    "centralization_rows",
    "write_score_histograms",
    "sweep_rows",
    "sequential_rows",
    "multiplier_rows",
    "sweep_result_rows",
    "unlearn_summary",
    "HISTOGRAM_HEADER",
    "CENTRALIZATION_HEADER",
    "SWEEP_HEADER",
    "SEQUENTIAL_HEADER",
    "MULTIPLIER_HEADER",
    "SWEEP_RESULT_HEADER",
]
