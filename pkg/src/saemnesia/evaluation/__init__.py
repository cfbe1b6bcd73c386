"""
Unlearning metrics, sweeps and report tables.
"""

from .unlearning import (
    EvaluationError,
    UnlearnReport,
    SweepCurve,
    SweepPoint,
    SequentialReport,
    SequentialTask,
    SearchCost,
    UnlearningEvaluator,
    evaluate_unlearning,
    clean_report,
    tune_multipliers,
    uniform_sweep,
    sequential_unlearning,
    default_sequential_order,
    search_cost,
)

__all__ = [
    "EvaluationError",
    "UnlearnReport",
    "SweepCurve",
    "SweepPoint",
    "SequentialReport",
    "SequentialTask",
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
