"""
One-vs-rest least-squares linear probes.

A probe maps a representation of each sample (raw activations, or an SAE
reconstruction, steered or not) to one concept of a single domain.
"""

from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np

from ..core.numerics import ACCUM_DTYPE
from .dataset import OBJECT, Dataset

Representation = Callable[[Dataset], np.ndarray]

DEFAULT_RIDGE = 1e-6


class ProbeError(ValueError):
    """Raised for degenerate probe training or evaluation input."""
    pass


def raw_representation(data: Dataset) -> np.ndarray:
    return data.X


@dataclass
class LinearProbe:
    domain: str
    class_names: list  # full vocabulary of the domain
    classes: np.ndarray  # vocabulary ids seen in training, one per output column
    weights: np.ndarray  # (r + 1, K), last row is the bias

    def scores(self, R: np.ndarray) -> np.ndarray:
        R = np.asarray(R, dtype=ACCUM_DTYPE)
        return R @ self.weights[:-1] + self.weights[-1]

    def predict(self, R: np.ndarray) -> np.ndarray:
        """Predicted vocabulary ids."""
        return self.classes[np.argmax(self.scores(R), axis=1)]


@dataclass
class ProbeAccuracy:
    per_concept: Dict[str, float]
    macro: float
    overall: float

    def as_dict(self) -> Dict:
        return {"per_concept": dict(self.per_concept), "macro": self.macro, "overall": self.overall}


def probe_train(
    data: Dataset,
    representation: Representation = raw_representation,
    domain: str = OBJECT,
    ridge: float = DEFAULT_RIDGE,
) -> LinearProbe:
    """
    Fit one least-squares regressor per class onto one-hot targets.

    Raises:
        ProbeError: If fewer than two classes are labeled
    """
    labels = data.labels_for(domain)
    rows = np.flatnonzero(labels >= 0)
    classes = np.unique(labels[rows])
    if classes.size < 2:
        raise ProbeError(f"probe needs at least 2 {domain} classes, found {classes.size}")
    R = np.asarray(representation(data), dtype=ACCUM_DTYPE)[rows]
    A = np.hstack([R, np.ones((R.shape[0], 1))])
    Y = (labels[rows][:, None] == classes[None, :]).astype(ACCUM_DTYPE)
    gram = A.T @ A + ridge * np.eye(A.shape[1])
    W = np.linalg.solve(gram, A.T @ Y)
    names = data.object_names if domain == OBJECT else data.style_names
    return LinearProbe(domain=domain, class_names=list(names), classes=classes, weights=W)


def accuracy_from_predictions(
    probe: LinearProbe,
    labels: np.ndarray,
    predicted: np.ndarray,
    mask: Optional[np.ndarray] = None,
) -> ProbeAccuracy:
    """Per-concept, macro and overall accuracy over labeled rows selected by mask."""
    keep = labels >= 0
    if mask is not None:
        keep &= mask
    per: Dict[str, float] = {}
    for c in np.unique(labels[keep]):
        sel = keep & (labels == c)
        per[probe.class_names[int(c)]] = float(np.mean(predicted[sel] == c))
    overall = float(np.mean(predicted[keep] == labels[keep])) if keep.any() else float("nan")
    macro = float(np.mean(list(per.values()))) if per else float("nan")
    return ProbeAccuracy(per_concept=per, macro=macro, overall=overall)


def probe_eval(
    probe: LinearProbe,
    data: Dataset,
    representation: Representation = raw_representation,
) -> ProbeAccuracy:
    """Accuracy per concept and macro average on the probe's domain."""
    labels = data.labels_for(probe.domain)
    if not np.any(labels >= 0):
        raise ProbeError(f"no {probe.domain}-labeled samples to evaluate")
    predicted = probe.predict(representation(data))
    return accuracy_from_predictions(probe, labels, predicted)


__all__ = [
    "ProbeError",
    "LinearProbe",
    "ProbeAccuracy",
    "Representation",
    "raw_representation",
    "probe_train",
    "probe_eval",
    "accuracy_from_predictions",
]
