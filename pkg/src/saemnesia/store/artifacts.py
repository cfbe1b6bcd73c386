"""
Versioned JSON artifacts: assignments, steering plans, score tables and reports.

Every file is one UTF-8 JSON object with sorted keys and two reserved keys,
``format`` (the artifact kind) and ``version``.
"""

import json
from typing import Any, Dict

import numpy as np

from ..concepts.registry import ConceptAssignment, RegistryError, ScoreTable
from ..concepts.steering import SteeringError, SteeringPlan
from ..data.dataset import Concept
from .binary import atomic_write
from .errors import CorruptArtifactError, StoreError, VersionMismatchError

ARTIFACT_VERSION = 1

ASSIGNMENT = "assignment"
PLAN = "steering_plan"
SCORE_TABLE = "score_table"
REPORT = "report"


def artifact_to_text(kind: str, body: Dict[str, Any]) -> str:
    if "format" in body or "version" in body:
        raise StoreError("artifact body may not use the reserved keys 'format' or 'version'")
    doc = dict(body)
    doc["format"] = kind
    doc["version"] = ARTIFACT_VERSION
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def artifact_from_text(text: str, kind: str, path: str = "") -> Dict[str, Any]:
    """
    Parse an artifact and strip its reserved keys.

    Raises:
        CorruptArtifactError: If the text is not a JSON object of kind ``kind``
        VersionMismatchError: On an unsupported version
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise CorruptArtifactError(f"invalid JSON: {e}", path)
    if not isinstance(doc, dict):
        raise CorruptArtifactError("artifact is not a JSON object", path)
    if doc.get("format") != kind:
        found = doc.get("format")
        raise CorruptArtifactError(f"expected a '{kind}' artifact, found '{found}'", path)
    if doc.get("version") != ARTIFACT_VERSION:
        raise VersionMismatchError(
            f"artifact version {doc.get('version')}, expected {ARTIFACT_VERSION}", path
        )
    return {k: v for k, v in doc.items() if k not in ("format", "version")}


def save_artifact(path: str, kind: str, body: Dict[str, Any]) -> None:
    atomic_write(path, artifact_to_text(kind, body).encode("utf-8"))


def load_artifact(path: str, kind: str) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except (OSError, UnicodeDecodeError) as e:
        raise StoreError(f"cannot read: {e}", path)
    return artifact_from_text(text, kind, path)


def save_assignment(path: str, assignment: ConceptAssignment) -> None:
    save_artifact(path, ASSIGNMENT, assignment.to_dict())


def load_assignment(path: str) -> ConceptAssignment:
    try:
        return ConceptAssignment.from_dict(load_artifact(path, ASSIGNMENT))
    except RegistryError as e:
        raise CorruptArtifactError(str(e), path)


def save_plan(path: str, plan: SteeringPlan) -> None:
    save_artifact(path, PLAN, plan.to_dict())


def load_plan(path: str) -> SteeringPlan:
    try:
        return SteeringPlan.from_dict(load_artifact(path, PLAN))
    except SteeringError as e:
        raise CorruptArtifactError(str(e), path)


def score_table_to_dict(table: ScoreTable) -> Dict[str, Any]:
    return {
        "delta": table.delta,
        "timesteps": [int(t) for t in table.timesteps],
        "concepts": [
            {"name": c.name, "domain": c.domain, "index": c.index} for c in table.concepts
        ],
        "shape": list(table.scores.shape),
        "scores": [float(s) for s in table.scores.reshape(-1)],
    }


def score_table_from_dict(body: Dict[str, Any], path: str = "") -> ScoreTable:
    try:
        shape = tuple(int(s) for s in body["shape"])
        scores = np.asarray(body["scores"], dtype=np.float64).reshape(shape)
        concepts = [Concept(c["name"], c["domain"], int(c["index"])) for c in body["concepts"]]
        timesteps = np.asarray(body["timesteps"], dtype=np.int64)
        delta = float(body["delta"])
    except (KeyError, TypeError, ValueError) as e:
        raise CorruptArtifactError(f"malformed score table: {e}", path)
    if len(shape) != 3 or shape[1] != timesteps.size or shape[2] != len(concepts):
        raise CorruptArtifactError(f"score table shape {shape} disagrees with its labels", path)
    return ScoreTable(scores=scores, timesteps=timesteps, concepts=concepts, delta=delta)


def save_score_table(path: str, table: ScoreTable) -> None:
    save_artifact(path, SCORE_TABLE, score_table_to_dict(table))


def load_score_table(path: str) -> ScoreTable:
    return score_table_from_dict(load_artifact(path, SCORE_TABLE), path)


def save_report(path: str, body: Dict[str, Any]) -> None:
    save_artifact(path, REPORT, body)


def load_report(path: str) -> Dict[str, Any]:
    return load_artifact(path, REPORT)


__all__ = [
    "ARTIFACT_VERSION",
    "artifact_to_text",
    "artifact_from_text",
    "save_artifact",
    "load_artifact",
    "save_assignment",
    "load_assignment",
    "save_plan",
    "load_plan",
    "score_table_to_dict",
    "score_table_from_dict",
    "save_score_table",
    "load_score_table",
    "save_report",
    "load_report",
]
