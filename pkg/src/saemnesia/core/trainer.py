"""
Two-phase training: unsupervised TopK SAE pretraining, then supervised
fine-tuning that binds every concept to its assigned latent.
"""

import json
import os
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .losses import (
    SUPERVISION_MODES,
    Batch,
    Gradients,
    LossReport,
    LossWeights,
    total_loss_and_grads,
)
from .numerics import ACCUM_DTYPE, make_rng
from .sae_model import (
    DEFAULT_DEAD_WINDOW,
    DeadLatentTracker,
    SaeParams,
    encode_batch,
    init_params,
    update_dead_tracker_batch,
)
from ..concepts.registry import ConceptAssignment, assign, score_model
from ..data.dataset import OBJECT, STYLE, Dataset
from ..utils.log import get_logger

logger = get_logger()

UNSUPERVISED = "unsupervised"
SUPERVISED = "supervised"
PHASES = (UNSUPERVISED, SUPERVISED)
LABEL_DOMAINS = ("objects", "objects+styles")
SCHEDULES = ("finetune", "from_scratch")

# Stream ids keep the two phases' shuffles independent under one seed
_PHASE_STREAM = {UNSUPERVISED: 1, SUPERVISED: 2}


class TrainingError(RuntimeError):
    """Base exception for training failures."""
    pass


class TrainingDivergenceError(TrainingError):
    """Raised when a loss becomes NaN or infinite."""

    def __init__(self, phase: str, epoch: int, step: int, report: LossReport):
        self.phase = phase
        self.epoch = epoch
        self.step = step
        self.report = report
        super().__init__(
            f"{phase} training diverged at epoch {epoch}, step {step}: {report.as_dict()}"
        )


@dataclass
class TrainConfig:
    phase: str = UNSUPERVISED
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weights: LossWeights = field(default_factory=LossWeights.unsupervised)
    dead_window: int = DEFAULT_DEAD_WINDOW
    seed: int = 0
    grad_clip: float = 1.0
    supervision: str = "ca"
    label_domains: str = "objects+styles"
    log_path: Optional[str] = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        """
        Raises:
            TrainingError: If any field is out of range
        """
        if self.phase not in PHASES:
            raise TrainingError(f"unknown phase '{self.phase}'")
        if self.epochs < 0:
            raise TrainingError("epochs must be >= 0")
        if self.batch_size < 1:
            raise TrainingError("batch_size must be >= 1")
        if self.phase == SUPERVISED and self.weights.gamma > 0 and self.batch_size < 2:
            raise TrainingError("batch_size must be >= 2 when the orthogonality loss is active")
        if not self.learning_rate > 0:
            raise TrainingError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise TrainingError("invalid optimizer hyperparameters")
        if self.dead_window < 1:
            raise TrainingError("dead_window must be >= 1")
        if self.supervision not in SUPERVISION_MODES:
            raise TrainingError(f"unknown supervision '{self.supervision}'")
        if self.label_domains not in LABEL_DOMAINS:
            raise TrainingError(f"unknown label domains '{self.label_domains}'")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise TrainingError("grad_clip must be positive or None")

    @classmethod
    def unsupervised(cls, **overrides) -> "TrainConfig":
        base = dict(phase=UNSUPERVISED, learning_rate=1e-3, weights=LossWeights.unsupervised())
        base.update(overrides)
        return cls(**base)

    @classmethod
    def supervised(cls, **overrides) -> "TrainConfig":
        base = dict(phase=SUPERVISED, epochs=100, learning_rate=3e-4, weights=LossWeights())
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(
        cls, phase: str, data: Dict, loss: Optional[Dict] = None, seed: int = 0
    ) -> "TrainConfig":
        """Build from a ``train.<phase>`` config section plus the ``loss`` section."""
        loss = loss or {}
        weights = (
            LossWeights.unsupervised(alpha=float(loss.get("alpha", 1.0 / 32.0)))
            if phase == UNSUPERVISED
            else LossWeights.from_dict(loss)
        )
        return cls(
            phase=phase,
            epochs=int(data["epochs"]),
            batch_size=int(data["batch_size"]),
            learning_rate=float(data["learning_rate"]),
            beta1=float(data.get("beta1", 0.9)),
            beta2=float(data.get("beta2", 0.999)),
            eps=float(data.get("eps", 1e-8)),
            weights=weights,
            dead_window=int(data.get("dead_window", DEFAULT_DEAD_WINDOW)),
            seed=seed,
            grad_clip=None if data.get("grad_clip") is None else float(data["grad_clip"]),
            supervision=data.get("supervision", "ca"),
            label_domains=data.get("label_domains", "objects+styles"),
            log_path=data.get("log_path"),
        )

    def to_dict(self) -> Dict:
        return {
            "phase": self.phase,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "weights": self.weights.to_dict(),
            "dead_window": self.dead_window,
            "seed": self.seed,
            "grad_clip": self.grad_clip,
            "supervision": self.supervision,
            "label_domains": self.label_domains,
        }


@dataclass
class OptState:
    """Adam first/second moments, shaped like SaeParams."""

    m: Gradients
    v: Gradients
    step: int = 0

    @classmethod
    def fresh(cls, p: SaeParams) -> "OptState":
        return cls(m=Gradients.zeros_like(p), v=Gradients.zeros_like(p), step=0)


def project_decoder_grad(p: SaeParams, grads: Gradients) -> None:
    """Remove the gradient component parallel to each unit decoder column."""
    W = p.W_dec.astype(ACCUM_DTYPE)
    parallel = np.sum(grads.W_dec * W, axis=0, keepdims=True)
    grads.W_dec = grads.W_dec - parallel * W


def adam_step(p: SaeParams, grads: Gradients, state: OptState, cfg: TrainConfig) -> None:
    """One in-place adaptive-moment update followed by decoder renormalization."""
    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    correction1 = 1.0 - b1 ** state.step
    correction2 = 1.0 - b2 ** state.step
    for (name, g), (_, m), (_, v) in zip(grads.items(), state.m.items(), state.v.items()):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = cfg.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + cfg.eps)
        param = getattr(p, name)
        setattr(p, name, (param.astype(ACCUM_DTYPE) - update).astype(param.dtype))
    p.normalize_decoder()


@dataclass
class EpochRecord:
    phase: str
    epoch: int
    losses: LossReport
    dead: int
    steps: int

    def as_dict(self) -> Dict:
        out = {"phase": self.phase, "epoch": self.epoch, "dead": self.dead, "steps": self.steps}
        out.update(self.losses.as_dict())
        return out


@dataclass
class TrainingLog:
    records: List[EpochRecord] = field(default_factory=list)

    def totals(self) -> List[float]:
        return [r.losses.total for r in self.records]

    def series(self, term: str) -> List[float]:
        return [getattr(r.losses, term) for r in self.records]

    def extend(self, other: "TrainingLog") -> None:
        self.records.extend(other.records)

    def write_jsonl(self, path: str) -> None:
        with open(path, "a") as f:
            for r in self.records:
                f.write(json.dumps(r.as_dict(), sort_keys=True) + "\n")


class SupervisionTargets:
    """Per-sample target latents derived once from a dataset and an assignment."""

    def __init__(
        self, data: Dataset, assignment: ConceptAssignment, label_domains: str = "objects+styles"
    ):
        if not isinstance(assignment, ConceptAssignment):
            raise TrainingError("supervised training needs a ConceptAssignment")
        use_styles = label_domains == "objects+styles"
        self.object_latent = _latent_lookup(data.object_ids, data.object_names, assignment)
        if use_styles:
            self.style_latent = _latent_lookup(data.style_ids, data.style_names, assignment)
        else:
            self.style_latent = np.full(len(data), -1, dtype=np.int64)

        self.O = assignment.object_latents()
        S = assignment.style_latents() if use_styles else np.zeros(0, dtype=np.int64)
        clash = np.intersect1d(self.O, S)
        if clash.size:
            logger.warning(
                f"latents {clash.tolist()} are assigned to both an object and a style; "
                "they are left out of the orthogonality loss"
            )
        self.S = np.setdiff1d(S, clash)
        self.O = np.setdiff1d(self.O, clash)

    def batch(self, X: np.ndarray, index: np.ndarray, timesteps: np.ndarray) -> Batch:
        pairs = ((self.object_latent[i], self.style_latent[i]) for i in index)
        targets = [np.asarray([t for t in pair if t >= 0], dtype=np.int64) for pair in pairs]
        return Batch(
            X=X,
            targets=targets,
            object_latents=self.O,
            style_latents=self.S,
            timesteps=timesteps,
            class_latent=self.object_latent[index],
        )


def _latent_lookup(ids: np.ndarray, names: List[str], assignment) -> np.ndarray:
    """Map each sample's label id to its assigned latent, -1 if unlabeled or unassigned."""
    table = np.asarray([assignment.phi.get(name, -1) for name in names] + [-1], dtype=np.int64)
    return table[np.where(ids >= 0, ids, len(names))]


def train_phase(
    p: SaeParams,
    data: Dataset,
    cfg: TrainConfig,
    assignment=None,
    on_epoch: Optional[Callable[[EpochRecord, SaeParams], None]] = None,
) -> Tuple[SaeParams, TrainingLog]:
    """
    Run one phase of mini-batch training on a copy of ``p``.

    Args:
        p: Starting parameters (not modified)
        data: Training data; its width must equal p.d
        cfg: Phase configuration
        assignment: ConceptAssignment, required for the supervised phase
        on_epoch: Called after each epoch with the record and a read-only snapshot

    Returns:
        Tuple of (trained parameters, training log)

    Raises:
        TrainingError: On bad inputs
        TrainingDivergenceError: If the total loss becomes non-finite
    """
    if data.d != p.d:
        raise TrainingError(f"data width {data.d} does not match model d={p.d}")
    if cfg.phase == SUPERVISED and assignment is None:
        raise TrainingError("the supervised phase requires a concept assignment")

    params = p.copy()
    log = TrainingLog()
    if cfg.epochs == 0 or len(data) == 0:
        return params, log

    if cfg.phase == SUPERVISED:
        targets = SupervisionTargets(data, assignment, cfg.label_domains)
        weights = cfg.weights
    else:
        targets = None
        weights = replace(cfg.weights, beta=0.0, lambda_=0.0)
    state = OptState.fresh(params)
    tracker = DeadLatentTracker.fresh(params.n, cfg.dead_window)
    N = len(data)

    logger.info(
        f"{cfg.phase} phase: {cfg.epochs} epochs, {N} samples, batch {cfg.batch_size}, "
        f"lr {cfg.learning_rate}, weights {weights.to_dict()}"
    )
    for epoch in range(cfg.epochs):
        order = make_rng(cfg.seed, _PHASE_STREAM[cfg.phase], epoch).permutation(N)
        reports: List[LossReport] = []
        for step, start in enumerate(range(0, N, cfg.batch_size)):
            index = np.sort(order[start:start + cfg.batch_size])
            X = data.X[index]
            if targets is not None:
                batch = targets.batch(X, index, data.timesteps[index])
            else:
                batch = Batch(X=X, timesteps=data.timesteps[index])
            enc = encode_batch(params, batch.X)
            report, grads = total_loss_and_grads(
                params, batch, weights, tracker.dead(), cfg.supervision, enc=enc
            )
            if not report.is_finite():
                raise TrainingDivergenceError(cfg.phase, epoch, step, report)
            tracker = update_dead_tracker_batch(tracker, enc.support, enc.values)

            project_decoder_grad(params, grads)
            if cfg.grad_clip is not None:
                norm = grads.global_norm()
                if norm > cfg.grad_clip:
                    grads.scale(cfg.grad_clip / norm)
            adam_step(params, grads, state, cfg)
            reports.append(report)

        record = EpochRecord(
            phase=cfg.phase,
            epoch=epoch,
            losses=LossReport.mean(reports),
            dead=tracker.num_dead(),
            steps=len(reports),
        )
        log.records.append(record)
        logger.info(
            f"{cfg.phase} epoch {epoch}: total={record.losses.total:.6f} "
            f"recon={record.losses.recon:.6f} ca={record.losses.ca:.6f} "
            f"oc={record.losses.oc:.6f} dead={record.dead}"
        )
        if on_epoch is not None:
            on_epoch(record, params.copy())

    if cfg.log_path:
        os.makedirs(os.path.dirname(os.path.abspath(cfg.log_path)), exist_ok=True)
        log.write_jsonl(cfg.log_path)
    return params, log


@dataclass
class ModelConfig:
    n: int = 1024
    k: int = 8
    k_aux: int = 32
    seed: int = 0

    @classmethod
    def from_dict(cls, data: Dict, seed: int = 0) -> "ModelConfig":
        return cls(n=int(data["n"]), k=int(data["k"]), k_aux=int(data["k_aux"]), seed=seed)


@dataclass
class PipelineResult:
    params: SaeParams
    assignment: ConceptAssignment
    logs: TrainingLog
    pretrained: SaeParams


def assignment_domains(label_domains: str) -> Tuple[str, ...]:
    return (OBJECT, STYLE) if label_domains == "objects+styles" else (OBJECT,)


def run_pipeline(
    data: Dataset,
    cfg_unsup: TrainConfig,
    cfg_sup: TrainConfig,
    model_cfg: Optional[ModelConfig] = None,
    schedule: str = "finetune",
    unique: bool = True,
    t_select: str = "mean",
    init: Optional[SaeParams] = None,
) -> PipelineResult:
    """
    Pretrain, assign concepts from the pretrained model, then fine-tune.

    With ``schedule="from_scratch"`` the unsupervised phase is skipped and the
    assignment is computed on the freshly initialized model. The assignment is
    frozen for the whole supervised phase.
    """
    if schedule not in SCHEDULES:
        raise TrainingError(f"unknown schedule '{schedule}'")
    if not data.object_names:
        raise TrainingError("the pipeline needs a labeled dataset")
    model_cfg = model_cfg or ModelConfig()
    if init is None:
        init = init_params(
            data.d,
            model_cfg.n,
            model_cfg.k,
            model_cfg.k_aux,
            data.mean(),
            make_rng(model_cfg.seed, 0),
        )

    logs = TrainingLog()
    if schedule == "finetune":
        pretrained, log_unsup = train_phase(init, data, cfg_unsup)
        logs.extend(log_unsup)
    else:
        pretrained = init.copy()

    concepts = data.concepts(assignment_domains(cfg_sup.label_domains))
    _, table = score_model(pretrained, data, concepts)
    assignment = assign(table, t_select=t_select, unique=unique)
    logger.info(f"assigned {len(assignment)} concepts to latents {sorted(assignment.phi.values())}")

    final, log_sup = train_phase(pretrained, data, cfg_sup, assignment)
    logs.extend(log_sup)
    return PipelineResult(params=final, assignment=assignment, logs=logs, pretrained=pretrained)


__all__ = [
    "TrainingError",
    "TrainingDivergenceError",
    "TrainConfig",
    "OptState",
    "EpochRecord",
    "TrainingLog",
    "ModelConfig",
    "PipelineResult",
    "SupervisionTargets",
    "adam_step",
    "train_phase",
    "run_pipeline",
    "UNSUPERVISED",
    "SUPERVISED",
]
