"""
Subcommand implementations for the SAEmnesia CLI.

Each command reads and writes only the files it is given and returns a
small summary dict that the CLI prints as JSON.
"""

import json
import os
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence

from ...concepts.registry import (
    ConceptAssignment,
    assign,
    centralization_report,
    compute_stats,
    score_model,
)
from ...concepts.steering import (
    MultiplierSweepResult,
    build_plan,
    multiplier_summary,
    preset_multipliers,
)
from ...core.config import ConfigManager
from ...core.numerics import make_rng
from ...core.sae_model import init_params
from ...core.trainer import (
    SUPERVISED,
    UNSUPERVISED,
    TrainConfig,
    assignment_domains,
    run_pipeline,
    train_phase,
)
from ...data.dataset import OBJECT, STYLE, Dataset
from ...data.synth_activations import generate
from ...evaluation import reports
from ...evaluation.unlearning import (
    UnlearningEvaluator,
    evaluate_unlearning,
    search_cost,
    sequential_unlearning,
    tune_multipliers,
    uniform_sweep,
)
from ...store import (
    Checkpoint,
    load_artifact,
    load_assignment,
    load_checkpoint,
    load_dataset,
    load_plan,
    save_assignment,
    save_checkpoint,
    save_dataset,
    save_plan,
    save_report,
    save_score_table,
)
from ...store.binary import CHECKPOINT_MAGIC, DATASET_MAGIC, unpack
from ...utils.log import get_logger

logger = get_logger()

PHASE_ALIASES = {"unsup": UNSUPERVISED, "sup": SUPERVISED, "pipeline": "pipeline"}


@dataclass
class CommandContext:
    """What every subcommand receives: validated config, seed and output path."""

    config: ConfigManager
    seed: int
    out: Optional[str] = None

    def require_out(self, command: str) -> str:
        if not self.out:
            raise ValueError(f"{command} needs --out")
        return self.out


def sibling(path: str, suffix: str) -> str:
    """``run/m.saem`` + ``.assignment.json`` -> ``run/m.assignment.json``."""
    stem, _ = os.path.splitext(path)
    return stem + suffix


def _checkpoint_meta(
    ctx: CommandContext, phases: List[str], cfg: Optional[TrainConfig]
) -> Dict[str, Any]:
    meta: Dict[str, Any] = {"seed": ctx.seed, "provenance": phases, "config": ctx.config.resolved()}
    if cfg is not None:
        meta["phase"] = cfg.phase
        meta["weights"] = cfg.weights.to_dict()
    return meta


def _fresh_log(path: str) -> str:
    if os.path.exists(path):
        os.remove(path)
    return path


def gen_data(ctx: CommandContext) -> Dict[str, Any]:
    out = ctx.require_out("gen-data")
    spec = ctx.config.synth_spec(seed=ctx.seed)
    data = generate(spec)
    save_dataset(out, data)
    return {"out": out, "samples": len(data), "d": data.d, "timesteps": data.num_timesteps}


def train(
    ctx: CommandContext,
    phase: str,
    data_path: str,
    init_path: Optional[str] = None,
    assignment_path: Optional[str] = None,
) -> Dict[str, Any]:
    """
    Train one phase, or the full two-phase pipeline.

    The pipeline writes the final checkpoint to --out plus, next to it, the
    pretrained checkpoint, the assignment and the JSON-lines training log.
    """
    out = ctx.require_out("train")
    phase = PHASE_ALIASES.get(phase, phase)
    data = load_dataset(data_path)
    log_path = _fresh_log(sibling(out, ".log.jsonl"))
    model_cfg = ctx.config.model_config()
    init = load_checkpoint(init_path).params if init_path else None
    written = [out, log_path]

    if phase == "pipeline":
        cfg_unsup = ctx.config.train_config(UNSUPERVISED, log_path)
        cfg_sup = ctx.config.train_config(SUPERVISED, log_path)
        schedule = ctx.config.get("train.schedule")
        result = run_pipeline(
            data,
            cfg_unsup,
            cfg_sup,
            model_cfg,
            schedule=schedule,
            unique=ctx.config.get("assignment.unique"),
            t_select=ctx.config.get("assignment.t_select"),
            init=init,
        )
        phases = [UNSUPERVISED, SUPERVISED] if schedule == "finetune" else [SUPERVISED]
        pre_path = sibling(out, ".pretrained.saem")
        pre_meta = _checkpoint_meta(ctx, phases[:-1], cfg_unsup)
        save_checkpoint(pre_path, Checkpoint(result.pretrained, pre_meta))
        save_checkpoint(out, Checkpoint(result.params, _checkpoint_meta(ctx, phases, cfg_sup)))
        assignment_out = sibling(out, ".assignment.json")
        save_assignment(assignment_out, result.assignment)
        written += [pre_path, assignment_out]
        return {
            "written": written,
            "assigned": len(result.assignment),
            "epochs": len(result.logs.records),
        }

    if phase not in (UNSUPERVISED, SUPERVISED):
        raise ValueError(f"unknown phase '{phase}', expected unsup, sup or pipeline")
    cfg = ctx.config.train_config(phase, log_path)
    if init is None:
        if phase == SUPERVISED:
            raise ValueError("the supervised phase needs --init")
        init = init_params(
            data.d, model_cfg.n, model_cfg.k, model_cfg.k_aux, data.mean(), make_rng(ctx.seed, 0)
        )
    assignment = None
    if phase == SUPERVISED:
        if assignment_path:
            assignment = load_assignment(assignment_path)
        else:
            assignment = _assign(ctx, init, data, assignment_domains(cfg.label_domains))
            assignment_out = sibling(out, ".assignment.json")
            save_assignment(assignment_out, assignment)
            written.append(assignment_out)
    params, log = train_phase(init, data, cfg, assignment)
    save_checkpoint(out, Checkpoint(params, _checkpoint_meta(ctx, [phase], cfg)))
    return {"written": written, "epochs": len(log.records)}


def _assign(
    ctx: CommandContext, model, data: Dataset, domains: Sequence[str] = (OBJECT, STYLE)
) -> ConceptAssignment:
    delta = float(ctx.config.get("assignment.delta"))
    _, table = score_model(model, data, data.concepts(domains), delta=delta)
    return assign(
        table,
        t_select=ctx.config.get("assignment.t_select"),
        unique=ctx.config.get("assignment.unique"),
    )


def score(
    ctx: CommandContext, model_path: str, data_path: str, assignment_path: Optional[str] = None
) -> Dict[str, Any]:
    """Score table as JSON plus per-concept score histograms and centralization rows."""
    out = ctx.require_out("score")
    model = load_checkpoint(model_path).params
    data = load_dataset(data_path)
    _, table = score_model(model, data, delta=float(ctx.config.get("assignment.delta")))
    t_select = ctx.config.get("assignment.t_select")
    if assignment_path:
        assignment = load_assignment(assignment_path)
    else:
        assignment = assign(table, t_select=t_select, unique=ctx.config.get("assignment.unique"))
    save_score_table(out, table)
    margin = float(ctx.config.get("assignment.margin"))
    histograms = reports.write_score_histograms(
        sibling(out, ""), table, assignment, margin, t_select
    )
    written = [out] + histograms
    rows = centralization_report(table, assignment, margin=margin, t_select=t_select)
    dominant = sum(r.dominant for r in rows) / len(rows) if rows else 0.0
    return {"written": written, "concepts": len(rows), "dominant_fraction": dominant}


def assign_cmd(ctx: CommandContext, model_path: str, data_path: str) -> Dict[str, Any]:
    out = ctx.require_out("assign")
    model = load_checkpoint(model_path).params
    data = load_dataset(data_path)
    domains = assignment_domains(ctx.config.get("train.supervised.label_domains"))
    assignment = _assign(ctx, model, data, domains)
    save_assignment(out, assignment)
    return {"written": [out], "assigned": len(assignment), "injective": assignment.is_injective()}


def _plan_multipliers(
    ctx: CommandContext, concepts: List[str], multiplier: Optional[float], preset: Optional[str]
):
    preset = preset or ctx.config.get("steering.preset")
    fallback = float(ctx.config.get("steering.multiplier"))
    if multiplier is not None:
        return float(multiplier)
    if preset:
        return preset_multipliers(preset, concepts, fallback=fallback)
    return fallback


def steer(
    ctx: CommandContext,
    model_path: str,
    data_path: str,
    assignment_path: str,
    concepts: Optional[List[str]] = None,
    multiplier: Optional[float] = None,
    preset: Optional[str] = None,
) -> Dict[str, Any]:
    """Build a steering plan; concepts default to every assigned object."""
    out = ctx.require_out("steer")
    model = load_checkpoint(model_path).params
    data = load_dataset(data_path)
    assignment = load_assignment(assignment_path)
    concepts = concepts or assignment.concepts(OBJECT)
    stats = compute_stats(model, data, data.concepts())
    multipliers = _plan_multipliers(ctx, concepts, multiplier, preset)
    plan = build_plan(model, stats, assignment, concepts, multipliers)
    save_plan(out, plan)
    mean, std = multiplier_summary(plan.multipliers())
    return {"written": [out], "concepts": len(plan), "multiplier_mean": mean, "multiplier_std": std}


def _evaluator(ctx: CommandContext, model_path: str, data_path: str) -> UnlearningEvaluator:
    model = load_checkpoint(model_path).params
    data = load_dataset(data_path)
    fraction = float(ctx.config.get("evaluation.heldout_fraction"))
    workers = int(ctx.config.get("evaluation.workers"))
    if fraction > 0:
        train_part, heldout = data.split(fraction, ctx.seed)
        return UnlearningEvaluator(model, heldout, probe_data=train_part, workers=workers)
    return UnlearningEvaluator(model, data, workers=workers)


def sweep(
    ctx: CommandContext, model_path: str, data_path: str, plan_path: str, uniform: bool = False
) -> Dict[str, Any]:
    """
    Per-concept multiplier search (writes the tuned plan), or with ``uniform``
    the curve of one shared multiplier for every concept.
    """
    out = ctx.require_out("sweep")
    evaluator = _evaluator(ctx, model_path, data_path)
    plan = load_plan(plan_path)
    candidates = [float(g) for g in ctx.config.get("steering.candidates")]
    table_path = sibling(out, ".tsv")

    if uniform:
        curve = uniform_sweep(evaluator, plan, candidates)
        reports.write_tsv(table_path, reports.SWEEP_HEADER, reports.sweep_rows(curve))
        body = {
            "kind": "uniform_sweep",
            "points": [vars(p) for p in curve.points],
            "evaluations": curve.evaluations,
            "spread": curve.spread(),
        }
        save_report(out, body)
        return {"written": [out, table_path], "evaluations": curve.evaluations}

    result: MultiplierSweepResult = tune_multipliers(evaluator, plan, candidates)
    tuned = result.best_plan(plan)
    plan_out = sibling(out, ".plan.json")
    save_plan(plan_out, tuned)
    reports.write_tsv(table_path, reports.SWEEP_RESULT_HEADER, reports.sweep_result_rows(result))
    cost = search_cost("single-latent", num_candidates=len(candidates))
    baseline = search_cost("baseline-grid", num_candidates=len(candidates))
    mean, std = multiplier_summary(result.best)
    body = {
        "kind": "multiplier_sweep",
        "best": result.best,
        "evaluations": result.evaluations,
        "evaluations_per_concept": cost.evaluations,
        "baseline_evaluations_per_concept": baseline.evaluations,
        "reduction_percent": cost.reduction_percent,
        "multiplier_mean": mean,
        "multiplier_std": std,
    }
    save_report(out, body)
    return {"written": [out, plan_out, table_path], "evaluations": result.evaluations}


def evaluate(
    ctx: CommandContext,
    model_path: str,
    data_path: str,
    plan_path: str,
    targets: Optional[List[str]] = None,
) -> Dict[str, Any]:
    """One single-concept UnlearnReport per target plus their mean."""
    out = ctx.require_out("eval")
    evaluator = _evaluator(ctx, model_path, data_path)
    plan = load_plan(plan_path)
    targets = targets or plan.concepts()
    results = [evaluate_unlearning(evaluator, plan, c) for c in targets]
    body = {
        "kind": "unlearn",
        "reports": [r.as_dict() for r in results],
        "summary": reports.unlearn_summary(results),
    }
    save_report(out, body)
    return {"written": [out], **body["summary"]}


def seq_eval(
    ctx: CommandContext,
    model_path: str,
    data_path: str,
    plan_path: str,
    order: Optional[List[str]] = None,
) -> Dict[str, Any]:
    out = ctx.require_out("seq-eval")
    evaluator = _evaluator(ctx, model_path, data_path)
    plan = load_plan(plan_path)
    order = order or ctx.config.get("evaluation.sequential_order")
    report = sequential_unlearning(evaluator, plan, order)
    table_path = sibling(out, ".tsv")
    reports.write_tsv(table_path, reports.SEQUENTIAL_HEADER, reports.sequential_rows(report))
    lo, hi = report.ra_range()
    body = {
        "kind": "sequential",
        "tasks": [vars(t) for t in report.tasks],
        "min_ua": report.min_ua(),
        "final_ra": report.final_ra(),
        "ra_range": [lo, hi],
    }
    save_report(out, body)
    return {"written": [out, table_path], "min_ua": body["min_ua"], "final_ra": body["final_ra"]}


def inspect(ctx: CommandContext, path: str) -> Dict[str, Any]:
    """Summarize a checkpoint, dataset or JSON artifact without loading payloads."""
    with open(path, "rb") as f:
        blob = f.read()
    magic = blob[:4]
    if magic in (CHECKPOINT_MAGIC, DATASET_MAGIC):
        header, payload = unpack(blob, magic, path)
        header.pop("config", None)
        summary = {"kind": magic.decode("ascii"), "header": header, "payload_bytes": len(payload)}
    else:
        try:
            doc = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise ValueError(f"{path}: not a SAEmnesia artifact")
        kind = doc.get("format") if isinstance(doc, dict) else None
        if kind is None:
            raise ValueError(f"{path}: JSON without a 'format' key")
        body = load_artifact(path, kind)
        summary = {"kind": kind, "version": doc.get("version"), "keys": sorted(body)}
    if ctx.out:
        save_report(ctx.out, {"kind": "inspect", "path": path, "summary": summary})
    return summary


__all__ = [
    "CommandContext",
    "gen_data",
    "train",
    "score",
    "assign_cmd",
    "steer",
    "sweep",
    "evaluate",
    "seq_eval",
    "inspect",
]
