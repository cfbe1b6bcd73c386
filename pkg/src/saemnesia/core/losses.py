"""
Loss terms of the supervised TopK SAE objective and their analytic gradients.

    total = recon + alpha * aux + beta * (ca + gce + gamma * oc) + lambda * l1

Gradients treat the TopK/ReLU support as fixed. CA, OC, L1 and global-CE act
on the pre-TopK activations v and therefore only reach W_enc, b_enc and b_pre.
"""

from dataclasses import dataclass, field, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .numerics import (
    ACCUM_DTYPE,
    centered_unit_columns,
    log_softmax_rows,
    relu,
    sigmoid,
    stable_log_sigmoid,
    topk_rows,
)
from .sae_model import BatchEncoding, EncodeResult, SaeParams, encode_batch

SUPERVISION_MODES = ("ca", "global_ce")
TERM_NAMES = ("recon", "aux", "ca", "gce", "oc", "l1")


class LossError(ValueError):
    """Raised on inconsistent loss inputs."""
    pass


@dataclass(frozen=True)
class LossWeights:
    """Coefficients of the composite objective."""

    alpha: float = 1.0 / 32.0
    beta: float = 3.0
    gamma: float = 0.1
    lambda_: float = 0.01

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "lambda_"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise LossError(f"loss weight {name} must be finite and >= 0, got {value}")

    @classmethod
    def unsupervised(cls, alpha: float = 1.0 / 32.0) -> "LossWeights":
        return cls(alpha=alpha, beta=0.0, gamma=0.0, lambda_=0.0)

    @classmethod
    def from_dict(cls, data: Dict[str, float]) -> "LossWeights":
        return cls(
            alpha=float(data.get("alpha", 1.0 / 32.0)),
            beta=float(data.get("beta", 3.0)),
            gamma=float(data.get("gamma", 0.1)),
            lambda_=float(data.get("lambda", 0.01)),
        )

    def to_dict(self) -> Dict[str, float]:
        return {"alpha": self.alpha, "beta": self.beta, "gamma": self.gamma, "lambda": self.lambda_}

    def coefficient(self, term: str) -> float:
        return {
            "recon": 1.0,
            "aux": self.alpha,
            "ca": self.beta,
            "gce": self.beta,
            "oc": self.beta * self.gamma,
            "l1": self.lambda_,
        }[term]


@dataclass
class Batch:
    """
    One supervised mini-batch.

    ``targets[b]`` holds the latents assigned to concepts present in sample b;
    ``class_latent[b]`` is the object latent used by global-CE (-1 if none).
    """

    X: np.ndarray
    targets: List[np.ndarray] = field(default_factory=list)
    object_latents: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    style_latents: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    timesteps: Optional[np.ndarray] = None
    class_latent: Optional[np.ndarray] = None

    def __post_init__(self):
        B = self.X.shape[0]
        if not self.targets:
            self.targets = [np.zeros(0, dtype=np.int64) for _ in range(B)]
        if len(self.targets) != B:
            raise LossError(f"{len(self.targets)} target sets for {B} samples")
        self.targets = [np.unique(np.asarray(t, dtype=np.int64)) for t in self.targets]
        self.object_latents = np.unique(np.asarray(self.object_latents, dtype=np.int64))
        self.style_latents = np.unique(np.asarray(self.style_latents, dtype=np.int64))
        if np.intersect1d(self.object_latents, self.style_latents).size:
            raise LossError("object and style latent sets overlap")
        if self.class_latent is None:
            self.class_latent = np.full(B, -1, dtype=np.int64)
        self.class_latent = np.asarray(self.class_latent, dtype=np.int64)

    @property
    def size(self) -> int:
        return self.X.shape[0]

    def validate(self, n: int) -> None:
        for arr in (*self.targets, self.object_latents, self.style_latents):
            if arr.size and (arr.min() < 0 or arr.max() >= n):
                raise LossError(f"latent index out of range for n={n}")
        c = self.class_latent
        if c.size and (c.min() < -1 or c.max() >= n):
            raise LossError(f"class latent outside [-1, {n})")

    def target_mask(self, n: int) -> np.ndarray:
        mask = np.zeros((self.size, n), dtype=ACCUM_DTYPE)
        for b, t in enumerate(self.targets):
            mask[b, t] = 1.0
        return mask


@dataclass
class LossReport:
    recon: float = 0.0
    aux: float = 0.0
    ca: float = 0.0
    oc: float = 0.0
    l1: float = 0.0
    gce: float = 0.0
    total: float = 0.0

    def as_dict(self) -> Dict[str, float]:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}

    @staticmethod
    def mean(reports: Sequence["LossReport"]) -> "LossReport":
        if not reports:
            return LossReport()
        return LossReport(
            **{
                f.name: float(np.mean([getattr(r, f.name) for r in reports]))
                for f in fields(LossReport)
            }
        )

    def is_finite(self) -> bool:
        return all(np.isfinite(v) for v in self.as_dict().values())


@dataclass
class Gradients:
    W_enc: np.ndarray
    b_enc: np.ndarray
    W_dec: np.ndarray
    b_pre: np.ndarray

    @classmethod
    def zeros_like(cls, p: SaeParams) -> "Gradients":
        return cls(
            W_enc=np.zeros(p.W_enc.shape, dtype=ACCUM_DTYPE),
            b_enc=np.zeros(p.b_enc.shape, dtype=ACCUM_DTYPE),
            W_dec=np.zeros(p.W_dec.shape, dtype=ACCUM_DTYPE),
            b_pre=np.zeros(p.b_pre.shape, dtype=ACCUM_DTYPE),
        )

    def items(self):
        return (
            ("W_enc", self.W_enc),
            ("b_enc", self.b_enc),
            ("W_dec", self.W_dec),
            ("b_pre", self.b_pre),
        )

    def add_scaled(self, other: "Gradients", scale: float) -> None:
        if scale == 0.0:
            return
        self.W_enc += scale * other.W_enc
        self.b_enc += scale * other.b_enc
        self.W_dec += scale * other.W_dec
        self.b_pre += scale * other.b_pre

    def global_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(g * g)) for _, g in self.items())))

    def scale(self, factor: float) -> None:
        for _, g in self.items():
            g *= factor


@dataclass
class TermResult:
    value: float
    grads: Gradients


# --- scalar loss terms -----------------------------------------------------


def recon_loss(x: np.ndarray, x_hat: np.ndarray) -> float:
    """Squared L2 residual; for 2-D input, the mean over rows."""
    x = np.asarray(x, dtype=ACCUM_DTYPE)
    x_hat = np.asarray(x_hat, dtype=ACCUM_DTYPE)
    if x.shape != x_hat.shape:
        raise LossError(f"length mismatch: {x.shape} vs {x_hat.shape}")
    r = x - x_hat
    if r.ndim == 1:
        return float(r @ r)
    return float(np.mean(np.sum(r * r, axis=1)))


def _aux_selection(V: np.ndarray, dead: np.ndarray, k_aux: int) -> Tuple[np.ndarray, np.ndarray]:
    """Dense (B, n) activations of the top-k_aux dead latents by ReLU(v), and their mask."""
    B, n = V.shape
    Z_aux = np.zeros((B, n), dtype=ACCUM_DTYPE)
    if dead.size == 0:
        return Z_aux, Z_aux.astype(bool)
    sub = relu(V[:, dead])
    idx, vals = topk_rows(sub, min(k_aux, dead.size))
    np.put_along_axis(Z_aux, dead[idx], vals, axis=1)
    return Z_aux, Z_aux > 0


def aux_loss(p: SaeParams, x: np.ndarray, enc: EncodeResult, dead: Sequence[int]) -> float:
    """
    Residual fit by the top-k_aux dead latents: ||(x - x_hat) - W_dec z_dead||^2.

    Returns 0 when no latent is dead.
    """
    dead = np.asarray(dead, dtype=np.int64)
    if dead.size == 0:
        return 0.0
    Z_aux, _ = _aux_selection(np.asarray(enc.v, dtype=ACCUM_DTYPE)[None, :], dead, p.k_aux)
    r = np.asarray(x, dtype=ACCUM_DTYPE) - np.asarray(enc.x_hat, dtype=ACCUM_DTYPE)
    q = p.W_dec.astype(ACCUM_DTYPE) @ Z_aux[0] - r
    return float(q @ q)


def ca_loss(V: np.ndarray, targets: Sequence[Sequence[int]]) -> float:
    """Mean of -log sigmoid(v) over all (sample, assigned latent) pairs; 0 if none."""
    V = np.asarray(V, dtype=ACCUM_DTYPE)
    rows, cols = _target_pairs(targets)
    if rows.size == 0:
        return 0.0
    if cols.max() >= V.shape[1]:
        raise LossError("target index out of range")
    return float(-np.mean(stable_log_sigmoid(V[rows, cols])))


def oc_loss(V: np.ndarray, O: Sequence[int], S: Sequence[int]) -> float:
    """Mean squared Pearson correlation between object and style latent columns."""
    V = np.asarray(V, dtype=ACCUM_DTYPE)
    O = np.asarray(O, dtype=np.int64)
    S = np.asarray(S, dtype=np.int64)
    if O.size == 0 or S.size == 0 or V.shape[0] < 2:
        return 0.0
    U_O, _ = centered_unit_columns(V[:, O])
    U_S, _ = centered_unit_columns(V[:, S])
    P = U_O.T @ U_S
    return float(np.mean(P * P))


def l1_loss(V: np.ndarray) -> float:
    """Per-latent mean absolute pre-activation, averaged over the batch."""
    V = np.atleast_2d(np.asarray(V, dtype=ACCUM_DTYPE))
    return float(np.mean(np.abs(V)))


def global_ce_loss(V: np.ndarray, class_latent: Sequence[int]) -> float:
    """
    Softmax cross-entropy over the whole latent space, class = assigned latent.

    Samples with class -1 are skipped; returns 0 if none is labeled.
    """
    V = np.atleast_2d(np.asarray(V, dtype=ACCUM_DTYPE))
    c = np.asarray(class_latent, dtype=np.int64).reshape(-1)
    if c.shape[0] != V.shape[0]:
        raise LossError(f"{c.shape[0]} classes for {V.shape[0]} samples")
    if c.size and (c.min() < -1 or c.max() >= V.shape[1]):
        raise LossError(f"class index outside [-1, {V.shape[1]})")
    rows = np.flatnonzero(c >= 0)
    if rows.size == 0:
        return 0.0
    logp = log_softmax_rows(V[rows])
    return float(-np.mean(logp[np.arange(rows.size), c[rows]]))


def _target_pairs(targets: Sequence[Sequence[int]]) -> Tuple[np.ndarray, np.ndarray]:
    rows: List[int] = []
    cols: List[int] = []
    for b, t in enumerate(targets):
        for j in np.unique(np.asarray(t, dtype=np.int64)):
            rows.append(b)
            cols.append(int(j))
    return np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64)


# --- gradients -------------------------------------------------------------


def _backprop_v(p: SaeParams, enc: BatchEncoding, dV: np.ndarray) -> Gradients:
    """Push dL/dV into W_enc, b_enc and b_pre."""
    g = Gradients.zeros_like(p)
    g.W_enc = dV.T @ enc.C
    g.b_enc = dV.sum(axis=0)
    g.b_pre = -(dV @ p.W_enc.astype(ACCUM_DTYPE)).sum(axis=0)
    return g


def _backprop_xhat(
    p: SaeParams, enc: BatchEncoding, Z: np.ndarray, mask: np.ndarray, dXhat: np.ndarray
) -> Gradients:
    """Push dL/dX_hat through the decoder and the fixed TopK support."""
    W_dec = p.W_dec.astype(ACCUM_DTYPE)
    dV = (dXhat @ W_dec) * mask
    g = _backprop_v(p, enc, dV)
    g.W_dec = dXhat.T @ Z
    g.b_pre = g.b_pre + dXhat.sum(axis=0)
    return g


def _support_mask(enc: BatchEncoding) -> np.ndarray:
    mask = np.zeros_like(enc.V, dtype=bool)
    np.put_along_axis(mask, enc.support, enc.values > 0, axis=1)
    return mask


def recon_term(p: SaeParams, enc: BatchEncoding) -> TermResult:
    B = enc.batch_size
    R = enc.X_hat - enc.X
    value = float(np.mean(np.sum(R * R, axis=1)))
    grads = _backprop_xhat(p, enc, enc.dense_z(), _support_mask(enc), 2.0 * R / B)
    return TermResult(value, grads)


def aux_term(p: SaeParams, enc: BatchEncoding, dead: np.ndarray) -> TermResult:
    dead = np.asarray(dead, dtype=np.int64)
    if dead.size == 0:
        return TermResult(0.0, Gradients.zeros_like(p))
    B = enc.batch_size
    W_dec = p.W_dec.astype(ACCUM_DTYPE)
    Z_aux, aux_mask = _aux_selection(enc.V, dead, p.k_aux)
    # Q = W_dec z_aux - (x - x_hat); the residual keeps its dependence on x_hat
    Q = Z_aux @ W_dec.T - (enc.X - enc.X_hat)
    value = float(np.mean(np.sum(Q * Q, axis=1)))
    dQ = 2.0 * Q / B
    grads = _backprop_xhat(p, enc, enc.dense_z(), _support_mask(enc), dQ)
    via_aux = _backprop_v(p, enc, (dQ @ W_dec) * aux_mask)
    grads.add_scaled(via_aux, 1.0)
    grads.W_dec = grads.W_dec + dQ.T @ Z_aux
    return TermResult(value, grads)


def ca_term(p: SaeParams, enc: BatchEncoding, batch: Batch) -> TermResult:
    mask = batch.target_mask(p.n)
    count = mask.sum()
    if count == 0:
        return TermResult(0.0, Gradients.zeros_like(p))
    value = float(-np.sum(stable_log_sigmoid(enc.V) * mask) / count)
    # d/dv [-log sigmoid(v)] = -sigmoid(-v)
    dV = -sigmoid(-enc.V) * mask / count
    return TermResult(value, _backprop_v(p, enc, dV))


def oc_term(p: SaeParams, enc: BatchEncoding, batch: Batch) -> TermResult:
    O, S = batch.object_latents, batch.style_latents
    if O.size == 0 or S.size == 0 or enc.batch_size < 2:
        return TermResult(0.0, Gradients.zeros_like(p))
    U_O, norm_O = centered_unit_columns(enc.V[:, O])
    U_S, norm_S = centered_unit_columns(enc.V[:, S])
    P = U_O.T @ U_S
    scale = 2.0 / (O.size * S.size)
    value = float(np.sum(P * P) / (O.size * S.size))
    # d rho/d a_o = (u_s - rho u_o) / |a_o - mean|; dead columns (norm 0) get no gradient
    inv_O = np.divide(1.0, norm_O, out=np.zeros_like(norm_O), where=norm_O > 0)
    inv_S = np.divide(1.0, norm_S, out=np.zeros_like(norm_S), where=norm_S > 0)
    G_O = scale * (U_S @ P.T - U_O * np.sum(P * P, axis=1)) * inv_O
    G_S = scale * (U_O @ P - U_S * np.sum(P * P, axis=0)) * inv_S
    dV = np.zeros_like(enc.V)
    dV[:, O] += G_O
    dV[:, S] += G_S
    return TermResult(value, _backprop_v(p, enc, dV))


def l1_term(p: SaeParams, enc: BatchEncoding) -> TermResult:
    B, n = enc.V.shape
    value = float(np.mean(np.abs(enc.V)))
    return TermResult(value, _backprop_v(p, enc, np.sign(enc.V) / (B * n)))


def gce_term(p: SaeParams, enc: BatchEncoding, batch: Batch) -> TermResult:
    rows = np.flatnonzero(batch.class_latent >= 0)
    if rows.size == 0:
        return TermResult(0.0, Gradients.zeros_like(p))
    cls = batch.class_latent[rows]
    logp = log_softmax_rows(enc.V[rows])
    value = float(-np.mean(logp[np.arange(rows.size), cls]))
    dV = np.zeros_like(enc.V)
    soft = np.exp(logp)
    soft[np.arange(rows.size), cls] -= 1.0
    dV[rows] = soft / rows.size
    return TermResult(value, _backprop_v(p, enc, dV))


def compute_terms(
    p: SaeParams,
    batch: Batch,
    dead: Sequence[int] = (),
    supervision: str = "ca",
    enc: Optional[BatchEncoding] = None,
    active: Sequence[str] = TERM_NAMES,
) -> Dict[str, TermResult]:
    """
    Value and gradient of every requested loss term on one batch, unweighted.

    Raises:
        LossError: On dimension mismatch or unknown supervision mode
    """
    if supervision not in SUPERVISION_MODES:
        raise LossError(f"unknown supervision mode '{supervision}'")
    if batch.X.ndim != 2 or batch.X.shape[1] != p.d:
        raise LossError(f"batch shape {batch.X.shape} does not match d={p.d}")
    batch.validate(p.n)
    if enc is None:
        enc = encode_batch(p, batch.X)
    dead = np.asarray(dead, dtype=np.int64)

    terms: Dict[str, TermResult] = {}
    if "recon" in active:
        terms["recon"] = recon_term(p, enc)
    if "aux" in active:
        terms["aux"] = aux_term(p, enc, dead)
    if "ca" in active and supervision == "ca":
        terms["ca"] = ca_term(p, enc, batch)
    if "gce" in active and supervision == "global_ce":
        terms["gce"] = gce_term(p, enc, batch)
    if "oc" in active:
        terms["oc"] = oc_term(p, enc, batch)
    if "l1" in active:
        terms["l1"] = l1_term(p, enc)
    return terms


def total_loss_and_grads(
    p: SaeParams,
    batch: Batch,
    w: LossWeights,
    dead: Sequence[int] = (),
    supervision: str = "ca",
    enc: Optional[BatchEncoding] = None,
) -> Tuple[LossReport, Gradients]:
    """
    Weighted composite loss and its gradient with respect to every parameter.

    Terms with a zero coefficient are reported but contribute no gradient;
    the supervised terms are skipped entirely when beta is 0.
    """
    active = ["recon", "aux", "l1"]
    if w.beta > 0:
        active += ["ca", "gce"]
        if w.gamma > 0:
            active.append("oc")
    terms = compute_terms(p, batch, dead, supervision, enc=enc, active=active)

    report = LossReport(**{name: t.value for name, t in terms.items()})
    grads = Gradients.zeros_like(p)
    total = 0.0
    for name, term in terms.items():
        coeff = w.coefficient(name)
        total += coeff * term.value
        grads.add_scaled(term.grads, coeff)
    report.total = total
    return report, grads


__all__ = [
    "LossError",
    "LossWeights",
    "Batch",
    "LossReport",
    "Gradients",
    "TermResult",
    "recon_loss",
    "aux_loss",
    "ca_loss",
    "oc_loss",
    "l1_loss",
    "global_ce_loss",
    "compute_terms",
    "total_loss_and_grads",
    "SUPERVISION_MODES",
    "TERM_NAMES",
]
