"""
TopK sparse autoencoder.

Encoder and decoder:

    v     = W_enc (x - b_pre) + b_enc
    z     = TopK(ReLU(v), k)
    x_hat = W_dec z + b_pre

A single set of parameters is shared across all diffusion timesteps.
"""

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .numerics import (
    ACCUM_DTYPE,
    STORAGE_DTYPE,
    NumericsError,
    normalize_columns,
    relu,
    topk_rows,
)

DEFAULT_DEAD_WINDOW = 1000


class ModelError(ValueError):
    """Raised on inconsistent parameters or inputs."""
    pass


@dataclass
class SaeParams:
    """The entire trainable state of the autoencoder plus its sparsity settings."""

    W_enc: np.ndarray  # (n, d)
    b_enc: np.ndarray  # (n,)
    W_dec: np.ndarray  # (d, n)
    b_pre: np.ndarray  # (d,)
    k: int
    k_aux: int

    def __post_init__(self):
        n, d = self.W_enc.shape
        if self.b_enc.shape != (n,):
            raise ModelError(f"b_enc shape {self.b_enc.shape} != ({n},)")
        if self.W_dec.shape != (d, n):
            raise ModelError(f"W_dec shape {self.W_dec.shape} != ({d}, {n})")
        if self.b_pre.shape != (d,):
            raise ModelError(f"b_pre shape {self.b_pre.shape} != ({d},)")
        if not 1 <= self.k <= n:
            raise ModelError(f"k={self.k} must be in [1, {n}]")
        if not 1 <= self.k_aux <= n:
            raise ModelError(f"k_aux={self.k_aux} must be in [1, {n}]")

    @property
    def n(self) -> int:
        return self.W_enc.shape[0]

    @property
    def d(self) -> int:
        return self.W_enc.shape[1]

    @property
    def dtype(self):
        return self.W_enc.dtype

    def copy(self) -> "SaeParams":
        return replace(
            self,
            W_enc=self.W_enc.copy(),
            b_enc=self.b_enc.copy(),
            W_dec=self.W_dec.copy(),
            b_pre=self.b_pre.copy(),
        )

    def astype(self, dtype) -> "SaeParams":
        """Copy with every array cast to ``dtype`` (float64 for gradient checks)."""
        return replace(
            self,
            W_enc=self.W_enc.astype(dtype),
            b_enc=self.b_enc.astype(dtype),
            W_dec=self.W_dec.astype(dtype),
            b_pre=self.b_pre.astype(dtype),
        )

    def decoder_norms(self) -> np.ndarray:
        return np.linalg.norm(self.W_dec.astype(ACCUM_DTYPE), axis=0)

    def normalize_decoder(self) -> None:
        """Rescale W_dec columns to unit L2 norm in place."""
        self.W_dec = normalize_columns(self.W_dec)

    def permuted(self, perm: np.ndarray) -> "SaeParams":
        """Relabel latents: new latent j is old latent perm[j]."""
        perm = np.asarray(perm)
        return replace(
            self,
            W_enc=self.W_enc[perm].copy(),
            b_enc=self.b_enc[perm].copy(),
            W_dec=self.W_dec[:, perm].copy(),
            b_pre=self.b_pre.copy(),
        )

    def equal(self, other: "SaeParams") -> bool:
        """Bit-level equality of all arrays and settings."""
        return (
            self.k == other.k
            and self.k_aux == other.k_aux
            and all(
                a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()
                for a, b in (
                    (self.W_enc, other.W_enc),
                    (self.b_enc, other.b_enc),
                    (self.W_dec, other.W_dec),
                    (self.b_pre, other.b_pre),
                )
            )
        )


@dataclass
class EncodeResult:
    """Encoding of a single input."""

    v: np.ndarray  # (n,) pre-TopK pre-activations
    z_support: np.ndarray  # (k,) latent indices, descending by activation
    z_values: np.ndarray  # (k,) ReLU(v) on the support
    x_hat: np.ndarray  # (d,)

    @property
    def z(self) -> np.ndarray:
        dense = np.zeros_like(self.v)
        dense[self.z_support] = self.z_values
        return dense


@dataclass
class BatchEncoding:
    """Encoding of a (B, d) batch. Row b is the EncodeResult of sample b."""

    X: np.ndarray  # (B, d) float64
    C: np.ndarray  # (B, d) centered input x - b_pre
    V: np.ndarray  # (B, n)
    support: np.ndarray  # (B, k)
    values: np.ndarray  # (B, k)
    X_hat: np.ndarray  # (B, d)

    @property
    def batch_size(self) -> int:
        return self.V.shape[0]

    def dense_z(self) -> np.ndarray:
        Z = np.zeros_like(self.V)
        np.put_along_axis(Z, self.support, self.values, axis=1)
        return Z

    def row(self, b: int) -> EncodeResult:
        return EncodeResult(
            v=self.V[b].copy(),
            z_support=self.support[b].copy(),
            z_values=self.values[b].copy(),
            x_hat=self.X_hat[b].copy(),
        )


def encode_batch(p: SaeParams, X: np.ndarray) -> BatchEncoding:
    """
    Forward pass over a batch with float64 accumulation.

    Raises:
        ModelError: If the input width differs from p.d
    """
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[1] != p.d:
        raise ModelError(f"input shape {X.shape} does not match d={p.d}")
    X64 = X.astype(ACCUM_DTYPE)
    W_enc = p.W_enc.astype(ACCUM_DTYPE)
    W_dec = p.W_dec.astype(ACCUM_DTYPE)
    C = X64 - p.b_pre.astype(ACCUM_DTYPE)
    V = C @ W_enc.T + p.b_enc.astype(ACCUM_DTYPE)
    support, values = topk_rows(relu(V), p.k)
    # x_hat = W_dec z + b_pre, gathered over the support only
    X_hat = np.einsum("dbk,bk->bd", W_dec[:, support], values) + p.b_pre.astype(ACCUM_DTYPE)
    return BatchEncoding(X=X64, C=C, V=V, support=support, values=values, X_hat=X_hat)


def encode(p: SaeParams, x: np.ndarray) -> EncodeResult:
    """Encode one input vector of length d."""
    x = np.asarray(x)
    if x.ndim != 1 or x.shape[0] != p.d:
        raise ModelError(f"input length {x.shape} does not match d={p.d}")
    return encode_batch(p, x[None, :]).row(0)


def decode(p: SaeParams, support: np.ndarray, values: np.ndarray) -> np.ndarray:
    """
    x_hat = sum_i values_i * W_dec[:, i] + b_pre over the given support.

    Raises:
        ModelError: If a support index is out of range or lengths differ
    """
    support = np.asarray(support, dtype=np.int64).reshape(-1)
    values = np.asarray(values, dtype=ACCUM_DTYPE).reshape(-1)
    if support.shape != values.shape:
        raise ModelError(f"support/value length mismatch: {support.shape} vs {values.shape}")
    if support.size and (support.min() < 0 or support.max() >= p.n):
        raise ModelError(f"support index out of range for n={p.n}")
    W_dec = p.W_dec.astype(ACCUM_DTYPE)
    return W_dec[:, support] @ values + p.b_pre.astype(ACCUM_DTYPE)


def decode_batch(p: SaeParams, support: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Batched decode of (B, k) supports and values."""
    W_dec = p.W_dec.astype(ACCUM_DTYPE)
    return np.einsum("dbk,bk->bd", W_dec[:, support], values.astype(ACCUM_DTYPE)) + p.b_pre.astype(
        ACCUM_DTYPE
    )


def init_params(
    d: int,
    n: int,
    k: int,
    k_aux: int,
    data_mean: Optional[np.ndarray],
    rng: np.random.Generator,
) -> SaeParams:
    """
    Random unit-norm decoder columns, tied encoder init, zero encoder bias.

    Args:
        d: Input dimension
        n: Number of latents
        k: TopK sparsity
        k_aux: Number of dead latents used by the auxiliary loss
        data_mean: Initial b_pre (zeros when None)
        rng: Generator from numerics.make_rng
    """
    if d <= 0 or n <= 0:
        raise ModelError(f"dimensions must be positive, got d={d}, n={n}")
    W_dec = normalize_columns(rng.standard_normal((d, n)).astype(ACCUM_DTYPE)).astype(STORAGE_DTYPE)
    b_pre = (
        np.zeros(d, dtype=STORAGE_DTYPE)
        if data_mean is None
        else np.asarray(data_mean, dtype=STORAGE_DTYPE).copy()
    )
    if b_pre.shape != (d,):
        raise ModelError(f"data_mean shape {b_pre.shape} != ({d},)")
    return SaeParams(
        W_enc=np.ascontiguousarray(W_dec.T),
        b_enc=np.zeros(n, dtype=STORAGE_DTYPE),
        W_dec=W_dec,
        b_pre=b_pre,
        k=k,
        k_aux=k_aux,
    )


@dataclass
class DeadLatentTracker:
    """Per-latent count of samples since the latent last fired."""

    last_fired: np.ndarray
    window: int = DEFAULT_DEAD_WINDOW

    @classmethod
    def fresh(cls, n: int, window: int = DEFAULT_DEAD_WINDOW) -> "DeadLatentTracker":
        return cls(last_fired=np.zeros(n, dtype=np.int64), window=window)

    def dead(self) -> np.ndarray:
        """Sorted indices of latents with last_fired >= window."""
        return np.flatnonzero(self.last_fired >= self.window)

    def is_dead(self, i: int) -> bool:
        return bool(self.last_fired[i] >= self.window)

    def num_dead(self) -> int:
        return int(np.count_nonzero(self.last_fired >= self.window))


def update_dead_tracker(
    t: DeadLatentTracker,
    support: np.ndarray,
    values: Optional[np.ndarray] = None,
) -> DeadLatentTracker:
    """
    Advance the tracker by one sample.

    Latents on the support with a nonzero value reset to 0; every other
    counter increments by 1. Without ``values`` every support entry counts
    as firing.
    """
    support = np.asarray(support, dtype=np.int64).reshape(-1)
    fired = support if values is None else support[np.asarray(values).reshape(-1) != 0]
    counters = t.last_fired + 1
    counters[fired] = 0
    return DeadLatentTracker(last_fired=counters, window=t.window)


def update_dead_tracker_batch(
    t: DeadLatentTracker, support: np.ndarray, values: np.ndarray
) -> DeadLatentTracker:
    """
    Same result as calling update_dead_tracker once per row, in row order.
    """
    B = support.shape[0]
    n = t.last_fired.shape[0]
    last_row = np.full(n, -1, dtype=np.int64)
    rows = np.broadcast_to(np.arange(B)[:, None], support.shape)
    fired = values != 0
    # np.maximum.at keeps the latest row in which each latent fired
    np.maximum.at(last_row, support[fired], rows[fired])
    counters = np.where(last_row >= 0, B - 1 - last_row, t.last_fired + B)
    return DeadLatentTracker(last_fired=counters.astype(np.int64), window=t.window)


__all__ = [
    "ModelError",
    "NumericsError",
    "SaeParams",
    "EncodeResult",
    "BatchEncoding",
    "DeadLatentTracker",
    "encode",
    "encode_batch",
    "decode",
    "decode_batch",
    "init_params",
    "update_dead_tracker",
    "update_dead_tracker_batch",
    "DEFAULT_DEAD_WINDOW",
]
