"""
Numerical primitives for SAEmnesia.

Matrices and vectors are plain ``numpy.ndarray`` objects. Parameters are
stored as float32; every reduction here accumulates in float64.
"""

from typing import Sequence, Tuple, Union

import numpy as np

STORAGE_DTYPE = np.float32
ACCUM_DTYPE = np.float64

ArrayLike = Union[np.ndarray, Sequence[float]]


class NumericsError(ValueError):
    """Raised on shape or range violations in numerical primitives."""
    pass


def as_matrix(data: ArrayLike, dtype=STORAGE_DTYPE) -> np.ndarray:
    """Return a 2-D finite array, raising NumericsError otherwise."""
    arr = np.asarray(data, dtype=dtype)
    if arr.ndim != 2:
        raise NumericsError(f"expected a matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericsError("matrix contains non-finite entries")
    return arr


def matvec(W: np.ndarray, x: np.ndarray) -> np.ndarray:
    """
    Compute y = W x with float64 accumulation.

    Args:
        W: Matrix of shape (rows, cols)
        x: Vector of length cols

    Returns:
        float64 vector of length rows

    Raises:
        NumericsError: If W.cols != x.len
    """
    W = np.asarray(W)
    x = np.asarray(x)
    if W.ndim != 2 or x.ndim != 1 or W.shape[1] != x.shape[0]:
        raise NumericsError(f"dimension mismatch: W{W.shape} x{x.shape}")
    return W.astype(ACCUM_DTYPE) @ x.astype(ACCUM_DTYPE)


def matmul(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Matrix product with float64 accumulation."""
    A = np.asarray(A)
    B = np.asarray(B)
    if A.shape[-1] != B.shape[0]:
        raise NumericsError(f"dimension mismatch: A{A.shape} B{B.shape}")
    return A.astype(ACCUM_DTYPE) @ B.astype(ACCUM_DTYPE)


def topk_mask(v: np.ndarray, k: int) -> np.ndarray:
    """
    Indices of the k largest entries of v, ties going to the lower index.

    The result is sorted ascending.

    Raises:
        NumericsError: If k is outside [1, len(v)]
    """
    v = np.asarray(v)
    if v.ndim != 1:
        raise NumericsError(f"expected a vector, got shape {v.shape}")
    if not 1 <= k <= v.shape[0]:
        raise NumericsError(f"k={k} out of range for length {v.shape[0]}")
    order = np.argsort(-v, kind="stable")
    return np.sort(order[:k])


def topk_rows(V: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Row-wise TopK over a (B, n) matrix.

    Returns:
        Tuple of (indices, values), each of shape (B, k); indices within a row
        are in descending value order, lower index first among equal values.
    """
    V = np.asarray(V)
    if V.ndim != 2:
        raise NumericsError(f"expected a matrix, got shape {V.shape}")
    if not 1 <= k <= V.shape[1]:
        raise NumericsError(f"k={k} out of range for width {V.shape[1]}")
    idx = np.argsort(-V, axis=1, kind="stable")[:, :k]
    return idx, np.take_along_axis(V, idx, axis=1)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def pearson(a: ArrayLike, b: ArrayLike) -> float:
    """
    Sample Pearson correlation of two equal-length vectors.

    A zero-variance input yields 0.

    Raises:
        NumericsError: On length mismatch or length < 2
    """
    a = np.asarray(a, dtype=ACCUM_DTYPE)
    b = np.asarray(b, dtype=ACCUM_DTYPE)
    if a.shape != b.shape or a.ndim != 1:
        raise NumericsError(f"length mismatch: {a.shape} vs {b.shape}")
    if a.shape[0] < 2:
        raise NumericsError("pearson needs at least 2 samples")
    U, norms = centered_unit_columns(np.stack([a, b], axis=1))
    if norms[0] == 0.0 or norms[1] == 0.0:
        return 0.0
    return float(np.clip(U[:, 0] @ U[:, 1], -1.0, 1.0))


# Centered norms below this fraction of sqrt(B) * max|column| count as zero variance.
ZERO_VARIANCE_RTOL = 1e-12


def centered_unit_columns(A: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Center each column of A and scale it to unit norm.

    Returns:
        Tuple (U, norms). Zero-variance columns (up to rounding) are left as
        zeros in U and report norm 0.
    """
    A = np.asarray(A, dtype=ACCUM_DTYPE)
    centered = A - A.mean(axis=0, keepdims=True)
    norms = np.sqrt(np.einsum("ij,ij->j", centered, centered))
    floor = ZERO_VARIANCE_RTOL * np.sqrt(A.shape[0]) * np.abs(A).max(axis=0, initial=0.0)
    live = (norms > floor) & (norms > 0)
    U = np.zeros_like(centered)
    U[:, live] = centered[:, live] / norms[live]
    return U, np.where(live, norms, 0.0)


def sigmoid(x):
    """Logistic function, overflow-safe for large |x|."""
    x = np.asarray(x, dtype=ACCUM_DTYPE)
    out = np.exp(-np.logaddexp(0.0, -x))
    return float(out) if out.ndim == 0 else out


def stable_log_sigmoid(x):
    """log(sigmoid(x)) computed as -softplus(-x)."""
    x = np.asarray(x, dtype=ACCUM_DTYPE)
    out = -np.logaddexp(0.0, -x)
    return float(out) if out.ndim == 0 else out


def log_softmax_rows(V: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax with log-sum-exp stabilization."""
    V = np.asarray(V, dtype=ACCUM_DTYPE)
    shifted = V - V.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def normalize_columns(W: np.ndarray) -> np.ndarray:
    """Scale every column of W to unit L2 norm (zero columns are left alone)."""
    W64 = np.asarray(W, dtype=ACCUM_DTYPE)
    norms = np.linalg.norm(W64, axis=0, keepdims=True)
    norms = np.where(norms > 0, norms, 1.0)
    return (W64 / norms).astype(np.asarray(W).dtype)


# Seeds and stream ids are unsigned 64-bit words.
SEED_LIMIT = 1 << 64


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """
    Counter-based generator for ``seed`` and an optional stream path.

    Philox keyed through SeedSequence gives the same sequence on every
    platform; distinct stream paths give independent streams. Every entry
    is spread over two 32-bit words behind a path-length word, so
    (seed, stream) paths never alias.

    Raises:
        NumericsError: If the seed or a stream id lies outside [0, 2**64)
    """
    entropy = [len(stream)]
    for name, value in [("seed", seed)] + [("stream id", s) for s in stream]:
        value = int(value)
        if not 0 <= value < SEED_LIMIT:
            raise NumericsError(f"{name} must be in [0, 2**64), got {value}")
        entropy += [value & 0xFFFFFFFF, value >> 32]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
