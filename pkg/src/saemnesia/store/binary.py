"""
Binary checkpoint (.saem) and dataset (.saea) files.

Both share one layout, little-endian throughout:

    magic (4 bytes) | version u32 | header length u32 | JSON header | payload

Checkpoint payload: W_enc (n x d), b_enc (n), W_dec (d x n), b_pre (d) as
float32, row-major, in that order.

Dataset payload: one fixed-width record per sample, timestep u16, object id
u16, style id u16 (0xFFFF when unlabeled), then d float32 values.
"""

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from typing import Any, Dict, Tuple

import numpy as np

from ..core.sae_model import ModelError, SaeParams
from ..data.dataset import UNLABELED, Dataset, DatasetError
from ..utils.log import get_logger
from .errors import (
    BadMagicError,
    CorruptArtifactError,
    DimensionMismatchError,
    StoreError,
    TruncatedError,
    VersionMismatchError,
)

logger = get_logger()

CHECKPOINT_MAGIC = b"SAEM"
DATASET_MAGIC = b"SAEA"
FORMAT_VERSION = 1
SENTINEL = 0xFFFF
_PREFIX = struct.Struct("<4sII")
_FLOAT = np.dtype("<f4")


def atomic_write(path: str, data: bytes) -> None:
    """Write to a temporary file next to ``path`` and rename it into place."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _encode_header(header: Dict[str, Any]) -> bytes:
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def pack(magic: bytes, header: Dict[str, Any], payload: bytes) -> bytes:
    head = _encode_header(header)
    return _PREFIX.pack(magic, FORMAT_VERSION, len(head)) + head + payload


def unpack(blob: bytes, magic: bytes, path: str = "") -> Tuple[Dict[str, Any], bytes]:
    """
    Split a file into its header and payload after checking magic and version.

    Raises:
        TruncatedError: If the prefix or header is cut short
        BadMagicError: On a wrong magic
        VersionMismatchError: On an unsupported version
        CorruptArtifactError: If the header is not a JSON object
    """
    if len(blob) < _PREFIX.size:
        raise TruncatedError("file shorter than its fixed prefix", path, _PREFIX.size, len(blob))
    found, version, head_len = _PREFIX.unpack_from(blob)
    if found != magic:
        raise BadMagicError(f"bad magic {found!r}, expected {magic!r}", path)
    if version != FORMAT_VERSION:
        raise VersionMismatchError(
            f"format version {version}, this reader supports {FORMAT_VERSION}", path
        )
    end = _PREFIX.size + head_len
    if len(blob) < end:
        raise TruncatedError("header cut short", path, end, len(blob))
    try:
        header = json.loads(blob[_PREFIX.size:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptArtifactError(f"unreadable header: {e}", path)
    if not isinstance(header, dict):
        raise CorruptArtifactError("header is not an object", path)
    return header, blob[end:]


def _check_payload(payload: bytes, expected: int, path: str) -> None:
    if len(payload) < expected:
        raise TruncatedError("payload cut short", path, expected, len(payload))
    if len(payload) > expected:
        raise CorruptArtifactError(f"{len(payload) - expected} trailing bytes after payload", path)


def _read(path: str) -> bytes:
    try:
        with open(path, "rb") as f:
            return f.read()
    except OSError as e:
        raise StoreError(f"cannot read: {e}", path)


# Checkpoints


@dataclass
class Checkpoint:
    params: SaeParams
    meta: Dict[str, Any] = field(default_factory=dict)  # loss weights, seed, phase provenance


def checkpoint_payload_size(n: int, d: int) -> int:
    return _FLOAT.itemsize * (n * d + n + d * n + d)


def checkpoint_to_bytes(ckpt: Checkpoint) -> bytes:
    p = ckpt.params
    header = dict(ckpt.meta)
    header.update({"d": p.d, "n": p.n, "k": p.k, "k_aux": p.k_aux})
    payload = b"".join(
        np.ascontiguousarray(a, dtype=_FLOAT).tobytes(order="C")
        for a in (p.W_enc, p.b_enc, p.W_dec, p.b_pre)
    )
    return pack(CHECKPOINT_MAGIC, header, payload)


def checkpoint_from_bytes(blob: bytes, path: str = "") -> Checkpoint:
    header, payload = unpack(blob, CHECKPOINT_MAGIC, path)
    try:
        d, n, k, k_aux = (int(header[key]) for key in ("d", "n", "k", "k_aux"))
    except (KeyError, TypeError, ValueError) as e:
        raise CorruptArtifactError(f"checkpoint header lacks dimensions: {e}", path)
    if d < 1 or n < 1:
        raise DimensionMismatchError(f"invalid dimensions d={d}, n={n}", path)
    _check_payload(payload, checkpoint_payload_size(n, d), path)

    flat = np.frombuffer(payload, dtype=_FLOAT)
    sizes = [n * d, n, d * n, d]
    offsets = np.cumsum([0] + sizes)
    W_enc, b_enc, W_dec, b_pre = (flat[offsets[i]:offsets[i + 1]].copy() for i in range(4))
    try:
        params = SaeParams(
            W_enc=W_enc.reshape(n, d).astype(np.float32),
            b_enc=b_enc.astype(np.float32),
            W_dec=W_dec.reshape(d, n).astype(np.float32),
            b_pre=b_pre.astype(np.float32),
            k=k,
            k_aux=k_aux,
        )
    except ModelError as e:
        raise DimensionMismatchError(str(e), path)
    meta = {key: v for key, v in header.items() if key not in ("d", "n", "k", "k_aux")}
    return Checkpoint(params=params, meta=meta)


def save_checkpoint(path: str, ckpt: Checkpoint) -> None:
    atomic_write(path, checkpoint_to_bytes(ckpt))
    logger.info(f"wrote checkpoint {path} (n={ckpt.params.n}, d={ckpt.params.d})")


def load_checkpoint(path: str) -> Checkpoint:
    return checkpoint_from_bytes(_read(path), path)


# Datasets


def record_dtype(d: int) -> np.dtype:
    return np.dtype([("t", "<u2"), ("obj", "<u2"), ("sty", "<u2"), ("x", "<f4", (d,))])


def _ids_to_u16(ids: np.ndarray) -> np.ndarray:
    return np.where(ids == UNLABELED, SENTINEL, ids).astype("<u2")


def _u16_to_ids(raw: np.ndarray) -> np.ndarray:
    ids = raw.astype(np.int64)
    ids[ids == SENTINEL] = UNLABELED
    return ids


def dataset_to_bytes(data: Dataset) -> bytes:
    vocabulary = max(len(data.object_names), len(data.style_names))
    if data.num_timesteps > SENTINEL or vocabulary >= SENTINEL:
        raise DimensionMismatchError("timesteps or vocabulary too large for 16-bit records")
    header = {
        "d": data.d,
        "num_timesteps": data.num_timesteps,
        "object_names": list(data.object_names),
        "style_names": list(data.style_names),
        "count": len(data),
    }
    records = np.zeros(len(data), dtype=record_dtype(data.d))
    records["t"] = data.timesteps
    records["obj"] = _ids_to_u16(data.object_ids)
    records["sty"] = _ids_to_u16(data.style_ids)
    records["x"] = data.X
    return pack(DATASET_MAGIC, header, records.tobytes())


def dataset_from_bytes(blob: bytes, path: str = "") -> Dataset:
    header, payload = unpack(blob, DATASET_MAGIC, path)
    try:
        d = int(header["d"])
        count = int(header["count"])
        num_timesteps = int(header["num_timesteps"])
        object_names = list(header["object_names"])
        style_names = list(header["style_names"])
    except (KeyError, TypeError, ValueError) as e:
        raise CorruptArtifactError(f"dataset header incomplete: {e}", path)
    if d < 1 or count < 0:
        raise DimensionMismatchError(f"invalid dimensions d={d}, count={count}", path)
    dtype = record_dtype(d)
    _check_payload(payload, dtype.itemsize * count, path)

    if count:
        records = np.frombuffer(payload, dtype=dtype, count=count)
    else:
        records = np.zeros(0, dtype=dtype)
    try:
        return Dataset(
            X=records["x"].copy(),
            timesteps=records["t"].astype(np.int64),
            object_ids=_u16_to_ids(records["obj"]),
            style_ids=_u16_to_ids(records["sty"]),
            object_names=object_names,
            style_names=style_names,
            num_timesteps=num_timesteps,
        )
    except DatasetError as e:
        raise DimensionMismatchError(f"records disagree with header: {e}", path)


def save_dataset(path: str, data: Dataset) -> None:
    atomic_write(path, dataset_to_bytes(data))
    logger.info(f"wrote dataset {path} ({len(data)} samples, d={data.d})")


def load_dataset(path: str) -> Dataset:
    return dataset_from_bytes(_read(path), path)


__all__ = [
    "Checkpoint",
    "atomic_write",
    "pack",
    "unpack",
    "checkpoint_to_bytes",
    "checkpoint_from_bytes",
    "checkpoint_payload_size",
    "save_checkpoint",
    "load_checkpoint",
    "record_dtype",
    "dataset_to_bytes",
    "dataset_from_bytes",
    "save_dataset",
    "load_dataset",
    "CHECKPOINT_MAGIC",
    "DATASET_MAGIC",
    "FORMAT_VERSION",
    "SENTINEL",
]
