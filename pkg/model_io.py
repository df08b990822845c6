"""
Model file format.

Binary layout (little-endian)::

    magic    4 bytes  b"NRBM"
    version  uint16   currently 1
    n_v      uint32
    n_h      uint32
    s        uint32   0 means "unquantized"
    W        float64[n_v * n_h]   row-major
    b_v      float64[n_v]
    b_h      float64[n_h]
    Wq       int32[n_v * n_h]     only when s > 0
    bvq      int32[n_v]           only when s > 0
    bhq      int32[n_h]           only when s > 0
    mask     packbits(mask.reshape(-1)), ceil(n_v * n_h / 8) bytes

A human-readable JSON export carries the same fields.
"""

import json
import struct
from pathlib import Path
from typing import Union

import numpy as np

from artifacts import atomic_write_bytes, atomic_write_text
from errors import MissingPrerequisiteError, ModelFormatError
from logging_config import get_logger
from logging_decorators import log_exceptions, log_function_calls
from rbm_core import QuantizedRbm, RbmModel

logger = get_logger(__name__)

MAGIC = b"NRBM"
VERSION = 1
_HEADER = struct.Struct("<4sHIII")

Model = Union[RbmModel, QuantizedRbm]


def encode_model(model: Model) -> bytes:
    """Serialise a real or quantized model into the binary layout."""
    base = model.base if isinstance(model, QuantizedRbm) else model
    s = model.s if isinstance(model, QuantizedRbm) else 0
    parts = [
        _HEADER.pack(MAGIC, VERSION, base.n_visible, base.n_hidden, s),
        base.W.astype("<f8").tobytes(),
        base.b_v.astype("<f8").tobytes(),
        base.b_h.astype("<f8").tobytes(),
    ]
    if s:
        parts += [
            model.Wq.astype("<i4").tobytes(),
            model.bvq.astype("<i4").tobytes(),
            model.bhq.astype("<i4").tobytes(),
        ]
    parts.append(np.packbits(base.mask.reshape(-1).astype(np.uint8)).tobytes())
    return b"".join(parts)


def decode_model(blob: bytes) -> Model:
    """
    Parse the binary layout.

    Raises
    ------
    ModelFormatError: bad magic, unsupported version or truncated payload
    """
    if len(blob) < _HEADER.size:
        raise ModelFormatError(f"model file too short for header ({len(blob)} bytes)")
    magic, version, n_v, n_h, s = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise ModelFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ModelFormatError(f"unsupported model version {version}")

    n_w = n_v * n_h
    sizes = [8 * n_w, 8 * n_v, 8 * n_h]
    if s:
        sizes += [4 * n_w, 4 * n_v, 4 * n_h]
    sizes.append((n_w + 7) // 8)
    if len(blob) != _HEADER.size + sum(sizes):
        raise ModelFormatError(
            f"payload length {len(blob) - _HEADER.size} does not match header ({sum(sizes)} expected)"
        )

    offset = _HEADER.size

    def take(dtype, count):
        nonlocal offset
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
        offset += arr.nbytes
        return arr.copy()

    W = take("<f8", n_w).reshape(n_v, n_h)
    b_v = take("<f8", n_v)
    b_h = take("<f8", n_h)
    if s:
        Wq = take("<i4", n_w).reshape(n_v, n_h).astype(np.int64)
        bvq = take("<i4", n_v).astype(np.int64)
        bhq = take("<i4", n_h).astype(np.int64)
    packed = np.frombuffer(blob, dtype=np.uint8, offset=offset)
    mask = np.unpackbits(packed, count=n_w).reshape(n_v, n_h).astype(bool)

    base = RbmModel(W, b_v, b_h, mask)
    if s:
        return QuantizedRbm(base, int(s), Wq, bvq, bhq)
    return base


@log_function_calls(include_params=True, include_result=False)
def save_model(model: Model, path: Union[str, Path], export_json: bool = True) -> Path:
    """
    Write the binary model file (atomically) and, optionally, a ``.json`` twin.

    Returns
    -------
    Path of the binary file
    """
    path = Path(path)
    atomic_write_bytes(path, encode_model(model))
    if export_json:
        atomic_write_text(path.with_suffix(".json"), json.dumps(model_to_dict(model), indent=2))
    logger.info(f"Saved model ({model.n_visible}+{model.n_hidden} units) to {path}")
    return path


@log_exceptions("Model load failed")
def load_model(path: Union[str, Path]) -> Model:
    """Read a binary model file; raises MissingPrerequisiteError when absent."""
    path = Path(path)
    if not path.exists():
        raise MissingPrerequisiteError(f"model file not found: {path} (run the 'train' command first)")
    return decode_model(path.read_bytes())


def model_to_dict(model: Model) -> dict:
    """Structured export (JSON-compatible)."""
    base = model.base if isinstance(model, QuantizedRbm) else model
    doc = {
        "format": "neuro_rbm.model",
        "version": VERSION,
        "n_visible": base.n_visible,
        "n_hidden": base.n_hidden,
        "s": model.s if isinstance(model, QuantizedRbm) else None,
        "W": base.W.tolist(),
        "b_v": base.b_v.tolist(),
        "b_h": base.b_h.tolist(),
        "mask": base.mask.astype(int).tolist(),
    }
    if isinstance(model, QuantizedRbm):
        doc.update(Wq=model.Wq.tolist(), bvq=model.bvq.tolist(), bhq=model.bhq.tolist())
    return doc


def model_from_dict(doc: dict) -> Model:
    """Inverse of ``model_to_dict``."""
    try:
        base = RbmModel(doc["W"], doc["b_v"], doc["b_h"], np.asarray(doc["mask"], dtype=bool))
        if doc.get("s"):
            return QuantizedRbm(
                base,
                int(doc["s"]),
                np.asarray(doc["Wq"], dtype=np.int64),
                np.asarray(doc["bvq"], dtype=np.int64),
                np.asarray(doc["bhq"], dtype=np.int64),
            )
    except KeyError as e:
        raise ModelFormatError(f"model document missing field {e}") from e
    return base
