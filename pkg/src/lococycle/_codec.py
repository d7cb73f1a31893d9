"""Lossless array <-> JSON encoding used by clip files and checkpoints."""

import base64

import numpy as np


def encode_array(a):
    a = np.ascontiguousarray(a, dtype="<f8")
    return {
        "shape": list(a.shape),
        "data": base64.b64encode(a.tobytes(order="C")).decode("ascii"),
    }


def decode_array(obj, name="array"):
    try:
        shape = tuple(int(s) for s in obj["shape"])
        raw = base64.b64decode(obj["data"].encode("ascii"), validate=True)
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise ValueError(f"malformed array field {name!r}: {exc}") from None
    expected = int(np.prod(shape, dtype=np.int64)) * 8
    if len(raw) != expected:
        raise ValueError(
            f"array field {name!r} holds {len(raw)} bytes, expected {expected} for shape {shape}"
        )
    return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
