"""File formats: CP tensors as JSON, dense vectors as JSON arrays or raw binary.

Binary vector record: 8-byte little-endian unsigned length ``n`` followed by
``n`` little-endian float64 values.  Files may hold several records back to
back.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .tensor import CPTensor

_HEADER = struct.Struct("<Q")
_F64 = np.dtype("<f8")


def dump_cp_json(t: CPTensor, path) -> None:
    Path(path).write_text(json.dumps(t.to_dict()))


def load_cp_json(path) -> CPTensor:
    return CPTensor.from_dict(json.loads(Path(path).read_text()))


def vector_to_bytes(v) -> bytes:
    v = np.asarray(v, dtype=_F64).ravel()
    return _HEADER.pack(v.size) + v.tobytes()


def vectors_from_bytes(buf: bytes) -> list:
    out, pos = [], 0
    while pos < len(buf):
        if pos + _HEADER.size > len(buf):
            raise ValidationError("truncated vector header")
        (n,) = _HEADER.unpack_from(buf, pos)
        pos += _HEADER.size
        end = pos + 8 * n
        if end > len(buf):
            raise ValidationError(f"truncated vector payload: need {n} values")
        out.append(np.frombuffer(buf, dtype=_F64, count=n, offset=pos).astype(np.float64))
        pos = end
    return out


def write_vectors(path, vectors) -> None:
    with open(path, "wb") as fh:
        for v in vectors:
            fh.write(vector_to_bytes(v))


def read_vectors(path) -> list:
    return vectors_from_bytes(Path(path).read_bytes())


def write_vector(path, v) -> None:
    write_vectors(path, [v])


def read_vector(path) -> np.ndarray:
    vectors = read_vectors(path)
    if len(vectors) != 1:
        raise ValidationError(f"expected one vector record, found {len(vectors)}")
    return vectors[0]


def dump_profiles(path, profiles) -> None:
    """One record per point holding its ``(2k+1) * m`` committee profile."""
    profiles = np.asarray(profiles, dtype=np.float64)
    if profiles.ndim != 3:
        raise ValidationError("profiles must have shape (P, 2k+1, m)")
    write_vectors(path, [p.ravel() for p in profiles])


def load_profiles(path, members: int) -> np.ndarray:
    vectors = read_vectors(path)
    if not vectors:
        return np.zeros((0, members, 0))
    sizes = {v.size for v in vectors}
    if len(sizes) != 1 or next(iter(sizes)) % members:
        raise ValidationError("profile records are not uniform multiples of the committee size")
    return np.stack([v.reshape(members, -1) for v in vectors])
