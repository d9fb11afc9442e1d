"""CP-format tensors and their dense counterparts.

Flattening convention used everywhere in the package: lexicographic with the
LAST mode varying fastest (numpy C order).  A CP tensor with factor matrices
``A_1, ..., A_d`` (``A_j`` of shape ``n_j x r``) represents

    M = sum_i A_1[:, i] (x) A_2[:, i] (x) ... (x) A_d[:, i]

and rank ``r = 0`` encodes the zero tensor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._seeding import draw, rng
from .errors import MaterializationCapError, ShapeMismatchError, ValidationError

#: Default cap on the number of entries :func:`materialize` will produce.
DEFAULT_MATERIALIZE_CAP = 2**24

_materialize_cap = DEFAULT_MATERIALIZE_CAP


def get_materialize_cap() -> int:
    return _materialize_cap


def set_materialize_cap(cap: int) -> int:
    """Set the process-wide materialization cap; returns the previous value."""
    global _materialize_cap
    if cap < 1:
        raise ValidationError("materialization cap must be positive")
    previous, _materialize_cap = _materialize_cap, int(cap)
    return previous


def check_cap(size: int, cap: int | None = None, what: str = "materialize") -> None:
    cap = _materialize_cap if cap is None else cap
    if size > cap:
        raise MaterializationCapError(
            f"{what}: {size} entries exceeds materialization cap {cap}"
        )


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class CPTensor:
    """Rank-``r`` canonical polyadic tensor stored as ``d`` factor matrices.

    Factors are copied and made read-only on construction, so instances are
    safe to share between threads.
    """

    factors: tuple

    def __post_init__(self):
        factors = tuple(_frozen(f) for f in self.factors)
        if len(factors) < 1:
            raise ValidationError("a CP tensor needs at least one factor matrix")
        for j, f in enumerate(factors):
            if f.ndim != 2:
                raise ValidationError(f"factor {j} must be 2-D, got shape {f.shape}")
            if f.shape[0] < 1:
                raise ValidationError(f"factor {j} has empty mode length")
        ranks = {f.shape[1] for f in factors}
        if len(ranks) != 1:
            raise ValidationError(f"factor column counts differ: {sorted(ranks)}")
        if not all(np.all(np.isfinite(f)) for f in factors):
            raise ValidationError("factor matrices must be finite")
        object.__setattr__(self, "factors", factors)

    @classmethod
    def zeros(cls, mode_lengths) -> "CPTensor":
        return cls(tuple(np.zeros((n, 0)) for n in mode_lengths))

    @property
    def order(self) -> int:
        return len(self.factors)

    @property
    def rank(self) -> int:
        return self.factors[0].shape[1]

    @property
    def mode_lengths(self) -> tuple:
        return tuple(f.shape[0] for f in self.factors)

    @property
    def size(self) -> int:
        """Ambient dimension N, the product of the mode lengths."""
        return math.prod(self.mode_lengths)

    def __repr__(self):
        return f"CPTensor(mode_lengths={self.mode_lengths}, rank={self.rank})"

    def to_dict(self) -> dict:
        return {
            "mode_lengths": list(self.mode_lengths),
            "rank": self.rank,
            "factors": [f.ravel(order="F").tolist() for f in self.factors],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CPTensor":
        try:
            shape = [int(n) for n in data["mode_lengths"]]
            r = int(data["rank"])
            flat = data["factors"]
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed CP tensor record: {exc}") from exc
        if len(flat) != len(shape):
            raise ValidationError("factor count does not match mode_lengths")
        factors = []
        for n, col_major in zip(shape, flat):
            a = np.asarray(col_major, dtype=np.float64)
            if a.size != n * r:
                raise ValidationError(f"factor has {a.size} entries, expected {n * r}")
            factors.append(a.reshape((n, r), order="F"))
        return cls(tuple(factors))


def materialize(t: CPTensor, cap: int | None = None) -> np.ndarray:
    """Dense length-N vector of ``t`` (last mode fastest)."""
    check_cap(t.size, cap)
    if t.rank == 0:
        return np.zeros(t.size)
    if t.order == 1:
        return t.factors[0].sum(axis=1)
    r = t.rank
    # Khatri-Rao of all but the last mode, then one GEMM against the last.
    lead = t.factors[0]
    for f in t.factors[1:-1]:
        lead = (lead[:, None, :] * f[None, :, :]).reshape(-1, r)
    return (lead @ t.factors[-1].T).ravel()


def cp_norm_sq(t: CPTensor) -> float:
    """Squared Frobenius norm via the Gram identity, O(d n r^2)."""
    if t.rank == 0:
        return 0.0
    gram = np.ones((t.rank, t.rank))
    for f in t.factors:
        gram *= f.T @ f
    return max(float(gram.sum()), 0.0)


def cp_inner(x: CPTensor, y: CPTensor) -> float:
    _check_same_shape(x, y)
    if x.rank == 0 or y.rank == 0:
        return 0.0
    cross = np.ones((x.rank, y.rank))
    for a, b in zip(x.factors, y.factors):
        cross *= a.T @ b
    return float(cross.sum())


def _check_same_shape(x: CPTensor, y: CPTensor) -> None:
    if x.mode_lengths != y.mode_lengths:
        raise ShapeMismatchError(
            f"mode lengths differ: {x.mode_lengths} vs {y.mode_lengths}"
        )


def cp_difference(x: CPTensor, y: CPTensor) -> CPTensor:
    """``x - y`` as a CP tensor of rank ``r_x + r_y``.

    The columns of y are appended after those of x with the sign flipped on
    the first mode only.
    """
    _check_same_shape(x, y)
    factors = []
    for j, (a, b) in enumerate(zip(x.factors, y.factors)):
        factors.append(np.hstack([a, -b if j == 0 else b]))
    return CPTensor(tuple(factors))


def cp_scale(t: CPTensor, alpha: float) -> CPTensor:
    factors = list(t.factors)
    factors[0] = factors[0] * alpha
    return CPTensor(tuple(factors))


def random_cp(mode_lengths, r: int, distribution: str = "gaussian", seed=None) -> CPTensor:
    """Random CP tensor with i.i.d. factor entries, deterministic in ``seed``."""
    mode_lengths = tuple(int(n) for n in mode_lengths)
    if not mode_lengths or min(mode_lengths) < 1:
        raise ValidationError(f"invalid mode lengths {mode_lengths}")
    if r < 0:
        raise ValidationError("rank must be nonnegative")
    gen = rng(seed)
    return CPTensor(tuple(draw(gen, distribution, (n, r)) for n in mode_lengths))


def normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ValidationError("cannot normalize the zero vector")
    return v / norm


def normalize_cp(t: CPTensor) -> CPTensor:
    """Rescale the first factor so that ``cp_norm_sq`` is 1."""
    nsq = cp_norm_sq(t)
    if nsq == 0:
        raise ValidationError("cannot normalize the zero tensor")
    return cp_scale(t, 1.0 / math.sqrt(nsq))


def random_unit_cp(mode_lengths, r: int, distribution: str = "gaussian", seed=None) -> CPTensor:
    return normalize_cp(random_cp(mode_lengths, r, distribution, seed))


def as_dense(x) -> np.ndarray:
    """Dense view of a CP tensor or array-like."""
    if isinstance(x, CPTensor):
        return materialize(x)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ShapeMismatchError(f"dense vectors must be 1-D and nonempty, got shape {x.shape}")
    return x


def norm_sq(x) -> float:
    """Exact squared norm of a CP tensor or dense vector."""
    if isinstance(x, CPTensor):
        return cp_norm_sq(x)
    x = np.asarray(x, dtype=np.float64)
    return float(x @ x)
