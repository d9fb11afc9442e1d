"""Median-of-committee sketching (MedianSketch / MedianJLT).

A committee of ``2k+1`` independent operators sketches ``x`` to the member
output whose norm is the median.  The map is nonlinear but homogeneous:
``S~(a x) = a S~(x)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._parallel import pmap
from ._seeding import derive_seed
from .errors import ValidationError
from .sketch import OperatorSpec, SketchOperator
from .tensor import CPTensor, cp_difference, norm_sq


def argmed(values) -> int:
    """Index of the median of an odd-length sequence; ties go to the smallest index."""
    a = np.asarray(values, dtype=np.float64).ravel()
    if a.size == 0 or a.size % 2 == 0:
        raise ValidationError(f"argmed needs an odd, nonempty list (got length {a.size})")
    med = np.sort(a)[a.size // 2]
    return int(np.flatnonzero(a == med)[0])


def _argmed_rows(a: np.ndarray) -> np.ndarray:
    """Row-wise :func:`argmed` for a 2-D array."""
    med = np.sort(a, axis=1)[:, a.shape[1] // 2]
    return np.argmax(a == med[:, None], axis=1)


@dataclass(frozen=True)
class Committee:
    """``2k+1`` operators sharing kind, output dimension and input shape."""

    ops: tuple

    def __post_init__(self):
        ops = tuple(self.ops)
        object.__setattr__(self, "ops", ops)
        if not ops or len(ops) % 2 == 0:
            raise ValidationError(f"committee size must be odd and >= 1, got {len(ops)}")
        first = ops[0]
        for op in ops[1:]:
            if (op.kind, op.m, op.input_shape) != (first.kind, first.m, first.input_shape):
                raise ValidationError("committee members must share kind, m and input shape")
        seeds = [op.seed for op in ops if op.seed is not None]
        if len(set(seeds)) != len(seeds):
            raise ValidationError("committee member seeds must be pairwise distinct")

    @classmethod
    def from_spec(cls, spec: OperatorSpec, k: int, master_seed) -> "Committee":
        """Members get seeds ``derive_seed(master_seed, i)`` for ``i = 0..2k``."""
        if k < 0:
            raise ValidationError("k must be nonnegative")
        return cls(tuple(spec.with_seed(derive_seed(master_seed, i)).build() for i in range(2 * k + 1)))

    @property
    def k(self) -> int:
        return (len(self.ops) - 1) // 2

    @property
    def size(self) -> int:
        return len(self.ops)

    @property
    def m(self) -> int:
        return self.ops[0].m

    @property
    def input_shape(self) -> tuple:
        return self.ops[0].input_shape

    def profile(self, x) -> np.ndarray:
        """``(2k+1, m)`` array of member sketches ``S_i x``."""
        return np.stack([op.apply(x) for op in self.ops])


def median_sketch(c: Committee, x, return_index: bool = False):
    """Median sketch: the member sketch with median norm (smallest index on ties)."""
    ys = c.profile(x)
    # squared norms select the same member as norms
    i = argmed(np.einsum("im,im->i", ys, ys))
    return (ys[i], i) if return_index else ys[i]


def sketch_profiles(c: Committee, points, threads=None) -> np.ndarray:
    """Sketch phase of the pairwise median sketch: ``(P, 2k+1, m)`` profiles, parallel over points."""
    points = list(points)
    if not points:
        raise ValidationError("need at least one point")
    return np.stack(pmap(c.profile, points, threads))


def pairwise_from_profiles(profiles) -> np.ndarray:
    """Distance phase of the pairwise median sketch, O(k m P^2).

    ``d_ij = med_s ||y_is - y_js||``; the result is exactly symmetric with a
    zero diagonal.
    """
    Y = np.asarray(profiles, dtype=np.float64)
    if Y.ndim != 3 or Y.shape[1] % 2 == 0:
        raise ValidationError("profiles must have shape (P, 2k+1, m)")
    P = Y.shape[0]
    out = np.zeros((P, P))
    for i in range(P - 1):
        diff = Y[i + 1:] - Y[i]
        sq = np.einsum("plm,plm->pl", diff, diff)
        pick = _argmed_rows(sq)
        d = np.sqrt(sq[np.arange(sq.shape[0]), pick])
        out[i, i + 1:] = d
        out[i + 1:, i] = d
    return out


def median_jlt_pairwise(c: Committee, points, threads=None) -> np.ndarray:
    """All median-sketched pairwise distances of ``points``."""
    return pairwise_from_profiles(sketch_profiles(c, points, threads))


def distortion(c: Committee, points) -> np.ndarray:
    """Per-point ``| ||S~(x)||^2 / ||x||^2 - 1 |`` against exact norms."""
    out = []
    for x in points:
        exact = norm_sq(x)
        if exact == 0:
            raise ValidationError("distortion is undefined for a zero-norm point")
        y = median_sketch(c, x)
        out.append(abs(float(y @ y) / exact - 1.0))
    return np.array(out)


def member_sq_norms(c: Committee, points) -> np.ndarray:
    """``(2k+1, P)`` matrix of ``||S_i x_j||^2``."""
    return np.stack([np.einsum("im,im->i", p, p) for p in (c.profile(x) for x in points)], axis=1)


def difference(x, y):
    """``x - y`` for two CP tensors or two dense vectors."""
    if isinstance(x, CPTensor) and isinstance(y, CPTensor):
        return cp_difference(x, y)
    return np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
