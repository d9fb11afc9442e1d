"""Random sketch operators with dense and factored (CP) application paths.

Every operator is a deterministic function of ``(kind, m, input_shape,
seed)`` and is immutable once built.  Dense kinds (``gaussian``,
``rademacher``, ``fjlt``) act on flat vectors of length N; structured kinds
(``khatri_rao``, ``kronecker``, ``kfjlt``) are defined on mode lengths
``(n_1, ..., n_d)`` and apply to :class:`~varsketch.tensor.CPTensor` inputs
without forming N-length vectors.

All kinds are scaled so that ``E ||S x||^2 = ||x||^2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ._seeding import derive_seed, draw, rng
from .errors import ShapeMismatchError, ValidationError
from .hadamard import fwht, next_pow2
from .tensor import CPTensor, check_cap, materialize

KINDS = ("identity", "gaussian", "rademacher", "fjlt", "khatri_rao", "kronecker", "kfjlt")
STRUCTURED_KINDS = ("khatri_rao", "kronecker", "kfjlt")


class SketchOperator:
    """Base class: an ``m x N`` random linear map.

    Subclasses implement ``_apply_columns`` (``(N, b) -> (m, b)``) and, for
    structured kinds, ``_apply_factors``.
    """

    kind: str = ""
    factored = False

    def __init__(self, m: int, input_shape, seed):
        self.m = int(m)
        self.input_shape = tuple(int(n) for n in input_shape)
        self.seed = seed
        if self.m < 1:
            raise ValidationError("output dimension m must be >= 1")
        if not self.input_shape or min(self.input_shape) < 1:
            raise ValidationError(f"invalid input shape {self.input_shape}")

    @property
    def N(self) -> int:
        return math.prod(self.input_shape)

    def __repr__(self):
        return f"{type(self).__name__}(m={self.m}, input_shape={self.input_shape}, seed={self.seed})"

    def apply_dense(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1 or x.size != self.N:
            raise ShapeMismatchError(f"{self.kind}: expected length {self.N}, got shape {x.shape}")
        return self._apply_columns(x[:, None])[:, 0]

    def apply_dense_batch(self, X) -> np.ndarray:
        """Apply to the columns of an ``(N, b)`` array."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] != self.N:
            raise ShapeMismatchError(f"{self.kind}: expected ({self.N}, b), got {X.shape}")
        return self._apply_columns(X)

    def apply_cp(self, t: CPTensor) -> np.ndarray:
        self._check_cp(t)
        if t.rank == 0:
            return np.zeros(self.m)
        if self.factored:
            return self._apply_factors(t)
        return self.apply_dense(materialize(t))

    def apply(self, x) -> np.ndarray:
        if isinstance(x, CPTensor):
            return self.apply_cp(x)
        return self.apply_dense(x)

    def to_matrix(self) -> np.ndarray:
        """Explicit ``m x N`` matrix, built column by column from ``apply(e_j)``."""
        check_cap(self.m * self.N, what="to_matrix")
        return self._apply_columns(np.eye(self.N))

    def spec(self) -> "OperatorSpec":
        return OperatorSpec(self.kind, self.m, self.input_shape, self.seed)

    def _check_cp(self, t: CPTensor) -> None:
        if len(self.input_shape) == 1 and self.kind not in STRUCTURED_KINDS:
            ok = t.size == self.N
        else:
            ok = t.mode_lengths == self.input_shape
        if not ok:
            raise ShapeMismatchError(
                f"{self.kind}: CP tensor with modes {t.mode_lengths} does not fit input shape {self.input_shape}"
            )

    def _apply_columns(self, X):
        raise NotImplementedError

    def _apply_factors(self, t):
        raise NotImplementedError


class IdentitySketch(SketchOperator):
    """``S = I``; useful as a zero-distortion control."""

    kind = "identity"
    factored = True

    def __init__(self, input_shape, seed=None):
        input_shape = (input_shape,) if np.isscalar(input_shape) else input_shape
        super().__init__(math.prod(input_shape), input_shape, seed)

    def _apply_columns(self, X):
        return X.copy()

    def _apply_factors(self, t):
        return materialize(t)


class DenseSketch(SketchOperator):
    """Explicit ``m x N`` matrix with i.i.d. entries of variance ``1/m``."""

    def __init__(self, kind, m, N, seed):
        super().__init__(m, (N,), seed)
        self.kind = kind
        check_cap(self.m * self.N, what=f"{kind} matrix")
        matrix = draw(rng(seed), kind, (self.m, self.N)) / math.sqrt(self.m)
        matrix.setflags(write=False)
        self.matrix = matrix

    def _apply_columns(self, X):
        return self.matrix @ X


class FJLT(SketchOperator):
    """``S = m^{-1/2} P_m H D`` on the input zero-padded to a power of two.

    ``D`` holds Rademacher signs, ``H`` is the unnormalized Walsh-Hadamard
    matrix and ``P_m`` samples m rows without replacement.  Equivalently
    ``sqrt(N_pad/m) P_m (H/sqrt(N_pad)) D`` with the orthonormal transform.
    """

    kind = "fjlt"

    def __init__(self, m, N, seed):
        super().__init__(m, (N,), seed)
        self.n_pad = next_pow2(self.N)
        if self.m > self.n_pad:
            raise ValidationError(f"fjlt: m={self.m} exceeds padded length {self.n_pad}")
        gen = rng(seed)
        self.signs = draw(gen, "rademacher", self.n_pad)
        self.rows = gen.choice(self.n_pad, size=self.m, replace=False)
        self.scale = 1.0 / math.sqrt(self.m)

    def _apply_columns(self, X):
        Z = np.zeros((self.n_pad, X.shape[1]))
        Z[: self.N] = X * self.signs[: self.N, None]
        return self.scale * fwht(Z, axis=0)[self.rows]


class KhatriRaoSketch(SketchOperator):
    """Rows ``m^{-1/2} (a_1 (x) ... (x) a_d)^T`` with independent sub-Gaussian ``a_j``.

    The per-mode row vectors are stored as ``G_j`` of shape ``m x n_j``; they
    are drawn mode by mode from a single generator seeded with ``seed``, so
    with ``d = 1`` the operator coincides with the dense sketch of the same
    distribution and seed.
    """

    kind = "khatri_rao"
    factored = True

    def __init__(self, m, mode_lengths, row_distribution="gaussian", seed=None):
        super().__init__(m, mode_lengths, seed)
        self.row_distribution = row_distribution
        gen = rng(seed)
        self.mode_rows = tuple(draw(gen, row_distribution, (self.m, n)) for n in self.input_shape)
        for g in self.mode_rows:
            g.setflags(write=False)
        self.scale = 1.0 / math.sqrt(self.m)

    def _apply_factors(self, t):
        # y_s = m^{-1/2} sum_i prod_j <a_j^(s), A_j[:, i]>, O(m r sum_j n_j)
        prod = self.mode_rows[0] @ t.factors[0]
        for g, a in zip(self.mode_rows[1:], t.factors[1:]):
            prod *= g @ a
        return self.scale * prod.sum(axis=1)

    def _apply_columns(self, X):
        b = X.shape[1]
        n = self.input_shape
        W = self.mode_rows[0] @ X.reshape(n[0], -1)
        for g, nj in zip(self.mode_rows[1:], n[1:]):
            W = np.einsum("sa,sar->sr", g, W.reshape(self.m, nj, -1))
        return self.scale * W.reshape(self.m, b)

    def spec(self):
        return OperatorSpec(self.kind, self.m, self.input_shape, self.seed, row_distribution=self.row_distribution)


class KroneckerSketch(SketchOperator):
    """``S = S_1 (x) ... (x) S_d`` built from per-mode flat operators."""

    kind = "kronecker"
    factored = True

    def __init__(self, mode_ops, seed=None, mode_specs=None):
        mode_ops = tuple(mode_ops)
        if not mode_ops:
            raise ValidationError("kronecker needs at least one mode operator")
        for op in mode_ops:
            if len(op.input_shape) != 1:
                raise ValidationError("kronecker mode operators must act on flat vectors")
        super().__init__(math.prod(op.m for op in mode_ops), [op.N for op in mode_ops], seed)
        check_cap(self.m, what="kronecker output")
        self.mode_ops = mode_ops
        self._mode_specs = mode_specs

    def _apply_factors(self, t):
        mapped = [op.apply_dense_batch(a) for op, a in zip(self.mode_ops, t.factors)]
        return materialize(CPTensor(tuple(mapped)))

    def _apply_columns(self, X):
        b = X.shape[1]
        T = X.reshape(self.input_shape + (b,))
        for axis, op in enumerate(self.mode_ops):
            T = np.moveaxis(T, axis, 0)
            rest = T.shape[1:]
            T = op.apply_dense_batch(T.reshape(T.shape[0], -1)).reshape((op.m,) + rest)
            T = np.moveaxis(T, 0, axis)
        return T.reshape(self.m, b)

    def spec(self):
        if self._mode_specs is not None:
            modes = self._mode_specs
        else:
            modes = tuple(op.spec() for op in self.mode_ops)
        return OperatorSpec(self.kind, self.m, self.input_shape, self.seed, modes=modes)


class KFJLT(SketchOperator):
    """Kronecker fast JL transform ``m^{-1/2} P_m (H_1 D_1 (x) ... (x) H_d D_d)``.

    Each mode is zero-padded to a power of two.  On CP input the per-mode
    mixing is applied to the factor matrices and only the m sampled entries
    of the mixed tensor are evaluated, decoding each flat index into per-mode
    indices (last mode fastest).
    """

    kind = "kfjlt"
    factored = True

    def __init__(self, m, mode_lengths, seed=None):
        super().__init__(m, mode_lengths, seed)
        self.mode_pads = tuple(next_pow2(n) for n in self.input_shape)
        self.n_pad = math.prod(self.mode_pads)
        if self.m > self.n_pad:
            raise ValidationError(f"kfjlt: m={self.m} exceeds padded size {self.n_pad}")
        gen = rng(seed)
        self.mode_signs = tuple(draw(gen, "rademacher", p) for p in self.mode_pads)
        self.rows = gen.choice(self.n_pad, size=self.m, replace=False)
        self.row_index = np.unravel_index(self.rows, self.mode_pads)
        self.scale = 1.0 / math.sqrt(self.m)

    def _mix(self, j, A):
        Z = np.zeros((self.mode_pads[j],) + A.shape[1:])
        Z[: A.shape[0]] = A * self.mode_signs[j][: A.shape[0]].reshape((-1,) + (1,) * (A.ndim - 1))
        return fwht(Z, axis=0)

    def _apply_factors(self, t):
        prod = None
        for j, a in enumerate(t.factors):
            picked = self._mix(j, a)[self.row_index[j]]
            prod = picked if prod is None else prod * picked
        return self.scale * prod.sum(axis=1)

    def _apply_columns(self, X):
        b = X.shape[1]
        T = X.reshape(self.input_shape + (b,))
        for j in range(len(self.input_shape)):
            T = np.moveaxis(self._mix(j, np.moveaxis(T, j, 0)), 0, j)
        return self.scale * T.reshape(self.n_pad, b)[self.rows]


def make_identity(input_shape) -> IdentitySketch:
    return IdentitySketch(input_shape)


def make_gaussian(m: int, N: int, seed) -> DenseSketch:
    return DenseSketch("gaussian", m, N, seed)


def make_rademacher(m: int, N: int, seed) -> DenseSketch:
    return DenseSketch("rademacher", m, N, seed)


def make_fjlt(m: int, N: int, seed) -> FJLT:
    return FJLT(m, N, seed)


def make_khatri_rao(m: int, mode_lengths, row_distribution: str = "gaussian", seed=None) -> KhatriRaoSketch:
    return KhatriRaoSketch(m, mode_lengths, row_distribution, seed)


def make_kronecker(mode_ops) -> KroneckerSketch:
    return KroneckerSketch(mode_ops)


def make_kfjlt(m: int, mode_lengths, seed) -> KFJLT:
    return KFJLT(m, mode_lengths, seed)


def apply_dense(op: SketchOperator, v) -> np.ndarray:
    return op.apply_dense(v)


def apply_cp(op: SketchOperator, t: CPTensor) -> np.ndarray:
    return op.apply_cp(t)


@dataclass(frozen=True)
class OperatorSpec:
    """Serializable recipe for a :class:`SketchOperator`.

    Realized randomness is never stored; ``build()`` regenerates it from the
    seed.  For ``kronecker``, ``modes`` lists per-mode specs; when ``seed`` is
    set the mode seeds are derived as ``derive_seed(seed, j)`` and any seeds
    inside ``modes`` are ignored.
    """

    kind: str
    m: int
    input_shape: tuple
    seed: int | None = None
    row_distribution: str | None = None
    modes: tuple | None = field(default=None)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown operator kind {self.kind!r}; expected one of {KINDS}")
        shape = self.input_shape
        shape = (shape,) if isinstance(shape, (int, np.integer)) else tuple(int(n) for n in shape)
        object.__setattr__(self, "input_shape", shape)
        if self.modes is not None:
            object.__setattr__(self, "modes", tuple(
                m if isinstance(m, OperatorSpec) else OperatorSpec.from_dict(m) for m in self.modes
            ))

    @property
    def N(self) -> int:
        return math.prod(self.input_shape)

    def with_seed(self, seed) -> "OperatorSpec":
        return replace(self, seed=seed)

    def build(self) -> SketchOperator:
        kind = self.kind
        if kind == "identity":
            return IdentitySketch(self.input_shape, self.seed)
        if kind in ("gaussian", "rademacher"):
            return DenseSketch(kind, self.m, self.N, self.seed)
        if kind == "fjlt":
            return FJLT(self.m, self.N, self.seed)
        if kind == "khatri_rao":
            return KhatriRaoSketch(self.m, self.input_shape, self.row_distribution or "gaussian", self.seed)
        if kind == "kfjlt":
            return KFJLT(self.m, self.input_shape, self.seed)
        # kronecker
        if not self.modes or len(self.modes) != len(self.input_shape):
            raise ValidationError("kronecker spec needs one mode spec per mode length")
        mode_specs = []
        for j, (sub, n) in enumerate(zip(self.modes, self.input_shape)):
            if sub.N != n:
                raise ValidationError(f"mode {j} spec has input length {sub.N}, expected {n}")
            if self.seed is not None:
                sub = sub.with_seed(derive_seed(self.seed, j))
            mode_specs.append(sub)
        ops = [s.build() for s in mode_specs]
        op = KroneckerSketch(ops, self.seed, mode_specs=self.modes)
        if op.m != self.m:
            raise ValidationError(f"kronecker m={self.m} does not equal product of mode outputs {op.m}")
        return op

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "m": self.m, "input_shape": list(self.input_shape), "seed": self.seed}
        if self.row_distribution is not None:
            d["row_distribution"] = self.row_distribution
        if self.modes is not None:
            d["modes"] = [s.to_dict() for s in self.modes]
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "OperatorSpec":
        try:
            kind = data["kind"]
            shape = data["input_shape"]
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"operator spec missing field: {exc}") from exc
        if kind == "identity":
            m = math.prod([shape] if isinstance(shape, int) else shape)
        elif kind == "kronecker" and "m" not in data and data.get("modes"):
            m = math.prod(int(s["m"]) for s in data["modes"])
        else:
            try:
                m = data["m"]
            except KeyError as exc:
                raise ValidationError("operator spec missing field: 'm'") from exc
        return cls(
            kind=kind,
            m=int(m),
            input_shape=shape,
            seed=data.get("seed"),
            row_distribution=data.get("row_distribution"),
            modes=data.get("modes"),
        )
