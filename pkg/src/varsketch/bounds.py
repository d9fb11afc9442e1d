"""Closed-form sketching-dimension bounds and a Monte Carlo tail calibrator.

The universal constants of the underlying theorems are not known
numerically.  They live in :class:`ConstantSet`, default to 1, and are passed
explicitly to every calculator.  Degrees are handled in log space so that
Bezout-sized degrees ``d**n`` never overflow.

Integer outputs are ceilings of the real-valued bounds, clamped to ``>= 1``
(committee half-size ``k`` is clamped to ``>= 0``).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DegenerateFitError, ValidationError

# ceil() guard: a bound that is an integer up to rounding noise stays that integer
_CEIL_RTOL = 1e-12


def _ceil(x: float) -> int:
    return math.ceil(x - _CEIL_RTOL * max(1.0, abs(x)))


def _logsumexp(values) -> float:
    values = list(values)
    top = max(values)
    if math.isinf(top):
        return top
    return top + math.log(math.fsum(math.exp(v - top) for v in values))


def _check_unit_interval(name, value):
    if not 0.0 < value < 1.0:
        raise ValidationError(f"{name} must lie in (0, 1), got {value}")


@dataclass(frozen=True)
class ConstantSet:
    """Universal constants threaded through every bound (all default to 1).

    ``C`` is the generic constant of the FJLT/sub-Gaussian examples, ``C1..C4``
    those of the norming-set, sketching and committee bounds, ``C1d``/``C2d``
    the order-d tensor constants, ``c_phi`` the prefactor of the order-d tail
    function, ``K`` the sub-Gaussian norm bound and ``M`` the per-sketch norm
    bound (``None`` means "use the ambient dimension N").
    """

    C: float = 1.0
    C1: float = 1.0
    C2: float = 1.0
    C3: float = 1.0
    C4: float = 1.0
    C1d: float = 1.0
    C2d: float = 1.0
    c_phi: float = 1.0
    K: float = 1.0
    M: float | None = None

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value is not None and not value > 0:
                raise ValidationError(f"constant {name} must be strictly positive, got {value}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict | None) -> "ConstantSet":
        data = dict(data or {})
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown constants: {sorted(unknown)}")
        return cls(**{k: (None if v is None else float(v)) for k, v in data.items()})


DEFAULT_CONSTANTS = ConstantSet()


@dataclass(frozen=True)
class VarietyParams:
    """(dimension, degree) description of the set being sketched.

    ``mode`` is ``"variety"`` (dimension ``n``, log-degree ``log_D``),
    ``"polymap"`` (image of a polynomial map from R^n with coordinate degree
    ``d_poly``; enters the bounds through ``log D = n log d_poly``) or
    ``"reducible"`` (``components`` is a tuple of ``(log_D_i, n_i)``).
    """

    mode: str
    n: int = 0
    log_D: float = 0.0
    d_poly: int | None = None
    components: tuple = ()

    def __post_init__(self):
        if self.mode not in ("variety", "polymap", "reducible"):
            raise ValidationError(f"unknown variety mode {self.mode!r}")
        if self.n < 0:
            raise ValidationError("dimension n must be nonnegative")
        if self.mode == "variety" and self.log_D < 0:
            raise ValidationError("degree D must be >= 1")
        if self.mode == "polymap" and (self.d_poly is None or self.d_poly < 1):
            raise ValidationError("polymap needs coordinate degree d_poly >= 1")
        if self.mode == "reducible":
            comps = tuple((float(ld), int(ni)) for ld, ni in self.components)
            if not comps:
                raise ValidationError("reducible mode needs at least one component")
            if any(ld < 0 or ni < 0 for ld, ni in comps):
                raise ValidationError("component degrees must be >= 1 and dimensions >= 0")
            object.__setattr__(self, "components", comps)

    @classmethod
    def variety(cls, n: int, D: float | None = None, log_D: float | None = None) -> "VarietyParams":
        if log_D is None:
            if D is None or D < 1:
                raise ValidationError("variety needs degree D >= 1 (or log_D)")
            log_D = math.log(D)
        return cls("variety", n=int(n), log_D=float(log_D))

    @classmethod
    def polymap(cls, n: int, d: int) -> "VarietyParams":
        return cls("polymap", n=int(n), d_poly=int(d))

    @classmethod
    def reducible(cls, components, log_degrees: bool = False) -> "VarietyParams":
        """``components`` holds ``(D_i, n_i)`` pairs (or ``(log D_i, n_i)``)."""
        comps = []
        for D, ni in components:
            if not log_degrees:
                if D < 1:
                    raise ValidationError("component degrees must be >= 1")
                D = math.log(D)
            comps.append((D, ni))
        return cls("reducible", components=tuple(comps))

    @classmethod
    def cp_tensors(cls, n: int, d: int, r: int) -> "VarietyParams":
        """Rank-``r`` order-``d`` CP tensors with mode length ``n``.

        The CP map sends ``n*d*r`` factor entries to the tensor through
        coordinates of degree ``d``, so ``n_v = n d r``.
        """
        return cls.polymap(n * d * r, d)

    @property
    def log_degree(self) -> float:
        if self.mode == "polymap":
            return self.n * math.log(self.d_poly)
        if self.mode == "reducible":
            raise ValidationError("reducible varieties have per-component degrees")
        return self.log_D

    @property
    def intrinsic_dim(self) -> int:
        if self.mode == "reducible":
            return max(ni for _, ni in self.components)
        return self.n

    def to_dict(self) -> dict:
        d = {"mode": self.mode}
        if self.mode == "variety":
            d.update(n=self.n, log_D=self.log_D)
        elif self.mode == "polymap":
            d.update(n=self.n, d_poly=self.d_poly)
        else:
            d["log_components"] = [list(c) for c in self.components]
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "VarietyParams":
        mode = data.get("mode")
        try:
            if mode == "variety":
                return cls.variety(data["n"], D=data.get("D"), log_D=data.get("log_D"))
            if mode == "polymap":
                return cls.polymap(data["n"], data.get("d_poly", data.get("d")))
            if mode == "reducible":
                if "log_components" in data:
                    return cls.reducible(data["log_components"], log_degrees=True)
                return cls.reducible(data["components"])
            if mode == "cp":
                return cls.cp_tensors(data["n"], data["d"], data["r"])
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed variety spec: {exc!r}") from exc
        raise ValidationError(f"unknown variety mode {mode!r}")


def _n_log(coef: float, n: float) -> float:
    # n log(coef n) with the n = 0 limit taken as 0
    return 0.0 if n == 0 else n * math.log(coef * n)


def norming_log_card(D=None, n=0, d=1, omega=2.0, consts: ConstantSet = DEFAULT_CONSTANTS,
                     log_D: float | None = None) -> float:
    """Upper bound on ``log |Q|`` for a (d, omega) norming set.

    ``C1 log D + C1 n (log(C2 n d) - log log omega)``, equal to ``C1 log D``
    when ``n = 0``.
    """
    if not omega > 1:
        raise ValidationError(f"omega must exceed 1, got {omega}")
    if d < 1 or n < 0:
        raise ValidationError("need d >= 1 and n >= 0")
    if log_D is None:
        if D is None or D < 1:
            raise ValidationError("degree D must be >= 1")
        log_D = math.log(D)
    head = consts.C1 * log_D
    if n == 0:
        return head
    return head + consts.C1 * n * (math.log(consts.C2 * n * d) - math.log(math.log(omega)))


def _component_terms(vp: VarietyParams, c_outer: float, c_inner: float) -> list:
    if vp.mode == "reducible":
        return [c_outer * ld + c_outer * _n_log(c_inner, ni) for ld, ni in vp.components]
    return [c_outer * vp.log_degree + c_outer * _n_log(c_inner, vp.n)]


def _log_card(vp: VarietyParams, c_outer: float, c_inner: float) -> float:
    terms = _component_terms(vp, c_outer, c_inner)
    return terms[0] if len(terms) == 1 else _logsumexp(terms)


def required_phi(vp: VarietyParams, delta: float, consts: ConstantSet = DEFAULT_CONSTANTS) -> float:
    """Threshold that ``phi(m, eps/sqrt 2)`` must reach for an (eps, delta) embedding.

    Irreducible: ``C1 log D + C1 n log(C2 n) + log(1/delta)`` (polymap uses
    ``log D = n log d``); reducible: ``log sum_i D_i^C1 (C2 n_i)^(C1 n_i) +
    log(1/delta)``, evaluated with log-sum-exp.
    """
    _check_unit_interval("delta", delta)
    return _log_card(vp, consts.C1, consts.C2) + math.log(1.0 / delta)


class PhiFunction:
    """Single-vector tail exponent ``phi(m, eps)``: failure <= exp(-phi)."""

    def __init__(self, kind: str, evaluate, params: dict):
        self.kind = kind
        self._evaluate = evaluate
        self.params = params

    def __call__(self, m, eps):
        return self._evaluate(m, eps)

    def evaluate(self, m, eps):
        return self._evaluate(m, eps)

    def __repr__(self):
        return f"PhiFunction({self.kind}, {self.params})"

    @classmethod
    def subgaussian(cls, K: float = 1.0, C: float = 1.0) -> "PhiFunction":
        """``C m eps^2 / K^2``."""
        return cls("subgaussian", lambda m, eps: C * m * eps**2 / K**2, {"K": K, "C": C})

    @classmethod
    def tensor_order(cls, d: int, c: float = 1.0) -> "PhiFunction":
        """``c m^(1/d)``; everything except m is absorbed into ``c``."""
        return cls("tensor_order", lambda m, eps: c * m ** (1.0 / d), {"d": d, "c": c})

    @classmethod
    def table(cls, ms, values) -> "PhiFunction":
        """Piecewise-linear interpolation of tabulated values, flat outside the table."""
        ms = np.asarray(ms, dtype=float)
        values = np.asarray(values, dtype=float)
        if ms.ndim != 1 or ms.shape != values.shape or ms.size == 0:
            raise ValidationError("table needs matching 1-D m and value arrays")
        order = np.argsort(ms)
        ms, values = ms[order], values[order]
        if np.any(values < 0) or np.any(np.diff(values) < 0):
            raise ValidationError("tabulated phi must be nonnegative and nondecreasing in m")
        return cls("table", lambda m, eps: float(np.interp(m, ms, values)), {"m": ms.tolist(), "phi": values.tolist()})


def min_dimension(phi: PhiFunction, eps: float, threshold: float, m_max: int = 2**40) -> int:
    """Smallest integer m with ``phi(m, eps/sqrt 2) >= threshold``.

    Exponential then binary search; relies on phi being nondecreasing in m.
    """
    e = eps / math.sqrt(2.0)
    if phi(1, e) >= threshold:
        return 1
    hi = 2
    while phi(hi, e) < threshold:
        hi *= 2
        if hi > m_max:
            raise ValidationError("phi never reaches the threshold below m_max")
    lo = hi // 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if phi(mid, e) >= threshold:
            hi = mid
        else:
            lo = mid
    return hi


def subgaussian_dim(eps: float, delta: float, vp: VarietyParams, K: float | None = None,
                    consts: ConstantSet = DEFAULT_CONSTANTS) -> int:
    """``ceil(2 K^2 required_phi / (C eps^2))``.

    This is the least m with ``C m (eps/sqrt 2)^2 / K^2 >= required_phi``.
    """
    _check_unit_interval("eps", eps)
    K = consts.K if K is None else K
    if K <= 0:
        raise ValidationError("K must be positive")
    threshold = required_phi(vp, delta, consts)
    return max(1, _ceil(2.0 * K**2 * threshold / (consts.C * eps**2)))


def tensor_sufficient_dim(eps: float, delta: float, d: int, consts: ConstantSet = DEFAULT_CONSTANTS) -> int:
    """``max{C1d eps^-1 log^d(1/delta), C2d eps^-2 log(1/delta)}`` for order-d sketches."""
    _check_unit_interval("eps", eps)
    _check_unit_interval("delta", delta)
    if d < 1:
        raise ValidationError("tensor order d must be >= 1")
    L = math.log(1.0 / delta)
    value = max(consts.C1d * L**d / eps, consts.C2d * L / eps**2)
    return max(1, _ceil(value))


def tensor_phi(m: float, eps: float, d: int, consts: ConstantSet = DEFAULT_CONSTANTS) -> float:
    """``c_phi m^(1/d)``, the order-d tail exponent (eps is absorbed into c_phi)."""
    if d < 1:
        raise ValidationError("tensor order d must be >= 1")
    return consts.c_phi * m ** (1.0 / d)


def fjlt_delta(vp: VarietyParams, delta: float, consts: ConstantSet = DEFAULT_CONSTANTS) -> float:
    """``Delta = C log D + C n log(C n) + log(1/delta)`` (log-sum-exp over components)."""
    _check_unit_interval("delta", delta)
    return _log_card(vp, consts.C, consts.C) + math.log(1.0 / delta)


def fjlt_dim(eps: float, delta: float, vp: VarietyParams, N: int, consts: ConstantSet = DEFAULT_CONSTANTS) -> int:
    """``C1 eps^-2 Delta [log^2(Delta/eps) log N + log(1/delta)]``."""
    _check_unit_interval("eps", eps)
    if N < 2:
        raise ValidationError("ambient dimension N must be >= 2")
    big_delta = fjlt_delta(vp, delta, consts)
    value = consts.C1 * big_delta / eps**2 * (
        math.log(big_delta / eps) ** 2 * math.log(N) + math.log(1.0 / delta)
    )
    return max(1, _ceil(value))


def median_committee_k(n_v: int, M: float, eps: float, delta: float,
                       consts: ConstantSet = DEFAULT_CONSTANTS) -> int:
    """Smallest ``k >= C4 (n_v log(M/eps) + log(1/delta))``; committee size is ``2k+1``.

    The simplified bound assumes ``M >= n_v``; a warning is issued otherwise.
    """
    _check_unit_interval("eps", eps)
    _check_unit_interval("delta", delta)
    if n_v < 0 or M <= 0:
        raise ValidationError("need n_v >= 0 and M > 0")
    if M < n_v:
        warnings.warn(f"M={M} < n_v={n_v}: the simplified committee bound assumes M >= n_v", stacklevel=2)
    value = consts.C4 * (n_v * math.log(M / eps) + math.log(1.0 / delta))
    return max(0, _ceil(value))


def total_measurements(m: int, k: int) -> int:
    if m < 1 or k < 0:
        raise ValidationError("need m >= 1 and k >= 0")
    return m * (2 * k + 1)


# per-member tail level used by the committee bound: theta = 1 + log 4
COMMITTEE_THETA = 1.0 + math.log(4.0)


@dataclass
class BudgetReport:
    """All calculator outputs for one problem, plus the inputs that produced them."""

    variety: dict
    eps: float
    delta: float
    N: int
    tensor_order: int | None
    constants: dict
    required_phi: float
    subgaussian_dim: int
    fjlt_delta: float
    fjlt_dim: int
    tensor_dim: int | None
    committee_M: float
    committee_k: int
    committee_size: int
    committee_member_dim: int
    committee_total: int
    norming_log_card: float | None = None
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def recompute(self) -> "BudgetReport":
        return budget_report(
            VarietyParams.from_dict(self.variety), self.eps, self.delta, self.N,
            ConstantSet.from_dict(self.constants), tensor_order=self.tensor_order,
        )


def budget_report(vp: VarietyParams, eps: float, delta: float, N: int,
                  consts: ConstantSet = DEFAULT_CONSTANTS, tensor_order: int | None = None) -> BudgetReport:
    """Compare single-sketch dimensions against the median-committee budget.

    Committee members are sized so each fails with probability at most
    ``exp(-theta)``, ``theta = 1 + log 4``, at accuracy ``eps/2``: with the
    order-d tensor bound when ``tensor_order`` is given, otherwise with the
    sub-Gaussian tail ``C m eps^2 / K^2``.
    """
    M = float(N) if consts.M is None else consts.M
    n_v = vp.intrinsic_dim
    notes = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        k = median_committee_k(n_v, M, eps, delta, consts)
    notes.extend(str(w.message) for w in caught)
    member_delta = math.exp(-COMMITTEE_THETA)
    if tensor_order is not None:
        member_m = tensor_sufficient_dim(eps / 2, member_delta, tensor_order, consts)
        tensor_dim = tensor_sufficient_dim(eps, delta, tensor_order, consts)
    else:
        member_m = max(1, _ceil(COMMITTEE_THETA * consts.K**2 / (consts.C * (eps / 2) ** 2)))
        tensor_dim = None
    log_card = None
    # the sketching bounds rest on a (4, 2) norming set of the normalized set
    if vp.mode != "reducible":
        log_card = norming_log_card(n=vp.n, d=4, omega=2.0, consts=consts, log_D=vp.log_degree)
    return BudgetReport(
        variety=vp.to_dict(),
        eps=eps,
        delta=delta,
        N=int(N),
        tensor_order=tensor_order,
        constants=consts.to_dict(),
        required_phi=required_phi(vp, delta, consts),
        subgaussian_dim=subgaussian_dim(eps, delta, vp, consts=consts),
        fjlt_delta=fjlt_delta(vp, delta, consts),
        fjlt_dim=fjlt_dim(eps, delta, vp, N, consts),
        tensor_dim=tensor_dim,
        committee_M=M,
        committee_k=k,
        committee_size=2 * k + 1,
        committee_member_dim=member_m,
        committee_total=total_measurements(member_m, k),
        norming_log_card=log_card,
        notes=notes,
    )


# ---------------------------------------------------------------------------
# Monte Carlo calibration of phi


@dataclass
class CalibrationResult:
    """Fit of ``-log(failure rate)`` against m.

    Model: ``-log f(m) = c m^alpha + 0.5 log m + b``; the ``0.5 log m`` term is
    the usual ``1/sqrt(m)`` prefactor of tail probabilities for averages of m
    i.i.d. terms, which every sketch kind here produces.  ``offset`` is the
    least-squares intercept shifted down so the fitted curve lies below the
    observations on at least 90% of usable grid points.  ``theory_constant``
    is the conservative ``c`` in ``phi = c m^theory_exponent`` (no offset).
    """

    kind: str
    eps: float
    m_grid: list
    trials: list
    failures: list
    failure_rates: list
    used: list
    exponent: float
    exponent_ci: tuple | None
    coefficient: float
    coefficient_ci: tuple | None
    offset: float
    theory_exponent: float
    theory_constant: float
    coverage: float
    seed: int

    def phi(self, m):
        m = np.asarray(m, dtype=float)
        return self.coefficient * m**self.exponent + 0.5 * np.log(m) + self.offset

    def to_dict(self) -> dict:
        return asdict(self)


def _tail_trial(kind, eps, m, seed, mode_lengths, row_distribution):
    # imported here to keep bounds importable without the sketch machinery
    from .sketch import OperatorSpec
    from .tensor import CPTensor

    if kind in ("gaussian", "rademacher", "fjlt"):
        N = math.prod(mode_lengths)
        x = np.ones(N) / math.sqrt(N)
        op = OperatorSpec(kind, m, (N,), seed).build()
        y = op.apply_dense(x)
    else:
        x = CPTensor(tuple(np.ones((n, 1)) / math.sqrt(n) for n in mode_lengths))
        op = OperatorSpec(kind, m, mode_lengths, seed, row_distribution=row_distribution).build()
        y = op.apply_cp(x)
    return abs(float(y @ y) - 1.0) > eps


def calibrate_phi(kind: str, eps: float, m_grid, trials=1000, seed: int = 0, *,
                  mode_lengths=None, row_distribution: str = "gaussian", quantile: float = 0.9,
                  threads=None, min_trials: int = 1000) -> CalibrationResult:
    """Estimate the tail exponent of ``kind`` from Monte Carlo failure rates.

    For each m in ``m_grid``, ``trials`` fresh operators (seeds
    ``derive_seed(seed, m, t)``) sketch a fixed unit vector (the flat
    all-equal vector for dense kinds, the all-equal rank-1 tensor for
    structured kinds) and the rate of ``| ||Sx||^2 - 1 | > eps`` is recorded.
    Grid points with rate 0 or 1 carry no information and are excluded; fewer
    than three usable points raise :class:`DegenerateFitError`.
    """
    from scipy import optimize, stats

    from ._parallel import pmap
    from ._seeding import derive_seed

    m_grid = [int(m) for m in m_grid]
    if not m_grid:
        raise ValidationError("m_grid must be nonempty")
    _check_unit_interval("eps", eps)
    per_point = list(trials) if np.ndim(trials) else [int(trials)] * len(m_grid)
    if len(per_point) != len(m_grid):
        raise ValidationError("trials must be a scalar or match m_grid")
    if any(t == 0 for t in per_point):
        raise DegenerateFitError("a grid point has zero trials; its failure rate is undefined")
    if any(t < min_trials for t in per_point):
        raise ValidationError(f"need at least {min_trials} trials per grid point")
    if mode_lengths is None:
        mode_lengths = (64,) if kind in ("gaussian", "rademacher", "fjlt") else (8, 8)
    mode_lengths = tuple(int(n) for n in mode_lengths)

    failures = []
    for m, T in zip(m_grid, per_point):
        hits = pmap(lambda t, m=m: _tail_trial(kind, eps, m, derive_seed(seed, m, t), mode_lengths, row_distribution),
                    range(T), threads)
        failures.append(int(sum(hits)))
    rates = [f / T for f, T in zip(failures, per_point)]
    used = [0 < f < T for f, T in zip(failures, per_point)]
    ms = np.array([m for m, u in zip(m_grid, used) if u], dtype=float)
    ys = np.array([-math.log(r) for r, u in zip(rates, used) if u])
    if ms.size < 3:
        raise DegenerateFitError(
            f"only {ms.size} grid points have failure rates strictly between 0 and 1; "
            f"rates were {rates}"
        )

    target = ys - 0.5 * np.log(ms)

    def model(m, b, c, a):
        return b + c * m**a

    p0 = (0.0, max(float(np.mean(target / ms)), 1e-6), 1.0)
    try:
        with warnings.catch_warnings():
            # three points leave no residual degrees of freedom; the CI is then reported as None
            warnings.simplefilter("ignore", optimize.OptimizeWarning)
            params, cov = optimize.curve_fit(model, ms, target, p0=p0, maxfev=200000)
    except RuntimeError as exc:
        raise DegenerateFitError(f"tail model fit did not converge: {exc}") from exc
    b, c, a = (float(v) for v in params)
    dof = max(ms.size - 3, 1)
    tq = float(stats.t.ppf(0.975, dof))
    se = np.sqrt(np.clip(np.diag(cov), 0, None)) if ms.size > 3 and np.all(np.isfinite(cov)) else None

    residual = target - model(ms, b, c, a)
    # shift the intercept so at least `quantile` of the points lie above the fit
    k_low = int(math.floor((1.0 - quantile) * ms.size))
    offset = b + float(np.sort(residual)[k_low])
    coverage = float(np.mean(ys >= c * ms**a + 0.5 * np.log(ms) + offset - 1e-12))

    theory_exponent = _theory_exponent(kind, mode_lengths)
    ratios = np.sort(ys / ms**theory_exponent)
    theory_constant = float(ratios[k_low])

    return CalibrationResult(
        kind=kind, eps=eps, m_grid=m_grid, trials=per_point, failures=failures,
        failure_rates=rates, used=used, exponent=a,
        exponent_ci=None if se is None else (a - tq * float(se[2]), a + tq * float(se[2])),
        coefficient=c, coefficient_ci=None if se is None else (c - tq * float(se[1]), c + tq * float(se[1])),
        offset=offset, theory_exponent=theory_exponent, theory_constant=theory_constant,
        coverage=coverage, seed=seed,
    )


def _theory_exponent(kind, mode_lengths) -> float:
    if kind in ("khatri_rao", "kfjlt", "kronecker"):
        return 1.0 / len(mode_lengths)
    return 1.0
