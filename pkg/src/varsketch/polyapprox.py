"""Polynomial certificates behind the median-sketch guarantee.

* :func:`relu_approx` -- truncated Chebyshev series of ``relu`` on [-1, 1];
  sup error is at most ``RELU_ERROR_CONSTANT / degree``.
* :func:`counting_poly_upper` / :func:`counting_poly_lower` -- polynomials on
  ``[lo, hi]`` that approximately count how many squared norms exceed
  ``1 + eps`` (resp. fall below ``1 - eps``).
* :func:`certify_median_on_points` -- evaluates the summed counting
  polynomials on a finite point set and checks the thresholds that force the
  committee median into ``[1 - eps, 1 + eps]``.
* :func:`mom_tail_bound` / :func:`mom_monte_carlo` -- the median-of-i.i.d.
  tail bound and a Monte Carlo check of it.

All constructions use truncated Chebyshev projections with closed-form
coefficients and are verified on a grid of ``GRID_POINTS`` equispaced points
plus every breakpoint.
"""
from __future__ import annotations

import functools
import math
from dataclasses import asdict, dataclass

import numpy as np
from numpy.polynomial import chebyshev

from ._seeding import rng
from .errors import ConstructionError, ValidationError

GRID_POINTS = 10_000

#: Observed ``sup_d d * ||ramp_d - ramp||`` over kink positions in (-1, 1);
#: the truncated series of ``(t - c)_+`` never exceeded this.
RELU_ERROR_CONSTANT = 1.0 / math.pi

#: Degree constant for the counting polynomials: ``degree = ceil(c L / (eps eta))``
#: on an interval of length ``L``.  Two ramps scaled by ``L/eps`` each carry
#: error ``RELU_ERROR_CONSTANT / degree``, and their sum must stay below
#: ``eta / 2``.
COUNTING_DEGREE_CONSTANT = 4.0 * RELU_ERROR_CONSTANT

GRID_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Poly:
    """Polynomial in the Chebyshev basis of ``[lo, hi]``."""

    coef: np.ndarray
    lo: float = -1.0
    hi: float = 1.0

    def __post_init__(self):
        coef = np.array(self.coef, dtype=np.float64)
        if coef.ndim != 1 or coef.size == 0:
            raise ValidationError("coefficients must be a nonempty 1-D array")
        if not self.hi > self.lo:
            raise ValidationError("interval must satisfy lo < hi")
        coef.setflags(write=False)
        object.__setattr__(self, "coef", coef)

    @property
    def degree(self) -> int:
        return self.coef.size - 1

    def to_unit(self, x):
        return (2.0 * np.asarray(x, dtype=np.float64) - (self.lo + self.hi)) / (self.hi - self.lo)

    def __call__(self, x):
        # numpy's chebval uses the Clenshaw recurrence
        return chebyshev.chebval(self.to_unit(x), self.coef)

    def grid(self, n: int = GRID_POINTS, extra=()) -> np.ndarray:
        return np.unique(np.concatenate([np.linspace(self.lo, self.hi, n), np.asarray(extra, dtype=float)]))


def ramp_coefficients(c: float, degree: int) -> np.ndarray:
    """Chebyshev coefficients of ``(t - c)_+`` on [-1, 1] up to ``degree``.

    With ``c = cos(theta)``, the n-th coefficient is
    ``(2/pi) int_0^theta (cos u - cos theta) cos(n u) du``, halved for n = 0.
    """
    if not -1.0 <= c <= 1.0:
        raise ValidationError("kink must lie in [-1, 1]")
    th = math.acos(c)
    cos_t = math.cos(th)
    out = np.zeros(degree + 1)
    out[0] = 0.5 * (math.sin(th) - th * cos_t)
    if degree >= 1:
        out[1] = 0.5 * (th + 0.5 * math.sin(2 * th)) - cos_t * math.sin(th)
    if degree >= 2:
        n = np.arange(2, degree + 1)
        out[2:] = 0.5 * (np.sin((n - 1) * th) / (n - 1) + np.sin((n + 1) * th) / (n + 1)) \
            - cos_t * np.sin(n * th) / n
    return out * (2.0 / math.pi)


def relu(x):
    return np.maximum(x, 0.0)


def relu_approx(degree: int) -> Poly:
    """Degree-``degree`` Chebyshev projection of ``relu`` on [-1, 1]."""
    if degree < 2:
        raise ValidationError("degree must be >= 2")
    return Poly(ramp_coefficients(0.0, degree))


def sup_error(poly: Poly, fn, n: int = GRID_POINTS, extra=()) -> float:
    x = poly.grid(n, extra)
    return float(np.max(np.abs(poly(x) - fn(x))))


def counting_degree(eps: float, eta: float, length: float) -> int:
    return max(2, math.ceil(COUNTING_DEGREE_CONSTANT * length / (eps * eta)))


def _check_counting_params(eps, M, eta):
    if not 0 < eps < 1:
        raise ValidationError(f"eps must lie in (0, 1), got {eps}")
    if M < 3:
        raise ValidationError(f"M must be >= 3, got {M}")
    if not 0 < eta < 0.5:
        raise ValidationError(f"eta must lie in (0, 1/2), got {eta}")


def _counting_poly(start, stop, eps, eta, lo, hi, rising):
    # f1 = (1/w)(relu(x - start) - relu(x - stop)), w = stop - start, is the
    # 0 -> 1 ramp; the falling version is 1 - f1.
    half = (hi - lo) / 2.0
    degree = counting_degree(eps, eta, hi - lo)
    unit = lambda x: (2.0 * x - (lo + hi)) / (hi - lo)
    scale = half / (stop - start)
    p1 = scale * (ramp_coefficients(unit(start), degree) - ramp_coefficients(unit(stop), degree))
    if not rising:
        p1 = -p1
        p1[0] += 1.0
    coef = (1.0 - eta) * p1
    coef[0] += eta / 2.0
    return Poly(coef, lo, hi)


@dataclass
class CountingCheck:
    """Grid verification of a counting polynomial."""

    degree: int
    degree_bound: int
    range_violation: float
    low_violation: float
    high_violation: float
    passed: bool
    witness: float | None

    def to_dict(self):
        return asdict(self)


def verify_counting_poly(poly: Poly, eps: float, eta: float, lower: bool = False,
                         n: int = GRID_POINTS) -> CountingCheck:
    """Check (i) values in [0, 1], (ii)/(iii) the eta-conditions, on the grid.

    Violations are reported as the largest amount by which each condition is
    missed (0 when satisfied).  ``witness`` is the worst violating grid point.
    """
    if lower:
        near, far = 1.0 - eps, 1.0 - eps / 2.0
    else:
        near, far = 1.0 + eps / 2.0, 1.0 + eps
    x = poly.grid(n, [near, far])
    v = poly(x)
    range_viol = np.maximum(np.maximum(-v, v - 1.0), 0.0)
    if lower:
        # >= 1 - eta on [lo, 1-eps], <= eta on [1-eps/2, hi]
        ones = x <= near
        zeros = x >= far
    else:
        # <= eta on [lo, 1+eps/2], >= 1 - eta on [1+eps, hi]
        zeros = x <= near
        ones = x >= far
    zero_viol = np.where(zeros, np.maximum(v - eta, 0.0), 0.0)
    one_viol = np.where(ones, np.maximum(1.0 - eta - v, 0.0), 0.0)
    low_viol, high_viol = (one_viol, zero_viol) if lower else (zero_viol, one_viol)
    total = np.maximum(np.maximum(range_viol, zero_viol), one_viol)
    worst = int(np.argmax(total))
    passed = bool(total[worst] <= GRID_TOL)
    return CountingCheck(
        degree=poly.degree,
        degree_bound=counting_degree(eps, eta, poly.hi - poly.lo),
        range_violation=float(range_viol.max()),
        low_violation=float(low_viol.max()),
        high_violation=float(high_viol.max()),
        passed=passed,
        witness=None if passed else float(x[worst]),
    )


@functools.lru_cache(maxsize=64)
def _build_counting(eps, M, eta, lo, hi, lower):
    _check_counting_params(eps, M, eta)
    if lower:
        poly = _counting_poly(1.0 - eps, 1.0 - eps / 2.0, eps, eta, lo, hi, rising=False)
    else:
        poly = _counting_poly(1.0 + eps / 2.0, 1.0 + eps, eps, eta, lo, hi, rising=True)
    check = verify_counting_poly(poly, eps, eta, lower=lower)
    if not check.passed:
        raise ConstructionError(
            f"counting polynomial failed grid verification at x={check.witness} "
            f"(eps={eps}, M={M}, eta={eta}, degree={poly.degree})",
            witness=check.witness,
        )
    return poly


def counting_poly_upper(eps: float, M: float, eta: float, lo: float = 0.0, hi: float | None = None) -> Poly:
    """Approximate indicator of ``x > 1 + eps`` on ``[lo, hi]`` (default ``[0, M]``).

    Satisfies on the verification grid: values in [0, 1]; ``<= eta`` on
    ``[lo, 1+eps/2]``; ``>= 1-eta`` on ``[1+eps, hi]``.  Built as
    ``(1-eta) p1 + eta/2`` where ``p1`` approximates the piecewise-linear ramp
    through ``(1+eps/2, 0)`` and ``(1+eps, 1)`` to within ``eta/2``.
    """
    hi = float(M) if hi is None else float(hi)
    return _build_counting(float(eps), float(M), float(eta), float(lo), hi, False)


def counting_poly_lower(eps: float, M: float, eta: float, lo: float = 0.0, hi: float | None = None) -> Poly:
    """Mirror of :func:`counting_poly_upper` counting ``x < 1 - eps``."""
    hi = float(M) if hi is None else float(hi)
    return _build_counting(float(eps), float(M), float(eta), float(lo), hi, True)


def ramp_target(eps: float, lower: bool = False):
    """The exact piecewise-linear function the counting polynomial approximates."""
    if lower:
        a, b = 1.0 - eps, 1.0 - eps / 2.0
        return lambda x: 1.0 - np.clip((np.asarray(x) - a) / (b - a), 0.0, 1.0)
    a, b = 1.0 + eps / 2.0, 1.0 + eps
    return lambda x: np.clip((np.asarray(x) - a) / (b - a), 0.0, 1.0)


# ---------------------------------------------------------------------------
# median certificate


@dataclass
class Certificate:
    passed: bool
    k: int
    eta: float
    threshold: float
    upper_sums: list
    lower_sums: list
    degree: int
    witness: int | None = None
    side: str | None = None

    def to_dict(self):
        return asdict(self)


def certify_median_on_points(sq_norms, eps: float, M: float, eta: float | None = None) -> Certificate:
    """Certify ``med_i ||S_i x||^2`` on a finite point set via counting polynomials.

    ``sq_norms`` is the ``(2k+1) x |Q|`` matrix of ``||S_i x_j||^2``.  With
    counting polynomials ``p`` and ``r`` built on ``[0, 2M]``, the certificate
    passes when every column has ``sum_i p <= (k+1) eta + k`` and
    ``sum_i r <= (k+1) eta + k``.  This checks the finite-set hypothesis only;
    extending it to a whole set needs a norming set.
    """
    X = np.asarray(sq_norms, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] % 2 == 0:
        raise ValidationError("sq_norms must be (2k+1) x |Q|")
    k = (X.shape[0] - 1) // 2
    eta_max = 1.0 / (3 * (k + 1))
    eta = eta_max if eta is None else float(eta)
    if not 0 < eta <= eta_max:
        raise ValidationError(f"eta must lie in (0, 1/(3(k+1))] = (0, {eta_max:.6g}], got {eta}")
    if np.any(X < 0) or np.any(X > M):
        raise ValidationError(f"squared norms must lie in [0, M={M}]")
    p = counting_poly_upper(eps, M, eta, hi=2.0 * M)
    r = counting_poly_lower(eps, M, eta, hi=2.0 * M)
    P = p(X).sum(axis=0)
    R = r(X).sum(axis=0)
    threshold = (k + 1) * eta + k
    tol = GRID_TOL * X.shape[0]
    bad_p = np.flatnonzero(P > threshold + tol)
    bad_r = np.flatnonzero(R > threshold + tol)
    witness = side = None
    if bad_p.size:
        witness, side = int(bad_p[0]), "upper"
    elif bad_r.size:
        witness, side = int(bad_r[0]), "lower"
    return Certificate(
        passed=witness is None, k=k, eta=eta, threshold=threshold,
        upper_sums=P.tolist(), lower_sums=R.tolist(), degree=p.degree,
        witness=witness, side=side,
    )


# ---------------------------------------------------------------------------
# median-of-i.i.d. tail


def mom_tail_bound(p: float, k: int) -> float:
    """``(4p)^(k+1) / sqrt(pi (k + 1/4))`` clamped to [0, 1]."""
    if not 0.0 <= p <= 1.0:
        raise ValidationError(f"p must lie in [0, 1], got {p}")
    if k < 0 or int(k) != k:
        raise ValidationError("k must be a nonnegative integer")
    return min(1.0, (4.0 * p) ** (k + 1) / math.sqrt(math.pi * (k + 0.25)))


@dataclass
class MomResult:
    p: float
    k: int
    trials: int
    failures: int
    rate: float
    ci_low: float
    ci_high: float
    half_width: float
    bound: float
    confidence: float
    seed: int

    @property
    def within_bound(self) -> bool:
        return self.rate <= self.bound + self.half_width

    def to_dict(self):
        d = asdict(self)
        d["within_bound"] = self.within_bound
        return d


def mom_monte_carlo(p: float, k: int, trials: int, seed: int = 0, a: float = 0.0, b: float = 1.0,
                    confidence: float = 0.99, min_trials: int = 1000) -> MomResult:
    """Empirical ``Pr(median of 2k+1 draws not in [a, b])``.

    Draws come from the three atoms ``a-1, (a+b)/2, b+1`` with masses
    ``p, 1-2p, p`` so that ``Pr(X <= a) = Pr(X >= b) = p``.  The interval is
    a two-sided exact (Clopper-Pearson) binomial interval; ``half_width`` is
    its upper half.
    """
    from scipy import stats

    if not 0.0 <= p <= 0.5:
        raise ValidationError(f"the three-atom law needs p in [0, 1/2], got {p}")
    if k < 0 or int(k) != k:
        raise ValidationError("k must be a nonnegative integer")
    if trials < min_trials:
        raise ValidationError(f"need at least {min_trials} trials")
    if not a < b:
        raise ValidationError("need a < b")
    gen = rng(seed)
    atoms = np.array([a - 1.0, 0.5 * (a + b), b + 1.0])
    draws = atoms[gen.choice(3, size=(trials, 2 * k + 1), p=[p, 1.0 - 2.0 * p, p])]
    med = np.median(draws, axis=1)
    failures = int(np.count_nonzero((med < a) | (med > b)))
    ci = stats.binomtest(failures, trials).proportion_ci(confidence_level=confidence, method="exact")
    rate = failures / trials
    return MomResult(
        p=p, k=int(k), trials=int(trials), failures=failures, rate=rate,
        ci_low=float(ci.low), ci_high=float(ci.high), half_width=float(ci.high) - rate,
        bound=mom_tail_bound(p, k), confidence=confidence, seed=seed,
    )
