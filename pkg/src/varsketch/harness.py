"""Reproducible experiments: sampled distortion, committee comparison, pairwise distances.

Every random draw derives from the config's master seed through
``derive_seed(master, trial, role)``, so a config and seed reproduce a report
exactly.  Wall-clock timings and timestamps live in a separate
``provenance`` block and are excluded from :meth:`deterministic_json`.

Distortion is measured on points sampled from the configured family.  That
is a surrogate for "all x in V", which cannot be checked, and reports label
it ``"sampled distortion"``.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import platform
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from ._parallel import pmap
from ._seeding import derive_seed
from .errors import ValidationError
from .median import Committee, argmed, difference, distortion, median_jlt_pairwise, sketch_profiles
from .sketch import KINDS, STRUCTURED_KINDS, OperatorSpec
from .tensor import CPTensor, check_cap, cp_difference, materialize, norm_sq, random_unit_cp

SCHEMA_VERSION = 1
FAMILIES = ("random_unit_cp", "cp_differences", "fixed_target_residuals")
QUANTILES = (0.5, 0.9, 0.99)


@dataclass(frozen=True)
class ProblemConfig:
    mode_lengths: tuple
    rank: int = 1
    points: int = 10
    family: str = "random_unit_cp"
    distribution: str = "gaussian"
    target_rank: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode_lengths", tuple(int(n) for n in self.mode_lengths))
        if not self.mode_lengths or min(self.mode_lengths) < 1:
            raise ValidationError(f"invalid mode lengths {self.mode_lengths}")
        if self.rank < 1:
            raise ValidationError("problem rank must be >= 1")
        if self.points < 1:
            raise ValidationError("need at least one point")
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown point family {self.family!r}; expected one of {FAMILIES}")
        if self.distribution not in ("gaussian", "rademacher"):
            raise ValidationError(f"unknown distribution {self.distribution!r}")

    @property
    def N(self) -> int:
        return math.prod(self.mode_lengths)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce an experiment.

    ``operator`` holds a seedless operator recipe, e.g.
    ``{"kind": "khatri_rao", "m": 64}``; its input shape defaults to the
    problem's mode lengths (structured kinds) or ``N`` (dense kinds).
    ``committee_sizes`` (odd integers) is used by the committee comparison.
    With ``resample_points`` false every trial reuses the trial-0 point set,
    so only the operator randomness varies between trials.
    """

    problem: ProblemConfig
    operator: dict
    k: int = 0
    eps: float = 0.5
    trials: int = 100
    seed: int = 0
    committee_sizes: tuple | None = None
    out: str | None = None
    resample_points: bool = True

    def __post_init__(self):
        if isinstance(self.problem, dict):
            object.__setattr__(self, "problem", ProblemConfig(**self.problem))
        if self.k < 0:
            raise ValidationError("k must be >= 0")
        if not 0 < self.eps < 1:
            raise ValidationError("eps must lie in (0, 1)")
        if self.trials < 1:
            raise ValidationError("trials must be >= 1")
        if self.committee_sizes is not None:
            sizes = tuple(int(s) for s in self.committee_sizes)
            if any(s < 1 or s % 2 == 0 for s in sizes):
                raise ValidationError("committee sizes must be odd and >= 1")
            object.__setattr__(self, "committee_sizes", sizes)
        self.operator_spec()  # validates shapes

    def operator_spec(self, m: int | None = None) -> OperatorSpec:
        return resolve_operator(self.operator, self.problem.mode_lengths, m)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["problem"]["mode_lengths"] = list(self.problem.mode_lengths)
        if self.committee_sizes is not None:
            d["committee_sizes"] = list(self.committee_sizes)
        d["schema_version"] = SCHEMA_VERSION
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        version = data.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ValidationError(f"unsupported config schema_version {version}")
        try:
            problem = ProblemConfig(**data.pop("problem"))
            return cls(problem=problem, **data)
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed experiment config: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config is not valid JSON: {exc}") from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise ValidationError(f"config file not found: {path}")
        return cls.from_json(path.read_text())

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


def resolve_operator(op: dict, mode_lengths, m: int | None = None) -> OperatorSpec:
    """Fill in the input shape of a seedless operator recipe."""
    if not isinstance(op, dict) or "kind" not in op:
        raise ValidationError("operator must be a dict with a 'kind'")
    kind = op["kind"]
    if kind not in KINDS:
        raise ValidationError(f"unknown operator kind {kind!r}")
    mode_lengths = tuple(mode_lengths)
    N = math.prod(mode_lengths)
    data = dict(op)
    data["seed"] = None
    if kind == "kronecker":
        modes = data.get("modes")
        if not modes or len(modes) != len(mode_lengths):
            raise ValidationError("kronecker operator needs one mode recipe per mode")
        data["modes"] = [dict(sub, input_shape=[n]) for sub, n in zip(modes, mode_lengths)]
        data.setdefault("input_shape", list(mode_lengths))
        if m is not None:
            raise ValidationError("kronecker operators cannot be resized by a single m")
    elif kind in STRUCTURED_KINDS:
        data.setdefault("input_shape", list(mode_lengths))
    else:
        data.setdefault("input_shape", [N])
    if m is not None:
        data["m"] = m
    spec = OperatorSpec.from_dict(data)
    if spec.N != N:
        raise ValidationError(f"operator input size {spec.N} does not match problem size {N}")
    return spec


def sample_points(problem: ProblemConfig, seed, target_seed=None) -> list:
    """Draw ``problem.points`` CP tensors from the configured family."""
    modes, r, dist = problem.mode_lengths, problem.rank, problem.distribution
    draw = lambda i, role: random_unit_cp(modes, r, dist, derive_seed(seed, i, role))
    if problem.family == "random_unit_cp":
        return [draw(i, "x") for i in range(problem.points)]
    if problem.family == "cp_differences":
        return [cp_difference(draw(i, "x"), draw(i, "y")) for i in range(problem.points)]
    target_rank = problem.target_rank or 2 * r
    target = random_unit_cp(modes, target_rank, dist, target_seed if target_seed is not None else seed)
    return [cp_difference(draw(i, "x"), target) for i in range(problem.points)]


def _binomial_ci(failures: int, trials: int, confidence: float = 0.95) -> tuple:
    from scipy import stats

    ci = stats.binomtest(failures, trials).proportion_ci(confidence_level=confidence, method="exact")
    return (float(ci.low), float(ci.high))


def _trial_points(config: ExperimentConfig, trial: int) -> list:
    return sample_points(
        config.problem,
        derive_seed(config.seed, trial if config.resample_points else 0, "points"),
        target_seed=derive_seed(config.seed, "target"),
    )


def _operator_master(config: ExperimentConfig, trial: int) -> int:
    return derive_seed(config.seed, trial, "operator")


def _provenance(config: ExperimentConfig, **extra) -> dict:
    return {
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        **extra,
    }


class _Report:
    """Shared JSON plumbing: ``result`` is deterministic, ``provenance`` is not."""

    def result(self) -> dict:
        raise NotImplementedError

    def to_dict(self, include_provenance: bool = True) -> dict:
        d = {"schema_version": SCHEMA_VERSION, "result": self.result()}
        if include_provenance:
            d["provenance"] = self.provenance
        return d

    def to_json(self, include_provenance: bool = True, indent=2) -> str:
        return json.dumps(self.to_dict(include_provenance), indent=indent, sort_keys=True)

    def deterministic_json(self) -> str:
        return self.to_json(include_provenance=False)


@dataclass
class DistortionReport(_Report):
    """Sampled distortion of a sketch or committee over repeated trials."""

    config: dict
    eps: float
    trials: int
    per_trial_max: list
    per_trial_quantiles: list
    failures: int
    failure_rate: float
    failure_ci: tuple
    max_quantiles: dict
    provenance: dict = field(default_factory=dict)
    label: str = "sampled distortion"

    def result(self) -> dict:
        d = asdict(self)
        d.pop("provenance")
        return d

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["trial", "max"] + [f"q{q}" for q in QUANTILES] + ["failed"])
        for t, (mx, qs) in enumerate(zip(self.per_trial_max, self.per_trial_quantiles)):
            writer.writerow([t, repr(mx)] + [repr(qs[str(q)]) for q in QUANTILES] + [int(mx > self.eps)])
        return buf.getvalue()


def _time_paths(committee: Committee, points) -> dict:
    """Wall-clock of the factored vs materialize-then-dense sketch of all points."""
    op = committee.ops[0]
    timings = {"kind": op.kind, "N": op.N}
    t0 = time.perf_counter()
    for x in points:
        op.apply(x)
    timings["factored_seconds"] = time.perf_counter() - t0
    try:
        check_cap(op.N)
        t0 = time.perf_counter()
        for x in points:
            op.apply_dense(materialize(x) if isinstance(x, CPTensor) else x)
        timings["dense_seconds"] = time.perf_counter() - t0
    except OverflowError:
        timings["dense_seconds"] = None
    return timings


def run_distortion(config: ExperimentConfig, threads=None, timing: bool = True) -> DistortionReport:
    """Per trial: fresh points and a fresh committee, distortion against exact norms."""
    spec = config.operator_spec()

    def one_trial(t):
        points = _trial_points(config, t)
        committee = Committee.from_spec(spec, config.k, _operator_master(config, t))
        errs = distortion(committee, points)
        return float(errs.max()), {str(q): float(np.quantile(errs, q)) for q in QUANTILES}

    results = pmap(one_trial, range(config.trials), threads)
    maxima = [mx for mx, _ in results]
    failures = sum(mx > config.eps for mx in maxima)
    timings = None
    if timing:
        timings = _time_paths(Committee.from_spec(spec, 0, _operator_master(config, 0)), _trial_points(config, 0))
    return DistortionReport(
        config=config.to_dict(),
        eps=config.eps,
        trials=config.trials,
        per_trial_max=maxima,
        per_trial_quantiles=[qs for _, qs in results],
        failures=int(failures),
        failure_rate=failures / config.trials,
        failure_ci=_binomial_ci(int(failures), config.trials),
        max_quantiles={str(q): float(np.quantile(maxima, q)) for q in QUANTILES},
        provenance=_provenance(config, timings=timings),
    )


@dataclass
class CompareReport(_Report):
    """Single sketch of dimension ``m0 (2k+1)`` vs. median committee of ``2k+1`` sketches of dimension ``m0``.

    Both arms see the same sampled points in each trial.  ``discordant`` counts
    trials where exactly one arm failed; ``p_value`` is the one-sided exact
    McNemar test that the committee fails less often.
    """

    config: dict
    eps: float
    trials: int
    m0: int
    arms: list
    provenance: dict = field(default_factory=dict)
    label: str = "sampled distortion"

    def result(self) -> dict:
        d = asdict(self)
        d.pop("provenance")
        return d

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        cols = ["committee_size", "single_m", "single_failure_rate", "single_ci_low", "single_ci_high",
                "committee_failure_rate", "committee_ci_low", "committee_ci_high", "p_value"]
        writer.writerow(cols)
        for arm in self.arms:
            writer.writerow([arm["committee_size"], arm["single_m"], arm["single_failure_rate"],
                             *arm["single_ci"], arm["committee_failure_rate"], *arm["committee_ci"],
                             arm["p_value"]])
        return buf.getvalue()


def run_committee_compare(config: ExperimentConfig, threads=None) -> CompareReport:
    """Compare failure rates at equal total measurements.

    The single sketch reuses committee member 0's seed, so with ``k = 0`` the
    two arms are the same operator.
    """
    from scipy import stats

    base = config.operator_spec()
    m0 = base.m
    sizes = config.committee_sizes or (2 * config.k + 1,)
    arms = []
    for size in sizes:
        k = (size - 1) // 2
        single_spec = config.operator_spec(m=m0 * size)

        def one_trial(t, k=k, single_spec=single_spec):
            points = _trial_points(config, t)
            master = _operator_master(config, t)
            committee = Committee.from_spec(base, k, master)
            single = Committee((single_spec.with_seed(derive_seed(master, 0)).build(),))
            return (
                bool(distortion(single, points).max() > config.eps),
                bool(distortion(committee, points).max() > config.eps),
            )

        outcomes = pmap(one_trial, range(config.trials), threads)
        single_fail = sum(s for s, _ in outcomes)
        committee_fail = sum(c for _, c in outcomes)
        only_single = sum(s and not c for s, c in outcomes)
        only_committee = sum(c and not s for s, c in outcomes)
        discordant = only_single + only_committee
        p_value = 1.0 if discordant == 0 else float(
            stats.binomtest(only_committee, discordant, 0.5, alternative="less").pvalue
        )
        arms.append({
            "committee_size": size,
            "k": k,
            "single_m": m0 * size,
            "total_measurements": m0 * size,
            "single_failures": int(single_fail),
            "committee_failures": int(committee_fail),
            "single_failure_rate": single_fail / config.trials,
            "committee_failure_rate": committee_fail / config.trials,
            "single_ci": _binomial_ci(int(single_fail), config.trials),
            "committee_ci": _binomial_ci(int(committee_fail), config.trials),
            "only_single_failed": int(only_single),
            "only_committee_failed": int(only_committee),
            "p_value": p_value,
        })
    return CompareReport(
        config=config.to_dict(), eps=config.eps, trials=config.trials, m0=m0, arms=arms,
        provenance=_provenance(config),
    )


@dataclass
class PairwiseReport(_Report):
    """Median-sketch distance matrix, with exact distances when available."""

    ids: list
    distances: list
    exact: list | None
    max_relative_error: float | None
    config: dict | None = None
    provenance: dict = field(default_factory=dict)

    def result(self) -> dict:
        d = asdict(self)
        d.pop("provenance")
        return d

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["id"] + self.ids)
        for pid, row in zip(self.ids, self.distances):
            writer.writerow([pid] + [repr(float(v)) for v in row])
        return buf.getvalue()


def read_distance_csv(text: str) -> tuple:
    rows = list(csv.reader(io.StringIO(text)))
    ids = rows[0][1:]
    matrix = np.array([[float(v) for v in row[1:]] for row in rows[1:]])
    return ids, matrix


def run_pairwise(config: ExperimentConfig, points=None, exact: bool = True, threads=None) -> PairwiseReport:
    """Median-sketch pairwise distances on ``config.problem.points`` sampled points (or the given ones).

    The error summary is ``max_{i<j} |d_hat/d - 1|`` over pairs with nonzero
    exact distance; exact distances use the Gram identity on CP differences.
    """
    if points is None:
        points = _trial_points(config, 0)
    points = list(points)
    if len(points) < 2:
        raise ValidationError("pairwise distances need at least two points")
    committee = Committee.from_spec(config.operator_spec(), config.k, _operator_master(config, 0))
    dhat = median_jlt_pairwise(committee, points, threads)
    exact_matrix = max_rel = None
    if exact:
        P = len(points)
        exact_matrix = np.zeros((P, P))
        for i in range(P):
            for j in range(i + 1, P):
                exact_matrix[i, j] = exact_matrix[j, i] = math.sqrt(norm_sq(difference(points[i], points[j])))
        scale = max(math.sqrt(norm_sq(x)) for x in points)
        rel = [abs(dhat[i, j] / exact_matrix[i, j] - 1.0)
               for i in range(P) for j in range(i + 1, P) if exact_matrix[i, j] > 1e-12 * max(scale, 1.0)]
        max_rel = max(rel) if rel else 0.0
    ids = [f"p{i}" for i in range(len(points))]
    return PairwiseReport(
        ids=ids,
        distances=dhat.tolist(),
        exact=None if exact_matrix is None else exact_matrix.tolist(),
        max_relative_error=max_rel,
        config=config.to_dict(),
        provenance=_provenance(config),
    )


def sketch_points(config: ExperimentConfig, points=None):
    """Median-sketch the trial-0 points; returns ``(sketches, selected, profiles)``."""
    if points is None:
        points = _trial_points(config, 0)
    committee = Committee.from_spec(config.operator_spec(), config.k, _operator_master(config, 0))
    profiles = sketch_profiles(committee, points)
    selected = [argmed(np.einsum("im,im->i", p, p)) for p in profiles]
    sketches = np.stack([p[i] for p, i in zip(profiles, selected)])
    return sketches, selected, profiles


__all__ = [
    "ExperimentConfig", "ProblemConfig", "DistortionReport", "CompareReport", "PairwiseReport",
    "run_distortion", "run_committee_compare", "run_pairwise", "sample_points", "sketch_points",
    "resolve_operator", "read_distance_csv",
]
