import json
import math

import numpy as np
import pytest

from varsketch._seeding import derive_seed
from varsketch.bounds import ConstantSet, VarietyParams, calibrate_phi, subgaussian_dim
from varsketch.errors import ValidationError
from varsketch.harness import (
    ExperimentConfig,
    ProblemConfig,
    read_distance_csv,
    resolve_operator,
    run_committee_compare,
    run_distortion,
    run_pairwise,
    sample_points,
    sketch_points,
)
from varsketch.median import Committee, median_sketch
from varsketch.tensor import CPTensor, cp_norm_sq, materialize, random_unit_cp


def config(modes=(4, 4, 4), op=None, **kw):
    problem = kw.pop("problem", {})
    return ExperimentConfig(
        problem=ProblemConfig(mode_lengths=modes, **problem),
        operator=op or {"kind": "khatri_rao", "m": 32},
        **kw,
    )


class TestConfig:
    def test_round_trip(self):
        c = config(k=2, eps=0.3, trials=7, seed=11, committee_sizes=(1, 5), out="r.json",
                   problem={"rank": 2, "points": 4, "family": "cp_differences"})
        assert ExperimentConfig.from_json(c.to_json()) == c
        assert json.loads(c.to_json())["schema_version"] == 1

    def test_load(self, tmp_path):
        c = config()
        (tmp_path / "c.json").write_text(c.to_json())
        assert ExperimentConfig.load(tmp_path / "c.json") == c

    def test_missing_file_names_path(self, tmp_path):
        with pytest.raises(ValidationError, match="nope.json"):
            ExperimentConfig.load(tmp_path / "nope.json")

    def test_hash_changes_with_seed(self):
        assert config(seed=1).config_hash() != config(seed=2).config_hash()
        assert config(seed=1).config_hash() == config(seed=1).config_hash()

    @pytest.mark.parametrize("kw", [
        {"k": -1}, {"eps": 1.0}, {"trials": 0}, {"committee_sizes": (2,)},
        {"op": {"kind": "khatri_rao", "m": 4, "input_shape": [4, 4]}},
        {"op": {"kind": "nope", "m": 4}},
        {"problem": {"family": "spheres"}},
        {"problem": {"points": 0}},
    ])
    def test_invalid(self, kw):
        with pytest.raises(ValidationError):
            config(**kw)

    def test_bad_json_and_schema(self):
        with pytest.raises(ValidationError):
            ExperimentConfig.from_json("{not json")
        d = config().to_dict()
        d["schema_version"] = 99
        with pytest.raises(ValidationError):
            ExperimentConfig.from_dict(d)
        with pytest.raises(ValidationError):
            ExperimentConfig.from_dict({"operator": {"kind": "gaussian", "m": 2}})

    def test_resolve_operator_shapes(self):
        assert resolve_operator({"kind": "gaussian", "m": 3}, (4, 4)).input_shape == (16,)
        assert resolve_operator({"kind": "kfjlt", "m": 3}, (4, 4)).input_shape == (4, 4)
        kron = resolve_operator({"kind": "kronecker", "modes": [{"kind": "gaussian", "m": 2},
                                                                  {"kind": "fjlt", "m": 2}]}, (4, 4))
        assert kron.m == 4 and kron.modes[1].input_shape == (4,)


class TestSamplePoints:
    def test_unit_norm_family(self):
        pts = sample_points(ProblemConfig((3, 4), rank=2, points=5), seed=1)
        assert len(pts) == 5
        assert all(abs(cp_norm_sq(p) - 1) < 1e-10 for p in pts)

    def test_difference_families(self):
        diffs = sample_points(ProblemConfig((3, 4), rank=2, points=3, family="cp_differences"), seed=1)
        assert all(p.rank == 4 for p in diffs)
        res = sample_points(ProblemConfig((3, 4), rank=1, points=3, family="fixed_target_residuals",
                                          target_rank=3), seed=1, target_seed=7)
        assert all(p.rank == 4 for p in res)
        # the same target is subtracted from every point
        targets = [p.factors[0][:, 1:] for p in res]
        for t in targets[1:]:
            np.testing.assert_array_equal(t, targets[0])

    def test_deterministic(self):
        a = sample_points(ProblemConfig((3, 3), points=2), seed=5)
        b = sample_points(ProblemConfig((3, 3), points=2), seed=5)
        assert all(np.array_equal(x.factors[0], y.factors[0]) for x, y in zip(a, b))


class TestDistortion:
    def test_identity_operator(self):
        rep = run_distortion(config(op={"kind": "identity"}, trials=5))
        assert rep.failure_rate == 0.0 and rep.failures == 0
        assert max(rep.per_trial_max) < 1e-12

    def test_report_schema(self):
        rep = run_distortion(config(trials=20, k=1))
        d = rep.to_dict()
        assert set(d) == {"schema_version", "result", "provenance"}
        assert d["result"]["label"] == "sampled distortion"
        assert 0 <= rep.failure_rate <= 1
        lo, hi = rep.failure_ci
        assert lo <= rep.failure_rate <= hi
        q = rep.max_quantiles
        assert q["0.5"] <= q["0.9"] <= q["0.99"]
        for qs in rep.per_trial_quantiles:
            assert qs["0.5"] <= qs["0.9"] <= qs["0.99"]
        prov = d["provenance"]
        assert prov["config_hash"] == config(trials=20, k=1).config_hash()
        assert {"seed", "version", "timestamp", "timings"} <= set(prov)

    def test_csv(self):
        rep = run_distortion(config(trials=4))
        lines = rep.to_csv().strip().splitlines()
        assert lines[0] == "trial,max,q0.5,q0.9,q0.99,failed"
        assert len(lines) == 5

    def test_deterministic_bytes(self):
        c = config(trials=10, k=1, seed=3)
        a = run_distortion(c, threads=1).deterministic_json()
        b = run_distortion(c, threads=4).deterministic_json()
        assert a == b
        assert "timestamp" not in a

    def test_provenance_reproduces_draws(self):
        c = config(trials=3, k=1, seed=8)
        rep = run_distortion(c, timing=False)
        again = ExperimentConfig.from_dict(rep.config)
        assert run_distortion(again, timing=False).deterministic_json() == rep.deterministic_json()

    def test_matches_direct_recomputation(self):
        c = config(trials=2, k=1, seed=4, problem={"points": 3})
        rep = run_distortion(c, timing=False)
        t = 1
        pts = sample_points(c.problem, derive_seed(4, t, "points"), target_seed=derive_seed(4, "target"))
        committee = Committee.from_spec(c.operator_spec(), 1, derive_seed(4, t, "operator"))
        errs = [abs(float(y @ y) / cp_norm_sq(x) - 1) for x, y in ((x, median_sketch(committee, x)) for x in pts)]
        assert rep.per_trial_max[t] == pytest.approx(max(errs), rel=1e-12)

    def test_doubling_m_does_not_increase_median(self):
        base = dict(modes=(8, 8, 8), trials=500, seed=2, problem={"points": 10})
        a = run_distortion(config(op={"kind": "khatri_rao", "m": 64}, **base), timing=False)
        b = run_distortion(config(op={"kind": "khatri_rao", "m": 128}, **base), timing=False)
        xa, xb = np.array(a.per_trial_max), np.array(b.per_trial_max)
        # standard error of a sample median: sqrt(pi/2) sigma / sqrt(n)
        se = math.sqrt(math.pi / 2) * math.hypot(xa.std(), xb.std()) / math.sqrt(xa.size)
        assert np.median(xb) <= np.median(xa) + 3 * se

    @pytest.mark.slow
    def test_calibrated_gaussian_dimension(self):
        delta, eps = 0.1, 0.5
        cal = calibrate_phi("gaussian", 0.3, [16, 32, 48, 64, 96, 128, 160], trials=5000, seed=1)
        C = cal.theory_constant / cal.eps**2
        m = subgaussian_dim(eps, delta, VarietyParams.cp_tensors(8, 3, 1), consts=ConstantSet(C=C))
        rep = run_distortion(config(modes=(8, 8, 8), op={"kind": "gaussian", "m": m}, eps=eps, trials=500,
                                    seed=6, problem={"points": 100}), timing=False)
        assert rep.failure_rate <= 2 * delta

    @pytest.mark.slow
    def test_factored_faster_at_large_N(self):
        c = config(modes=(32, 32, 32), op={"kind": "khatri_rao", "m": 256}, trials=1,
                   problem={"points": 10, "rank": 2})
        timings = run_distortion(c).provenance["timings"]
        assert timings["N"] == 2**15
        assert timings["factored_seconds"] < timings["dense_seconds"]


class TestCompare:
    def test_k0_arms_identical(self):
        rep = run_committee_compare(config(k=0, trials=30, eps=0.3))
        arm = rep.arms[0]
        assert arm["single_failures"] == arm["committee_failures"]
        assert arm["only_single_failed"] == arm["only_committee_failed"] == 0
        assert arm["p_value"] == 1.0

    def test_schema(self):
        rep = run_committee_compare(config(trials=20, committee_sizes=(1, 3)))
        assert [a["committee_size"] for a in rep.arms] == [1, 3]
        for arm in rep.arms:
            assert arm["single_m"] == arm["total_measurements"] == 32 * arm["committee_size"]
            for key in ("single", "committee"):
                lo, hi = arm[f"{key}_ci"]
                assert lo <= arm[f"{key}_failure_rate"] <= hi
            assert 0 <= arm["p_value"] <= 1
        csv_lines = rep.to_csv().strip().splitlines()
        assert csv_lines[0].startswith("committee_size,single_m")
        assert len(csv_lines) == 3

    def test_deterministic(self):
        c = config(trials=10, k=1, seed=5)
        assert run_committee_compare(c).deterministic_json() == run_committee_compare(c, threads=3).deterministic_json()


class TestPairwise:
    def test_identical_points(self):
        x = random_unit_cp((4, 4), 1, seed=0)
        rep = run_pairwise(config(modes=(4, 4), k=1), points=[x, x])
        assert rep.distances[0][1] == 0.0 and rep.distances[1][0] == 0.0
        assert rep.max_relative_error == 0.0

    def test_gaussian_accuracy(self):
        c = config(modes=(8, 8, 8), op={"kind": "gaussian", "m": 1000}, k=2, seed=1,
                   problem={"points": 10, "rank": 2})
        rep = run_pairwise(c)
        assert rep.max_relative_error <= 0.3
        exact = np.array(rep.exact)
        pts = sample_points(c.problem, derive_seed(1, 0, "points"), target_seed=derive_seed(1, "target"))
        X = [materialize(p) for p in pts]
        assert exact[2, 7] == pytest.approx(np.linalg.norm(X[2] - X[7]), rel=1e-10)

    def test_csv_symmetric_zero_diagonal(self):
        rep = run_pairwise(config(k=1, problem={"points": 6}))
        ids, D = read_distance_csv(rep.to_csv())
        assert ids == [f"p{i}" for i in range(6)]
        np.testing.assert_array_equal(D, D.T)
        np.testing.assert_array_equal(np.diag(D), 0.0)
        np.testing.assert_array_equal(D, np.array(rep.distances))

    def test_needs_two_points(self):
        with pytest.raises(ValidationError):
            run_pairwise(config(), points=[random_unit_cp((4, 4, 4), 1, seed=0)])


class TestSketchPoints:
    def test_selected_member(self):
        c = config(k=2, problem={"points": 4})
        sketches, selected, profiles = sketch_points(c)
        assert profiles.shape == (4, 5, 32)
        pts = sample_points(c.problem, derive_seed(0, 0, "points"), target_seed=derive_seed(0, "target"))
        committee = Committee.from_spec(c.operator_spec(), 2, derive_seed(0, 0, "operator"))
        for x, y, i in zip(pts, sketches, selected):
            yy, ii = median_sketch(committee, x, return_index=True)
            assert ii == i
            np.testing.assert_array_equal(y, yy)


def test_fixed_points_across_trials():
    c = config(trials=3, resample_points=False)
    from varsketch.harness import _trial_points

    a, b = _trial_points(c, 0), _trial_points(c, 2)
    assert all(np.array_equal(x.factors[1], y.factors[1]) for x, y in zip(a, b))
    assert ExperimentConfig.from_json(c.to_json()).resample_points is False
