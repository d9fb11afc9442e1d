"""Command-line entry point: ``varsketch <subcommand> [options]``.

Exit codes: 0 success, 1 validation/usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .errors import ValidationError

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on usage errors; we reserve 2 for runtime failures
    def error(self, message):
        raise _UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
    p.add_argument("--config", type=Path, default=None, help="JSON config path")
    p.add_argument("--out", type=Path, default=None, help="output path (default: stdout)")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="varsketch", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"varsketch {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("sketch", parents=[common], help="median-sketch the points of an experiment config")
    p.add_argument("--profiles", type=Path, default=None, help="also dump raw binary committee profiles here")

    sub.add_parser("distort", parents=[common], help="sampled distortion experiment")
    sub.add_parser("compare", parents=[common], help="single sketch vs median committee at equal budget")
    sub.add_parser("pairwise", parents=[common], help="median-sketch pairwise distances")

    p = sub.add_parser("bounds", parents=[common], help="sketching-dimension budget report")
    for name in ("C", "C1", "C2", "C3", "C4", "C1d", "C2d", "c_phi", "K", "M"):
        p.add_argument(f"--{name.replace('_', '-')}", dest=f"const_{name}", type=float, default=None,
                       help=f"override constant {name}")

    p = sub.add_parser("mom", parents=[common], help="median-of-i.i.d. tail bound vs Monte Carlo")
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--trials", type=int, default=100_000)

    p = sub.add_parser("polycert", parents=[common], help="build and verify counting polynomials")
    p.add_argument("--eps", type=float, default=0.5)
    p.add_argument("--M", type=float, default=3.0)
    p.add_argument("--eta", type=float, default=0.25)

    p = sub.add_parser("calibrate", parents=[common], help="fit the tail function of a sketch kind")
    p.add_argument("--kind", default="gaussian")
    p.add_argument("--eps", type=float, default=0.3)
    p.add_argument("--m-grid", default="16,32,48,64,96,128,192")
    p.add_argument("--trials", type=int, default=5000)
    p.add_argument("--modes", default=None, help="comma-separated mode lengths")
    return parser


def _emit(args, text: str) -> None:
    if args.out is None:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        args.out.write_text(text)


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default)


def _json_default(o):
    import numpy as np

    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _flat_csv(record: dict) -> str:
    import csv
    import io

    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["field", "value"])
    for key, value in record.items():
        writer.writerow([key, json.dumps(value, default=_json_default) if isinstance(value, (dict, list)) else value])
    return buf.getvalue()


def _load_experiment(args):
    from .harness import ExperimentConfig

    if args.config is None:
        raise ValidationError("--config is required for this subcommand")
    config = ExperimentConfig.load(args.config)
    if args.seed is not None:
        config = ExperimentConfig.from_dict({**config.to_dict(), "seed": args.seed})
    return config


def _cmd_sketch(args):
    from .harness import sketch_points
    from .io import dump_profiles

    config = _load_experiment(args)
    sketches, selected, profiles = sketch_points(config)
    if args.profiles is not None:
        dump_profiles(args.profiles, profiles)
    record = {"ids": [f"p{i}" for i in range(len(selected))], "selected": selected,
              "sketches": sketches.tolist(), "committee_size": int(profiles.shape[1])}
    if args.format == "csv":
        import csv
        import io

        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["id", "selected"] + [f"y{j}" for j in range(sketches.shape[1])])
        for pid, sel, row in zip(record["ids"], selected, sketches):
            writer.writerow([pid, sel] + [repr(float(v)) for v in row])
        _emit(args, buf.getvalue())
    else:
        _emit(args, _json(record))


def _cmd_distort(args):
    from .harness import run_distortion

    report = run_distortion(_load_experiment(args))
    _emit(args, report.to_csv() if args.format == "csv" else report.to_json())


def _cmd_compare(args):
    from .harness import run_committee_compare

    report = run_committee_compare(_load_experiment(args))
    _emit(args, report.to_csv() if args.format == "csv" else report.to_json())


def _cmd_pairwise(args):
    from .harness import run_pairwise

    report = run_pairwise(_load_experiment(args))
    _emit(args, report.to_csv() if args.format == "csv" else report.to_json())


def load_bounds_problem(path: Path) -> dict:
    if not path.is_file():
        raise ValidationError(f"config file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON: {exc}") from exc


def _cmd_bounds(args):
    from .bounds import ConstantSet, VarietyParams, budget_report

    if args.config is None:
        raise ValidationError("--config is required for this subcommand")
    problem = load_bounds_problem(args.config)
    try:
        vp = VarietyParams.from_dict(problem["variety"])
        eps, delta, N = float(problem["eps"]), float(problem["delta"]), int(problem["N"])
    except KeyError as exc:
        raise ValidationError(f"{args.config}: bounds problem is missing field {exc}") from exc
    constants = dict(problem.get("constants") or {})
    for name in ConstantSet.__dataclass_fields__:
        value = getattr(args, f"const_{name}", None)
        if value is not None:
            constants[name] = value
    report = budget_report(vp, eps, delta, N, ConstantSet.from_dict(constants),
                           tensor_order=problem.get("tensor_order"))
    record = report.to_dict()
    _emit(args, _flat_csv(record) if args.format == "csv" else _json(record))


def _cmd_mom(args):
    from .polyapprox import mom_monte_carlo

    result = mom_monte_carlo(args.p, args.k, args.trials, seed=0 if args.seed is None else args.seed)
    record = result.to_dict()
    _emit(args, _flat_csv(record) if args.format == "csv" else _json(record))


def _cmd_polycert(args):
    from .polyapprox import counting_poly_lower, counting_poly_upper, verify_counting_poly

    record = {"eps": args.eps, "M": args.M, "eta": args.eta}
    for name, build, lower in (("upper", counting_poly_upper, False), ("lower", counting_poly_lower, True)):
        poly = build(args.eps, args.M, args.eta)
        record[name] = verify_counting_poly(poly, args.eps, args.eta, lower=lower).to_dict()
    record["passed"] = record["upper"]["passed"] and record["lower"]["passed"]
    _emit(args, _flat_csv(record) if args.format == "csv" else _json(record))


def _cmd_calibrate(args):
    from .bounds import calibrate_phi

    try:
        grid = [int(v) for v in args.m_grid.split(",") if v.strip()]
        modes = None if args.modes is None else [int(v) for v in args.modes.split(",")]
    except ValueError as exc:
        raise ValidationError(f"bad integer list: {exc}") from exc
    result = calibrate_phi(args.kind, args.eps, grid, args.trials, seed=0 if args.seed is None else args.seed,
                           mode_lengths=modes)
    record = result.to_dict()
    _emit(args, _flat_csv(record) if args.format == "csv" else _json(record))


_COMMANDS = {
    "sketch": _cmd_sketch,
    "distort": _cmd_distort,
    "compare": _cmd_compare,
    "pairwise": _cmd_pairwise,
    "bounds": _cmd_bounds,
    "mom": _cmd_mom,
    "polycert": _cmd_polycert,
    "calibrate": _cmd_calibrate,
}


def cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_VALIDATION
    if args.command is None:
        print(parser.format_help(), file=sys.stderr)
        return EXIT_VALIDATION
    try:
        _COMMANDS[args.command](args)
    except (ValidationError, ValueError, FileNotFoundError) as exc:
        print(f"varsketch {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"varsketch {args.command}: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
