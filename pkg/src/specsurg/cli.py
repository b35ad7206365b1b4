"""Command-line entry point.

Exit codes: 0 success, 1 invalid input, 2 numerical failure, 3 a verification
report with failing checks.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import spectra, surgery, verify
from .potential import (
    CATALOG,
    BoundaryCondition,
    Potential,
    Problem,
    catalog_names,
    dumps,
    format_number,
    load_problem,
    problem_to_dict,
    save_problem,
    validate,
)
from .solver import IntegrationError, scattering_matrices

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NUMERICAL = 2
EXIT_VERIFY = 3


class InputError(ValueError):
    """A path or flag that fails its precondition before any work starts."""


# ---------------------------------------------------------------- helpers


def _input_path(value: str | None, flag: str) -> Path | None:
    if value is None:
        return None
    p = Path(value)
    if not p.is_file():
        raise InputError(f"{flag} {value}: input file must exist")
    return p


def _output_path(value: str | None, flag: str, inputs: list[Path | None]) -> Path | None:
    if value is None:
        return None
    p = Path(value)
    parent = p.parent if str(p.parent) else Path(".")
    if not parent.is_dir():
        raise InputError(f"{flag} {value}: output directory {parent} must exist")
    if p.is_dir():
        raise InputError(f"{flag} {value}: output path must not be a directory")
    if not os.access(parent, os.W_OK):
        raise InputError(f"{flag} {value}: output directory must be writable")
    for q in inputs:
        if q is not None and p.resolve() == q.resolve():
            raise InputError(f"{flag} {value}: output must not overwrite an input file")
    return p


def _load_checked(path: Path) -> Problem:
    problem = load_problem(path)
    report = validate(problem)
    if not report.passed:
        bad = ", ".join(f"{c.name} ({c.anchor}, measured {c.measured:.3e})" for c in report.checks if not c.passed)
        raise InputError(f"{path}: problem fails validation: {bad}")
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return problem


def _threads(value: int | None) -> int:
    if value is None:
        return os.cpu_count() or 1
    if value < 1:
        raise InputError("--threads must be a positive integer")
    return value


def _write(path: Path | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        path.write_text(text)


def _csv(header: list[str], rows: np.ndarray) -> str:
    lines = [",".join(header)]
    lines += [",".join(format_number(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def _complex_columns(name: str, n: int) -> list[str]:
    return [f"{name}{i + 1}{j + 1}_{part}" for i in range(n) for j in range(n) for part in ("re", "im")]


def _interleave(M: np.ndarray) -> np.ndarray:
    """``(N, n, n)`` complex to ``(N, 2 n^2)`` real, row-major with re/im pairs."""
    flat = M.reshape(M.shape[0], -1)
    return np.stack([flat.real, flat.imag], axis=-1).reshape(M.shape[0], -1)


# ---------------------------------------------------------------- subcommands


def _cmd_scatter(args) -> int:
    src = _input_path(args.problem, "--problem")
    out = _output_path(args.out, "--out", [src])
    if not (args.kmin > 0 and args.kmax > args.kmin):
        raise InputError("--kmin and --kmax must satisfy 0 < kmin < kmax")
    if args.points < 1:
        raise InputError("--points must be a positive integer")
    threads = _threads(args.threads)
    problem = _load_checked(src)
    ks = np.linspace(args.kmin, args.kmax, args.points)
    S = verify.map_k_chunks(lambda kk: scattering_matrices(problem, kk), ks, threads)
    rows = np.column_stack([ks, _interleave(S)])
    _write(out, _csv(["k"] + _complex_columns("S", problem.n), rows))
    return EXIT_OK


def _cmd_spectrum(args) -> int:
    src = _input_path(args.problem, "--problem")
    out = _output_path(args.out, "--out", [src])
    if args.kappa_max is not None and not args.kappa_max > args.kappa_min:
        raise InputError("--kappa-max must exceed --kappa-min")
    if not args.kappa_min > 0:
        raise InputError("--kappa-min must be positive")
    problem = _load_checked(src)
    spec = spectra.find_bound_states(problem, kappa_max=args.kappa_max, kappa_min=args.kappa_min)
    _write(out, spec.to_json() + "\n")
    return EXIT_OK


def _cmd_surgery(args) -> int:
    src = _input_path(args.problem, "--problem")
    plan_path = _input_path(args.plan, "--plan")
    out = _output_path(args.out, "--out", [src, plan_path])
    grid_out = _output_path(args.grid_out, "--grid-out", [src, plan_path])
    if out is not None and grid_out is not None and out.resolve() == grid_out.resolve():
        raise InputError("--out and --grid-out must differ")
    problem = _load_checked(src)
    try:
        plan_data = json.loads(plan_path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"--plan {plan_path}: invalid JSON ({exc})") from None
    if not isinstance(plan_data, dict):
        raise InputError(f"--plan {plan_path}: expected a JSON object")
    plan = surgery.SurgeryPlan.from_dict(plan_data, problem.n)
    result = surgery.apply_plan(problem, plan)
    _write(out, result.to_json() + "\n")
    if grid_out is not None:
        V = result.problem.potential.values
        rows = np.column_stack([result.xs, _interleave(np.asarray(V))])
        grid_out.write_text(_csv(["x"] + _complex_columns("V", problem.n), rows))
    return EXIT_OK


def _cmd_verify(args) -> int:
    src = _input_path(args.problem, "--problem")
    out = _output_path(args.out, "--out", [src])
    if args.suite != "golden" and src is None:
        raise InputError(f"--suite {args.suite} needs --problem")
    threads = _threads(args.threads)
    problem = _load_checked(src) if src is not None else None
    report = verify.run_suite(args.suite, problem, args.level, threads)
    print(report.table())
    if out is not None:
        out.write_text(report.to_json(timing=args.timing) + "\n")
    return EXIT_OK if report.passed else EXIT_VERIFY


def _cmd_catalog(args) -> int:
    if args.list:
        for name in catalog_names():
            entry = CATALOG[name]
            dim = "any n" if entry.n is None else f"n={entry.n}"
            print(f"{name}\t{dim}\t{entry.note}")
        return EXIT_OK
    out = _output_path(args.out, "--out", [])
    if args.emit not in CATALOG:
        raise InputError(f"--emit {args.emit}: unknown catalog potential; known: {catalog_names()}")
    n = args.n if args.n is not None else (CATALOG[args.emit].n or 1)
    bc = BoundaryCondition.dirichlet(n) if args.boundary == "dirichlet" else BoundaryCondition.neumann(n)
    problem = Problem(Potential.catalog(args.emit, n), bc)
    if out is None:
        sys.stdout.write(dumps(problem_to_dict(problem)) + "\n")
    else:
        save_problem(problem, out)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="specsurg", description="Half-line matrix Schrodinger scattering and bound-state surgery.")
    sub = parser.add_subparsers(dest="command", required=True)

    threads = argparse.ArgumentParser(add_help=False)
    threads.add_argument("--threads", type=int, default=None, help="worker threads for k-grids (default: all cores)")

    p = sub.add_parser("scatter", parents=[threads], help="scattering matrix on a real k-grid, as CSV")
    p.add_argument("--problem", required=True)
    p.add_argument("--kmin", type=float, required=True)
    p.add_argument("--kmax", type=float, required=True)
    p.add_argument("--points", type=int, required=True)
    p.add_argument("--out", help="CSV path (default: standard output)")
    p.set_defaults(func=_cmd_scatter)

    p = sub.add_parser("spectrum", help="bound states, as JSON")
    p.add_argument("--problem", required=True)
    p.add_argument("--kappa-max", type=float, default=None)
    p.add_argument("--kappa-min", type=float, default=spectra.KAPPA_MIN)
    p.add_argument("--out", help="JSON path (default: standard output)")
    p.set_defaults(func=_cmd_spectrum)

    p = sub.add_parser("surgery", help="apply one surgery plan")
    p.add_argument("--problem", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--out", help="JSON path for the transformed problem (default: standard output)")
    p.add_argument("--grid-out", help="CSV path for the transformed potential samples")
    p.set_defaults(func=_cmd_surgery)

    p = sub.add_parser("verify", parents=[threads], help="run a verification suite")
    p.add_argument("--suite", required=True, choices=["golden", "battery", "parseval"])
    p.add_argument("--problem")
    p.add_argument("--level", choices=["quick", "full"], default="quick")
    p.add_argument("--out", help="JSON path for the report")
    p.add_argument("--timing", action="store_true", help="include wall times in the JSON report")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("catalog", help="list or emit built-in potentials")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--list", action="store_true")
    g.add_argument("--emit", metavar="NAME", help="write a problem file for a catalog potential")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--boundary", choices=["dirichlet", "neumann"], default="dirichlet")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_catalog)
    return parser


def run(argv: list[str] | None = None) -> int:
    """Parse ``argv`` and run one subcommand; returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        return args.func(args)
    except (IntegrationError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def main() -> None:
    sys.exit(run())
