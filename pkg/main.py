#!/usr/bin/env python3
"""
sosreach command line.

Subcommands:
    solve      compute V_k, rho_k, K_k backward in time into a solution directory
    verify     re-check certificates and run the sampling audit
    oracle     build the grid oracle and check containment against it
    simulate   closed-loop runs from initial states inside the earliest set
    slice      CSV of V_k - rho_k on a 2D grid with the other states fixed

Exit codes: 0 success, 1 usage or configuration error, 2 incomplete solution,
3 failed check.

Usage:
    python main.py solve --config config/single_integrators.yml --outdir runs/si
    python main.py verify runs/si
    python main.py slice runs/si --fix xd1=0.5 --fix xd2=0.5 --resolution 101
"""

import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from config.loader import ConfigError, ConfigLoader
from core import __version__
from core.reach_avoid import Solution, solve_reach_avoid
from core.solution_store import CertificateDataError, SolutionStore
from verification.certificates import check_certificates
from verification.grid_oracle import build_grid_oracle, containment_check
from verification.report import ReportFormatter
from verification.sampling import sample_audit
from verification.simulation import sample_initial_states, simulate_batch, write_trajectory_csv

logger = logging.getLogger("sosreach")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INCOMPLETE = 2
EXIT_CHECK_FAILED = 3


class UsageError(Exception):
    """Bad command line or inputs; maps to exit code 1."""


class _Incomplete(Exception):
    """Solution directory lacks stages; maps to exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def configure_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
        force=True,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sosreach", description="SOS reach-avoid sets and controllers")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for parallel phases")
    parser.add_argument("--version", action="version", version=f"sosreach {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    solve = sub.add_parser("solve", help="run the backward reach-avoid computation")
    solve.add_argument("--config", required=True, help="problem configuration (YAML)")
    solve.add_argument("--outdir", required=True, help="solution directory")
    solve.add_argument("--resume", action="store_true", help="continue at the first missing stage")

    verify = sub.add_parser("verify", help="certificate re-check and sampling audit")
    verify.add_argument("solution", help="solution directory")
    verify.add_argument("--seed", type=int, default=0)
    verify.add_argument("--report", help="also write the report to this file")

    oracle = sub.add_parser("oracle", help="grid oracle containment check")
    oracle.add_argument("solution", help="solution directory")
    oracle.add_argument("--seed", type=int, default=0)
    oracle.add_argument("--masks", help="write oracle masks as CSV")
    oracle.add_argument("--report", help="also write the report to this file")

    simulate = sub.add_parser("simulate", help="closed-loop simulation")
    simulate.add_argument("solution", help="solution directory")
    simulate.add_argument("--seed", type=int, default=0)
    simulate.add_argument("--trajectories", help="directory for per-run trajectory CSVs")
    simulate.add_argument("--report", help="also write the report to this file")

    slice_ = sub.add_parser("slice", help="2D slice of V_k - rho_k as CSV")
    slice_.add_argument("solution", help="solution directory")
    slice_.add_argument("--fix", action="append", default=[], metavar="VAR=VALUE",
                        help="fixed state value (repeat for each fixed state)")
    slice_.add_argument("--resolution", type=int, default=51, help="grid points per free axis")
    slice_.add_argument("--stage", type=int, action="append", dest="stages",
                        help="stage index to include (repeatable, default all)")
    slice_.add_argument("--output", help="CSV path (default stdout)")
    return parser


def run_manifest(args, command: str, params: Dict) -> Dict:
    return {
        "command": command,
        "version": __version__,
        "config": getattr(args, "config", None),
        "solution": str(getattr(args, "outdir", None) or getattr(args, "solution", "")),
        "seed": getattr(args, "seed", None),
        "threads": args.threads,
        "params": params,
    }


def _load(directory: str) -> SolutionStore:
    store = SolutionStore(directory)
    if not store.directory.is_dir():
        raise UsageError(f"solution directory not found: {directory}")
    return store


def _emit(text: str, report_path: Optional[str]) -> None:
    print(text)
    if report_path:
        Path(report_path).write_text(text + "\n")


def cmd_solve(args) -> int:
    setup = ConfigLoader().load_setup(args.config)
    store = SolutionStore(args.outdir)
    store.write_manifest(run_manifest(args, "solve", {"resume": args.resume}))
    store.prepare(setup)
    print(f"🔧 solving {setup.name}: {setup.n_stages} stages, {len(setup.states)} states")
    solution = solve_reach_avoid(setup, store=store, resume=args.resume)
    if not solution.complete:
        print(f"❌ incomplete: {solution.failure}")
        return EXIT_INCOMPLETE
    print(f"✅ complete: stages {solution.first_index}..{solution.final_index} in {args.outdir}")
    return EXIT_OK


def _complete_solution(args) -> Solution:
    solution = _load(args.solution).load_solution()
    if not solution.complete:
        raise _Incomplete(f"solution in {args.solution} is incomplete")
    return solution


def cmd_verify(args) -> int:
    store = _load(args.solution)
    store.write_manifest(run_manifest(args, "verify", {}))
    solution = _complete_solution(args)
    formatter = ReportFormatter()
    certificates = check_certificates(solution, threads=args.threads)
    audit = sample_audit(solution, seed=args.seed, threads=args.threads)
    _emit(formatter.certificates(certificates) + "\n" + formatter.audit(audit), args.report)
    return EXIT_OK if certificates.passed and audit.passed else EXIT_CHECK_FAILED


def cmd_oracle(args) -> int:
    store = _load(args.solution)
    store.write_manifest(run_manifest(args, "oracle", {}))
    solution = _complete_solution(args)
    oracle = build_grid_oracle(solution.setup, threads=args.threads)
    containment = containment_check(solution, oracle, seed=args.seed)
    if args.masks:
        points = oracle.grid_points()
        rows = []
        for k in sorted(oracle.masks):
            for z, member in zip(points, oracle.masks[k].ravel()):
                rows.append([k, *(f"{v:.10g}" for v in z), int(member)])
        write_csv(["k", *solution.setup.states, "member"], rows, args.masks)
    _emit(ReportFormatter().oracle(oracle, containment), args.report)
    return EXIT_OK if containment.passed else EXIT_CHECK_FAILED


def cmd_simulate(args) -> int:
    store = _load(args.solution)
    store.write_manifest(run_manifest(args, "simulate", {}))
    solution = _complete_solution(args)
    settings = solution.setup.verification
    try:
        initial = sample_initial_states(solution, settings.simulation_runs, seed=args.seed)
    except ValueError as exc:
        print(f"❌ {exc}")
        return EXIT_CHECK_FAILED
    report = simulate_batch(
        solution, initial, settings.disturbance_policy, seed=args.seed, threads=args.threads
    )
    if args.trajectories:
        out = Path(args.trajectories)
        out.mkdir(parents=True, exist_ok=True)
        for i, outcome in enumerate(report.outcomes):
            write_trajectory_csv(solution.setup, outcome, out / f"run_{i:03d}.csv")
    _emit(ReportFormatter().simulation(report), args.report)
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def parse_assignments(items: Sequence[str]) -> Dict[str, float]:
    fixed = {}
    for item in items:
        name, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"expected VAR=VALUE, got {item!r}")
        try:
            fixed[name.strip()] = float(value)
        except ValueError:
            raise UsageError(f"{name.strip()}: {value!r} is not a number") from None
    return fixed


def slice_rows(
    solution: Solution,
    fixed: Dict[str, float],
    resolution: int,
    stages: Optional[Sequence[int]] = None,
) -> List[List]:
    """
    Rows (k, a, b, V_k - rho_k) over a resolution x resolution grid of the two
    free states, the rest pinned by ``fixed``.

    Raises:
        UsageError: On unknown fixed states, a free-state count other than two
            or a stage missing from the solution
    """
    setup = solution.setup
    states = list(setup.states)
    unknown = sorted(set(fixed) - set(states))
    if unknown:
        raise UsageError(f"unknown state(s) {unknown}; states are {states}")
    free = [s for s in states if s not in fixed]
    if len(free) != 2:
        raise UsageError(f"slice needs exactly 2 free states, got {len(free)}: {free}")
    if resolution < 2:
        raise UsageError("resolution must be at least 2")

    axes = []
    for name in free:
        i = states.index(name)
        axes.append(np.linspace(setup.roi.lower[i], setup.roi.upper[i], resolution))
    a, b = np.meshgrid(*axes, indexing="ij")
    points = np.zeros((a.size, len(states)))
    for i, name in enumerate(states):
        points[:, i] = fixed[name] if name in fixed else 0.0
    points[:, states.index(free[0])] = a.ravel()
    points[:, states.index(free[1])] = b.ravel()

    rows = []
    for k in stages if stages else sorted(solution.stages):
        if k not in solution.stages:
            raise UsageError(f"stage {k} is not in the solution")
        values = solution.stage(k).level().evaluate_batch(points)
        for x, y, v in zip(a.ravel(), b.ravel(), values):
            rows.append([k, f"{x:.10g}", f"{y:.10g}", f"{v:.10g}"])
    return rows


def write_csv(header: Sequence[str], rows: Sequence[Sequence], output: Optional[str]) -> None:
    if output:
        with open(output, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(header)
            writer.writerows(rows)
    else:
        writer = csv.writer(sys.stdout)
        writer.writerow(header)
        writer.writerows(rows)


def cmd_slice(args) -> int:
    solution = _load(args.solution).load_solution()
    fixed = parse_assignments(args.fix)
    rows = slice_rows(solution, fixed, args.resolution, args.stages)
    free = [s for s in solution.setup.states if s not in fixed]
    write_csv(["k", *free, "value"], rows, args.output)
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "verify": cmd_verify,
    "oracle": cmd_oracle,
    "simulate": cmd_simulate,
    "slice": cmd_slice,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point; returns the process exit code."""
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required: " + " | ".join(COMMANDS))
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
    except UsageError as e:
        print(f"❌ usage: {e}", file=sys.stderr)
        return EXIT_USAGE

    configure_logging(args.verbose)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, FileNotFoundError) as e:
        print(f"❌ Error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except _Incomplete as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_INCOMPLETE
    except CertificateDataError as e:
        print(f"❌ certificate data: {e}", file=sys.stderr)
        return EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
