"""
Command-line interface for qprobe.

    python main.py list
    python main.py run plans/qft.plan --jobs 4
    python main.py integrate programs/phaseflip.qpl programs/memsearch.qpl --entry GS
    python main.py mutate plans/reverse.plan --format tsv --out reverse.tsv
    python main.py simulate programs/qft.qpl programs/reverse.qpl QFT --arg n=3 --input 5

Exit codes: 0 when everything passed, 1 when a test failed, 2 on a harness error
(bad plan, unparsable program, failed setup).
"""
import argparse
import json
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from benchmarks import builtin_benchmarks, get_benchmark
from detect import DetectorError
from io_spec import SpecError
from mutate import Evidence, MutationConfig, MutationError
from partition import PartitionError
from plan_runner import (PlanError, TestPlan, benchmark_plans, emit_report, load_plan, run_integration,
                         run_mutation_plan, run_plan)
from program_model import ProgramError, entry_layout, layout_size, run
from qpl_parser import load_program
from quantum_state import RandomStream, SimulationError, StateVector
from workers import default_jobs

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_HARNESS = 2
SIMULATE_MAX_QUBITS = 12

HARNESS_ERRORS = (PlanError, ProgramError, SpecError, PartitionError, DetectorError, MutationError,
                  SimulationError, OSError, KeyError)


def _banner(title: str):
    print("=" * 70)
    print(title)
    print("=" * 70)


def _write(text: str, out: Optional[str]):
    if out is None:
        print(text, end="")
        return
    Path(out).write_text(text, encoding="utf-8")
    print(f"\nReport saved to: {out}")


def _load(path: str, seed: Optional[int]) -> TestPlan:
    plan = load_plan(path)
    if seed is not None:
        plan.seed = seed
    return plan


def _key_values(items: List[str]) -> Dict[str, int]:
    values = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep:
            raise PlanError(f"Expected NAME=VALUE, got '{item}'")
        try:
            values[key.strip()] = int(value)
        except ValueError:
            raise PlanError(f"'{key}' needs an integer value, got '{value}'") from None
    return values


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_list(args) -> int:
    _banner("BENCHMARKS")
    for entry in builtin_benchmarks():
        plan = entry.plan_path.name if entry.plan_path.exists() else "-"
        print(f"  {entry.name:<10} {entry.mark:<58} {plan}")
        if entry.description:
            print(f"  {'':<10} {entry.description}")
    return EXIT_PASS


def cmd_run(args) -> int:
    plan = _load(args.plan, args.seed)
    result = run_plan(plan, jobs=args.jobs, verbose=not args.quiet)
    _write(emit_report([result], args.format), args.out)
    if args.json:
        Path(args.json).write_text(json.dumps(result.to_dict(), indent=2), encoding="utf-8")
    return EXIT_PASS if result.all_passed else EXIT_FAIL


def cmd_integrate(args) -> int:
    program = load_program(*args.program, entry=args.entry)
    plans = benchmark_plans(program)
    for path in args.plan:
        plan = _load(path, None)
        name = plan.subroutine or (get_benchmark(plan.benchmark).subroutine if plan.benchmark else None)
        if name is None:
            raise PlanError(f"{path}: cannot tell which subroutine the plan tests")
        plans[name] = plan
    if args.seed is not None:
        for plan in plans.values():
            plan.seed = args.seed
    results = run_integration(program, plans, None, args.continue_on_fail, args.jobs, not args.quiet)
    _write(emit_report(results, args.format), args.out)
    return EXIT_PASS if all(r.all_passed for _, r in results) else EXIT_FAIL


def cmd_mutate(args) -> int:
    plan = _load(args.plan, args.seed)
    if args.short_circuit:
        plan.mutation = plan.mutation or MutationConfig()
        plan.mutation.short_circuit = args.short_circuit
    verbose = not args.quiet
    report, survivors, mutants = run_mutation_plan(plan, args.jobs, verbose)

    if verbose:
        by_id = {m.id: m for m in mutants}
        print(f"\nKilled {len(report.killed)}/{len(report.results)}  ({report.wall_clock:.2f}s)")
        for label in survivors:
            print(f"  survivor {label.mutant_id:<16} {label.evidence.value:<24} "
                  f"{by_id[label.mutant_id].descriptor.describe()}")
            if label.witness:
                print(f"  {'':<25} witness: {label.witness}")
    _write(emit_report([report], args.format), args.out)
    if args.json:
        data = report.to_dict()
        data["survivors"] = [{"id": s.mutant_id, "evidence": s.evidence.value, "witness": s.witness,
                              "scales": list(s.scales)} for s in survivors]
        Path(args.json).write_text(json.dumps(data, indent=2, default=str), encoding="utf-8")
    undetected = [s for s in survivors if s.evidence != Evidence.EQUIVALENT]
    return EXIT_PASS if not undetected else EXIT_FAIL


def cmd_simulate(args) -> int:
    program = load_program(*args.program)
    sub = program.get(args.subroutine)
    classical = _key_values(args.arg)
    layout = entry_layout(sub, classical)
    width = layout_size(layout)
    if width > args.max_qubits:
        raise SimulationError(f"{sub.name} uses {width} qubits; the display cap is {args.max_qubits}")
    rng = RandomStream(args.seed if args.seed is not None else 42)
    initial = StateVector.basis(width, args.input) if width else None
    state, results = run(program, sub, classical, layout, initial, rng=rng)

    _banner(f"{sub.name}  {classical}  input |{args.input:0{max(width, 1)}b}>")
    for name, qubits in layout.items():
        print(f"  {name}: qubits {qubits}")
    for index in np.flatnonzero(np.abs(state.amplitudes) > args.cutoff):
        amp = state.amplitudes[index]
        print(f"  |{index:0{width}b}>  {amp.real:+.6f} {amp.imag:+.6f}i   p={abs(amp) ** 2:.6f}")
    if results:
        print(f"  results: {results}")
    return EXIT_PASS


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the plan seed")
    common.add_argument("--format", choices=("table", "tsv"), default="table", help="report format")
    common.add_argument("--jobs", type=int, default=1,
                        help=f"worker processes (this machine: up to {default_jobs()})")
    common.add_argument("--out", default=None, help="write the report to this file")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")

    parser = argparse.ArgumentParser(prog="qprobe", description="Testing multi-subroutine quantum programs")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("list", parents=[common], help="list shipped benchmarks")
    p.set_defaults(func=cmd_list)

    p = commands.add_parser("run", parents=[common], help="run a unit test plan")
    p.add_argument("plan")
    p.add_argument("--json", default=None, help="also save per-case verdicts as JSON")
    p.set_defaults(func=cmd_run)

    p = commands.add_parser("integrate", parents=[common], help="integration test along the dependency graph")
    p.add_argument("program", nargs="+", help="QPL-mini source files")
    p.add_argument("--entry", default=None, help="entry subroutine (default: the last one defined)")
    p.add_argument("--plan", action="append", default=[], help="plan file overriding a shipped plan")
    p.add_argument("--continue", dest="continue_on_fail", action="store_true",
                   help="keep going after a failing level")
    p.set_defaults(func=cmd_integrate)

    p = commands.add_parser("mutate", parents=[common], help="mutation analysis of a plan's suite")
    p.add_argument("plan")
    p.add_argument("--short-circuit", choices=MutationConfig.SHORT_CIRCUIT, default=None)
    p.add_argument("--json", default=None, help="also save the kill matrix as JSON")
    p.set_defaults(func=cmd_mutate)

    p = commands.add_parser("simulate", parents=[common], help="run a subroutine on a basis state")
    p.add_argument("program", nargs="+", help="QPL-mini source files")
    p.add_argument("subroutine")
    p.add_argument("--arg", action="append", default=[], help="classical value NAME=INT")
    p.add_argument("--input", type=int, default=0, help="basis-state index of the input")
    p.add_argument("--cutoff", type=float, default=1e-9, help="hide amplitudes below this magnitude")
    p.add_argument("--max-qubits", type=int, default=SIMULATE_MAX_QUBITS)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except HARNESS_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_HARNESS


if __name__ == "__main__":
    sys.exit(main())
