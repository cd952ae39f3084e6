"""
Mutation experiments over the shipped benchmarks.

Necessity: for each benchmark, how many mutants of each type the classical-input
and the superposition-input cases kill, and how many mutants only one of the two
kinds of input can kill.

Kill rate: mutants killed per benchmark and type, with every survivor classified
as behaviorally equivalent or undetected.

Results are written to mutation_results.json with two comparison plots.
"""
import argparse
import json
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from benchmarks import get_benchmark
from mutate import ALL_TYPES, Evidence, MutationReport
from plan_runner import benchmark_plan, emit_report, run_mutation_plan, run_silent
from workers import default_jobs

NECESSITY_BENCHMARKS = ("Reverse", "MultiSWAP", "QFT", "invQFT", "PhaseFlip")
KILL_RATE_BENCHMARKS = ("Reverse", "MultiSWAP", "QFT", "invQFT", "PhaseFlip", "Grover", "Purity")
INPUT_CLASSES = ("C", "S")

TYPE_COLORS = {"GM": "tab:blue", "SM": "tab:orange", "CM": "tab:green", "MM": "tab:red"}
CLASS_HATCH = {"C": "", "S": "//"}


def mutation_run(name: str, jobs: int = 1, drop_classes: Sequence[str] = ()):
    """Mutation analysis of one benchmark's shipped plan, silently."""
    plan = benchmark_plan(get_benchmark(name))
    keep = (lambda cls: cls not in drop_classes) if drop_classes else None
    (report, survivors, mutants), elapsed = run_silent(run_mutation_plan, plan, jobs, True, keep)
    return report, survivors, mutants, elapsed


def exclusive_kills(report: MutationReport) -> Dict[str, int]:
    """Mutants killed by exactly one input class, per class."""
    only = {cls: 0 for cls in report.class_cases}
    for r in report.results:
        killers = [cls for cls, hits in r.triggered.items() if hits]
        if len(killers) == 1:
            only[killers[0]] = only.get(killers[0], 0) + 1
    return only


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

def necessity_experiment(names: Sequence[str] = NECESSITY_BENCHMARKS, jobs: int = 1) -> Dict:
    print(f"\n{'=' * 70}")
    print("NECESSITY: mutants killed by classical vs superposition inputs")
    print(f"{'=' * 70}")
    results = {}
    reports = []
    for name in names:
        print(f"\n  Mutating {name}...", end=" ", flush=True)
        report, _, _, elapsed = mutation_run(name, jobs)
        print(f"Done ({elapsed:.2f}s, {len(report.results)} mutants)")
        reports.append(report)
        per_type = report.per_type()
        triggers = report.trigger_counts()
        results[name] = {
            "mutants": {t: per_type[t]["mutants"] for t in per_type},
            "triggers": {cls: triggers.get(cls, {t.value: 0 for t in ALL_TYPES}) for cls in INPUT_CLASSES},
            "only": exclusive_kills(report),
            "cases": dict(report.class_cases),
            "time": elapsed,
        }

    print(f"\n{'Benchmark':<12} {'Class':<6} " + " ".join(f"{t.value:>8}" for t in ALL_TYPES) + f" {'Only':>6}")
    print("-" * 62)
    for name, row in results.items():
        for cls in INPUT_CLASSES:
            cells = [f"{row['triggers'][cls][t.value]}/{row['mutants'][t.value]}" for t in ALL_TYPES]
            print(f"{name:<12} {cls:<6} " + " ".join(f"{c:>8}" for c in cells) + f" {row['only'].get(cls, 0):>6}")
    print("-" * 62)
    print()
    print(emit_report(reports, "table"))
    return results


def kill_rate_experiment(names: Sequence[str] = KILL_RATE_BENCHMARKS, jobs: int = 1,
                         include_qft_superposition: bool = True) -> Dict:
    print(f"\n{'=' * 70}")
    print("KILL RATE: shipped plans against seeded mutant corpora")
    print(f"{'=' * 70}")
    results = {}
    for name in names:
        drop = ("S",) if name == "QFT" and not include_qft_superposition else ()
        print(f"\n  Mutating {name}...", end=" ", flush=True)
        report, survivors, mutants, elapsed = mutation_run(name, jobs, drop)
        print(f"Done ({elapsed:.2f}s)")
        equivalent = [s.mutant_id for s in survivors if s.evidence == Evidence.EQUIVALENT]
        results[name] = {
            "per_type": report.per_type(),
            "mutants": len(report.results),
            "killed": len(report.killed),
            "equivalent": equivalent,
            "undetected": {s.mutant_id: {"evidence": s.evidence.value, "witness": s.witness}
                           for s in survivors if s.evidence != Evidence.EQUIVALENT},
            "kill_rate": report.kill_rate(exclude=equivalent),
            "time": elapsed,
        }

    print(f"\n{'Benchmark':<12} {'Mutants':>8} {'Killed':>8} {'Equiv':>6} {'Undet':>6} {'Rate':>8} {'Time (s)':>10}")
    print("-" * 64)
    for name, row in results.items():
        print(f"{name:<12} {row['mutants']:>8} {row['killed']:>8} {len(row['equivalent']):>6} "
              f"{len(row['undetected']):>6} {row['kill_rate']:>8.4f} {row['time']:>10.2f}")
    total = sum(r["mutants"] for r in results.values())
    killed = sum(r["killed"] for r in results.values())
    equivalent = sum(len(r["equivalent"]) for r in results.values())
    overall = killed / (total - equivalent) if total > equivalent else 1.0
    print("-" * 64)
    print(f"{'all':<12} {total:>8} {killed:>8} {equivalent:>6} {total - killed - equivalent:>6} {overall:>8.4f}")
    for name, row in results.items():
        for mutant_id, info in row["undetected"].items():
            print(f"  undetected {mutant_id}: {info['evidence']} {info['witness'] or ''}")
    return results


# ---------------------------------------------------------------------------
# Plots
# ---------------------------------------------------------------------------

def plot_trigger_rates(necessity: Dict, filename: str):
    """Grouped bars: fraction of each type's mutants killed by C and by S inputs."""
    names = list(necessity)
    types = [t.value for t in ALL_TYPES]
    fig, ax = plt.subplots(figsize=(14, 6))
    width = 0.8 / (len(types) * len(INPUT_CLASSES))
    x = np.arange(len(names))
    offset = 0
    for t in types:
        for cls in INPUT_CLASSES:
            rates = []
            for name in names:
                total = necessity[name]["mutants"][t]
                rates.append(necessity[name]["triggers"][cls][t] / total if total else 0.0)
            ax.bar(x - 0.4 + (offset + 0.5) * width, rates, width, color=TYPE_COLORS[t], hatch=CLASS_HATCH[cls],
                   edgecolor="black", linewidth=0.5, label=f"{t} by {cls}")
            offset += 1
    ax.set_xticks(x)
    ax.set_xticklabels(names)
    ax.set_ylabel("Fraction of mutants killed", fontsize=12)
    ax.set_title("Mutants killed by classical (plain) vs superposition (hatched) inputs", fontsize=14)
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=8, ncol=4)
    ax.grid(True, axis="y", alpha=0.3)
    plt.tight_layout()
    plt.savefig(filename, dpi=300, bbox_inches="tight")
    print(f"  Plot saved: {filename}")
    plt.close()


def plot_kill_rates(kill_rates: Dict, filename: str):
    """Stacked bars per benchmark: killed, equivalent and undetected mutants."""
    names = list(kill_rates)
    killed = np.array([kill_rates[n]["killed"] for n in names])
    equivalent = np.array([len(kill_rates[n]["equivalent"]) for n in names])
    undetected = np.array([len(kill_rates[n]["undetected"]) for n in names])
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(16, 6))

    x = np.arange(len(names))
    ax1.bar(x, killed, color="tab:green", label="killed")
    ax1.bar(x, equivalent, bottom=killed, color="tab:gray", label="equivalent")
    ax1.bar(x, undetected, bottom=killed + equivalent, color="tab:red", label="undetected")
    ax1.set_xticks(x)
    ax1.set_xticklabels(names, rotation=30)
    ax1.set_ylabel("Mutants", fontsize=12)
    ax1.set_title("Mutant outcomes per benchmark", fontsize=14)
    ax1.legend()
    ax1.grid(True, axis="y", alpha=0.3)

    types = [t.value for t in ALL_TYPES]
    width = 0.8 / len(types)
    for i, t in enumerate(types):
        rates = []
        for n in names:
            row = kill_rates[n]["per_type"][t]
            rates.append(row["killed"] / row["mutants"] if row["mutants"] else np.nan)
        ax2.bar(x - 0.4 + (i + 0.5) * width, rates, width, color=TYPE_COLORS[t], label=t)
    ax2.set_xticks(x)
    ax2.set_xticklabels(names, rotation=30)
    ax2.set_ylabel("Kill rate", fontsize=12)
    ax2.set_title("Kill rate per mutation type", fontsize=14)
    ax2.set_ylim(0, 1.05)
    ax2.legend()
    ax2.grid(True, axis="y", alpha=0.3)

    plt.tight_layout()
    plt.savefig(filename, dpi=300, bbox_inches="tight")
    print(f"  Plot saved: {filename}")
    plt.close()


def save_results(results: Dict, filename: str):
    with open(filename, "w") as f:
        json.dump(results, f, indent=2, default=str)
    print(f"\nResults saved to: {filename}")


def main(argv: Optional[List[str]] = None):
    parser = argparse.ArgumentParser(description="Mutation experiments over the shipped benchmarks")
    parser.add_argument("--jobs", type=int, default=default_jobs())
    parser.add_argument("--quick", action="store_true",
                        help="leave out the statistic-heavy QFT superposition frames")
    parser.add_argument("--out-dir", default=".")
    args = parser.parse_args(argv)

    print("\n" + "=" * 70)
    print("MUTATION EXPERIMENTS")
    print("=" * 70)
    print(f"  Jobs: {args.jobs}   QFT superposition frames: {'off' if args.quick else 'on'}")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    start = time.time()

    necessity = necessity_experiment(
        [n for n in NECESSITY_BENCHMARKS if not (args.quick and n == "QFT")], args.jobs)
    kill_rates = kill_rate_experiment(KILL_RATE_BENCHMARKS, args.jobs, not args.quick)

    plot_trigger_rates(necessity, str(out / "necessity_triggers.png"))
    plot_kill_rates(kill_rates, str(out / "kill_rates.png"))
    save_results({"necessity": necessity, "kill_rate": kill_rates, "quick": args.quick,
                  "total_time": time.time() - start}, str(out / "mutation_results.json"))

    print("\n" + "=" * 70)
    print(f"DONE ({time.time() - start:.1f}s)")
    print("=" * 70)


if __name__ == "__main__":
    main()
