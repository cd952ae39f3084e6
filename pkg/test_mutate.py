"""
Tests for mutant generation, mutation analysis and survivor classification.
"""
from pathlib import Path

import pytest

from benchmarks import get_benchmark
from detect import evaluate_case
from mutate import (ComparisonDomain, Evidence, Mutant, MutantResult, MutationConfig, MutationDescriptor,
                    MutationError, MutationReport, MutationType, classify_survivors, compare_up_to_phase,
                    enumerate_mutants, output_distribution, run_mutation_analysis, subroutine_matrix)
from mutation_experiments import exclusive_kills, kill_rate_experiment
from partition import Strategy, combine, partition_variable, sample_cases
from plan_runner import benchmark_plan, build_suite, load_plan, run_mutation_plan
from program_model import ProgramError
from qpl_parser import load_program, parse_program, render_subroutine
from quantum_state import RandomStream

PROGRAMS = Path(__file__).parent / "programs"
PLANS = Path(__file__).parent / "plans"


class _ReverseSuite:
    """Small Reverse suite: a few cases per (scale, input class) frame."""

    def __init__(self, count=3):
        entry = get_benchmark("Reverse")
        mark = entry.io_mark()
        self.program = entry.load()
        self.spec = entry.spec
        self.subroutine = "Reverse"
        n = partition_variable(mark.input("n"), buckets="1 | 2 | >=3 rep 4")
        qs = partition_variable(mark.input("qs"), "CSP")
        self.cases = []
        for frame in combine([n, qs], Strategy.ACOC):
            self.cases += sample_cases(frame, mark, self.program.get("Reverse"), RandomStream(42), count=count)

    def evaluate(self, program, index, rng):
        case = self.cases[index]
        return evaluate_case(program, program.get("Reverse"), case, self.spec, rng.child("case", case.id))

    def case_class(self, index):
        return self.cases[index].frame.get("qs").label


def _report(subroutine, mutants):
    results = [MutantResult(m.id, m.mtype, m.descriptor.operation, m.descriptor.describe(), killed=False)
               for m in mutants]
    return MutationReport(subroutine, subroutine, results, {}, "none")


def test_mutants_are_deterministic():
    print("=" * 70)
    print("TEST: mutant enumeration")
    print("=" * 70)
    program = load_program(PROGRAMS / "reverse.qpl")
    first = enumerate_mutants(program, "Reverse")
    again = enumerate_mutants(program, "Reverse")
    assert [m.id for m in first] == [m.id for m in again]
    assert [m.descriptor for m in first] == [m.descriptor for m in again]
    other = enumerate_mutants(program, "Reverse", MutationConfig(seed=7))
    assert [m.descriptor for m in other] != [m.descriptor for m in first]
    print(f"  ✓ {len(first)} mutants, same seed gives the same corpus")


def test_mutants_differ_from_base_and_each_other():
    program = load_program(PROGRAMS / "reverse.qpl")
    base = render_subroutine(program.get("Reverse"))
    mutants = enumerate_mutants(program, "Reverse")
    texts = [render_subroutine(m.mutated.get("Reverse")) for m in mutants]
    assert base not in texts
    assert len(set(texts)) == len(texts)
    assert all(m.base is program for m in mutants)
    assert mutants[0].id == "Reverse-GM01"
    assert mutants[0].descriptor.describe().startswith("GM/")
    print("  ✓ no duplicates, no copies of the base")


def test_reverse_has_no_call_mutants():
    program = load_program(PROGRAMS / "reverse.qpl")
    mutants = enumerate_mutants(program, "Reverse")
    counts = {t: sum(m.mtype == t for m in mutants) for t in MutationType}
    print(f"  per type: { {t.value: c for t, c in counts.items()} }")
    assert counts[MutationType.SM] == 0
    assert counts[MutationType.GM] == 20
    assert 0 < counts[MutationType.CM] <= 12
    assert 0 < counts[MutationType.MM] <= 10
    print("  ✓ caps respected; a subroutine without calls has no SM mutants")


def test_caps_and_types():
    program = load_program(PROGRAMS / "reverse.qpl", PROGRAMS / "qft.qpl", entry="QFT")
    mutants = enumerate_mutants(program, "QFT", MutationConfig(types=["SM"], caps={"SM": 3}))
    assert len(mutants) == 3
    assert all(m.mtype == MutationType.SM for m in mutants)
    with pytest.raises(MutationError):
        MutationConfig(short_circuit="never")
    with pytest.raises(ValueError):
        MutationConfig(types=["XM"])


def test_dry_run_filters_mutants():
    program = load_program(PROGRAMS / "reverse.qpl")
    calls = []

    def reject_all(mutated):
        calls.append(mutated)
        raise ProgramError("rejected")

    assert enumerate_mutants(program, "Reverse", MutationConfig(types=["GM"]), dry_run=reject_all) == []
    assert calls
    print("  ✓ dry-run failures are discarded")


def test_swapped_crk_arguments_are_equivalent():
    print("\n" + "=" * 70)
    print("TEST: survivor classification")
    print("=" * 70)
    program = load_program(PROGRAMS / "reverse.qpl", PROGRAMS / "qft.qpl", entry="QFT")
    mutants = enumerate_mutants(program, "QFT", MutationConfig(types=["SM"]))
    operations = {m.descriptor.operation: m for m in mutants if "CRk" in m.descriptor.before}
    assert "swap_call_args" in operations
    assert "delete_call" in operations

    chosen = [operations["swap_call_args"], operations["delete_call"]]
    labels = {s.mutant_id: s for s in classify_survivors(_report("QFT", chosen), program, chosen, n_max=4)}
    swap = labels[operations["swap_call_args"].id]
    assert swap.evidence == Evidence.EQUIVALENT
    assert swap.scales == (1, 2, 3, 4)
    deleted = labels[operations["delete_call"].id]
    assert deleted.evidence == Evidence.UNDETECTED
    assert deleted.witness["n"] == 2
    print("  ✓ controlled phase is symmetric: swapped arguments are equivalent")
    print(f"  ✓ deleted CRk call differs at n=2, column {deleted.witness['column']}")


def test_exchanged_control_of_crk_is_equivalent():
    program = load_program(PROGRAMS / "reverse.qpl", PROGRAMS / "qft.qpl", entry="CRk")
    mutants = enumerate_mutants(program, "CRk", MutationConfig(types=["GM"], caps={"GM": 100}))
    exchanged = [m for m in mutants if m.descriptor.operation == "exchange_control_target"]
    assert len(exchanged) == 1
    label = classify_survivors(_report("CRk", exchanged), program, exchanged, n_max=3)[0]
    assert label.evidence == Evidence.EQUIVALENT
    print("  ✓ control and target of a controlled R1 can trade places")


def test_measuring_mutants_get_witnesses():
    program = load_program(PROGRAMS / "reverse.qpl")
    mutants = [m for m in enumerate_mutants(program, "Reverse") if m.descriptor.operation == "insert_measure"]
    assert mutants
    labels = classify_survivors(_report("Reverse", mutants[:2]), program, mutants[:2])
    assert all(label.evidence == Evidence.UNDETECTED for label in labels)
    assert any("input" in label.witness for label in labels)
    print("  ✓ a measurement inside Reverse decoheres some |j><k| input")


def test_output_distribution_of_purity():
    program = load_program(PROGRAMS / "multiswap.qpl", PROGRAMS / "purity.qpl", entry="Purity")
    suite = build_suite(load_plan(PLANS / "purity.plan"))
    domain = suite.comparison_domain()
    assert domain.scale == "n"
    assert domain.quantum_inputs == () and domain.classical_outputs == ("isPure",)
    pure = next(c for c in suite.cases if c.frame.get("GenRho").label == "C" and c.classical["t"] == 3)
    [(pair, outputs)] = output_distribution(program, "Purity", pure.classical, pure.doubles, (), ("isPure",), ())
    assert pair == (0, 0)
    assert set(outputs) == {(("isPure", 1),)}
    assert abs(outputs[(("isPure", 1),)][0, 0] - 1) < 1e-12

    mixed = next(c for c in suite.cases if c.frame.get("GenRho").label == "M" and c.classical["t"] == 1)
    [(_, outputs)] = output_distribution(program, "Purity", mixed.classical, mixed.doubles, (), ("isPure",), ())
    caught = outputs[(("isPure", 0),)][0, 0].real
    assert abs(caught - mixed.info["mix"]) < 1e-9
    print(f"  ✓ one round flags the mixed generator with probability {caught:.4f}")


def _purity_mutant(number, old, new):
    text = (PROGRAMS / "multiswap.qpl").read_text() + (PROGRAMS / "purity.qpl").read_text()
    assert old in text
    mutated = parse_program(text.replace(old, new, 1), entry="Purity")
    base = load_program(PROGRAMS / "multiswap.qpl", PROGRAMS / "purity.qpl", entry="Purity")
    descriptor = MutationDescriptor(MutationType.GM, "edit", "Purity", (number,), old.strip(), new.strip())
    return base, Mutant(f"Purity-GM{number:02d}", base, descriptor, mutated)


def test_purity_survivors_compared_exactly():
    domain = build_suite(load_plan(PLANS / "purity.plan")).comparison_domain()
    base, phase = _purity_mutant(1, "        call GenRho()(a);\n", "        Z anc[0];\n        call GenRho()(a);\n")
    reset = "        reset a, b, anc;\n"
    _, measured = _purity_mutant(2, reset, reset + "        mm = measure anc[0];\n")
    _, flipped = _purity_mutant(3, "if (m == 1)", "if (m == 0)")
    mutants = [phase, measured, flipped]
    labels = {s.mutant_id: s for s in classify_survivors(_report("Purity", mutants), base, mutants, domain=domain)}
    assert labels[phase.id].evidence == Evidence.EQUIVALENT
    assert labels[measured.id].evidence == Evidence.EQUIVALENT
    assert set(labels[phase.id].scales) == {1, 2}
    witness = labels[flipped.id].witness
    assert labels[flipped.id].evidence == Evidence.UNDETECTED
    assert witness["input"] == (0, 0) and set(witness["outputs"]) == {"isPure"}
    assert witness["doubles"] and witness["deviation"] > 0.1
    print("  ✓ Z on a fresh ancilla and a measurement after reset are equivalent")
    print(f"  ✓ inverted outcome test differs on isPure={witness['outputs']['isPure']}")


def test_phaseflip_exchange_compared_on_suite_scales():
    program = load_program(PROGRAMS / "phaseflip.qpl")
    mutants = enumerate_mutants(program, "PhaseFlip", MutationConfig(types=["GM"], caps={"GM": 100}))
    exchanged = [m for m in mutants if m.descriptor.operation == "exchange_control_target"]
    assert len(exchanged) == 1
    report = _report("PhaseFlip", exchanged)

    # without the suite's scales n = 1 is tried, where the new target is also a control
    everywhere = classify_survivors(report, program, exchanged)[0]
    assert everywhere.evidence == Evidence.UNDETECTED
    assert everywhere.witness["n"] == 1 and "error" in everywhere.witness

    domain = build_suite(load_plan(PLANS / "phaseflip.plan")).comparison_domain()
    label = classify_survivors(report, program, exchanged, domain=domain)[0]
    assert label.evidence == Evidence.EQUIVALENT
    assert 1 not in label.scales
    assert {2, 3, 4, 5, 6} <= set(label.scales)
    print(f"  ✓ multi-controlled Z is symmetric at every suite scale {label.scales}")


def test_crk_compared_at_suite_k():
    program = load_program(PROGRAMS / "reverse.qpl", PROGRAMS / "qft.qpl", entry="CRk")
    mutants = enumerate_mutants(program, "CRk", MutationConfig(types=["GM"], caps={"GM": 100}))
    exchanged = [m for m in mutants if m.descriptor.operation == "exchange_control_target"]
    domain = ComparisonDomain([({"k": 3}, {}), ({"k": 5}, {})])
    label = classify_survivors(_report("CRk", exchanged), program, exchanged, domain=domain)[0]
    assert label.evidence == Evidence.EQUIVALENT
    assert label.scales == (None,)

    points = [({"k": 3}, {}), ({"k": 5}, {})]
    perturbed = [m for m in mutants if m.descriptor.operation == "perturb_angle"][:1]
    label = classify_survivors(_report("CRk", perturbed), program, perturbed, domain=ComparisonDomain(points))[0]
    assert label.evidence == Evidence.UNDETECTED
    assert label.witness["args"] == {"k": 3}
    print("  ✓ survivors compared at the suite's own k")


def test_superposed_cases_kill_phase_on_exchange():
    plan = load_plan(PLANS / "multiswap.plan")
    suite = build_suite(plan)
    base = suite.program
    text = (PROGRAMS / "multiswap.qpl").read_text()
    mutated = parse_program(text.replace("    for i in 0..n-1 {", "    Z qs1[0];\n    for i in 0..n-1 {", 1))
    descriptor = MutationDescriptor(MutationType.GM, "insert_gate", "MultiSWAP", (0,), "", "Z qs1[0];")
    mutant = Mutant("MultiSWAP-GM99", base, descriptor, mutated)
    report = run_mutation_analysis(base, [mutant], suite, RandomStream(42), short_circuit="none", verbose=False)
    [result] = report.results
    assert result.killed
    assert result.triggered.get("C", 0) == 0
    assert result.triggered["S"] > 0
    print(f"  ✓ Z on qs1[0] killed by {result.triggered['S']} superposed cases and no classical one")


def test_compare_up_to_phase():
    program = load_program(PROGRAMS / "reverse.qpl")
    matrix = subroutine_matrix(program, "Reverse", 3)
    assert matrix.shape == (8, 8)
    assert compare_up_to_phase(matrix, matrix * 1j) is None
    different = compare_up_to_phase(matrix, matrix[:, ::-1])
    assert different is not None and different["deviation"] > 0.5
    assert subroutine_matrix(program, "Reverse", 11) is None


def test_analysis_kill_matrix():
    print("\n" + "=" * 70)
    print("TEST: mutation analysis")
    print("=" * 70)
    suite = _ReverseSuite()
    base = suite.program
    mutants = enumerate_mutants(base, "Reverse", MutationConfig(types=["GM", "CM"], caps={"GM": 6, "CM": 4}))
    rng = RandomStream(42)
    full = run_mutation_analysis(base, mutants, suite, rng, short_circuit="none", verbose=False)
    first = run_mutation_analysis(base, mutants, suite, rng, short_circuit="first_kill", verbose=False)
    per_class = run_mutation_analysis(base, mutants, suite, rng, short_circuit="per_class", verbose=False)

    assert full.base_cases == len(suite.cases) == 18
    assert full.class_cases == {"C": 9, "S": 9}
    assert [r.killed for r in full.results] == [r.killed for r in first.results] == \
           [r.killed for r in per_class.results]
    for a, b, c in zip(full.results, first.results, per_class.results):
        assert a.cases_run == len(suite.cases)
        assert b.cases_run <= c.cases_run <= a.cases_run
        if b.killed:
            assert len(b.killing_cases) == 1
            assert all(hits <= 1 for hits in c.triggered.values())
    rows = full.per_type()
    assert rows["GM"]["mutants"] == 6 and rows["CM"]["mutants"] == 4
    assert rows["GM"]["killed"] + rows["GM"]["unkilled"] == 6
    assert 0.0 <= full.kill_rate() <= 1.0
    assert full.kill_rate(exclude=[r.mutant_id for r in full.survivors]) == 1.0
    print(f"  ✓ {len(full.killed)}/{len(mutants)} killed; every short-circuit mode agrees")


def test_analysis_rejects_failing_base():
    suite = _ReverseSuite(count=2)
    broken = parse_program("""
sub Reverse(qubits qs[n]) {
    X qs[0];
}
""")
    with pytest.raises(MutationError):
        run_mutation_analysis(broken, [], suite, RandomStream(42), verbose=False)
    print("  ✓ mutation analysis refuses a base that fails its suite")


@pytest.mark.slow
def test_classical_inputs_never_kill_measurement_mutants():
    print("\n" + "=" * 70)
    print("TEST: measurement mutants need superposition inputs (slow)")
    print("=" * 70)
    for name in ("Reverse", "MultiSWAP"):
        report, survivors, mutants = run_mutation_plan(benchmark_plan(get_benchmark(name)), verbose=False)
        triggers = report.trigger_counts()
        only = exclusive_kills(report)
        assert report.per_type()["MM"]["mutants"] > 0
        assert triggers["C"]["MM"] == 0
        assert triggers["S"]["MM"] > 0
        assert only["S"] > 0
        for label in survivors:
            assert label.evidence in (Evidence.EQUIVALENT, Evidence.UNDETECTED, Evidence.UNVERIFIED)
        print(f"  {name}: C kills {triggers['C']}, S kills {triggers['S']}, killed only by S: {only['S']}")
    assert report.per_type()["SM"]["mutants"] == 0
    print("  ✓ measuring a basis state changes nothing; some mutants need superposed inputs")


@pytest.mark.slow
def test_phaseflip_survivors_are_equivalent():
    report, survivors, mutants = run_mutation_plan(benchmark_plan(get_benchmark("PhaseFlip")), verbose=False)
    operations = {m.id: m.descriptor.operation for m in mutants}
    for label in survivors:
        if operations[label.mutant_id] == "exchange_control_target":
            assert label.evidence == Evidence.EQUIVALENT, label.witness
        assert label.evidence != Evidence.UNVERIFIED
    print(f"  ✓ {len(report.killed)}/{len(mutants)} PhaseFlip mutants killed, survivors classified")


@pytest.mark.slow
def test_kill_rate_over_shipped_plans():
    print("\n" + "=" * 70)
    print("TEST: kill rate of the shipped plans (slow)")
    print("=" * 70)
    results = kill_rate_experiment(jobs=4, include_qft_superposition=False)
    total = sum(row["mutants"] for row in results.values())
    killed = sum(row["killed"] for row in results.values())
    equivalent = sum(len(row["equivalent"]) for row in results.values())
    rate = killed / (total - equivalent)
    print(f"  {killed}/{total - equivalent} non-equivalent mutants killed ({rate:.4f}), {equivalent} equivalent")
    assert total >= 150
    assert rate >= 0.9
    for row in results.values():
        for info in row["undetected"].values():
            assert info["evidence"] in (Evidence.UNDETECTED.value, Evidence.UNVERIFIED.value)
    print("  ✓ at least 90% of the non-equivalent mutants killed")


def main():
    print("\n" + "=" * 70)
    print("MUTATION TESTS")
    print("=" * 70)

    test_mutants_are_deterministic()
    test_mutants_differ_from_base_and_each_other()
    test_reverse_has_no_call_mutants()
    test_caps_and_types()
    test_dry_run_filters_mutants()
    test_swapped_crk_arguments_are_equivalent()
    test_exchanged_control_of_crk_is_equivalent()
    test_measuring_mutants_get_witnesses()
    test_output_distribution_of_purity()
    test_purity_survivors_compared_exactly()
    test_phaseflip_exchange_compared_on_suite_scales()
    test_crk_compared_at_suite_k()
    test_superposed_cases_kill_phase_on_exchange()
    test_compare_up_to_phase()
    test_analysis_kill_matrix()
    test_analysis_rejects_failing_base()
    test_classical_inputs_never_kill_measurement_mutants()
    test_phaseflip_survivors_are_equivalent()
    test_kill_rate_over_shipped_plans()

    print("\n" + "=" * 70)
    print("ALL TESTS COMPLETE")
    print("=" * 70)


if __name__ == "__main__":
    main()
