"""
Tests for plan files, the suite runner, integration runs, reports and the CLI.
"""
import tempfile
from contextlib import redirect_stdout
from io import StringIO
from pathlib import Path

import pytest

from benchmarks import builtin_benchmarks, get_benchmark, grover_success
from main import EXIT_FAIL, EXIT_HARNESS, EXIT_PASS, main as cli
from plan_runner import (PLAN_HEADER, REPORT_COLUMNS, PlanError, StageError, benchmark_plan, benchmark_plans,
                         build_suite, emit_report, format_rate, integration_path, load_plan, parse_plan,
                         run_integration, run_mutation_plan, run_plan)
from program_model import substitute
from qpl_parser import load_program, parse_subroutine
from quantum_state import RandomStream

ROOT = Path(__file__).parent
PROGRAMS = ROOT / "programs"
PLANS = ROOT / "plans"

SAMPLE_PLAN = """qprobe-plan v1
// comment line

[plan]
benchmark = MultiSWAP   // trailing comment
seed = 7
cases = 3
theta = 0.5

[partition]
n = 1 | >=2 rep 3
qs1 = CSMP
qs2 = CSP

[combine]
strategy = ACoC(n, ECC(qs1, qs2))

[detector]
repetitions = 300

[detector n>=2, qs1=M]
tolerance = 0.2

[args]
k = 3

[mutation]
types = GM, CM
caps = GM:5
short_circuit = first_kill
"""


def _quiet_plan(name, **changes):
    plan = load_plan(PLANS / f"{name}.plan")
    for key, value in changes.items():
        setattr(plan, key, value)
    return plan


def test_parse_plan():
    print("=" * 70)
    print("TEST: plan files")
    print("=" * 70)
    plan = parse_plan(SAMPLE_PLAN, "sample")
    assert plan.benchmark == "MultiSWAP"
    assert plan.seed == 7 and plan.cases == 3 and plan.theta == 0.5
    assert plan.partitions == {"n": "1 | >=2 rep 3", "qs1": "CSMP", "qs2": "CSP"}
    assert plan.strategy == "ACoC(n, ECC(qs1, qs2))"
    assert plan.detector == {"repetitions": "300"}
    assert plan.detector_overrides == [("n>=2, qs1=M", {"tolerance": "0.2"})]
    assert plan.args == {"k": 3}
    assert [t.value for t in plan.mutation.types] == ["GM", "CM"]
    assert plan.mutation.short_circuit == "first_kill"
    assert plan.name == "sample"
    print("  ✓ every section read, comments dropped")


def test_shipped_plans_parse():
    for entry in builtin_benchmarks():
        plan = benchmark_plan(entry)
        assert plan.benchmark == entry.name
        assert plan.version == "v1"
    qft = load_plan(PLANS / "qft.plan")
    assert qft.variants == {"subroutine": "QFT", "n": "3", "k": "-3..3", "inputs": "20"}
    assert qft.detector_overrides == [("qs=S", {"repetitions": "1000"})]
    assert qft.cases is None
    gs = load_plan(PLANS / "gs.plan")
    assert gs.doubles == {"PO": "Uf"}
    purity = load_plan(PLANS / "purity.plan")
    assert purity.partitions["t"] == "1 | 3"
    assert purity.detector["qra_repeats"] == "20"
    print(f"  ✓ {len(builtin_benchmarks())} shipped plans parse")


def test_plan_errors_carry_position():
    with pytest.raises(PlanError) as info:
        parse_plan("qprobe-plan v1\n[plan]\nbenchmark = Reverse\n[partition]\nn 1 | 2\n")
    assert "line 5" in str(info.value)
    with pytest.raises(PlanError) as info:
        parse_plan("[plan]\nbenchmark = Reverse\n")
    assert "line 1" in str(info.value)
    with pytest.raises(PlanError) as info:
        parse_plan(f"{PLAN_HEADER} v2\n[plan]\nbenchmark = Reverse\n")
    assert "v2" in str(info.value)
    with pytest.raises(PlanError):
        parse_plan("qprobe-plan v1\n[plans]\nseed = 1\n")
    with pytest.raises(PlanError):
        parse_plan("qprobe-plan v1\n[plan qs=C]\nseed = 1\n")
    with pytest.raises(PlanError):
        parse_plan("qprobe-plan v1\n[plan]\nseed = many\n")
    with pytest.raises(PlanError):
        parse_plan("qprobe-plan v1\n[mutation]\nshort_circuit = sometimes\n")
    with pytest.raises(PlanError):
        load_plan(PLANS / "missing.plan")
    print("  ✓ syntax errors report line and column")


def test_qft_suite_has_six_frames():
    print("\n" + "=" * 70)
    print("TEST: suite stages")
    print("=" * 70)
    suite = build_suite(load_plan(PLANS / "qft.plan"))
    assert len(suite.frames) == 6
    assert len(suite.cases) == 2 + 2 + 8 + 8 + 72 + 72
    assert {suite.case_class(i) for i in range(len(suite.cases))} == {"C", "S"}
    for case, config in zip(suite.cases, suite.configs):
        expected = 1000 if case.frame.get("qs").label == "S" else 200
        assert config.repetitions == expected
    again = build_suite(load_plan(PLANS / "qft.plan"))
    assert [c.describe() for c in again.cases] == [c.describe() for c in suite.cases]
    print("  ✓ 6 frames, 164 cases, qs=S frames use 1000 repetitions")


def test_stage_errors():
    plan = _quiet_plan("reverse")
    plan.partitions["m"] = "1 | 2"
    with pytest.raises(StageError) as info:
        build_suite(plan)
    assert info.value.stage == "validate"

    plan = _quiet_plan("reverse")
    del plan.partitions["qs"]
    with pytest.raises(StageError) as info:
        build_suite(plan)
    assert info.value.stage == "validate"

    with pytest.raises(StageError) as info:
        build_suite(_quiet_plan("reverse", partitions={"n": "1 | | 2", "qs": "CSP"}))
    assert info.value.stage == "partition"

    for strategy in ("ACoC(n)", "ACoC(n, q)", "ACoC(n, qs", "Product(n, qs)"):
        with pytest.raises(StageError) as info:
            build_suite(_quiet_plan("reverse", strategy=strategy))
        assert info.value.stage == "combine", strategy

    with pytest.raises(StageError) as info:
        build_suite(_quiet_plan("reverse", benchmark="Nothing"))
    assert info.value.stage == "validate"
    with pytest.raises(StageError) as info:
        build_suite(_quiet_plan("gs", doubles={"PO": "Mystery"}))
    assert info.value.stage == "validate"
    print("  ✓ failures name the validate, partition or combine stage")


def test_run_reverse_plan():
    plan = _quiet_plan("reverse", cases=2)
    result = run_plan(plan, verbose=False)
    assert result.all_passed
    assert result.total == 12
    assert result.failed == 0 and result.inconclusive == 0
    data = result.to_dict()
    assert [f["label"] for f in data["frames"]] == [f.label for f in result.frames]
    assert all(f["passed"] == 2 for f in data["frames"])
    print("  ✓ Reverse passes 12 cases")


def test_run_catches_faulty_program():
    entry = get_benchmark("Reverse")
    faulty = substitute(entry.load(), "Reverse", parse_subroutine("""
sub Reverse(qubits qs[n]) {
    for i in 0..n/2-1 {
        CNOT qs[i], qs[n-1-i];
    }
}
"""))
    result = run_plan(_quiet_plan("reverse", cases=4), program=faulty, verbose=False)
    assert not result.all_passed
    assert result.failed > 0
    # n = 1 has nothing to swap
    assert result.frames[0].failed == 0
    print(f"  ✓ CNOT in place of SWAP fails {result.failed}/{result.total} cases")


def test_grover_frequencies():
    plan = _quiet_plan("grover", cases=3)
    result = run_plan(plan, verbose=False)
    assert result.all_passed
    for frame in result.frames:
        n = 2 if frame.label.startswith("n=2") else 3
        for verdict in frame.verdicts:
            assert verdict.repetitions == 1000
            assert abs(verdict.observed_freq - grover_success(n)) <= 0.03
            assert verdict.expected_freq == pytest.approx(grover_success(n))
    print(f"  ✓ Grover success within 0.03 of {grover_success(3):.4f} (n=3)")


def test_plan_without_benchmark(tmp_path: Path):
    (tmp_path / "hh.qpl").write_text("sub HH(qubits q[n]) {\n    H q;\n    H q;\n}\n", encoding="utf-8")
    text = """qprobe-plan v1
[plan]
program = hh.qpl
subroutine = HH
mark = HH : (n, *q*) -> (*q'*)
spec = identity
cases = 3

[partition]
n = 1 | 2
q = CSP
"""
    (tmp_path / "hh.plan").write_text(text, encoding="utf-8")
    result = run_plan(load_plan(tmp_path / "hh.plan"), verbose=False)
    assert result.all_passed and result.total == 12

    (tmp_path / "bad.plan").write_text(text.replace("spec = identity", "spec = benchmark"), encoding="utf-8")
    with pytest.raises(StageError) as info:
        build_suite(load_plan(tmp_path / "bad.plan"))
    assert info.value.stage == "validate"
    print("  ✓ plans over standalone programs with the identity spec")


def test_report_formats():
    print("\n" + "=" * 70)
    print("TEST: reports")
    print("=" * 70)
    assert format_rate(963, 1311) == "0.7346"
    assert format_rate(0, 0) == "-"
    assert emit_report([], "tsv") == "\t".join(REPORT_COLUMNS) + "\n"
    with pytest.raises(PlanError):
        emit_report([], "csv")

    plan = _quiet_plan("reverse", cases=2)
    first = emit_report([run_plan(plan, verbose=False)], "tsv")
    second = emit_report([("reverse", run_plan(plan, verbose=False))], "tsv")
    assert first == second
    lines = first.splitlines()
    assert len(lines) == 1 + 6
    assert lines[1].split("\t")[:5] == ["reverse", "n=1,qs=C", "2", "0", "0.0000"]
    table = emit_report([run_plan(plan, verbose=False)], "table")
    assert "time (s)" in table.splitlines()[0]
    assert set(table.splitlines()[1]) == {"-"}
    print("  ✓ TSV is byte-identical across runs; table adds timing")


def test_integration_order():
    program = load_program(PROGRAMS / "reverse.qpl", PROGRAMS / "qft.qpl", entry="QFT")
    assert integration_path(program) == ["CRk", "Reverse", "QFT"]
    memsearch = load_program(PROGRAMS / "phaseflip.qpl", PROGRAMS / "memsearch.qpl", entry="GS")
    assert integration_path(memsearch) == ["PO", "PhaseFlip", "GS"]
    assert set(benchmark_plans(memsearch)) == {"PO", "PhaseFlip", "GS"}
    with pytest.raises(PlanError):
        run_integration(memsearch, {"GS": load_plan(PLANS / "gs.plan")}, verbose=False)
    print("  ✓ callees before callers")


@pytest.mark.slow
def test_memory_search_integration():
    print("\n" + "=" * 70)
    print("TEST: integration (slow)")
    print("=" * 70)
    program = load_program(PROGRAMS / "phaseflip.qpl", PROGRAMS / "memsearch.qpl", entry="GS")
    results = run_integration(program, benchmark_plans(program), verbose=False)
    assert [label for label, _ in results] == ["PO", "PhaseFlip", "GS [doubles]", "GS [integrated]"]
    assert all(result.all_passed for _, result in results)

    broken = substitute(program, "PO", parse_subroutine("sub PO(qubits addr[3], qubits cell[1]) { X cell[0]; }"))
    stopped = run_integration(broken, benchmark_plans(broken), verbose=False)
    assert [label for label, _ in stopped] == ["PO"]
    assert not stopped[0][1].all_passed
    resumed = run_integration(broken, benchmark_plans(broken), continue_on_fail=True, verbose=False)
    outcome = {label: result.all_passed for label, result in resumed}
    assert outcome == {"PO": False, "PhaseFlip": True, "GS [doubles]": True, "GS [integrated]": False}
    print("  ✓ GS passes with the Uf double and with the real PO; a broken PO is caught first")


@pytest.mark.slow
def test_shipped_plans_pass():
    print("\n" + "=" * 70)
    print("TEST: shipped plans on their benchmarks (slow)")
    print("=" * 70)
    for entry in builtin_benchmarks():
        result = run_plan(benchmark_plan(entry), rng=RandomStream(42), verbose=False)
        print(f"  {entry.name:<10} {result.total:>5} cases  {result.wall_clock:7.2f}s")
        assert result.all_passed, entry.name


@pytest.mark.slow
def test_mutation_reports_independent_of_workers():
    print("\n" + "=" * 70)
    print("TEST: mutation reports at 1 and 8 workers (slow)")
    print("=" * 70)
    for name in ("Reverse", "MultiSWAP", "PhaseFlip", "Grover"):
        plan = benchmark_plan(get_benchmark(name))
        serial, serial_labels, _ = run_mutation_plan(plan, jobs=1, verbose=False)
        pooled, pooled_labels, _ = run_mutation_plan(plan, jobs=8, verbose=False)
        assert emit_report([serial], "tsv") == emit_report([pooled], "tsv"), name
        labels = [[(s.mutant_id, s.evidence) for s in found] for found in (serial_labels, pooled_labels)]
        assert labels[0] == labels[1], name
        print(f"  {name:<10} {len(serial.results)} mutants, identical TSV")
    print("  ✓ worker count does not change a byte")


def test_cli(tmp_path: Path):
    print("\n" + "=" * 70)
    print("TEST: command line")
    print("=" * 70)
    out = StringIO()
    with redirect_stdout(out):
        assert cli(["list"]) == EXIT_PASS
    assert "Reverse" in out.getvalue() and "reverse.plan" in out.getvalue()

    (tmp_path / "bad.plan").write_text("qprobe-plan v9\n", encoding="utf-8")
    assert cli(["run", str(tmp_path / "bad.plan"), "--quiet"]) == EXIT_HARNESS
    assert cli(["run", str(tmp_path / "none.plan"), "--quiet"]) == EXIT_HARNESS

    report = tmp_path / "reverse.tsv"
    with redirect_stdout(StringIO()):
        code = cli(["run", str(PLANS / "reverse.plan"), "--quiet", "--format", "tsv", "--out", str(report)])
    assert code == EXIT_PASS
    assert report.read_text(encoding="utf-8").startswith("program\tclass\tcases")

    out = StringIO()
    with redirect_stdout(out):
        assert cli(["simulate", str(PROGRAMS / "reverse.qpl"), "Reverse", "--arg", "n=3", "--input", "6"]) == EXIT_PASS
    assert "|011>" in out.getvalue()
    assert cli(["simulate", str(PROGRAMS / "reverse.qpl"), "Reverse", "--arg", "n"]) == EXIT_HARNESS
    assert EXIT_FAIL == 1
    print("  ✓ exit codes 0 / 2 and report files")


def main():
    print("\n" + "=" * 70)
    print("PLAN RUNNER TESTS")
    print("=" * 70)
    scratch = Path(tempfile.mkdtemp())

    test_parse_plan()
    test_shipped_plans_parse()
    test_plan_errors_carry_position()
    test_qft_suite_has_six_frames()
    test_stage_errors()
    test_run_reverse_plan()
    test_run_catches_faulty_program()
    test_grover_frequencies()
    test_plan_without_benchmark(scratch)
    test_report_formats()
    test_integration_order()
    test_memory_search_integration()
    test_shipped_plans_pass()
    test_mutation_reports_independent_of_workers()
    test_cli(scratch)

    print("\n" + "=" * 70)
    print("ALL TESTS COMPLETE")
    print("=" * 70)


if __name__ == "__main__":
    main()
