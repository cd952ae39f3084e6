"""
Tests for output detection: TBD, SBD, the swap test and variant identities.
"""
from pathlib import Path

import pytest

from benchmarks import get_benchmark
from detect import (DetectorConfig, DetectorError, SBDFrequency, SwapOutcome, Verdict, VerdictStatus, _transform,
                    binomial_pass_probability, combine_verdicts, control_off_values, derived_variants, evaluate_case,
                    identity_check, purity_check, run_on, sbd_frequency_check, swap_test_round, tbd_check)
from detect import test_variants as check_variants
from partition import (ClassicalPrep, EnsemblePrep, ProductPrep, Strategy, TwoValuePrep, combine, partition_variable,
                       sample_cases)
from program_model import derive_controlled
from qpl_parser import load_program, parse_program, parse_subroutine
from quantum_state import RandomStream, StateVector, measure

PROGRAMS = Path(__file__).parent / "programs"

COIN = parse_subroutine("""
sub Coin(qubits q[1]) {
    H q[0];
}
""")


def _coin_flip(rng):
    out = run_on(StateVector.zero(1), COIN, rng)
    outcome, _ = measure(out, [0], rng.child("measure"))
    return outcome.as_integer


def test_tbd_accepts_expected_output():
    print("=" * 70)
    print("TEST: transform-based detection")
    print("=" * 70)
    rng = RandomStream(42)
    for prep in (ClassicalPrep(5, 3), TwoValuePrep(1, 6, 0.7, 3), TwoValuePrep(0, 3, 0.0, 2)):
        verdict = tbd_check(prep.state(), prep.uncompute(), rng.child(prep.describe()))
        assert verdict.passed, prep.describe()
        assert verdict.counts == {0: 1}
    print("  ✓ expected outputs uncompute to |0...0>")

    verdict = tbd_check(ClassicalPrep(5, 3).state(), ClassicalPrep(4, 3).uncompute(), rng)
    assert verdict.failed
    assert 0 not in verdict.counts
    print("  ✓ a wrong classical output fails")


def test_tbd_catches_wrong_phase():
    # (|0> + |1>)/sqrt2 against (|0> - |1>)/sqrt2 is orthogonal: always caught
    wrong = TwoValuePrep(0, 1, 3.141592653589793, 1).state()
    expected = TwoValuePrep(0, 1, 0.0, 1)
    verdicts = [tbd_check(wrong, expected.uncompute(), RandomStream(i)) for i in range(20)]
    assert all(v.failed for v in verdicts)
    print("  ✓ relative phase errors caught on superpositions")


def test_sbd_frequency_check():
    print("\n" + "=" * 70)
    print("TEST: statistic-based detection")
    print("=" * 70)
    verdict = sbd_frequency_check(_coin_flip, 0.5, RandomStream(42), tolerance=0.1, repetitions=400)
    assert verdict.passed
    assert verdict.repetitions == 400
    assert sum(verdict.counts.values()) == 400
    assert abs(verdict.observed_freq - 0.5) <= 0.1

    biased = sbd_frequency_check(lambda r: int(r.random() < 0.25), 0.5, RandomStream(42), repetitions=1000)
    assert biased.failed
    assert abs(biased.observed_freq - 0.75) < 0.05
    with pytest.raises(DetectorError):
        sbd_frequency_check(_coin_flip, 0.5, RandomStream(1), repetitions=0)
    with pytest.raises(DetectorError):
        SBDFrequency(lambda o: o == 0, 0.5, tolerance=0.5)
    print("  ✓ fair coin passes, biased coin fails")


def test_sbd_calibration():
    assert binomial_pass_probability(0.5, 0.5, 0.1, 200) >= 0.99
    assert binomial_pass_probability(0.75, 0.5, 0.1, 200) < 1e-6
    assert binomial_pass_probability(0.5, 0.5, 0.1, 1000) > binomial_pass_probability(0.5, 0.5, 0.1, 200)
    assert binomial_pass_probability(0.5, 0.5, 0.03, 1000) >= 0.94

    passes = sum(sbd_frequency_check(lambda r: int(r.random() < 0.5), 0.5, RandomStream(7).child("check", i),
                                     0.1, 200).passed for i in range(100))
    print(f"  Bernoulli(0.5) checks passing: {passes}/100 "
          f"(exact {binomial_pass_probability(0.5, 0.5, 0.1, 200):.4f})")
    assert passes >= 95
    print("  ✓ empirical pass rate matches the binomial bound")


def test_detector_config_validation():
    assert DetectorConfig().kind == "auto"
    with pytest.raises(DetectorError):
        DetectorConfig(kind="exact")
    with pytest.raises(DetectorError):
        DetectorConfig(tolerance=0.5)
    with pytest.raises(DetectorError):
        DetectorConfig(repetitions=0)
    with pytest.raises(DetectorError):
        DetectorConfig(qra_repeats=0)


def test_combine_verdicts():
    ok = Verdict(VerdictStatus.PASS, {0: 3}, repetitions=3)
    bad = Verdict(VerdictStatus.FAIL, {1: 1}, repetitions=1, note="mismatch")
    unsure = Verdict.inconclusive("setup")
    assert combine_verdicts([ok, ok]).passed
    merged = combine_verdicts([ok, unsure, bad])
    assert merged.failed
    assert merged.counts == {0: 3, 1: 1}
    assert merged.repetitions == 4
    assert combine_verdicts([ok, unsure]).status == VerdictStatus.INCONCLUSIVE
    assert combine_verdicts([Verdict.skipped("a"), Verdict.skipped("b")]).status == VerdictStatus.SKIPPED
    print("  ✓ fail > inconclusive > pass")


def test_swap_test():
    print("\n" + "=" * 70)
    print("TEST: swap test and purity")
    print("=" * 70)
    same = [swap_test_round(ClassicalPrep(2, 2), ClassicalPrep(2, 2), 2, RandomStream(1).child("r", i))
            for i in range(50)]
    assert all(o == SwapOutcome.SAME for o in same)
    different = [swap_test_round(ClassicalPrep(0, 1), ClassicalPrep(1, 1), 1, RandomStream(2).child("r", i))
                 for i in range(400)]
    freq = sum(o == SwapOutcome.DIFFERENT for o in different) / len(different)
    assert abs(freq - 0.5) < 0.1
    with pytest.raises(DetectorError):
        swap_test_round(ClassicalPrep(0, 7), ClassicalPrep(0, 7), 7, RandomStream(1))
    print(f"  ✓ identical states never differ; orthogonal states differ {freq:.3f} of the time")


def test_purity_of_pure_states():
    for i, prep in enumerate((ClassicalPrep(3, 2), TwoValuePrep(0, 3, 1.1, 2))):
        assert purity_check(prep, 2, RandomStream(5).child(i), t=10)
    print("  ✓ pure states always pass")


def test_purity_detects_maximally_mixed_qubit():
    # each round says "different" with probability (1 - 1/2)/2, so 1 - 0.75^10 over 10 rounds
    mixed = EnsemblePrep(((0.5, ClassicalPrep(0, 1)), (0.5, ClassicalPrep(1, 1))))
    runs = 300
    detected = sum(not purity_check(mixed, 1, RandomStream(42).child("run", i), t=10) for i in range(runs))
    rate = detected / runs
    print(f"  mixed state detected in {rate:.4f} of runs (expected {1 - 0.75 ** 10:.4f})")
    assert abs(rate - (1 - 0.75 ** 10)) < 0.05

    redrawn = sum(not purity_check(lambda r: mixed.draw(r), 1, RandomStream(43).child("run", i), t=10)
                  for i in range(runs))
    assert abs(redrawn / runs - (1 - 0.75 ** 10)) < 0.05
    print("  ✓ detection rate matches 1 - (3/4)^10")


def test_identity_check():
    print("\n" + "=" * 70)
    print("TEST: identity relations")
    print("=" * 70)
    twice = parse_subroutine("""
sub HH(qubits q[1]) {
    H q[0];
    H q[0];
}
""")
    assert identity_check(twice, 1, RandomStream(42)).passed
    verdict = identity_check(COIN, 1, RandomStream(42), num_inputs=30)
    assert verdict.failed
    assert "identity Coin" in verdict.note
    print("  ✓ H;H is the identity, H alone is not")


def test_variants_of_single_gate():
    program = load_program(PROGRAMS / "hpow.qpl")
    sub = program.get("HGate")
    inverse, controlled, power = derived_variants(sub)
    verdicts = check_variants(program, sub, 1, RandomStream(42), inverse, controlled, power)
    for relation, verdict in verdicts.items():
        print(f"  {relation:<11} {verdict.status.value}")
        assert verdict.passed, (relation, verdict.note)

    skipped = check_variants(program, sub, 1, RandomStream(42), inverse)
    assert skipped["inverse"].passed
    assert skipped["power"].status == VerdictStatus.SKIPPED
    assert skipped["controlled"].status == VerdictStatus.SKIPPED
    print("  ✓ derived H variants satisfy every relation")


def test_wrong_inverse_is_caught():
    program = parse_program("""
sub PhaseS(qubits q[1]) {
    S q[0];
}
""")
    sub = program.get("PhaseS")
    # S;S = Z leaves classical inputs alone but flips |+> to |->
    verdicts = check_variants(program, sub, 1, RandomStream(42), inverse=sub, num_inputs=8)
    assert verdicts["inverse"].failed
    right = check_variants(program, sub, 1, RandomStream(42), inverse=derived_variants(sub)[0], num_inputs=8)
    assert right["inverse"].passed
    print("  ✓ an S gate posing as its own inverse fails on superpositions")


def test_variants_of_qft():
    program = load_program(PROGRAMS / "reverse.qpl", PROGRAMS / "qft.qpl", entry="QFT")
    sub = program.get("QFT")
    inverse, controlled, power = derived_variants(sub)
    verdicts = check_variants(program, sub, 3, RandomStream(42), inverse, controlled, power, num_inputs=10)
    assert all(v.passed for v in verdicts.values()), {k: v.note for k, v in verdicts.items()}
    print("  ✓ QFT inverse, power and controlled forms agree for n=3")


def _reverse_cases(count):
    entry = get_benchmark("Reverse")
    mark = entry.io_mark()
    program = entry.load()
    n = partition_variable(mark.input("n"), buckets="1 | 2 | >=3")
    qs = partition_variable(mark.input("qs"), "CSP")
    sub = program.get("Reverse")
    cases = []
    for frame in combine([n, qs], Strategy.ACOC):
        cases += sample_cases(frame, mark, sub, RandomStream(42), count=count)
    return entry, program, cases


def test_evaluate_case_on_reverse():
    print("\n" + "=" * 70)
    print("TEST: spec-driven evaluation")
    print("=" * 70)
    entry, program, cases = _reverse_cases(4)
    rng = RandomStream(42)
    verdicts = [evaluate_case(program, program.get("Reverse"), case, entry.spec, rng.child("case", case.id))
                for case in cases]
    assert all(v.passed for v in verdicts)
    assert all(v.note == "tbd" for v in verdicts)
    print(f"  ✓ {len(verdicts)} Reverse cases pass under TBD")

    sbd = DetectorConfig(kind="sbd", repetitions=400)
    superposed = [c for c in cases if c.frame.get("qs").label == "S"]
    for case in superposed[:4]:
        verdict = evaluate_case(program, program.get("Reverse"), case, entry.spec, rng.child("sbd", case.id), sbd)
        assert verdict.passed, verdict.note
        assert verdict.note == "sbd"
    print("  ✓ SBD on basis targets agrees")


def test_evaluate_case_catches_fault():
    entry, _, cases = _reverse_cases(4)
    faulty = parse_program("""
sub Reverse(qubits qs[n]) {
    X qs[0];
}
""")
    sub = faulty.get("Reverse")
    rng = RandomStream(42)
    classical = [c for c in cases if c.frame.get("qs").label == "C"]
    verdicts = [evaluate_case(faulty, sub, case, entry.spec, rng.child("case", case.id)) for case in classical]
    assert all(v.failed for v in verdicts)
    print(f"  ✓ a bit flip fails all {len(verdicts)} classical cases")


def test_product_inputs_keep_their_factors():
    swap = get_benchmark("MultiSWAP").spec
    plus, one = TwoValuePrep(0, 1, 0.0, 1), ClassicalPrep(1, 1)
    moved = _transform(swap, 1, ProductPrep((plus, one)))
    assert moved == ProductPrep((one, plus))
    wide = ProductPrep((TwoValuePrep(0, 3, 0.4, 2), TwoValuePrep(1, 2, 0.0, 2)))
    assert _transform(swap, 2, wide) == ProductPrep((TwoValuePrep(1, 2, 0.0, 2), TwoValuePrep(0, 3, 0.4, 2)))

    # CRk puts a phase on |11>, so a product of superpositions has no factor-wise image
    crk = get_benchmark("CRk").spec
    assert _transform(crk, 2, ProductPrep((plus, plus))) is None
    assert _transform(crk, 2, ProductPrep((one, one))) == ClassicalPrep(3, 2)
    print("  ✓ register exchange moves whole factors, phases block it")


def _multiswap_cases():
    entry = get_benchmark("MultiSWAP")
    mark = entry.io_mark()
    program = entry.load()
    sub = program.get("MultiSWAP")
    classes = [partition_variable(mark.input("n"), buckets="2"), partition_variable(mark.input("qs1"), "CSP"),
               partition_variable(mark.input("qs2"), "CSP")]
    cases = []
    for frame in combine(classes, Strategy.ACOC):
        cases += sample_cases(frame, mark, sub, RandomStream(42), count=6)
    return entry, program, cases


def test_superposed_exchange_uses_tbd():
    entry, program, cases = _multiswap_cases()
    rng = RandomStream(42)
    superposed = [c for c in cases if c.frame.get("qs1").label == "S"]
    for case in superposed:
        verdict = evaluate_case(program, program.get("MultiSWAP"), case, entry.spec, rng.child("case", case.id))
        assert verdict.passed, verdict.note
        assert verdict.note == "tbd"

    phased = parse_program("""
sub MultiSWAP(qubits qs1[n], qubits qs2[n]) {
    Z qs1[0];
    for i in 0..n-1 {
        SWAP qs1[i], qs2[i];
    }
}
""")
    sub = phased.get("MultiSWAP")
    verdicts = [evaluate_case(phased, sub, case, entry.spec, rng.child("phased", case.id)) for case in superposed]
    assert any(v.failed for v in verdicts)
    classical = [c for c in cases if c.frame.get("qs1").label == "C" and c.frame.get("qs2").label == "C"]
    assert all(evaluate_case(phased, sub, case, entry.spec, rng.child("phased", case.id)).passed
               for case in classical)
    print(f"  ✓ Z on qs1[0] fails {sum(v.failed for v in verdicts)}/{len(verdicts)} superposed exchange cases")


def test_control_off_values():
    assert control_off_values(1, RandomStream(1)) == [0]
    assert control_off_values(2, RandomStream(1)) == [0, 1, 2]
    wide = control_off_values(5, RandomStream(1))
    assert len(wide) == 4 and len(set(wide)) == 4
    assert wide[0] == 0 and all(0 <= v < 31 for v in wide)
    assert control_off_values(5, RandomStream(1)) == wide


def test_controlled_variant_checked_on_every_zero_control():
    program = parse_program("""
sub Flip(qubits q[1]) {
    X q[0];
}

sub FlipCtl(qubits c[2], qubits q[1]) {
    ctl(c[1]) X q[0];
}
""")
    sub = program.get("Flip")
    # FlipCtl is right on c = 11, 10 and 00 and wrong on c = 01
    verdicts = check_variants(program, sub, 1, RandomStream(42), inverse=sub, controlled=program.get("FlipCtl"))
    assert verdicts["controlled"].failed
    right = check_variants(program, sub, 1, RandomStream(42), inverse=sub, controlled=derive_controlled(sub, 2))
    assert right["controlled"].passed, right["controlled"].note
    print("  ✓ a controlled form ignoring one control bit is caught")


@pytest.mark.slow
def test_sbd_calibration_over_1000_verdicts():
    print("\n" + "=" * 70)
    print("TEST: SBD calibration, 1000 verdicts")
    print("=" * 70)
    fair = sum(sbd_frequency_check(lambda r: int(r.random() < 0.5), 0.5, RandomStream(11).child("fair", i),
                                   0.1, 200).passed for i in range(1000))
    biased = sum(sbd_frequency_check(lambda r: int(r.random() < 0.75), 0.5, RandomStream(11).child("biased", i),
                                     0.1, 200).failed for i in range(1000))
    print(f"  Bernoulli(0.5) passing: {fair}/1000 (exact {binomial_pass_probability(0.5, 0.5, 0.1, 200):.4f})")
    print(f"  Bernoulli(0.75) failing: {biased}/1000 "
          f"(exact {1 - binomial_pass_probability(0.75, 0.5, 0.1, 200):.6f})")
    assert fair >= 990
    assert biased >= 990
    print("  ✓ both rates at least 0.99")


def main():
    print("\n" + "=" * 70)
    print("DETECTOR TESTS")
    print("=" * 70)

    test_tbd_accepts_expected_output()
    test_tbd_catches_wrong_phase()
    test_sbd_frequency_check()
    test_sbd_calibration()
    test_detector_config_validation()
    test_combine_verdicts()
    test_swap_test()
    test_purity_of_pure_states()
    test_purity_detects_maximally_mixed_qubit()
    test_identity_check()
    test_variants_of_single_gate()
    test_wrong_inverse_is_caught()
    test_variants_of_qft()
    test_evaluate_case_on_reverse()
    test_evaluate_case_catches_fault()
    test_product_inputs_keep_their_factors()
    test_superposed_exchange_uses_tbd()
    test_control_off_values()
    test_controlled_variant_checked_on_every_zero_control()
    test_sbd_calibration_over_1000_verdicts()

    print("\n" + "=" * 70)
    print("ALL TESTS COMPLETE")
    print("=" * 70)


if __name__ == "__main__":
    main()
