"""
Output detection and verdicts.

Transform-based detection (TBD) applies the inverse of the expected output's
preparation and checks for the all-zero outcome. Statistic-based detection (SBD)
repeats a run and compares an outcome frequency with its expected value. Purity is
checked with the swap test, and subroutine variants are checked through identity
relations between a subroutine and its inverse, power and controlled forms.
"""
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

from scipy.stats import binom

from io_spec import (ClassicalPredicate, IdentitySpec, MarkedOutcome, ProgramSpec, ReferenceProgram, SpecError,
                     UnitaryFormula, expected_output)
from partition import ClassicalPrep, InputBinding, PartitionError, Preparation, ProductPrep, TwoValuePrep
from program_model import (Const, Program, ProgramError, SubroutineDef, derive_controlled, derive_inverse,
                           derive_power, entry_layout, layout_size, reaches_measurement, run)
from quantum_state import (RandomStream, SimulationError, StateVector, apply_unitary, make_gate, measure,
                           sample_counts)

DEFAULT_REPETITIONS = 200
DEFAULT_TOLERANCE = 0.1
DEFAULT_PURITY_ROUNDS = 10
MAX_OVERLAP_TARGETS = 2
MAX_CONTROL_OFF_VALUES = 4


class DetectorError(ValueError):
    pass


class VerdictStatus(Enum):
    PASS = "pass"
    FAIL = "fail"
    INCONCLUSIVE = "inconclusive"
    SKIPPED = "skipped"


class SwapOutcome(Enum):
    SAME = "same"
    DIFFERENT = "different"


@dataclass
class Verdict:
    """Outcome of one check, with the evidence it was decided on."""
    status: VerdictStatus
    counts: Dict[int, int] = field(default_factory=dict)
    observed_freq: Optional[float] = None
    expected_freq: Optional[float] = None
    repetitions: int = 0
    seed: Optional[str] = None
    note: str = ""
    error: Optional[str] = None

    @property
    def passed(self) -> bool:
        return self.status == VerdictStatus.PASS

    @property
    def failed(self) -> bool:
        return self.status == VerdictStatus.FAIL

    @staticmethod
    def inconclusive(note: str, error: Optional[BaseException] = None, seed=None) -> 'Verdict':
        return Verdict(VerdictStatus.INCONCLUSIVE, note=note, error=None if error is None else str(error),
                       seed=seed)

    @staticmethod
    def crashed(error: BaseException, seed=None) -> 'Verdict':
        """Program under test raised while running: a failure with error evidence."""
        return Verdict(VerdictStatus.FAIL, note="run error", error=str(error), seed=seed)

    @staticmethod
    def skipped(note: str) -> 'Verdict':
        return Verdict(VerdictStatus.SKIPPED, note=note)

    def to_dict(self) -> Dict:
        return {
            "status": self.status.value,
            "counts": {str(k): v for k, v in sorted(self.counts.items())},
            "observed_freq": self.observed_freq,
            "expected_freq": self.expected_freq,
            "repetitions": self.repetitions,
            "seed": self.seed,
            "note": self.note,
            "error": self.error,
        }


def combine_verdicts(verdicts: Sequence[Verdict], note: str = "") -> Verdict:
    """Fail if any fails, else inconclusive if any is, else pass. Counts are summed."""
    counts: Dict[int, int] = {}
    for v in verdicts:
        for k, c in v.counts.items():
            counts[k] = counts.get(k, 0) + c
    reps = sum(v.repetitions for v in verdicts)
    for status in (VerdictStatus.FAIL, VerdictStatus.INCONCLUSIVE):
        for v in verdicts:
            if v.status == status:
                return Verdict(status, counts, v.observed_freq, v.expected_freq, reps, v.seed,
                               note or v.note, v.error)
    if verdicts and all(v.status == VerdictStatus.SKIPPED for v in verdicts):
        return Verdict.skipped(note)
    return Verdict(VerdictStatus.PASS, counts, repetitions=reps, note=note)


# ---------------------------------------------------------------------------
# Detector descriptions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TBD:
    """Run `uncompute` on the output register and expect the all-zero outcome."""
    uncompute: SubroutineDef
    args: Tuple[Tuple[str, int], ...] = ()


@dataclass(frozen=True)
class SBDFrequency:
    """
    Repeat the run `repetitions` times, optionally apply `transform`, measure the whole
    register and compare the frequency of outcomes accepted by `predicate` with
    `expected_freq`.
    """
    predicate: Callable[[int], bool]
    expected_freq: float
    tolerance: float = DEFAULT_TOLERANCE
    repetitions: int = DEFAULT_REPETITIONS
    transform: Optional[SubroutineDef] = None

    def __post_init__(self):
        if not 0 < self.tolerance < 0.5:
            raise DetectorError(f"Tolerance {self.tolerance} outside (0, 0.5)")
        if self.repetitions < 1:
            raise DetectorError("SBD needs at least one repetition")


@dataclass(frozen=True)
class ClassicalCheck:
    predicate: Callable[[Dict[str, int]], bool]


Detector = Union[TBD, SBDFrequency, ClassicalCheck]


class DetectorConfig:
    """
    How test cases of one class are judged.

    Args:
        kind: 'auto' (derive from the spec), 'tbd' or 'sbd'
        repetitions: SBD repetitions per check
        tolerance: SBD frequency tolerance
        qra_repeats: Independent executions per TBD case, or per classical check with no
            expected frequency (each must pass)
        detector: Explicit detector overriding the spec-derived one
    """
    KINDS = ("auto", "tbd", "sbd")

    def __init__(self, kind: str = "auto", repetitions: int = DEFAULT_REPETITIONS,
                 tolerance: float = DEFAULT_TOLERANCE, qra_repeats: int = 1,
                 detector: Optional[Detector] = None):
        if kind not in self.KINDS:
            raise DetectorError(f"Unknown detector kind '{kind}'")
        if not 0 < tolerance < 0.5:
            raise DetectorError(f"Tolerance {tolerance} outside (0, 0.5)")
        if repetitions < 1 or qra_repeats < 1:
            raise DetectorError("Repetitions must be at least 1")
        self.kind = kind
        self.repetitions = repetitions
        self.tolerance = tolerance
        self.qra_repeats = qra_repeats
        self.detector = detector

    def __repr__(self):
        return (f"DetectorConfig(kind={self.kind}, repetitions={self.repetitions}, "
                f"tolerance={self.tolerance}, qra_repeats={self.qra_repeats})")


# ---------------------------------------------------------------------------
# Basic checks
# ---------------------------------------------------------------------------

def _register_layout(sub: SubroutineDef, num_qubits: int, args: Dict[str, int]) -> Dict[str, List[int]]:
    try:
        return entry_layout(sub, args)
    except ProgramError:
        if len(sub.qubit_params) != 1:
            raise
        return entry_layout(sub, args, {sub.qubit_params[0].name: num_qubits})


def run_on(state: StateVector, sub: SubroutineDef, rng: RandomStream, program: Optional[Program] = None,
           args: Optional[Dict[str, int]] = None, qubits: Optional[Sequence[int]] = None,
           oracle_bindings=None) -> StateVector:
    """Run a subroutine whose (single or sized) registers cover `qubits` of `state`."""
    args = dict(args or {})
    qubits = list(range(state.num_qubits)) if qubits is None else list(qubits)
    layout = _register_layout(sub, len(qubits), args)
    placed = {name: [qubits[i] for i in positions] for name, positions in layout.items()}
    out, _ = run(program or Program({}, validate=False), sub, args, placed, state, oracle_bindings, rng)
    return out


def tbd_check(output: StateVector, uncompute: SubroutineDef, rng: RandomStream,
              args: Optional[Dict[str, int]] = None, program: Optional[Program] = None,
              qubits: Optional[Sequence[int]] = None) -> Verdict:
    """
    Transform-based detection: apply `uncompute` to the output, measure once and
    pass iff every measured qubit reads 0.
    """
    seed = repr(rng)
    try:
        state = run_on(output, uncompute, rng.child("uncompute"), program, args, qubits)
        targets = list(range(output.num_qubits)) if qubits is None else list(qubits)
        outcome, _ = measure(state, targets, rng.child("measure"))
    except (ProgramError, SimulationError) as e:
        return Verdict.inconclusive("uncompute failed", e, seed)
    value = outcome.as_integer
    status = VerdictStatus.PASS if value == 0 else VerdictStatus.FAIL
    return Verdict(status, {value: 1}, repetitions=1, seed=seed, note="tbd")


def sbd_frequency_check(runner: Callable[[RandomStream], int], expected_freq: float,
                        rng: RandomStream, tolerance: float = DEFAULT_TOLERANCE,
                        repetitions: int = DEFAULT_REPETITIONS,
                        predicate: Callable[[int], bool] = lambda outcome: outcome == 0) -> Verdict:
    """
    Statistic-based detection: call `runner` `repetitions` times and pass iff the
    frequency of accepted outcomes lies within `tolerance` of `expected_freq`.
    """
    if repetitions < 1:
        raise DetectorError("SBD needs at least one repetition")
    counts: Dict[int, int] = {}
    hits = 0
    for r in range(repetitions):
        try:
            outcome = int(runner(rng.child("rep", r)))
        except (ProgramError, SimulationError, SpecError) as e:
            return Verdict.inconclusive(f"runner failed at repetition {r}", e, repr(rng))
        counts[outcome] = counts.get(outcome, 0) + 1
        hits += bool(predicate(outcome))
    observed = hits / repetitions
    ok = abs(observed - expected_freq) <= tolerance + 1e-12
    return Verdict(VerdictStatus.PASS if ok else VerdictStatus.FAIL, dict(sorted(counts.items())),
                   observed, expected_freq, repetitions, repr(rng), "sbd")


def _frequency_verdict(counts: Dict[int, int], hits: int, repetitions: int, expected: float,
                       tolerance: float, seed: str, note: str) -> Verdict:
    observed = hits / repetitions
    ok = abs(observed - expected) <= tolerance + 1e-12
    return Verdict(VerdictStatus.PASS if ok else VerdictStatus.FAIL, dict(sorted(counts.items())),
                   observed, expected, repetitions, seed, note)


def _prepare(prep: Union[SubroutineDef, Preparation], n: int, rng: RandomStream) -> StateVector:
    if isinstance(prep, Preparation):
        prep = prep.draw(rng.child("draw"))
        if prep.num_qubits != n:
            raise DetectorError(f"Preparation acts on {prep.num_qubits} qubits, expected {n}")
        return prep.state()
    return run_on(StateVector.zero(n), prep, rng.child("prep"))


def swap_test_round(prep_a: Union[SubroutineDef, Preparation], prep_b: Union[SubroutineDef, Preparation],
                    n: int, rng: RandomStream) -> SwapOutcome:
    """
    One swap test: ancilla (qubit 0) in |+>, controlled swap of the two n-qubit
    registers, H on the ancilla, measure it. P(different) = (1 - Tr(rho_A rho_B))/2.
    """
    if 2 * n + 1 > 14:
        raise DetectorError(f"Swap test on {n}-qubit registers exceeds the simulator cap")
    a = _prepare(prep_a, n, rng.child("a"))
    b = _prepare(prep_b, n, rng.child("b"))
    state = StateVector.basis(1, 0).tensor(a).tensor(b)
    h = make_gate("H")
    swap = make_gate("SWAP")
    state = apply_unitary(state, h, [], [0])
    for i in range(n):
        state = apply_unitary(state, swap, [0], [1 + i, 1 + n + i])
    state = apply_unitary(state, h, [], [0])
    outcome, _ = measure(state, [0], rng.child("measure"))
    return SwapOutcome.SAME if outcome.as_integer == 0 else SwapOutcome.DIFFERENT


def purity_check(gen_rho: Union[SubroutineDef, Preparation, Callable[[RandomStream], Preparation]], n: int,
                 rng: RandomStream, t: int = DEFAULT_PURITY_ROUNDS) -> bool:
    """t swap-test rounds on two independent copies of rho; False iff any round says 'different'."""
    if t < 1:
        raise DetectorError("Purity check needs at least one round")
    for r in range(t):
        stream = rng.child("round", r)
        if callable(gen_rho) and not isinstance(gen_rho, (SubroutineDef, Preparation)):
            a, b = gen_rho(stream.child("copy", 0)), gen_rho(stream.child("copy", 1))
        else:
            a = b = gen_rho
        if swap_test_round(a, b, n, stream) == SwapOutcome.DIFFERENT:
            return False
    return True


def random_inputs(num_qubits: int, count: int, rng: RandomStream) -> List[Preparation]:
    """Half classical, half two-value superposition inputs."""
    inputs: List[Preparation] = []
    for i in range(count):
        stream = rng.child("input", i)
        if i % 2 == 0 or num_qubits < 1:
            inputs.append(ClassicalPrep(stream.integers(2 ** num_qubits), num_qubits))
        else:
            x, y = stream.sample(list(range(2 ** num_qubits)), 2)
            inputs.append(TwoValuePrep(x, y, 0.0, num_qubits))
    return inputs


def default_identity_inputs(n: int) -> int:
    return max(8, 2 * n * n)


def _identity_with(apply: Callable[[StateVector, RandomStream], StateVector], num_qubits: int,
                   inputs: Sequence[Preparation], rng: RandomStream, note: str,
                   extra: Optional[Tuple[StateVector, int]] = None) -> Verdict:
    """
    Prepare each input, apply, uncompute the preparation and measure. `extra` places
    a fixed state on leading qubits whose expected outcome is given.
    """
    counts: Dict[int, int] = {}
    for i, prep in enumerate(inputs):
        stream = rng.child("case", i)
        state = prep.state()
        expect = 0
        lead = 0
        if extra is not None:
            state = extra[0].tensor(state)
            lead = extra[0].num_qubits
            expect = extra[1] << num_qubits
        try:
            out = apply(state, stream.child("run"))
        except (ProgramError, SimulationError) as e:
            verdict = Verdict.crashed(e, repr(stream))
            verdict.counts = counts
            return verdict
        try:
            out = run_on(out, prep.uncompute(), stream.child("uncompute"),
                         qubits=list(range(lead, lead + num_qubits)))
            outcome, _ = measure(out, list(range(out.num_qubits)), stream.child("measure"))
        except (ProgramError, SimulationError) as e:
            return Verdict.inconclusive("uncompute failed", e, repr(stream))
        counts[outcome.as_integer] = counts.get(outcome.as_integer, 0) + 1
        if outcome.as_integer != expect:
            return Verdict(VerdictStatus.FAIL, counts, repetitions=i + 1, seed=repr(stream),
                           note=f"{note}: input {prep.describe()} read {outcome.as_integer}")
    return Verdict(VerdictStatus.PASS, counts, repetitions=len(inputs), seed=repr(rng), note=note)


def identity_check(sub: SubroutineDef, n: int, rng: RandomStream, num_inputs: Optional[int] = None,
                   program: Optional[Program] = None, args: Optional[Dict[str, int]] = None,
                   oracle_bindings=None) -> Verdict:
    """
    Check that `sub` acts as the identity on its n-qubit register for random classical
    and two-value inputs.
    """
    args = dict(args or {})
    try:
        width = layout_size(_register_layout(sub, n, args))
    except ProgramError as e:
        return Verdict.inconclusive("cannot lay out registers", e)
    inputs = random_inputs(width, num_inputs or default_identity_inputs(n), rng.child("inputs"))

    def apply(state, stream):
        return run_on(state, sub, stream, program, args, oracle_bindings=oracle_bindings)

    return _identity_with(apply, width, inputs, rng, f"identity {sub.name}")


def derived_variants(sub: SubroutineDef) -> Tuple[SubroutineDef, SubroutineDef, SubroutineDef]:
    """(inverse, controlled, power) derived from `sub`."""
    inverse = derive_inverse(sub)
    return inverse, derive_controlled(sub), derive_power(sub, inverse)


def control_off_values(size: int, rng: RandomStream) -> List[int]:
    """Control register values with at least one 0: all of them, or a seeded sample for wide registers."""
    values = list(range(2 ** size - 1))
    if len(values) <= MAX_CONTROL_OFF_VALUES:
        return values
    return sorted([0] + rng.sample(values[1:], MAX_CONTROL_OFF_VALUES - 1))


def test_variants(program: Program, sub: SubroutineDef, n: int, rng: RandomStream,
                  inverse: Optional[SubroutineDef] = None, controlled: Optional[SubroutineDef] = None,
                  power: Optional[SubroutineDef] = None, k_values: Sequence[int] = range(-3, 4),
                  args: Optional[Dict[str, int]] = None, num_inputs: Optional[int] = None,
                  oracle_bindings=None) -> Dict[str, Verdict]:
    """
    Identity relations between a subroutine and its variants.

    inverse: P then P^-1 is the identity.
    power: for k > 0, P^k then (P^-1)^k; for k < 0, P^k then P^|k|; P^0 alone.
    controlled: with every control 1, C(P) then P^-1 is the identity (controls stay 1);
        with any control 0, C(P) alone is the identity (checked on several such values).

    A missing variant gives a SKIPPED verdict.
    """
    args = dict(args or {})
    count = num_inputs or default_identity_inputs(n)
    try:
        layout = _register_layout(sub, n, args)
    except ProgramError as e:
        bad = Verdict.inconclusive("cannot lay out registers", e)
        return {"inverse": bad, "power": bad, "controlled": bad}
    width = layout_size(layout)
    inputs = random_inputs(width, count, rng.child("inputs"))

    def call(target: SubroutineDef, extra_args: Dict[str, int]):
        def step(state, stream, qubits=None):
            return run_on(state, target, stream, program, {**args, **extra_args}, qubits, oracle_bindings)
        return step

    def chain(*steps):
        def apply(state, stream):
            for i, step in enumerate(steps):
                state = step(state, stream.child("step", i))
            return state
        return apply

    results: Dict[str, Verdict] = {}
    if inverse is None:
        results["inverse"] = Verdict.skipped("no inverse variant")
    else:
        results["inverse"] = _identity_with(chain(call(sub, {}), call(inverse, {})), width, inputs,
                                            rng.child("inverse"), "P;P^-1")

    if power is None or inverse is None:
        results["power"] = Verdict.skipped("no power or inverse variant")
    else:
        power_param = power.classical_params[0].name
        verdicts = []
        for k in k_values:
            undo = call(inverse, {}) if k > 0 else call(sub, {})
            steps = [call(power, {power_param: k})] + [undo] * abs(k)
            verdicts.append(_identity_with(chain(*steps), width, inputs, rng.child("power", k), f"P^{k}"))
        results["power"] = combine_verdicts(verdicts, "power relations")

    if controlled is None or inverse is None:
        results["controlled"] = Verdict.skipped("no controlled or inverse variant")
    else:
        ctrl_param = controlled.qubit_params[0]
        size = ctrl_param.size.value if isinstance(ctrl_param.size, Const) else 1
        shifted = list(range(size, size + width))

        def controlled_step(state, stream):
            placed = {ctrl_param.name: list(range(size))}
            for p in controlled.qubit_params[1:]:
                placed[p.name] = [shifted[q] for q in layout[p.name]]
            out, _ = run(program, controlled, dict(args), placed, state, oracle_bindings, stream)
            return out

        def undo_on_target(state, stream):
            return call(inverse, {})(state, stream, shifted)

        ones = StateVector.basis(size, 2 ** size - 1)
        on = _identity_with(chain(controlled_step, undo_on_target), width, inputs, rng.child("ctl-on"),
                            "C(P) on;P^-1", extra=(ones, 2 ** size - 1))
        verdicts = [on]
        for value in control_off_values(size, rng.child("ctl-off", "values")):
            verdicts.append(_identity_with(controlled_step, width, inputs, rng.child("ctl-off", value),
                                           f"C(P) off={value}", extra=(StateVector.basis(size, value), value)))
        results["controlled"] = combine_verdicts(verdicts, "controlled relations")
    return results


test_variants.__test__ = False


# ---------------------------------------------------------------------------
# Test-case execution and spec-driven detection
# ---------------------------------------------------------------------------

@dataclass
class Execution:
    """One run of the subroutine under test on a concrete case."""
    state: StateVector
    results: Dict[str, int]
    layout: Dict[str, List[int]]
    input_prep: Preparation


def input_preparation(sub: SubroutineDef, binding: InputBinding, layout: Dict[str, List[int]],
                      rng: RandomStream) -> Preparation:
    """Whole-register preparation: bound inputs in parameter order, zeros elsewhere."""
    parts = []
    for param in sub.qubit_params:
        size = len(layout[param.name])
        if size == 0:
            continue
        prep = binding.quantum.get(param.name)
        if prep is None:
            prep = ClassicalPrep(0, size)
        elif prep.num_qubits != size:
            raise PartitionError(f"Input '{param.name}' has {prep.num_qubits} qubits, array has {size}")
        parts.append(prep.draw(rng.child("draw", param.name)))
    if not parts:
        parts.append(ClassicalPrep(0, 1))
    return parts[0] if len(parts) == 1 else ProductPrep(tuple(parts))


def execute_case(program: Program, sub: SubroutineDef, binding: InputBinding, rng: RandomStream,
                 oracle_bindings=None, draw_rng: Optional[RandomStream] = None) -> Execution:
    """
    Run `sub` on the case's inputs. Mixed inputs draw their component from `draw_rng`
    (default `rng`). Harness problems raise PartitionError; errors raised by the
    program itself propagate as ProgramError/SimulationError.
    """
    layout = entry_layout(sub, binding.classical)
    prep = input_preparation(sub, binding, layout, draw_rng or rng)
    bindings = dict(oracle_bindings or {})
    bindings.update(binding.doubles)
    state, results = run(program, sub, binding.classical, layout, prep.state(), bindings, rng.child("run"))
    return Execution(state, results, layout, prep)


def _transform(spec: ProgramSpec, n: int, prep: Preparation) -> Optional[Preparation]:
    if isinstance(spec, IdentitySpec):
        return prep
    if isinstance(spec, UnitaryFormula) and spec.transform is not None:
        return spec.transform(n, prep)
    return None


def _basis_targets(spec: ProgramSpec, n: int, prep: Preparation) -> List[Preparation]:
    """Expected-output preparations of the basis components of a superposed input."""
    state = prep.state()
    targets = []
    for j in state.nonzero_indices()[:MAX_OVERLAP_TARGETS]:
        target = _transform(spec, n, ClassicalPrep(j, state.num_qubits))
        if target is None:
            return []
        targets.append(target)
    return targets


def evaluate_case(program: Program, sub: SubroutineDef, binding: InputBinding, spec: ProgramSpec,
                  rng: RandomStream, config: Optional[DetectorConfig] = None,
                  oracle_bindings=None) -> Verdict:
    """
    Execute one test case and judge it.

    With kind 'auto' the detector follows the spec: TBD when the expected output has a
    known preparation (or a reference program can be inverted), otherwise SBD on the
    basis components of the input, on a marked outcome, or on a classical predicate.
    Program errors make the case fail; harness errors make it inconclusive.
    """
    config = config or DetectorConfig()
    seed = repr(rng)
    bindings = dict(oracle_bindings or {})
    bindings.update(binding.doubles)
    try:
        if config.detector is not None:
            return _explicit(program, sub, binding, config, rng, bindings)
        if isinstance(spec, ClassicalPredicate):
            return _classical(program, sub, binding, spec, config, rng, bindings)
        if isinstance(spec, MarkedOutcome):
            return _marked(program, sub, binding, spec, config, rng, bindings)
        if isinstance(spec, ReferenceProgram):
            return _reference(program, sub, binding, spec, config, rng, bindings)
        return _formula(program, sub, binding, spec, config, rng, bindings)
    except (ProgramError, SimulationError) as e:
        return Verdict.crashed(e, seed)
    except (SpecError, PartitionError, DetectorError) as e:
        return Verdict.inconclusive("detector setup failed", e, seed)


def _formula(program, sub, binding, spec, config, rng, bindings) -> Verdict:
    n = binding.scale
    verdicts = []
    for r in range(config.qra_repeats):
        stream = rng.child("repeat", r) if r else rng
        execution = execute_case(program, sub, binding, stream, bindings)
        target = _transform(spec, n, execution.input_prep) if config.kind != "sbd" else None
        if target is not None:
            verdicts.append(tbd_check(execution.state, target.uncompute(), stream.child("tbd")))
            continue
        if config.kind == "tbd":
            raise DetectorError("The expected output has no preparation to invert; use SBD")
        return _overlap_frequencies(program, sub, binding, spec, config, stream, bindings, execution)
    return combine_verdicts(verdicts, "tbd")


def _overlap_frequencies(program, sub, binding, spec, config, rng, bindings, execution: Execution) -> Verdict:
    """
    SBD against the expected output: for each target state phi (the expected output of
    one basis component of the input), the frequency of all-zero after undoing phi's
    preparation should be |<phi|expected>|^2.
    """
    n = binding.scale
    targets = _basis_targets(spec, n, execution.input_prep)
    if not targets:
        raise DetectorError("No target preparations for statistic-based detection")
    expected_state = expected_output(spec, n, execution.input_prep.state())
    rerun = reaches_measurement(program, sub, bindings)
    verdicts = []
    for p, target in enumerate(targets):
        stream = rng.child("target", p)
        expected = abs(target.state().inner(expected_state)) ** 2
        undo = target.uncompute()
        width = execution.state.num_qubits
        if rerun:
            def runner(rep_rng, undo=undo):
                again = execute_case(program, sub, binding, rep_rng, bindings, draw_rng=rng)
                out = run_on(again.state, undo, rep_rng.child("undo"))
                outcome, _ = measure(out, list(range(width)), rep_rng.child("measure"))
                return outcome.as_integer
            verdicts.append(sbd_frequency_check(runner, expected, stream, config.tolerance, config.repetitions))
        else:
            out = run_on(execution.state, undo, stream.child("undo"))
            counts = sample_counts(out, list(range(width)), config.repetitions, stream.child("shots"))
            verdicts.append(_frequency_verdict(counts, counts.get(0, 0), config.repetitions, expected,
                                               config.tolerance, repr(stream), "sbd"))
    return combine_verdicts(verdicts, "sbd")


def _reference(program, sub, binding, spec: ReferenceProgram, config, rng, bindings) -> Verdict:
    n = binding.scale
    reference = spec.program.get(spec.subroutine)
    inverse = derive_inverse(reference)
    verdicts = []
    for r in range(config.qra_repeats):
        stream = rng.child("repeat", r) if r else rng
        execution = execute_case(program, sub, binding, stream, bindings)
        state = run_on(execution.state, inverse, stream.child("reference"), spec.program, spec.args(n),
                       oracle_bindings=spec.oracle_bindings)
        verdicts.append(tbd_check(state, execution.input_prep.uncompute(), stream.child("tbd")))
    return combine_verdicts(verdicts, "reference tbd")


def _marked(program, sub, binding, spec: MarkedOutcome, config, rng, bindings) -> Verdict:
    n = binding.scale
    marked = spec.marked(binding)
    expected = spec.probability(n, binding)
    if reaches_measurement(program, sub, bindings):
        def runner(rep_rng):
            execution = execute_case(program, sub, binding, rep_rng, bindings)
            outcome, _ = measure(execution.state, execution.layout[spec.register], rep_rng.child("measure"))
            return outcome.as_integer
        return sbd_frequency_check(runner, expected, rng, config.tolerance, config.repetitions,
                                   predicate=lambda outcome: outcome == marked)
    execution = execute_case(program, sub, binding, rng, bindings)
    if spec.register not in execution.layout:
        raise SpecError(f"{spec.name}: no register '{spec.register}' in {sub.name}")
    counts = sample_counts(execution.state, execution.layout[spec.register], config.repetitions,
                           rng.child("shots"))
    return _frequency_verdict(counts, counts.get(marked, 0), config.repetitions, expected, config.tolerance,
                              repr(rng), f"P({marked})")


def _classical(program, sub, binding, spec: ClassicalPredicate, config, rng, bindings) -> Verdict:
    expected = None if spec.expected_frequency is None else spec.expected_frequency(binding)
    repetitions = config.qra_repeats if expected is None else config.repetitions
    counts: Dict[int, int] = {}
    hits = 0
    for r in range(repetitions):
        stream = rng.child("rep", r)
        execution = execute_case(program, sub, binding, stream, bindings)
        ok = bool(spec.predicate(execution.results, binding))
        counts[int(ok)] = counts.get(int(ok), 0) + 1
        hits += ok
        if expected is None and not ok:
            return Verdict(VerdictStatus.FAIL, counts, repetitions=r + 1, seed=repr(stream),
                           note=f"{spec.name} violated: {execution.results}")
    if expected is None:
        return Verdict(VerdictStatus.PASS, counts, 1.0, 1.0, repetitions, repr(rng), spec.name)
    return _frequency_verdict(counts, hits, repetitions, expected, config.tolerance, repr(rng), spec.name)


def _explicit(program, sub, binding, config: DetectorConfig, rng, bindings) -> Verdict:
    detector = config.detector
    if isinstance(detector, TBD):
        execution = execute_case(program, sub, binding, rng, bindings)
        return tbd_check(execution.state, detector.uncompute, rng.child("tbd"), dict(detector.args), program)
    if isinstance(detector, ClassicalCheck):
        execution = execute_case(program, sub, binding, rng, bindings)
        ok = bool(detector.predicate(execution.results))
        return Verdict(VerdictStatus.PASS if ok else VerdictStatus.FAIL, {int(ok): 1}, repetitions=1,
                       seed=repr(rng), note=f"results {execution.results}")
    if isinstance(detector, SBDFrequency):
        def runner(rep_rng):
            execution = execute_case(program, sub, binding, rep_rng, bindings)
            state = execution.state
            if detector.transform is not None:
                state = run_on(state, detector.transform, rep_rng.child("transform"), program)
            outcome, _ = measure(state, list(range(state.num_qubits)), rep_rng.child("measure"))
            return outcome.as_integer
        return sbd_frequency_check(runner, detector.expected_freq, rng, detector.tolerance,
                                   detector.repetitions, detector.predicate)
    raise DetectorError(f"Unknown detector {detector!r}")


def binomial_pass_probability(p: float, expected: float, tolerance: float, repetitions: int) -> float:
    """Exact probability that an SBD check passes when the true frequency is p."""
    lo = math.ceil((expected - tolerance) * repetitions - 1e-9)
    hi = math.floor((expected + tolerance) * repetitions + 1e-9)
    lo, hi = max(lo, 0), min(hi, repetitions)
    if lo > hi:
        return 0.0
    return float(binom.cdf(hi, repetitions, p) - (binom.cdf(lo - 1, repetitions, p) if lo > 0 else 0.0))
