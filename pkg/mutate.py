"""
Mutation engine for QPL-mini programs.

Four mutation types edit one statement site of the subroutine under test:

    GM  gate mutations: insert, delete, replace, perturb an angle, swap adjacent
        gates, exchange control and target
    SM  subroutine-call mutations: delete, duplicate, swap qubit arguments, rebind to
        a faulty version of the callee, toggle the inverse variant
    CM  classical mutations: loop bounds, comparisons, qubit indices, assignments and
        call arguments
    MM  measurement mutations: insert, delete, change the measured qubits

Mutants failing static validation are discarded. Mutation analysis runs every
mutant against a test suite built for the unmutated program and records which
cases (and which input classes) kill it.
"""
import dataclasses
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from detect import Verdict, VerdictStatus
from program_model import (MAX_OPERATOR_QUBITS, AssignStmt, BinOp, BranchingInterpreter, CallStmt, Const, Expr,
                           ForLoop, GateApp, IfStmt, MeasureStmt, Program, ProgramError, QubitRef, ResetStmt, Statement,
                           SubroutineDef, UnOp, Var, VariantOp, add_const, blocks, check_scope, edit_block,
                           entry_layout, fresh_name, layout_size, names_in_sub, reaches_measurement, replace_statement,
                           run, walk)
from qpl_parser import render_ref, render_statement, render_subroutine
from quantum_state import GATE_ARITY, DensityMatrix, RandomStream, SimulationError, StateVector, partial_trace
from workers import parallel_map

EQUIVALENCE_TOL = 1e-8
MAX_COMPARE_QUBITS = 10
MAX_EXACT_INPUT_QUBITS = 4

INSERT_GATES = ("X", "Y", "Z", "H", "S", "T")
GATE_FAMILIES = (
    ("X", "Y", "Z", "H", "S", "T", "SDG", "TDG"),
    ("CNOT", "CZ", "SWAP"),
    ("R1", "RX", "RY", "RZ"),
)
FLIPPED = {"<": ">=", ">=": "<", ">": "<=", "<=": ">", "==": "!=", "!=": "=="}
REF_FIELDS = {GateApp: ("controls", "targets"), CallStmt: ("qubit_args",), MeasureStmt: ("refs",),
              ResetStmt: ("refs",)}


class MutationError(ValueError):
    pass


class MutationType(Enum):
    GM = "GM"
    SM = "SM"
    CM = "CM"
    MM = "MM"


ALL_TYPES = tuple(MutationType)
DEFAULT_CAPS = {MutationType.GM: 20, MutationType.SM: 10, MutationType.CM: 12, MutationType.MM: 10}


@dataclass(frozen=True)
class MutationDescriptor:
    """What was changed where. `before`/`after` are QPL-mini source text."""
    mtype: MutationType
    operation: str
    subroutine: str
    path: Tuple
    before: str
    after: str

    def describe(self) -> str:
        before = self.before.strip() or "(nothing)"
        after = self.after.strip() or "(deleted)"
        return f"{self.mtype.value}/{self.operation} in {self.subroutine} at {self.path}: {before} => {after}"


@dataclass
class Mutant:
    id: str
    base: Program
    descriptor: MutationDescriptor
    mutated: Program

    @property
    def mtype(self) -> MutationType:
        return self.descriptor.mtype


class MutationConfig:
    """
    Mutant generation and analysis settings.

    Args:
        types: Enabled mutation types
        caps: Maximum number of mutants per type
        seed: Seed of the site sampling
        short_circuit: 'none' runs every case, 'per_class' stops a class at its first
            killing case, 'first_kill' stops at the first killing case overall
    """
    SHORT_CIRCUIT = ("none", "per_class", "first_kill")

    def __init__(self, types: Sequence = ALL_TYPES, caps: Optional[Dict] = None, seed: int = 42,
                 short_circuit: str = "per_class"):
        self.types = tuple(MutationType(t) if isinstance(t, str) else t for t in types)
        self.caps = dict(DEFAULT_CAPS)
        for key, value in (caps or {}).items():
            self.caps[MutationType(key) if isinstance(key, str) else key] = int(value)
        if short_circuit not in self.SHORT_CIRCUIT:
            raise MutationError(f"Unknown short-circuit mode '{short_circuit}'")
        self.seed = seed
        self.short_circuit = short_circuit

    def __repr__(self):
        caps = ", ".join(f"{t.value}={self.caps[t]}" for t in self.types)
        return f"MutationConfig(types=[{caps}], seed={self.seed}, short_circuit={self.short_circuit})"


# ---------------------------------------------------------------------------
# Candidate edits
# ---------------------------------------------------------------------------

@dataclass
class _Edit:
    mtype: MutationType
    operation: str
    path: Tuple
    before: str
    after: Sequence[Statement]
    mode: str = "replace"
    extra: Tuple[SubroutineDef, ...] = ()

    def apply(self, body: Sequence[Statement]) -> Tuple[Statement, ...]:
        """'replace' rewrites the statement at path, 'insert' inserts before it and
        'swap' replaces it together with its successor."""
        block_path, index = self.path[:-1], self.path[-1]
        if self.mode == "insert":
            return edit_block(body, block_path, lambda stmts: stmts[:index] + list(self.after) + stmts[index:])
        if self.mode == "swap":
            return edit_block(body, block_path, lambda stmts: stmts[:index] + list(self.after) + stmts[index + 2:])
        return replace_statement(body, self.path, self.after)

    def rendered_after(self) -> str:
        return "\n".join(render_statement(s) for s in self.after)


def _replace(mtype, operation, path, stmt, after, extra=()) -> _Edit:
    return _Edit(mtype, operation, path, render_statement(stmt), list(after), extra=tuple(extra))


def _site_refs(sub: SubroutineDef, block: Sequence[Statement]) -> List[QubitRef]:
    """Single-qubit refs used directly in a block, plus element 0 of every array."""
    refs: List[QubitRef] = []
    for stmt in block:
        for attr in REF_FIELDS.get(type(stmt), ()):
            for ref in getattr(stmt, attr):
                if ref.index is not None and ref.upper is None and ref not in refs:
                    refs.append(ref)
    for param in sub.qubit_params:
        ref = QubitRef(param.name, Const(0))
        if ref not in refs:
            refs.append(ref)
    return refs


def _key(path: Tuple, *extra) -> Tuple:
    return tuple(str(p) for p in path) + tuple(str(e) for e in extra)


def _gate_edits(sub: SubroutineDef, rng: RandomStream) -> Iterator[_Edit]:
    gm = MutationType.GM
    for block_path, block in blocks(sub.body):
        refs = _site_refs(sub, block)
        for index in range(len(block) + 1):
            for ref in refs:
                gate = rng.child("insert", *_key(block_path, index, render_ref(ref))).choice(INSERT_GATES)
                new = GateApp(gate, None, (), (ref,))
                yield _Edit(gm, "insert_gate", block_path + (index,), "", [new], mode="insert")
        for index in range(len(block) - 1):
            first, second = block[index], block[index + 1]
            if isinstance(first, GateApp) and isinstance(second, GateApp) and first != second:
                yield _Edit(gm, "swap_gates", block_path + (index,),
                            render_statement(first) + "\n" + render_statement(second), [second, first],
                            mode="swap")

    for path, stmt in walk(sub.body):
        if not isinstance(stmt, GateApp):
            continue
        yield _replace(gm, "delete_gate", path, stmt, [])
        family = next((f for f in GATE_FAMILIES if stmt.gate in f), ())
        options = [g for g in family if g != stmt.gate and GATE_ARITY[g] == GATE_ARITY[stmt.gate]]
        if options:
            gate = rng.child("replace", *_key(path)).choice(options)
            yield _replace(gm, "replace_gate", path, stmt, [dataclasses.replace(stmt, gate=gate)])
        if stmt.angle is not None:
            half_pi = BinOp("/", Var("pi"), Const(2))
            for angle in (BinOp("+", stmt.angle, half_pi), BinOp("-", stmt.angle, half_pi),
                          BinOp("/", stmt.angle, Const(2)), BinOp("*", Const(2), stmt.angle)):
                yield _replace(gm, "perturb_angle", path, stmt, [dataclasses.replace(stmt, angle=angle)])
        exchanged = _exchange_control_target(stmt)
        if exchanged is not None:
            yield _replace(gm, "exchange_control_target", path, stmt, [exchanged])


def _exchange_control_target(stmt: GateApp) -> Optional[GateApp]:
    """
    Swap the roles of the first control and the target. A range control a[lo..hi]
    gives up a[lo] as the new target and keeps the rest of the range as controls.
    Uncontrolled two-qubit gates get their targets reversed.
    """
    if not stmt.controls:
        if len(stmt.targets) == 2:
            return dataclasses.replace(stmt, targets=stmt.targets[::-1])
        return None
    if len(stmt.targets) != 1 or stmt.targets[0].index is None or stmt.targets[0].upper is not None:
        return None
    target, first, rest = stmt.targets[0], stmt.controls[0], stmt.controls[1:]
    if first.index is None:
        return None
    if first.upper is None:
        return dataclasses.replace(stmt, controls=(target,) + rest, targets=(first,))
    remaining = QubitRef(first.array, add_const(first.index, 1), first.upper)
    return dataclasses.replace(stmt, controls=(remaining, target) + rest,
                               targets=(QubitRef(first.array, first.index),))


def _callable_inverse(program: Program, sub: SubroutineDef, callee: str) -> bool:
    slot = sub.slot(callee)
    if slot is not None:
        return slot.adjoint
    if callee in program.oracles:
        return program.oracles[callee].adjoint
    target = program.subroutines.get(callee)
    return target is not None and not reaches_measurement(program, target)


def _faulty_version(program: Program, callee: SubroutineDef, rng: RandomStream) -> Optional[SubroutineDef]:
    """A seeded single-site gate mutation of `callee`, renamed `<callee>_err`."""
    taken = set(program.subroutines)
    name = fresh_name(f"{callee.name}_err", taken)
    edits = list(_gate_edits(callee, rng.child("gates")))
    base_text = render_subroutine(callee)
    for edit in rng.child("order").sample(edits, len(edits)):
        candidate = SubroutineDef(name, callee.params, edit.apply(callee.body))
        if check_scope(candidate, program):
            continue
        if render_subroutine(dataclasses.replace(candidate, name=callee.name)) == base_text:
            continue
        return candidate
    return None


def _call_edits(program: Program, sub: SubroutineDef, rng: RandomStream) -> Iterator[_Edit]:
    sm = MutationType.SM
    for path, stmt in walk(sub.body):
        if not isinstance(stmt, CallStmt):
            continue
        yield _replace(sm, "delete_call", path, stmt, [])
        yield _replace(sm, "duplicate_call", path, stmt, [stmt, stmt])
        if len(stmt.qubit_args) >= 2:
            yield _replace(sm, "swap_call_args", path, stmt,
                           [dataclasses.replace(stmt, qubit_args=stmt.qubit_args[::-1])])
        if stmt.callee in program.subroutines:
            faulty = _faulty_version(program, program.subroutines[stmt.callee], rng.child("rebind", *_key(path)))
            if faulty is not None:
                yield _replace(sm, "rebind_call", path, stmt, [dataclasses.replace(stmt, callee=faulty.name)],
                               extra=(faulty,))
        if stmt.variant and stmt.variant[0].kind == "inv":
            yield _replace(sm, "toggle_inverse", path, stmt, [dataclasses.replace(stmt, variant=stmt.variant[1:])])
        elif _callable_inverse(program, sub, stmt.callee):
            yield _replace(sm, "toggle_inverse", path, stmt,
                           [dataclasses.replace(stmt, variant=(VariantOp("inv"),) + stmt.variant)])


def _comparison_variants(expr: Expr) -> Iterator[Expr]:
    """Copies of `expr` with one comparison operator flipped."""
    if isinstance(expr, BinOp):
        if expr.op in FLIPPED:
            yield BinOp(FLIPPED[expr.op], expr.left, expr.right)
        for left in _comparison_variants(expr.left):
            yield BinOp(expr.op, left, expr.right)
        for right in _comparison_variants(expr.right):
            yield BinOp(expr.op, expr.left, right)
    elif isinstance(expr, UnOp):
        for operand in _comparison_variants(expr.operand):
            yield UnOp(expr.op, operand)


def _shifted_refs(ref: QubitRef) -> Iterator[QubitRef]:
    if ref.index is None:
        return
    if ref.upper is None:
        yield QubitRef(ref.array, add_const(ref.index, 1))
        yield QubitRef(ref.array, add_const(ref.index, -1))
    else:
        yield QubitRef(ref.array, ref.index, add_const(ref.upper, 1))
        yield QubitRef(ref.array, ref.index, add_const(ref.upper, -1))


def _with_ref(stmt: Statement, attr: str, position: int, ref: QubitRef) -> Statement:
    refs = list(getattr(stmt, attr))
    refs[position] = ref
    return dataclasses.replace(stmt, **{attr: tuple(refs)})


def _classical_edits(sub: SubroutineDef) -> Iterator[_Edit]:
    cm = MutationType.CM
    for path, stmt in walk(sub.body):
        if isinstance(stmt, ForLoop):
            for delta in (1, -1):
                yield _loop_edit(path, stmt, lower=add_const(stmt.lower, delta))
                yield _loop_edit(path, stmt, upper=add_const(stmt.upper, delta))
        elif isinstance(stmt, IfStmt):
            for condition in _comparison_variants(stmt.condition):
                yield _Edit(cm, "flip_comparison", path, _header(stmt),
                            [dataclasses.replace(stmt, condition=condition)])
        elif isinstance(stmt, AssignStmt):
            for condition in _comparison_variants(stmt.expr):
                yield _replace(cm, "flip_comparison", path, stmt, [dataclasses.replace(stmt, expr=condition)])
            for delta in (1, -1):
                yield _replace(cm, "perturb_assignment", path, stmt,
                               [dataclasses.replace(stmt, expr=add_const(stmt.expr, delta))])
        elif isinstance(stmt, CallStmt):
            for i, arg in enumerate(stmt.classical_args):
                for delta in (1, -1):
                    args = list(stmt.classical_args)
                    args[i] = add_const(arg, delta)
                    yield _replace(cm, "perturb_argument", path, stmt,
                                   [dataclasses.replace(stmt, classical_args=tuple(args))])
        for attr in REF_FIELDS.get(type(stmt), ()):
            for position, ref in enumerate(getattr(stmt, attr)):
                for shifted in _shifted_refs(ref):
                    yield _replace(cm, "shift_index", path, stmt, [_with_ref(stmt, attr, position, shifted)])


def _header(stmt: Statement) -> str:
    return render_statement(stmt).split("\n")[0]


def _loop_edit(path: Tuple, stmt: ForLoop, lower: Optional[Expr] = None, upper: Optional[Expr] = None) -> _Edit:
    changed = dataclasses.replace(stmt, lower=lower or stmt.lower, upper=upper or stmt.upper)
    return _Edit(MutationType.CM, "loop_bound", path, _header(stmt), [changed])


def _measurement_edits(sub: SubroutineDef) -> Iterator[_Edit]:
    mm = MutationType.MM
    result = fresh_name("mm", names_in_sub(sub))
    for block_path, block in blocks(sub.body):
        refs = [QubitRef(p.name) for p in sub.qubit_params] + _site_refs(sub, block)
        for index in range(len(block) + 1):
            for ref in refs:
                yield _Edit(mm, "insert_measure", block_path + (index,), "", [MeasureStmt(result, (ref,))],
                            mode="insert")
    for path, stmt in walk(sub.body):
        if not isinstance(stmt, MeasureStmt):
            continue
        yield _replace(mm, "delete_measure", path, stmt, [])
        for position, ref in enumerate(stmt.refs):
            alternatives = list(_shifted_refs(ref))
            if ref.index is None:
                alternatives.append(QubitRef(ref.array, Const(0)))
            alternatives += [QubitRef(p.name) for p in sub.qubit_params if p.name != ref.array]
            for alt in alternatives:
                yield _replace(mm, "change_measure", path, stmt, [_with_ref(stmt, "refs", position, alt)])


def candidate_edits(program: Program, sub: SubroutineDef, mtype: MutationType, rng: RandomStream) -> List[_Edit]:
    if mtype == MutationType.GM:
        return list(_gate_edits(sub, rng.child("GM")))
    if mtype == MutationType.SM:
        return list(_call_edits(program, sub, rng.child("SM")))
    if mtype == MutationType.CM:
        return list(_classical_edits(sub))
    return list(_measurement_edits(sub))


# ---------------------------------------------------------------------------
# Enumeration
# ---------------------------------------------------------------------------

def _build(program: Program, sub: SubroutineDef, edit: _Edit) -> Optional[Program]:
    mutated = SubroutineDef(sub.name, sub.params, edit.apply(sub.body))
    if check_scope(mutated, program.with_subroutines(*edit.extra)):
        return None
    subs = dict(program.subroutines)
    subs[sub.name] = mutated
    for extra in edit.extra:
        subs[extra.name] = extra
    try:
        return Program(subs, program.entry, program.oracles, program.bindings, validate=True)
    except ProgramError:
        return None


def enumerate_mutants(program: Program, sub_name: str, config: Optional[MutationConfig] = None,
                      dry_run: Optional[Callable[[Program], None]] = None) -> List[Mutant]:
    """
    Seeded mutants of one subroutine.

    Candidate sites of each enabled type are visited in a seeded random order and
    turned into mutants until the type's cap is reached. A candidate is dropped when
    its subroutine fails the static name check, when the program no longer validates,
    when it duplicates the base or an earlier mutant, or when `dry_run(program)`
    raises a program error.
    """
    config = config or MutationConfig()
    sub = program.get(sub_name)
    rng = RandomStream(config.seed).child("mutants", sub_name)
    base_text = render_subroutine(sub)
    seen = {base_text}
    mutants: List[Mutant] = []
    for mtype in config.types:
        edits = candidate_edits(program, sub, mtype, rng)
        order = rng.child("order", mtype.value).sample(edits, len(edits))
        count = 0
        for edit in order:
            if count >= config.caps.get(mtype, 0):
                break
            mutated = _build(program, sub, edit)
            if mutated is None:
                continue
            text = render_subroutine(mutated.get(sub_name))
            if text in seen:
                continue
            if dry_run is not None:
                try:
                    dry_run(mutated)
                except (ProgramError, SimulationError):
                    continue
            seen.add(text)
            count += 1
            descriptor = MutationDescriptor(mtype, edit.operation, sub_name, edit.path, edit.before,
                                            edit.rendered_after())
            mutants.append(Mutant(f"{sub_name}-{mtype.value}{count:02d}", program, descriptor, mutated))
    return mutants


# ---------------------------------------------------------------------------
# Mutation analysis
# ---------------------------------------------------------------------------

@dataclass
class MutantResult:
    mutant_id: str
    mtype: MutationType
    operation: str
    description: str
    killed: bool
    killing_cases: List[str] = field(default_factory=list)
    triggered: Dict[str, int] = field(default_factory=dict)
    cases_run: int = 0
    errors: int = 0

    def to_dict(self) -> Dict:
        return {
            "id": self.mutant_id,
            "type": self.mtype.value,
            "operation": self.operation,
            "description": self.description,
            "killed": self.killed,
            "killing_cases": list(self.killing_cases),
            "triggered": dict(sorted(self.triggered.items())),
            "cases_run": self.cases_run,
            "errors": self.errors,
        }


@dataclass
class MutationReport:
    """
    Kill matrix of one mutation run. `class_cases` counts the suite's cases per input
    class; `triggered[class]` on a result counts that class's failing cases.
    """
    program: str
    subroutine: str
    results: List[MutantResult]
    class_cases: Dict[str, int]
    short_circuit: str
    wall_clock: float = 0.0
    base_cases: int = 0

    @property
    def killed(self) -> List[MutantResult]:
        return [r for r in self.results if r.killed]

    @property
    def survivors(self) -> List[MutantResult]:
        return [r for r in self.results if not r.killed]

    def per_type(self) -> Dict[str, Dict[str, int]]:
        table = {t.value: {"mutants": 0, "killed": 0, "unkilled": 0} for t in ALL_TYPES}
        for r in self.results:
            row = table[r.mtype.value]
            row["mutants"] += 1
            row["killed" if r.killed else "unkilled"] += 1
        return table

    def trigger_counts(self) -> Dict[str, Dict[str, int]]:
        """Per input class and mutation type: how many mutants that class killed."""
        table = {c: {t.value: 0 for t in ALL_TYPES} for c in self.class_cases}
        for r in self.results:
            for cls, hits in r.triggered.items():
                if hits:
                    table.setdefault(cls, {t.value: 0 for t in ALL_TYPES})[r.mtype.value] += 1
        return table

    def kill_rate(self, exclude: Sequence[str] = ()) -> float:
        considered = [r for r in self.results if r.mutant_id not in set(exclude)]
        if not considered:
            return 1.0
        return sum(r.killed for r in considered) / len(considered)

    def to_dict(self) -> Dict:
        return {
            "program": self.program,
            "subroutine": self.subroutine,
            "short_circuit": self.short_circuit,
            "base_cases": self.base_cases,
            "class_cases": dict(self.class_cases),
            "per_type": self.per_type(),
            "trigger_counts": self.trigger_counts(),
            "wall_clock": self.wall_clock,
            "results": [r.to_dict() for r in self.results],
        }


def _base_unit(state, index: int) -> Verdict:
    program, suite, rng = state
    return suite.evaluate(program, index, rng)


def _mutant_unit(state, index: int) -> MutantResult:
    mutants, suite, rng, short_circuit = state
    mutant = mutants[index]
    result = MutantResult(mutant.id, mutant.mtype, mutant.descriptor.operation, mutant.descriptor.describe(),
                          killed=False)
    done_classes = set()
    for i, case in enumerate(suite.cases):
        cls = suite.case_class(i)
        if cls in done_classes:
            continue
        verdict = suite.evaluate(mutant.mutated, i, rng)
        result.cases_run += 1
        if verdict.status != VerdictStatus.FAIL:
            continue
        result.killed = True
        result.killing_cases.append(case.id)
        result.triggered[cls] = result.triggered.get(cls, 0) + 1
        if verdict.error is not None:
            result.errors += 1
        if short_circuit == "first_kill":
            break
        if short_circuit == "per_class":
            done_classes.add(cls)
    return result


def run_mutation_analysis(base: Program, mutants: Sequence[Mutant], suite, rng: RandomStream,
                          jobs: int = 1, short_circuit: str = "per_class", program_name: str = "",
                          verbose: bool = True) -> MutationReport:
    """
    Run every mutant against a suite.

    The suite must provide `cases`, `evaluate(program, index, rng)` and
    `case_class(index)`; each case draws from the same substream for the base and
    for every mutant. The base must pass every case first.

    Raises:
        MutationError: when the unmutated program does not pass its own suite
    """
    start = time.time()
    if verbose:
        print(f"Sanity run: {len(suite.cases)} cases on the unmutated program")
    verdicts = parallel_map(_base_unit, len(suite.cases), jobs, (base, suite, rng))
    bad = [(suite.cases[i].id, v) for i, v in enumerate(verdicts)
           if v.status not in (VerdictStatus.PASS, VerdictStatus.SKIPPED)]
    if bad:
        shown = "; ".join(f"{cid}: {v.status.value} ({v.error or v.note})" for cid, v in bad[:3])
        raise MutationError(f"The unmutated program fails {len(bad)} case(s) of its own suite: {shown}")

    class_cases: Dict[str, int] = {}
    for i in range(len(suite.cases)):
        cls = suite.case_class(i)
        class_cases[cls] = class_cases.get(cls, 0) + 1

    def progress(i, result):
        if verbose and ((i + 1) % 10 == 0 or i + 1 == len(mutants)):
            killed = sum(r.killed for r in results_so_far) + result.killed
            print(f"Mutant {i + 1}/{len(mutants)} - killed: {killed}")
        results_so_far.append(result)

    results_so_far: List[MutantResult] = []
    results = parallel_map(_mutant_unit, len(mutants), jobs, (list(mutants), suite, rng, short_circuit),
                           progress=progress)
    return MutationReport(program_name or suite.subroutine, suite.subroutine, results, class_cases, short_circuit,
                          time.time() - start, len(suite.cases))


# ---------------------------------------------------------------------------
# Survivor classification
# ---------------------------------------------------------------------------

class Evidence(Enum):
    EQUIVALENT = "behaviorally-equivalent"
    UNDETECTED = "undetected"
    UNVERIFIED = "undetected-unverified"


@dataclass
class SurvivorClass:
    mutant_id: str
    evidence: Evidence
    witness: Optional[Dict] = None
    scales: Tuple[int, ...] = ()


@dataclass
class ComparisonDomain:
    """
    Where survivors are compared: the (classical arguments, doubles) pairs a suite
    runs, the scale variable, and the inputs and outputs its IO mark declares.

    Points without doubles are extended along `scale` from the smallest scale the
    suite uses up to n_max; a mutant that only fails to run at such an extension
    point is not held against it. Quantum inputs default to every qubit parameter,
    observed outputs to every qubit parameter and every result the base assigns.
    """
    points: List[Tuple[Dict[str, int], Dict[str, SubroutineDef]]] = field(default_factory=list)
    scale: Optional[str] = None
    quantum_inputs: Optional[Tuple[str, ...]] = None
    classical_outputs: Optional[Tuple[str, ...]] = None
    quantum_outputs: Optional[Tuple[str, ...]] = None


@dataclass
class _Point:
    args: Dict[str, int]
    bindings: Dict[str, SubroutineDef]
    reached: bool
    value: Optional[int] = None

    def describe(self) -> Dict:
        info: Dict = {"n": self.value, "args": dict(self.args)}
        doubles = sorted(d.name for d in self.bindings.values())
        if doubles:
            info["doubles"] = doubles
        return info


def _scale_args(sub: SubroutineDef, n: int) -> Dict[str, int]:
    args = {p.name: n for p in sub.classical_params}
    args.update({name: n for name in sub.implicit_size_names()})
    return args


def _comparison_points(sub: SubroutineDef, n_max: int, oracle_bindings,
                       domain: Optional[ComparisonDomain]) -> List[_Point]:
    bindings = dict(oracle_bindings or {})
    if domain is None or not domain.points:
        return [_Point(_scale_args(sub, n), bindings, True, n) for n in range(1, n_max + 1)]
    points: List[_Point] = []
    seen = set()

    def add(args, doubles, reached):
        bound = {**bindings, **doubles}
        key = (tuple(sorted(args.items())), tuple(sorted((k, render_subroutine(v)) for k, v in bound.items())))
        if key not in seen:
            seen.add(key)
            points.append(_Point(dict(args), bound, reached, args.get(domain.scale)))

    for args, doubles in domain.points:
        add(args, doubles, True)
    scales = [args[domain.scale] for args, _ in domain.points if domain.scale in args]
    if scales:
        for args, doubles in domain.points:
            if doubles or domain.scale not in args:
                continue
            for n in range(min(scales), n_max + 1):
                add({**args, domain.scale: n}, {}, False)
    return points


def subroutine_matrix(program: Program, sub_name: str, n: int, oracle_bindings=None,
                      args: Optional[Dict[str, int]] = None) -> Optional[np.ndarray]:
    """
    Matrix of a measurement-free subroutine, column j being the output for basis
    input j. Classical parameters and sizes come from `args`, or are all set to n.
    None when the registers exceed MAX_COMPARE_QUBITS.
    """
    sub = program.get(sub_name)
    args = _scale_args(sub, n) if args is None else dict(args)
    layout = entry_layout(sub, args)
    width = layout_size(layout)
    if width == 0 or width > MAX_COMPARE_QUBITS:
        return None
    columns = []
    for j in range(2 ** width):
        state, _ = run(program, sub, args, layout, StateVector.basis(width, j), oracle_bindings, RandomStream(0))
        columns.append(state.amplitudes)
    return np.column_stack(columns)


def compare_up_to_phase(expected: np.ndarray, actual: np.ndarray, tol: float = EQUIVALENCE_TOL) -> Optional[Dict]:
    """None when actual = e^{i phi} expected within tol, else the worst column."""
    if expected.shape != actual.shape:
        return {"column": None, "deviation": math.inf}
    pivot = np.unravel_index(np.argmax(np.abs(expected)), expected.shape)
    phase = actual[pivot] / expected[pivot] if abs(expected[pivot]) > tol else 1.0
    if abs(abs(phase) - 1) > tol:
        phase = 1.0
    deviation = np.max(np.abs(actual - phase * expected), axis=0)
    worst = int(np.argmax(deviation))
    if deviation[worst] <= tol:
        return None
    return {"column": worst, "deviation": float(deviation[worst])}


def _assigned_names(sub: SubroutineDef) -> List[str]:
    names = []
    for _, stmt in walk(sub.body):
        name = stmt.name if isinstance(stmt, AssignStmt) else stmt.result if isinstance(stmt, MeasureStmt) else None
        if name is not None and name not in names:
            names.append(name)
    return sorted(names)


def _embed(value: int, qubits: Sequence[int], width: int) -> int:
    """Basis index of the whole register with `value` on `qubits` and 0 elsewhere."""
    index = 0
    for i, q in enumerate(qubits):
        if (value >> (len(qubits) - 1 - i)) & 1:
            index |= 1 << (width - 1 - q)
    return index


Observation = List[Tuple[Tuple[int, int], Dict[Tuple, np.ndarray]]]


def output_distribution(program: Program, sub_name: str, args: Dict[str, int], oracle_bindings=None,
                        quantum_inputs: Optional[Sequence[str]] = None,
                        classical_outputs: Optional[Sequence[str]] = None,
                        quantum_outputs: Optional[Sequence[str]] = None) -> Optional[Observation]:
    """
    Exact observable behaviour of a subroutine that may measure.

    For every input operator |j><k| on the quantum inputs (other registers start in
    |0>), the outputs of every branch: the observed classical results mapped to the
    operator reduced to the quantum outputs (its trace when there are none). The map
    is linear, so equal observations on every |j><k| mean equal behaviour on every
    input state. None when the registers exceed the exact-run limits.
    """
    sub = program.get(sub_name)
    layout = entry_layout(sub, args)
    width = layout_size(layout)
    names = [p.name for p in sub.qubit_params]
    inputs = [q for name in (names if quantum_inputs is None else quantum_inputs) for q in layout.get(name, [])]
    keep = [q for name in (names if quantum_outputs is None else quantum_outputs) for q in layout.get(name, [])]
    if width == 0 or width > MAX_OPERATOR_QUBITS or len(inputs) > MAX_EXACT_INPUT_QUBITS:
        return None
    results = _assigned_names(sub) if classical_outputs is None else list(classical_outputs)

    interpreter = BranchingInterpreter(program, oracle_bindings)
    dim = 2 ** width
    observation: Observation = []
    for j in range(2 ** len(inputs)):
        for k in range(2 ** len(inputs)):
            initial = np.zeros((dim, dim), dtype=complex)
            initial[_embed(j, inputs, width), _embed(k, inputs, width)] = 1.0
            observed: Dict[Tuple, np.ndarray] = {}
            for branch in interpreter.run_operator(sub, args, layout, initial):
                key = tuple((name, branch.env[name] if name in branch.assigned else None) for name in results)
                matrix = branch.matrix()
                reduced = (partial_trace(DensityMatrix(matrix, check=False), keep).entries if keep
                           else np.array([[np.trace(matrix)]]))
                observed[key] = observed[key] + reduced if key in observed else reduced
            observation.append(((j, k), observed))
    return observation


def compare_distributions(expected: Observation, actual: Observation, tol: float = EQUIVALENCE_TOL) -> Optional[Dict]:
    """None when both observations agree within tol, else the first input and outputs that differ."""
    for ((pair, want), (_, got)) in zip(expected, actual):
        for key in list(want) + [k for k in got if k not in want]:
            a = want.get(key)
            b = got.get(key)
            a = np.zeros_like(b) if a is None else a
            b = np.zeros_like(a) if b is None else b
            deviation = float(np.max(np.abs(a - b)))
            if deviation > tol:
                return {"input": pair, "outputs": dict(key), "deviation": deviation}
    return None


def classify_survivors(report: MutationReport, base: Program, mutants: Sequence[Mutant], n_max: int = 5,
                       oracle_bindings=None, domain: Optional[ComparisonDomain] = None) -> List[SurvivorClass]:
    """
    Label each surviving mutant by brute force, comparing the suite's subroutine in
    the base and mutated programs.

    Measurement-free programs are compared as matrices on every basis input, up to
    global phase. When either program measures, the exact output distributions are
    compared instead. Without a domain the comparison runs at n = 1..n_max with every
    classical parameter set to n; with one it runs at the suite's own points.
    """
    by_id = {m.id: m for m in mutants}
    labels = []
    for result in report.survivors:
        mutant = by_id[result.mutant_id]
        labels.append(_classify(mutant, base, report.subroutine, n_max, oracle_bindings, domain))
    return labels


def _observe(program: Program, sub_name: str, point: _Point, exact: bool, domain: ComparisonDomain):
    if not exact:
        return subroutine_matrix(program, sub_name, point.value, point.bindings, point.args)
    return output_distribution(program, sub_name, point.args, point.bindings, domain.quantum_inputs,
                               domain.classical_outputs, domain.quantum_outputs)


def _classify(mutant: Mutant, base: Program, sub_name: str, n_max: int, oracle_bindings,
              domain: Optional[ComparisonDomain] = None) -> SurvivorClass:
    sub = base.get(sub_name)
    observed = domain or ComparisonDomain()
    if observed.classical_outputs is None:
        observed = dataclasses.replace(observed, classical_outputs=tuple(_assigned_names(sub)))
    compared: List = []
    for point in _comparison_points(sub, n_max, oracle_bindings, domain):
        exact = any(reaches_measurement(p, p.get(sub_name), point.bindings) for p in (base, mutant.mutated))
        try:
            expected = _observe(base, sub_name, point, exact, observed)
        except (ProgramError, SimulationError):
            continue
        if expected is None:
            continue
        try:
            actual = _observe(mutant.mutated, sub_name, point, exact, observed)
        except (ProgramError, SimulationError) as e:
            if not point.reached:
                continue
            return SurvivorClass(mutant.id, Evidence.UNDETECTED, {**point.describe(), "error": str(e)},
                                 tuple(compared))
        difference = compare_distributions(expected, actual) if exact else compare_up_to_phase(expected, actual)
        if difference is not None:
            difference.update(point.describe())
            return SurvivorClass(mutant.id, Evidence.UNDETECTED, difference, tuple(compared + [point.value]))
        if point.value not in compared:
            compared.append(point.value)
        if domain is None and not _depends_on_scale(sub):
            break
    if not compared:
        return SurvivorClass(mutant.id, Evidence.UNVERIFIED)
    return SurvivorClass(mutant.id, Evidence.EQUIVALENT, None, tuple(compared))


def _depends_on_scale(sub: SubroutineDef) -> bool:
    return bool(sub.classical_params or sub.implicit_size_names())
