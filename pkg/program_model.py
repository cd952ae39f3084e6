"""
Multi-subroutine quantum program model.

Programs are trees of QPL-mini statements (gates, calls, loops, conditionals,
measurements, resets, classical assignments) grouped into named subroutines. They
are executed by interpretation: loops and conditionals are elaborated at run time
against the bound classical parameters, so one program describes a whole family of
circuits.

Besides execution, this module derives the inverse, controlled and power variants of
a subroutine and computes the subroutine dependency graph used for integration
testing.
"""
import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np

from quantum_state import (GATE_ARITY, Gate, RandomStream, SimulationError, StateVector, apply_unitary,
                           is_parametric, make_gate, measure, reset)


class ProgramError(ValueError):
    """Invalid program or failed execution (unbound name, bad index, division by zero)."""
    located = False


class RecursionDetected(ProgramError):
    """A subroutine (directly or indirectly) calls itself."""


# ---------------------------------------------------------------------------
# Classical expressions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Const:
    value: Union[int, float]


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class BinOp:
    op: str
    left: 'Expr'
    right: 'Expr'


@dataclass(frozen=True)
class UnOp:
    op: str
    operand: 'Expr'


@dataclass(frozen=True)
class FuncCall:
    func: str
    args: Tuple['Expr', ...]


Expr = Union[Const, Var, BinOp, UnOp, FuncCall]

COMPARISONS = ("<", "<=", ">", ">=", "==", "!=")
BUILTIN_FUNCS = ("len", "isqrt")


def _as_int(value, what: str) -> int:
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, float):
        if not value.is_integer():
            raise ProgramError(f"{what} evaluated to non-integer {value}")
        return int(value)
    return value


def evaluate(expr: Expr, env: Mapping[str, int], arrays: Optional[Mapping[str, Sequence[int]]] = None,
             real: bool = False):
    """
    Evaluate a classical expression.

    Integer mode (the default) uses floor division and floor modulo. Real mode is used
    for gate angles: `/` is true division and `pi` is available.
    """
    if isinstance(expr, Const):
        return float(expr.value) if real else _as_int(expr.value, "constant")
    if isinstance(expr, Var):
        if expr.name in env:
            return env[expr.name]
        if expr.name == "pi" and real:
            return math.pi
        raise ProgramError(f"Unbound name '{expr.name}'")
    if isinstance(expr, UnOp):
        value = evaluate(expr.operand, env, arrays, real)
        if expr.op == "-":
            return -value
        if expr.op == "not":
            return int(not value)
        raise ProgramError(f"Unknown unary operator {expr.op}")
    if isinstance(expr, FuncCall):
        if expr.func == "len":
            if len(expr.args) != 1 or not isinstance(expr.args[0], Var):
                raise ProgramError("len() takes one qubit array name")
            name = expr.args[0].name
            if arrays is None or name not in arrays:
                raise ProgramError(f"len() of unknown array '{name}'")
            return len(arrays[name])
        if expr.func == "isqrt":
            if len(expr.args) != 1:
                raise ProgramError("isqrt() takes one argument")
            value = _as_int(evaluate(expr.args[0], env, arrays, False), "isqrt argument")
            if value < 0:
                raise ProgramError(f"isqrt() of negative value {value}")
            return math.isqrt(value)
        raise ProgramError(f"Unknown function '{expr.func}'")
    if isinstance(expr, BinOp):
        op = expr.op
        left = evaluate(expr.left, env, arrays, real)
        if op == "and":
            return int(bool(left) and bool(evaluate(expr.right, env, arrays, real)))
        if op == "or":
            return int(bool(left) or bool(evaluate(expr.right, env, arrays, real)))
        right = evaluate(expr.right, env, arrays, real)
        if op == "+":
            return left + right
        if op == "-":
            return left - right
        if op == "*":
            return left * right
        if op in ("/", "%"):
            if right == 0:
                raise ProgramError("Division by zero")
            if op == "%":
                return left % right
            return left / right if real else left // right
        if op == "^":
            if real:
                return float(left) ** right
            if right < 0:
                raise ProgramError(f"Negative integer exponent {right}")
            return left ** right
        if op == "<":
            return int(left < right)
        if op == "<=":
            return int(left <= right)
        if op == ">":
            return int(left > right)
        if op == ">=":
            return int(left >= right)
        if op == "==":
            return int(left == right)
        if op == "!=":
            return int(left != right)
        raise ProgramError(f"Unknown operator {op}")
    raise ProgramError(f"Not an expression: {expr!r}")


def expr_names(expr: Optional[Expr]) -> Iterator[str]:
    """Names referenced by an expression (function names excluded)."""
    if expr is None:
        return
    if isinstance(expr, Var):
        yield expr.name
    elif isinstance(expr, BinOp):
        yield from expr_names(expr.left)
        yield from expr_names(expr.right)
    elif isinstance(expr, UnOp):
        yield from expr_names(expr.operand)
    elif isinstance(expr, FuncCall):
        for arg in expr.args:
            yield from expr_names(arg)


def add_const(expr: Expr, delta: int) -> Expr:
    """expr + delta, folding constants."""
    if isinstance(expr, Const) and isinstance(expr.value, int):
        return Const(expr.value + delta)
    if delta >= 0:
        return BinOp("+", expr, Const(delta))
    return BinOp("-", expr, Const(-delta))


# ---------------------------------------------------------------------------
# Statements
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QubitRef:
    """
    A qubit reference: a whole array (`qs`), one element (`qs[i]`) or an inclusive
    range (`qs[lo..hi]`, empty when lo > hi).
    """
    array: str
    index: Optional[Expr] = None
    upper: Optional[Expr] = None


@dataclass(frozen=True)
class VariantOp:
    """One step of a variant tag: 'inv', 'ctl' or 'pow' (with its exponent)."""
    kind: str
    power: Optional[Expr] = None


VariantTag = Tuple[VariantOp, ...]
BASE: VariantTag = ()


@dataclass(frozen=True)
class GateApp:
    gate: str
    angle: Optional[Expr]
    controls: Tuple[QubitRef, ...]
    targets: Tuple[QubitRef, ...]
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class CallStmt:
    callee: str
    variant: VariantTag
    classical_args: Tuple[Expr, ...]
    sub_args: Tuple[str, ...]
    qubit_args: Tuple[QubitRef, ...]
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class ForLoop:
    var: str
    lower: Expr
    upper: Expr
    body: Tuple['Statement', ...]
    descending: bool = False
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class IfStmt:
    condition: Expr
    then_body: Tuple['Statement', ...]
    else_body: Tuple['Statement', ...] = ()
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class MeasureStmt:
    result: str
    refs: Tuple[QubitRef, ...]
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class ResetStmt:
    refs: Tuple[QubitRef, ...]
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class AssignStmt:
    name: str
    expr: Expr
    line: int = field(default=0, compare=False)


Statement = Union[GateApp, CallStmt, ForLoop, IfStmt, MeasureStmt, ResetStmt, AssignStmt]

# block field names used in statement paths
BLOCK_FIELDS = {"body": "body", "then": "then_body", "else": "else_body"}


def child_blocks(stmt: Statement) -> List[Tuple[str, Tuple[Statement, ...]]]:
    if isinstance(stmt, ForLoop):
        return [("body", stmt.body)]
    if isinstance(stmt, IfStmt):
        return [("then", stmt.then_body), ("else", stmt.else_body)]
    return []


def walk(body: Sequence[Statement], prefix: Tuple = ()) -> Iterator[Tuple[Tuple, Statement]]:
    """Yield (path, statement) for every statement, depth first, in source order."""
    for i, stmt in enumerate(body):
        path = prefix + (i,)
        yield path, stmt
        for label, block in child_blocks(stmt):
            yield from walk(block, path + (label,))


def blocks(body: Sequence[Statement], prefix: Tuple = ()) -> Iterator[Tuple[Tuple, Tuple[Statement, ...]]]:
    """Yield (block path, statements) for the top-level block and every nested block."""
    yield prefix, tuple(body)
    for i, stmt in enumerate(body):
        for label, block in child_blocks(stmt):
            yield from blocks(block, prefix + (i, label))


def edit_block(body: Sequence[Statement], block_path: Tuple,
               edit: Callable[[List[Statement]], List[Statement]]) -> Tuple[Statement, ...]:
    """Return a copy of `body` with the block at `block_path` rewritten by `edit`."""
    if not block_path:
        return tuple(edit(list(body)))
    index, label, rest = block_path[0], block_path[1], block_path[2:]
    stmt = body[index]
    attr = BLOCK_FIELDS[label]
    updated = dataclasses.replace(stmt, **{attr: edit_block(getattr(stmt, attr), rest, edit)})
    return tuple(body[:index]) + (updated,) + tuple(body[index + 1:])


def statement_at(body: Sequence[Statement], path: Tuple) -> Statement:
    stmt = body[path[0]]
    rest = path[1:]
    while rest:
        stmt = getattr(stmt, BLOCK_FIELDS[rest[0]])[rest[1]]
        rest = rest[2:]
    return stmt


def replace_statement(body: Sequence[Statement], path: Tuple,
                      replacement: Sequence[Statement]) -> Tuple[Statement, ...]:
    """Replace the statement at `path` with zero or more statements."""
    block_path, index = path[:-1], path[-1]

    def edit(stmts):
        return stmts[:index] + list(replacement) + stmts[index + 1:]
    return edit_block(body, block_path, edit)


# ---------------------------------------------------------------------------
# Subroutines and programs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClassicalParam:
    name: str
    type: str = "int"


@dataclass(frozen=True)
class QubitParam:
    """Qubit array parameter. A bare-name size that is not a classical parameter binds
    that name to the array length."""
    name: str
    size: Optional[Expr] = None


@dataclass(frozen=True)
class SlotParam:
    """Subroutine-typed parameter (oracle slot)."""
    name: str
    adjoint: bool = False
    controlled: bool = False


Param = Union[ClassicalParam, QubitParam, SlotParam]


@dataclass(frozen=True)
class SubroutineDef:
    name: str
    params: Tuple[Param, ...]
    body: Tuple[Statement, ...]

    @property
    def classical_params(self) -> List[ClassicalParam]:
        return [p for p in self.params if isinstance(p, ClassicalParam)]

    @property
    def qubit_params(self) -> List[QubitParam]:
        return [p for p in self.params if isinstance(p, QubitParam)]

    @property
    def slot_params(self) -> List[SlotParam]:
        return [p for p in self.params if isinstance(p, SlotParam)]

    def slot(self, name: str) -> Optional[SlotParam]:
        for p in self.slot_params:
            if p.name == name:
                return p
        return None

    def implicit_size_names(self) -> List[str]:
        """Names bound to an array length by a bare-name size expression."""
        classical = {p.name for p in self.classical_params}
        names = []
        for p in self.qubit_params:
            if isinstance(p.size, Var) and p.size.name not in classical and p.size.name not in names:
                names.append(p.size.name)
        return names

    @property
    def has_measurement(self) -> bool:
        return any(isinstance(s, (MeasureStmt, ResetStmt)) for _, s in walk(self.body))

    @property
    def supports_inverse(self) -> bool:
        return not self.has_measurement

    @property
    def supports_controlled(self) -> bool:
        return not self.has_measurement

    def callees(self) -> List[str]:
        names = []
        for _, stmt in walk(self.body):
            if isinstance(stmt, CallStmt):
                for name in (stmt.callee,) + stmt.sub_args:
                    if name not in names:
                        names.append(name)
        return names

    def signature(self) -> Tuple[int, int, int]:
        return len(self.classical_params), len(self.qubit_params), len(self.slot_params)


@dataclass(frozen=True)
class OracleDecl:
    """Program-level declaration of an oracle slot and its capabilities."""
    name: str
    params: Tuple[Param, ...]
    adjoint: bool = False
    controlled: bool = False

    def signature(self) -> Tuple[int, int, int]:
        return (sum(isinstance(p, ClassicalParam) for p in self.params),
                sum(isinstance(p, QubitParam) for p in self.params),
                sum(isinstance(p, SlotParam) for p in self.params))


class Program:
    """
    A set of subroutine definitions plus oracle declarations.

    Programs are treated as immutable; every editing helper returns a new Program.
    """
    def __init__(self, subroutines: Mapping[str, SubroutineDef], entry: Optional[str] = None,
                 oracles: Optional[Mapping[str, OracleDecl]] = None,
                 bindings: Optional[Mapping[str, SubroutineDef]] = None, validate: bool = True):
        self.subroutines: Dict[str, SubroutineDef] = dict(subroutines)
        self.oracles: Dict[str, OracleDecl] = dict(oracles or {})
        self.bindings: Dict[str, SubroutineDef] = dict(bindings or {})
        if entry is None and self.subroutines:
            entry = list(self.subroutines)[-1]
        self.entry = entry
        if validate:
            self.validate()

    def get(self, name: str) -> SubroutineDef:
        if name not in self.subroutines:
            raise ProgramError(f"Unknown subroutine '{name}'")
        return self.subroutines[name]

    def names(self) -> List[str]:
        return sorted(self.subroutines)

    def with_subroutines(self, *defs: SubroutineDef) -> 'Program':
        subs = dict(self.subroutines)
        for d in defs:
            subs[d.name] = d
        return Program(subs, self.entry, self.oracles, self.bindings, validate=False)

    def slot_names(self) -> List[str]:
        names = set(self.oracles)
        for sub in self.subroutines.values():
            names.update(p.name for p in sub.slot_params)
        return sorted(names)

    def validate(self):
        if self.entry is not None and self.entry not in self.subroutines:
            raise ProgramError(f"Entry '{self.entry}' is not defined")
        for sub in self.subroutines.values():
            slots = {p.name for p in sub.slot_params}
            for _, stmt in walk(sub.body):
                if not isinstance(stmt, CallStmt):
                    continue
                for name in (stmt.callee,) + stmt.sub_args:
                    if name not in self.subroutines and name not in slots and name not in self.oracles:
                        raise ProgramError(f"{sub.name}, line {stmt.line}: call to unknown subroutine '{name}'")
        graph = dependency_graph(self)
        if not nx.is_directed_acyclic_graph(graph):
            cycle = nx.find_cycle(graph)
            raise RecursionDetected("Recursive calls: " + " -> ".join(u for u, _ in cycle))

    def __repr__(self):
        return f"Program(entry={self.entry}, subroutines={self.names()})"


# ---------------------------------------------------------------------------
# Interpreter
# ---------------------------------------------------------------------------

MAX_CALL_DEPTH = 64


class _Frame:
    def __init__(self, sub: SubroutineDef, env: Dict[str, int], arrays: Dict[str, List[int]],
                 slots: Dict[str, SubroutineDef]):
        self.sub = sub
        self.env = env
        self.arrays = arrays
        self.slots = slots
        self.assigned: List[str] = []


def _where(frame: _Frame, stmt) -> str:
    return f"{frame.sub.name}, line {getattr(stmt, 'line', 0)}"


def _located(error: Exception, frame: _Frame, stmt) -> ProgramError:
    """The error as a ProgramError naming the innermost statement that raised it."""
    if getattr(error, "located", False):
        return error
    cls = type(error) if isinstance(error, ProgramError) else ProgramError
    located = cls(f"{_where(frame, stmt)}: {error}")
    located.located = True
    return located


def resolve_ref(ref: QubitRef, env: Mapping[str, int], arrays: Mapping[str, Sequence[int]]) -> List[int]:
    """Absolute qubit indices selected by a reference."""
    if ref.array not in arrays:
        raise ProgramError(f"Unknown qubit array '{ref.array}'")
    qubits = arrays[ref.array]
    if ref.index is None:
        return list(qubits)
    lo = _as_int(evaluate(ref.index, env, arrays), "index")
    hi = lo if ref.upper is None else _as_int(evaluate(ref.upper, env, arrays), "index")
    if ref.upper is not None and lo > hi:
        return []
    for i in (lo, hi):
        if not 0 <= i < len(qubits):
            raise ProgramError(f"Index {i} out of range for {ref.array}[{len(qubits)}]")
    return list(qubits[lo:hi + 1])


def bind_arrays(sub: SubroutineDef, env: Dict[str, int],
                qubit_args: Sequence[Sequence[int]]) -> Dict[str, List[int]]:
    """Bind resolved qubit lists to the qubit parameters, checking declared sizes."""
    params = sub.qubit_params
    if len(qubit_args) != len(params):
        raise ProgramError(f"{sub.name} takes {len(params)} qubit argument(s), got {len(qubit_args)}")
    arrays: Dict[str, List[int]] = {}
    seen = set()
    classical = {p.name for p in sub.classical_params}
    for param, qubits in zip(params, qubit_args):
        qubits = list(qubits)
        if seen & set(qubits):
            raise ProgramError(f"{sub.name}: qubit arguments overlap")
        seen.update(qubits)
        size = param.size
        if isinstance(size, Var) and size.name not in classical and size.name not in env:
            env[size.name] = len(qubits)
        elif size is not None:
            expected = _as_int(evaluate(size, env, arrays), "array size")
            if expected != len(qubits):
                raise ProgramError(f"{sub.name}: array {param.name} expects {expected} qubit(s), got {len(qubits)}")
        arrays[param.name] = qubits
    return arrays


def entry_layout(sub: SubroutineDef, classical_args: Mapping[str, int],
                 qubit_layout: Optional[Mapping[str, Union[int, Sequence[int]]]] = None) -> Dict[str, List[int]]:
    """
    Absolute qubit positions for each qubit parameter of an entry subroutine.

    Sizes come from `qubit_layout` (an int allocates consecutively, a list places the
    array explicitly) or from the declared size expressions.
    """
    env = dict(classical_args)
    layout: Dict[str, List[int]] = {}
    cursor = 0
    for param in sub.qubit_params:
        spec = None if qubit_layout is None else qubit_layout.get(param.name)
        if spec is not None and not isinstance(spec, int):
            layout[param.name] = list(spec)
            cursor = max(cursor, max(spec) + 1) if len(spec) else cursor
            continue
        if spec is None:
            if param.size is None:
                raise ProgramError(f"Size of array '{param.name}' is not bound")
            spec = _as_int(evaluate(param.size, env, layout), "array size")
        if spec < 0:
            raise ProgramError(f"Negative size {spec} for array '{param.name}'")
        layout[param.name] = list(range(cursor, cursor + spec))
        cursor += spec
    return layout


def layout_size(layout: Mapping[str, Sequence[int]]) -> int:
    used = [q for qubits in layout.values() for q in qubits]
    return max(used) + 1 if used else 0


class Interpreter:
    """
    Executes QPL-mini subroutines on a StateVector.

    One interpreter serves one run: it owns the state and the random stream, and caches
    derived variants for the duration of the run.
    """
    def __init__(self, program: Program, rng: RandomStream,
                 oracle_bindings: Optional[Mapping[str, SubroutineDef]] = None):
        self.program = program
        self.rng = rng
        self.oracle_bindings = dict(program.bindings)
        self.oracle_bindings.update(oracle_bindings or {})
        self.state: Optional[StateVector] = None
        self.results: Dict[str, int] = {}
        self._stack: List[str] = []
        self._variants: Dict[Tuple, SubroutineDef] = {}

    def run(self, sub: SubroutineDef, classical_args: Mapping[str, int],
            layout: Mapping[str, Sequence[int]], initial: StateVector) -> Tuple[StateVector, Dict[str, int]]:
        frame = self._entry_frame(sub, classical_args, layout, initial.num_qubits)
        self.state = initial
        self.results = {}
        self._stack = [sub.name]
        self._exec_block(sub.body, frame)
        for name in frame.assigned:
            self.results[name] = frame.env[name]
        return self.state, dict(self.results)

    def _entry_frame(self, sub: SubroutineDef, classical_args: Mapping[str, int],
                     layout: Mapping[str, Sequence[int]], num_qubits: int) -> _Frame:
        env: Dict[str, int] = {}
        for param in sub.classical_params:
            if param.name not in classical_args:
                raise ProgramError(f"{sub.name}: classical parameter '{param.name}' is not bound")
            value = _as_int(classical_args[param.name], param.name)
            if param.type == "bool" and value not in (0, 1):
                raise ProgramError(f"{sub.name}: bool parameter '{param.name}' got {value}")
            env[param.name] = value
        for name in sub.implicit_size_names():
            if name in classical_args:
                env[name] = _as_int(classical_args[name], name)
        arrays = bind_arrays(sub, env, [layout[p.name] for p in sub.qubit_params])
        if layout_size(arrays) > num_qubits:
            raise ProgramError(f"{sub.name} needs {layout_size(arrays)} qubits, state has {num_qubits}")
        slots = {}
        for param in sub.slot_params:
            if param.name not in self.oracle_bindings:
                raise ProgramError(f"{sub.name}: oracle slot '{param.name}' is not bound")
            slots[param.name] = self.oracle_bindings[param.name]
        return _Frame(sub, env, arrays, slots)

    # -- statements --------------------------------------------------------

    def _exec_block(self, body: Sequence[Statement], frame: _Frame):
        for stmt in body:
            self._exec(stmt, frame)

    def _exec(self, stmt: Statement, frame: _Frame):
        try:
            if isinstance(stmt, GateApp):
                self._exec_gate(stmt, frame)
            elif isinstance(stmt, CallStmt):
                self._exec_call(stmt, frame)
            elif isinstance(stmt, ForLoop):
                self._exec_for(stmt, frame)
            elif isinstance(stmt, IfStmt):
                cond = evaluate(stmt.condition, frame.env, frame.arrays)
                self._exec_block(stmt.then_body if cond else stmt.else_body, frame)
            elif isinstance(stmt, MeasureStmt):
                qubits = self._qubits(stmt.refs, frame)
                outcome, self.state = measure(self.state, qubits, self.rng)
                self._assign(frame, stmt.result, outcome.as_integer)
            elif isinstance(stmt, ResetStmt):
                self.state = reset(self.state, self._qubits(stmt.refs, frame), self.rng)
            elif isinstance(stmt, AssignStmt):
                self._assign(frame, stmt.name, _as_int(evaluate(stmt.expr, frame.env, frame.arrays), stmt.name))
            else:
                raise ProgramError(f"Unknown statement {stmt!r}")
        except (ProgramError, SimulationError) as e:
            raise _located(e, frame, stmt) from None

    def _assign(self, frame: _Frame, name: str, value: int):
        frame.env[name] = value
        if name not in frame.assigned:
            frame.assigned.append(name)

    def _qubits(self, refs: Sequence[QubitRef], frame: _Frame) -> List[int]:
        qubits: List[int] = []
        for ref in refs:
            qubits.extend(resolve_ref(ref, frame.env, frame.arrays))
        return qubits

    def _exec_gate(self, stmt: GateApp, frame: _Frame):
        angle = None
        if stmt.angle is not None:
            angle = float(evaluate(stmt.angle, frame.env, frame.arrays, real=True))
        gate = make_gate(stmt.gate, angle)
        controls = self._qubits(stmt.controls, frame)
        targets = self._qubits(stmt.targets, frame)
        if not targets:
            return
        if gate.arity == 1 and len(targets) > 1:
            for target in targets:
                self.state = apply_unitary(self.state, gate, controls, [target])
        else:
            self.state = apply_unitary(self.state, gate, controls, targets)

    def _exec_for(self, stmt: ForLoop, frame: _Frame):
        lower = _as_int(evaluate(stmt.lower, frame.env, frame.arrays), "loop bound")
        upper = _as_int(evaluate(stmt.upper, frame.env, frame.arrays), "loop bound")
        indices = range(upper, lower - 1, -1) if stmt.descending else range(lower, upper + 1)
        saved = frame.env.get(stmt.var)
        for i in indices:
            frame.env[stmt.var] = i
            self._exec_block(stmt.body, frame)
        if saved is None:
            frame.env.pop(stmt.var, None)
        else:
            frame.env[stmt.var] = saved

    def _lookup(self, name: str, frame: _Frame) -> Tuple[SubroutineDef, Optional[Union[SlotParam, OracleDecl]]]:
        if name in frame.slots:
            return frame.slots[name], frame.sub.slot(name)
        if name in self.program.subroutines:
            return self.program.subroutines[name], None
        if name in self.oracle_bindings:
            return self.oracle_bindings[name], self.program.oracles.get(name)
        raise ProgramError(f"Call to unbound subroutine or slot '{name}'")

    def _exec_call(self, stmt: CallStmt, frame: _Frame):
        inner = self._callee_frame(stmt, frame)
        self._stack.append(inner.sub.name)
        try:
            self._exec_block(inner.sub.body, inner)
        finally:
            self._stack.pop()

    def _callee_frame(self, stmt: CallStmt, frame: _Frame) -> _Frame:
        """Resolve the callee with its variant steps and bind its arguments."""
        callee, slot = self._lookup(stmt.callee, frame)
        qubit_args = [resolve_ref(ref, frame.env, frame.arrays) for ref in stmt.qubit_args]
        classical = [_as_int(evaluate(e, frame.env, frame.arrays), "argument") for e in stmt.classical_args]

        # variant steps each prepend a parameter: ctl a qubit array, pow an int
        n_ctl = sum(op.kind == "ctl" for op in stmt.variant)
        ctl_sizes = [len(q) for q in qubit_args[:n_ctl]]
        powers = []
        seen_ctl = 0
        target = callee
        for op in stmt.variant:
            if op.kind == "inv":
                if slot is not None and not slot.adjoint:
                    raise ProgramError(f"Oracle slot '{stmt.callee}' does not declare adjoint support")
                target = self._variant(target, ("inv",), lambda d: derive_inverse(d))
            elif op.kind == "ctl":
                if slot is not None and not slot.controlled:
                    raise ProgramError(f"Oracle slot '{stmt.callee}' does not declare controlled support")
                seen_ctl += 1
                size = ctl_sizes[n_ctl - seen_ctl]
                target = self._variant(target, ("ctl", size), lambda d, k=size: derive_controlled(d, k))
            elif op.kind == "pow":
                powers.insert(0, _as_int(evaluate(op.power, frame.env, frame.arrays), "power"))
                target = self._variant(target, ("pow",), lambda d: derive_power(d))
            else:
                raise ProgramError(f"Unknown variant '{op.kind}'")
        classical = powers + classical

        if target.name in self._stack:
            raise RecursionDetected(f"recursive call to '{target.name}'")
        if len(self._stack) >= MAX_CALL_DEPTH:
            raise RecursionDetected(f"call depth exceeds {MAX_CALL_DEPTH}")

        params = target.classical_params
        if len(classical) != len(params):
            raise ProgramError(f"{target.name} takes {len(params)} classical argument(s), got {len(classical)}")
        env = {p.name: v for p, v in zip(params, classical)}
        arrays = bind_arrays(target, env, qubit_args)

        if len(stmt.sub_args) != len(target.slot_params):
            raise ProgramError(f"{target.name} takes {len(target.slot_params)} subroutine argument(s)")
        slots = {}
        for param, name in zip(target.slot_params, stmt.sub_args):
            slots[param.name], _ = self._lookup(name, frame)
        return _Frame(target, env, arrays, slots)

    def _variant(self, sub: SubroutineDef, key: Tuple, make: Callable[[SubroutineDef], SubroutineDef]):
        cache_key = (id(sub),) + key
        if cache_key not in self._variants:
            self._variants[cache_key] = (sub, make(sub))
        return self._variants[cache_key][1]


def run(program: Program, sub: Union[str, SubroutineDef], classical_args: Optional[Mapping[str, int]] = None,
        qubit_layout: Optional[Mapping[str, Union[int, Sequence[int]]]] = None,
        initial: Optional[StateVector] = None, oracle_bindings: Optional[Mapping[str, SubroutineDef]] = None,
        rng: Optional[RandomStream] = None) -> Tuple[StateVector, Dict[str, int]]:
    """
    Run one subroutine of a program.

    Args:
        program: Program supplying callees and oracle declarations
        sub: Subroutine name or definition to run
        classical_args: Values of classical parameters (and of implicit size names)
        qubit_layout: Array sizes or explicit qubit positions; derived from the declared
            sizes when omitted
        initial: Input state (all-zero of the required size when omitted)
        oracle_bindings: Definitions bound to oracle slots
        rng: Random stream for measurements and resets

    Returns:
        (final state, classical results assigned in the entry subroutine)
    """
    if isinstance(sub, str):
        sub = program.get(sub)
    classical_args = dict(classical_args or {})
    layout = entry_layout(sub, classical_args, qubit_layout)
    if initial is None:
        initial = StateVector.zero(max(1, layout_size(layout)))
    interpreter = Interpreter(program, rng or RandomStream(0), oracle_bindings)
    return interpreter.run(sub, classical_args, layout, initial)


# ---------------------------------------------------------------------------
# Exact execution on operators
# ---------------------------------------------------------------------------

MAX_OPERATOR_QUBITS = 7
PRUNE_TOL = 1e-13


@dataclass
class Branch:
    """
    One classical history of an exact run: the frame's environment, the names it
    assigned and the unnormalized operator reached, flattened row-major.
    """
    env: Dict[str, int]
    operator: np.ndarray
    assigned: Tuple[str, ...] = ()

    def matrix(self) -> np.ndarray:
        dim = math.isqrt(self.operator.shape[0])
        return self.operator.reshape(dim, dim)

    def results(self) -> Dict[str, int]:
        return {name: self.env[name] for name in self.assigned}


def _assign_to(branch: Branch, name: str, value: int):
    branch.env[name] = value
    if name not in branch.assigned:
        branch.assigned += (name,)


def _merge(branches: Sequence[Branch]) -> List[Branch]:
    """Sum the operators of branches with the same environment, first one first."""
    merged: Dict[Tuple, Branch] = {}
    for branch in branches:
        key = (tuple(sorted(branch.env.items())), branch.assigned)
        if key in merged:
            merged[key].operator = merged[key].operator + branch.operator
        else:
            merged[key] = branch
    return list(merged.values())


class BranchingInterpreter(Interpreter):
    """
    Executes QPL-mini subroutines exactly, on operators instead of sampled states.

    The operator of a w-qubit register is held as a vector over 2w qubits, row qubits
    first, so a gate U is two apply_unitary calls (U on the rows, conj(U) on the
    columns). A measurement splits a branch into one branch per outcome; a reset is a
    channel and does not split. Branches reaching the same classical environment are
    merged. Every step is linear in the initial operator, which need not be Hermitian.
    """
    def __init__(self, program: Program, oracle_bindings: Optional[Mapping[str, SubroutineDef]] = None):
        super().__init__(program, RandomStream(0), oracle_bindings)
        self.width = 0
        self._conjugates: Dict[Tuple, Gate] = {}

    def run_operator(self, sub: SubroutineDef, classical_args: Mapping[str, int],
                     layout: Mapping[str, Sequence[int]], initial: np.ndarray) -> List[Branch]:
        initial = np.asarray(initial, dtype=complex)
        dim = initial.shape[0]
        if initial.ndim != 2 or initial.shape[1] != dim or dim < 2 or dim & (dim - 1):
            raise SimulationError("Initial operator must be square with a power-of-two size")
        self.width = dim.bit_length() - 1
        if self.width > MAX_OPERATOR_QUBITS:
            raise SimulationError(f"{self.width} qubits exceeds the exact-run cap of {MAX_OPERATOR_QUBITS}")
        frame = self._entry_frame(sub, classical_args, layout, self.width)
        self._stack = [sub.name]
        return self._block(sub.body, frame, [Branch(dict(frame.env), initial.reshape(-1).copy())])

    def _block(self, body: Sequence[Statement], frame: _Frame, branches: List[Branch]) -> List[Branch]:
        for stmt in body:
            if not branches:
                break
            try:
                branches = self._step(stmt, frame, branches)
            except (ProgramError, SimulationError) as e:
                raise _located(e, frame, stmt) from None
        return branches

    def _step(self, stmt: Statement, frame: _Frame, branches: List[Branch]) -> List[Branch]:
        if isinstance(stmt, GateApp):
            return [self._gate(stmt, frame, branch) for branch in branches]
        if isinstance(stmt, CallStmt):
            return _merge([out for branch in branches for out in self._call(stmt, frame, branch)])
        if isinstance(stmt, ForLoop):
            return _merge(self._loop(stmt, frame, branches))
        if isinstance(stmt, IfStmt):
            taken, other = [], []
            for branch in branches:
                (taken if evaluate(stmt.condition, branch.env, frame.arrays) else other).append(branch)
            return _merge(self._block(stmt.then_body, frame, taken) + self._block(stmt.else_body, frame, other))
        if isinstance(stmt, MeasureStmt):
            return _merge([out for branch in branches for out in self._measure(stmt, frame, branch)])
        if isinstance(stmt, ResetStmt):
            return [self._reset(stmt, frame, branch) for branch in branches]
        if isinstance(stmt, AssignStmt):
            for branch in branches:
                _assign_to(branch, stmt.name, _as_int(evaluate(stmt.expr, branch.env, frame.arrays), stmt.name))
            return branches
        raise ProgramError(f"Unknown statement {stmt!r}")

    def _resolve(self, refs: Sequence[QubitRef], frame: _Frame, branch: Branch, distinct: bool = False) -> List[int]:
        qubits: List[int] = []
        for ref in refs:
            qubits.extend(resolve_ref(ref, branch.env, frame.arrays))
        if distinct and len(set(qubits)) != len(qubits):
            raise SimulationError(f"qubit listed twice in {qubits}")
        return qubits

    def _conjugate(self, gate: Gate) -> Gate:
        key = (gate.name, gate.angle)
        if key not in self._conjugates:
            self._conjugates[key] = Gate(gate.name + "*", gate.matrix.conj(), gate.angle)
        return self._conjugates[key]

    def _columns(self, qubits: Sequence[int]) -> List[int]:
        return [q + self.width for q in qubits]

    def _diagonal_block(self, qubits: Sequence[int], value: int) -> Tuple:
        """Index of the block where both the rows and the columns read `value` on qubits."""
        index: List = [slice(None)] * (2 * self.width)
        for i, q in enumerate(qubits):
            bit = (value >> (len(qubits) - 1 - i)) & 1
            index[q] = bit
            index[q + self.width] = bit
        return tuple(index)

    def _gate(self, stmt: GateApp, frame: _Frame, branch: Branch) -> Branch:
        angle = None
        if stmt.angle is not None:
            angle = float(evaluate(stmt.angle, branch.env, frame.arrays, real=True))
        gate = make_gate(stmt.gate, angle)
        controls = self._resolve(stmt.controls, frame, branch)
        targets = self._resolve(stmt.targets, frame, branch)
        if not targets:
            return branch
        groups = [[t] for t in targets] if gate.arity == 1 and len(targets) > 1 else [targets]
        vector = StateVector(branch.operator, 2 * self.width, check=False)
        for group in groups:
            vector = apply_unitary(vector, gate, controls, group)
            vector = apply_unitary(vector, self._conjugate(gate), self._columns(controls), self._columns(group))
        branch.operator = vector.amplitudes
        return branch

    def _measure(self, stmt: MeasureStmt, frame: _Frame, branch: Branch) -> List[Branch]:
        qubits = self._resolve(stmt.refs, frame, branch, distinct=True)
        tensor = branch.operator.reshape([2] * (2 * self.width))
        outcomes = []
        for value in range(2 ** len(qubits)):
            index = self._diagonal_block(qubits, value)
            part = np.zeros_like(tensor)
            part[index] = tensor[index]
            if np.max(np.abs(part)) <= PRUNE_TOL:
                continue
            child = Branch(dict(branch.env), part.reshape(-1), branch.assigned)
            _assign_to(child, stmt.result, value)
            outcomes.append(child)
        return outcomes

    def _reset(self, stmt: ResetStmt, frame: _Frame, branch: Branch) -> Branch:
        qubits = self._resolve(stmt.refs, frame, branch, distinct=True)
        if not qubits:
            return branch
        tensor = branch.operator.reshape([2] * (2 * self.width))
        out = np.zeros_like(tensor)
        zero = self._diagonal_block(qubits, 0)
        for value in range(2 ** len(qubits)):
            out[zero] += tensor[self._diagonal_block(qubits, value)]
        branch.operator = out.reshape(-1)
        return branch

    def _call(self, stmt: CallStmt, frame: _Frame, branch: Branch) -> List[Branch]:
        inner = self._callee_frame(stmt, _Frame(frame.sub, branch.env, frame.arrays, frame.slots))
        self._stack.append(inner.sub.name)
        try:
            results = self._block(inner.sub.body, inner, [Branch(dict(inner.env), branch.operator)])
        finally:
            self._stack.pop()
        return [Branch(dict(branch.env), result.operator, branch.assigned) for result in results]

    def _loop(self, stmt: ForLoop, frame: _Frame, branches: List[Branch]) -> List[Branch]:
        groups: Dict[Tuple, List[Branch]] = {}
        for branch in branches:
            lower = _as_int(evaluate(stmt.lower, branch.env, frame.arrays), "loop bound")
            upper = _as_int(evaluate(stmt.upper, branch.env, frame.arrays), "loop bound")
            groups.setdefault((lower, upper, branch.env.get(stmt.var)), []).append(branch)
        done: List[Branch] = []
        for (lower, upper, saved), group in groups.items():
            indices = range(upper, lower - 1, -1) if stmt.descending else range(lower, upper + 1)
            for i in indices:
                for branch in group:
                    branch.env[stmt.var] = i
                group = self._block(stmt.body, frame, group)
            for branch in group:
                if saved is None:
                    branch.env.pop(stmt.var, None)
                else:
                    branch.env[stmt.var] = saved
            done.extend(group)
        return done


def run_exact(program: Program, sub: Union[str, SubroutineDef], classical_args: Optional[Mapping[str, int]] = None,
              qubit_layout: Optional[Mapping[str, Union[int, Sequence[int]]]] = None,
              initial: Optional[np.ndarray] = None,
              oracle_bindings: Optional[Mapping[str, SubroutineDef]] = None) -> List[Branch]:
    """
    Run one subroutine exactly on an initial operator (|0...0><0...0| when omitted).

    Returns one branch per reachable classical environment. For a density matrix
    input the branch traces are the probabilities of the environments.
    """
    if isinstance(sub, str):
        sub = program.get(sub)
    classical_args = dict(classical_args or {})
    layout = entry_layout(sub, classical_args, qubit_layout)
    if initial is None:
        dim = 2 ** max(1, layout_size(layout))
        initial = np.zeros((dim, dim), dtype=complex)
        initial[0, 0] = 1.0
    return BranchingInterpreter(program, oracle_bindings).run_operator(sub, classical_args, layout, initial)


# ---------------------------------------------------------------------------
# Variant derivation
# ---------------------------------------------------------------------------

def names_in_sub(sub: SubroutineDef) -> set:
    names = {p.name for p in sub.params}
    names.update(sub.implicit_size_names())
    for _, stmt in walk(sub.body):
        if isinstance(stmt, ForLoop):
            names.add(stmt.var)
        elif isinstance(stmt, (AssignStmt,)):
            names.add(stmt.name)
        elif isinstance(stmt, MeasureStmt):
            names.add(stmt.result)
    return names


def fresh_name(base: str, taken) -> str:
    if base not in taken:
        return base
    i = 1
    while f"{base}{i}" in taken:
        i += 1
    return f"{base}{i}"


def _invert_block(body: Sequence[Statement], sub: SubroutineDef) -> Tuple[Statement, ...]:
    assigns = [s for s in body if isinstance(s, AssignStmt)]
    names = [s.name for s in assigns]
    if len(names) != len(set(names)):
        raise ProgramError(f"{sub.name}: a name assigned twice in one block cannot be inverted")
    rest = [s for s in body if not isinstance(s, AssignStmt)]
    return tuple(assigns) + tuple(_invert_statement(s, sub) for s in reversed(rest))


def _invert_statement(stmt: Statement, sub: SubroutineDef) -> Statement:
    if isinstance(stmt, GateApp):
        if is_parametric(stmt.gate):
            return dataclasses.replace(stmt, angle=UnOp("-", stmt.angle))
        return dataclasses.replace(stmt, gate=make_gate(stmt.gate).adjoint().name)
    if isinstance(stmt, CallStmt):
        slot = sub.slot(stmt.callee)
        if slot is not None and not slot.adjoint:
            raise ProgramError(f"{sub.name}: oracle slot '{slot.name}' does not declare adjoint support")
        return dataclasses.replace(stmt, variant=stmt.variant + (VariantOp("inv"),))
    if isinstance(stmt, ForLoop):
        return dataclasses.replace(stmt, body=_invert_block(stmt.body, sub), descending=not stmt.descending)
    if isinstance(stmt, IfStmt):
        return dataclasses.replace(stmt, then_body=_invert_block(stmt.then_body, sub),
                                   else_body=_invert_block(stmt.else_body, sub))
    if isinstance(stmt, (MeasureStmt, ResetStmt)):
        raise ProgramError(f"{sub.name}, line {stmt.line}: measurement or reset cannot be inverted")
    raise ProgramError(f"{sub.name}: cannot invert {stmt!r}")


def derive_inverse(sub: SubroutineDef) -> SubroutineDef:
    """
    Adjoint of a subroutine: statements reversed, gates replaced by their adjoints,
    loops run backwards, nested calls tagged 'inv'. Classical assignments are hoisted
    to the front of their block.
    """
    if not sub.supports_inverse:
        raise ProgramError(f"{sub.name} contains measurement or reset and has no inverse")
    return SubroutineDef(f"{sub.name}_adj", sub.params, _invert_block(sub.body, sub))


def _control_statement(stmt: Statement, ref: QubitRef, sub: SubroutineDef) -> Statement:
    if isinstance(stmt, GateApp):
        return dataclasses.replace(stmt, controls=(ref,) + stmt.controls)
    if isinstance(stmt, CallStmt):
        slot = sub.slot(stmt.callee)
        if slot is not None and not slot.controlled:
            raise ProgramError(f"{sub.name}: oracle slot '{slot.name}' does not declare controlled support")
        return dataclasses.replace(stmt, variant=stmt.variant + (VariantOp("ctl"),),
                                   qubit_args=(ref,) + stmt.qubit_args)
    if isinstance(stmt, ForLoop):
        return dataclasses.replace(stmt, body=tuple(_control_statement(s, ref, sub) for s in stmt.body))
    if isinstance(stmt, IfStmt):
        return dataclasses.replace(stmt, then_body=tuple(_control_statement(s, ref, sub) for s in stmt.then_body),
                                   else_body=tuple(_control_statement(s, ref, sub) for s in stmt.else_body))
    if isinstance(stmt, AssignStmt):
        return stmt
    raise ProgramError(f"{sub.name}, line {getattr(stmt, 'line', 0)}: measurement or reset cannot be controlled")


def derive_controlled(sub: SubroutineDef, num_controls: int = 1) -> SubroutineDef:
    """Controlled variant with a new leading control array of `num_controls` qubits."""
    if num_controls < 1:
        raise ProgramError("A controlled variant needs at least one control qubit")
    if not sub.supports_controlled:
        raise ProgramError(f"{sub.name} contains measurement or reset and cannot be controlled")
    name = fresh_name("ctrl", names_in_sub(sub))
    ref = QubitRef(name)
    body = tuple(_control_statement(s, ref, sub) for s in sub.body)
    params = (QubitParam(name, Const(num_controls)),) + sub.params
    return SubroutineDef(f"{sub.name}_ctl", params, body)


def derive_power(sub: SubroutineDef, inverse: Optional[SubroutineDef] = None) -> SubroutineDef:
    """
    Power variant with a new leading int parameter: the body runs |power| times, using
    the inverse when power is negative. power = 0 is the identity.
    """
    if inverse is None:
        inverse = derive_inverse(sub)
    elif not sub.supports_inverse:
        raise ProgramError(f"{sub.name} contains measurement or reset and has no inverse")
    taken = names_in_sub(sub) | names_in_sub(inverse)
    power = fresh_name("power", taken)
    counter = fresh_name("r", taken | {power})
    forward = ForLoop(counter, Const(1), Var(power), sub.body)
    backward = ForLoop(counter, Const(1), UnOp("-", Var(power)), inverse.body)
    body = (IfStmt(BinOp(">=", Var(power), Const(0)), (forward,), (backward,)),)
    return SubroutineDef(f"{sub.name}_pow", (ClassicalParam(power),) + sub.params, body)


# ---------------------------------------------------------------------------
# Program structure
# ---------------------------------------------------------------------------

def dependency_graph(program: Program) -> nx.DiGraph:
    """
    Directed graph over subroutine and slot names: A -> B when A calls B or passes B
    as a subroutine argument.
    """
    graph = nx.DiGraph()
    for name in sorted(program.subroutines):
        graph.add_node(name, kind="subroutine")
    edges = []
    for name in sorted(program.subroutines):
        sub = program.subroutines[name]
        for callee in sub.callees():
            if callee not in graph:
                graph.add_node(callee, kind="slot")
            edges.append((name, callee))
    graph.add_edges_from(sorted(set(edges)))
    return graph


def reaches_measurement(program: Program, sub: SubroutineDef,
                        oracle_bindings: Optional[Mapping[str, SubroutineDef]] = None) -> bool:
    """Whether running `sub` can execute a measurement or reset, through any callee."""
    bindings = dict(program.bindings)
    bindings.update(oracle_bindings or {})
    seen = set()
    pending = [sub]
    while pending:
        current = pending.pop()
        if current.has_measurement:
            return True
        for name in current.callees():
            if name in seen:
                continue
            seen.add(name)
            target = program.subroutines.get(name) or bindings.get(name)
            if target is not None:
                pending.append(target)
    return False


def integration_order(graph: nx.DiGraph) -> List[str]:
    """Callees before callers, ties broken lexicographically."""
    try:
        return list(nx.lexicographical_topological_sort(graph.reverse(copy=True)))
    except nx.NetworkXUnfeasible:
        raise RecursionDetected("Dependency graph has a cycle") from None


def reachable(graph: nx.DiGraph, entry: str) -> List[str]:
    """The entry plus everything it (transitively) depends on."""
    return sorted({entry} | nx.descendants(graph, entry))


def substitute(program: Program, name: str, replacement: SubroutineDef) -> Program:
    """
    Replace a definition, or bind an oracle slot, returning a new Program.

    The replacement must have the same numbers of classical, qubit and subroutine
    parameters as the definition or slot it stands in for.
    """
    if name in program.subroutines:
        if replacement.signature() != program.subroutines[name].signature():
            raise ProgramError(f"Replacement for '{name}' has signature {replacement.signature()}, "
                               f"expected {program.subroutines[name].signature()}")
        subs = dict(program.subroutines)
        subs[name] = dataclasses.replace(replacement, name=name)
        return Program(subs, program.entry, program.oracles, program.bindings, validate=False)
    if name in program.slot_names():
        decl = program.oracles.get(name)
        if decl is not None and replacement.signature() != decl.signature():
            raise ProgramError(f"Replacement for slot '{name}' has signature {replacement.signature()}, "
                               f"expected {decl.signature()}")
        bindings = dict(program.bindings)
        bindings[name] = replacement
        return Program(program.subroutines, program.entry, program.oracles, bindings, validate=False)
    raise ProgramError(f"Unknown subroutine or slot '{name}'")


def compose(name: str, steps: Sequence[Tuple[str, VariantTag, Tuple[Expr, ...]]],
            template: SubroutineDef) -> SubroutineDef:
    """
    A subroutine that calls `steps` in order, each on all of the template's qubit
    arrays, with the template's parameters.

    Each step is (callee, variant, extra leading classical args).
    """
    qubit_args = tuple(QubitRef(p.name) for p in template.qubit_params)
    classical = tuple(Var(p.name) for p in template.classical_params)
    slots = tuple(p.name for p in template.slot_params)
    body = tuple(CallStmt(callee, variant, tuple(extra) + classical, slots, qubit_args)
                 for callee, variant, extra in steps)
    return SubroutineDef(name, template.params, body)


def check_scope(sub: SubroutineDef, program: Optional[Program] = None) -> List[str]:
    """
    Static name check: every referenced name must be a parameter, an implicit size,
    a loop index or an earlier assignment. Returns problems (empty when clean).
    """
    problems: List[str] = []
    arrays = {p.name for p in sub.qubit_params}
    slots = {p.name for p in sub.slot_params}
    scope = {p.name for p in sub.classical_params} | set(sub.implicit_size_names())

    def check_expr(expr, stmt, angle=False):
        for name in expr_names(expr):
            if name in scope or (angle and name == "pi"):
                continue
            if name in arrays and _is_len_arg(expr, name):
                continue
            problems.append(f"{sub.name}, line {getattr(stmt, 'line', 0)}: unbound name '{name}'")

    def check_ref(ref, stmt):
        if ref.array not in arrays:
            problems.append(f"{sub.name}, line {getattr(stmt, 'line', 0)}: unknown qubit array '{ref.array}'")
        check_expr(ref.index, stmt)
        check_expr(ref.upper, stmt)

    def visit(body):
        for stmt in body:
            if isinstance(stmt, GateApp):
                if stmt.gate not in GATE_ARITY:
                    problems.append(f"{sub.name}, line {stmt.line}: unknown gate '{stmt.gate}'")
                elif is_parametric(stmt.gate) != (stmt.angle is not None):
                    problems.append(f"{sub.name}, line {stmt.line}: gate '{stmt.gate}' angle mismatch")
                check_expr(stmt.angle, stmt, angle=True)
                for ref in stmt.controls + stmt.targets:
                    check_ref(ref, stmt)
            elif isinstance(stmt, CallStmt):
                for e in stmt.classical_args:
                    check_expr(e, stmt)
                for op in stmt.variant:
                    check_expr(op.power, stmt)
                for ref in stmt.qubit_args:
                    check_ref(ref, stmt)
                known = slots | (set(program.subroutines) | set(program.oracles) if program else set())
                for callee in (stmt.callee,) + stmt.sub_args:
                    if program is not None and callee not in known:
                        problems.append(f"{sub.name}, line {stmt.line}: unknown subroutine '{callee}'")
            elif isinstance(stmt, ForLoop):
                check_expr(stmt.lower, stmt)
                check_expr(stmt.upper, stmt)
                added = stmt.var not in scope
                scope.add(stmt.var)
                visit(stmt.body)
                if added:
                    scope.discard(stmt.var)
            elif isinstance(stmt, IfStmt):
                check_expr(stmt.condition, stmt)
                visit(stmt.then_body)
                visit(stmt.else_body)
            elif isinstance(stmt, MeasureStmt):
                for ref in stmt.refs:
                    check_ref(ref, stmt)
                scope.add(stmt.result)
            elif isinstance(stmt, ResetStmt):
                for ref in stmt.refs:
                    check_ref(ref, stmt)
            elif isinstance(stmt, AssignStmt):
                check_expr(stmt.expr, stmt)
                scope.add(stmt.name)

    visit(sub.body)
    return problems


def _is_len_arg(expr: Expr, name: str) -> bool:
    if isinstance(expr, FuncCall):
        if expr.func == "len" and expr.args == (Var(name),):
            return True
        return any(_is_len_arg(a, name) for a in expr.args)
    if isinstance(expr, BinOp):
        return _is_len_arg(expr.left, name) or _is_len_arg(expr.right, name)
    if isinstance(expr, UnOp):
        return _is_len_arg(expr.operand, name)
    return False
