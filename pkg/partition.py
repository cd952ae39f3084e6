"""
Input partitioning and test-case preparation.

Quantum input variables are partitioned by the CSP criterion (classical state,
superposition) or CSMP (classical, superposition, mixed); classical scale variables
by explicit boundary buckets; subroutine-typed variables by a choice of test doubles.
Classes of several variables are combined into test frames (ACoC, ECC, PWC, BCC) and
each frame is sampled into concrete, reproducible input bindings.
"""
import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pyparsing as pp
from pyparsing import Opt, Regex, StringEnd, Suppress, ZeroOrMore, one_of

from io_spec import IOMark, IOVar, VarKind
from program_model import (Const, GateApp, QubitParam, QubitRef, Statement, SubroutineDef, derive_inverse,
                           entry_layout)
from quantum_state import DensityMatrix, RandomStream, StateVector, dm_from_ensemble

DEFAULT_REPRESENTATIVE = 6


class PartitionError(ValueError):
    pass


class ClassKind(Enum):
    CLASSICAL = "C"
    SUPERPOSITION = "S"
    MIXED = "M"
    SCALE = "scale"
    DOUBLE = "double"
    CUSTOM = "custom"


class Strategy(Enum):
    ACOC = "ACoC"
    ECC = "ECC"
    PWC = "PWC"
    BCC = "BCC"


# ---------------------------------------------------------------------------
# Preparations
# ---------------------------------------------------------------------------

def _ref(array: str, qubit: int) -> Tuple[QubitRef]:
    return (QubitRef(array, Const(qubit)),)


class Preparation:
    """
    Describes how an input fragment is made. Pure preparations give their state
    directly and as a preparation circuit acting on |0...0>.
    """
    num_qubits: int = 0
    is_mixed = False

    def state(self) -> StateVector:
        raise NotImplementedError

    def statements(self, array: str = "qs", offset: int = 0) -> List[Statement]:
        raise NotImplementedError

    def circuit(self, name: str = "Prep") -> SubroutineDef:
        return SubroutineDef(name, (QubitParam("qs", Const(self.num_qubits)),), tuple(self.statements()))

    def uncompute(self, name: str = "Prep") -> SubroutineDef:
        """Inverse of the preparation circuit: maps the prepared state back to |0...0>."""
        return derive_inverse(self.circuit(name))

    def draw(self, rng: RandomStream) -> 'Preparation':
        """A pure component (the preparation itself unless it is mixed)."""
        return self

    def components(self) -> List[Tuple[float, 'Preparation']]:
        return [(1.0, self)]

    def density_matrix(self) -> DensityMatrix:
        return dm_from_ensemble([(w, p.state()) for w, p in self.components()])

    def describe(self) -> str:
        return repr(self)


@dataclass(frozen=True)
class ClassicalPrep(Preparation):
    x: int
    num_qubits: int

    def __post_init__(self):
        if self.num_qubits < 1 or not 0 <= self.x < 2 ** self.num_qubits:
            raise PartitionError(f"Basis value {self.x} does not fit in {self.num_qubits} qubit(s)")

    def bits(self) -> List[int]:
        return [(self.x >> (self.num_qubits - 1 - q)) & 1 for q in range(self.num_qubits)]

    def state(self) -> StateVector:
        return StateVector.basis(self.num_qubits, self.x)

    def statements(self, array="qs", offset=0):
        return [GateApp("X", None, (), _ref(array, offset + q)) for q, b in enumerate(self.bits()) if b]

    def describe(self):
        return f"|{format(self.x, f'0{self.num_qubits}b')}>"


@dataclass(frozen=True)
class UniformPrep(Preparation):
    num_qubits: int

    def state(self) -> StateVector:
        return prepare_uniform(self.num_qubits)

    def statements(self, array="qs", offset=0):
        return [GateApp("H", None, (), _ref(array, offset + q)) for q in range(self.num_qubits)]

    def describe(self):
        return f"uniform({self.num_qubits})"


@dataclass(frozen=True)
class TwoValuePrep(Preparation):
    """(|x> + e^{i theta}|y>)/sqrt(2)."""
    x: int
    y: int
    theta: float
    num_qubits: int

    def __post_init__(self):
        if self.x == self.y:
            raise PartitionError("Two-value superposition needs x != y")
        for v in (self.x, self.y):
            if not 0 <= v < 2 ** self.num_qubits:
                raise PartitionError(f"Value {v} does not fit in {self.num_qubits} qubit(s)")

    def state(self) -> StateVector:
        return prepare_two_value(self.x, self.y, self.theta, self.num_qubits)

    def statements(self, array="qs", offset=0):
        n = self.num_qubits
        xb = [(self.x >> (n - 1 - q)) & 1 for q in range(n)]
        yb = [(self.y >> (n - 1 - q)) & 1 for q in range(n)]
        differ = [q for q in range(n) if xb[q] != yb[q]]
        p = differ[0]
        stmts: List[Statement] = [GateApp("H", None, (), _ref(array, offset + p))]
        if self.theta != 0.0:
            angle = self.theta if xb[p] == 0 else -self.theta
            stmts.append(GateApp("R1", Const(angle), (), _ref(array, offset + p)))
        stmts += [GateApp("X", None, (), _ref(array, offset + q)) for q in range(n) if xb[q] == yb[q] == 1]
        for q in differ[1:]:
            stmts.append(GateApp("CNOT", None, (), _ref(array, offset + p) + _ref(array, offset + q)))
            if xb[q] != xb[p]:
                stmts.append(GateApp("X", None, (), _ref(array, offset + q)))
        return stmts

    def describe(self):
        n = self.num_qubits
        phase = f"e^(i{self.theta:.4g})" if self.theta else ""
        return f"(|{format(self.x, f'0{n}b')}> + {phase}|{format(self.y, f'0{n}b')}>)/sqrt2"


@dataclass(frozen=True)
class PhaseProductPrep(Preparation):
    """Product of (|0> + e^{i phi_q}|1>)/sqrt(2) over the qubits."""
    phases: Tuple[float, ...]

    @property
    def num_qubits(self):
        return len(self.phases)

    def state(self) -> StateVector:
        amps = np.array([1.0 + 0j])
        for phi in self.phases:
            amps = np.kron(amps, np.array([1, np.exp(1j * phi)]) / math.sqrt(2))
        return StateVector(amps, self.num_qubits, check=False)

    def statements(self, array="qs", offset=0):
        stmts: List[Statement] = []
        for q, phi in enumerate(self.phases):
            stmts.append(GateApp("H", None, (), _ref(array, offset + q)))
            if phi != 0.0:
                stmts.append(GateApp("R1", Const(float(phi)), (), _ref(array, offset + q)))
        return stmts


@dataclass(frozen=True)
class ProductPrep(Preparation):
    """Tensor product of preparations, first part on the leading qubits."""
    parts: Tuple[Preparation, ...]

    @property
    def num_qubits(self):
        return sum(p.num_qubits for p in self.parts)

    @property
    def is_mixed(self):
        return any(p.is_mixed for p in self.parts)

    def state(self) -> StateVector:
        if self.is_mixed:
            raise PartitionError("A mixed preparation has no single state")
        state = self.parts[0].state()
        for part in self.parts[1:]:
            state = state.tensor(part.state())
        return state

    def statements(self, array="qs", offset=0):
        stmts: List[Statement] = []
        for part in self.parts:
            stmts += part.statements(array, offset)
            offset += part.num_qubits
        return stmts

    def draw(self, rng):
        if not self.is_mixed:
            return self
        return ProductPrep(tuple(p.draw(rng.child(i)) for i, p in enumerate(self.parts)))

    def components(self):
        result = [(1.0, ())]
        for part in self.parts:
            result = [(w * v, acc + (p,)) for w, acc in result for v, p in part.components()]
        return [(w, ProductPrep(parts)) for w, parts in result]

    def describe(self):
        return " (x) ".join(p.describe() for p in self.parts)


@dataclass(frozen=True)
class EnsemblePrep(Preparation):
    """Mixed input: the pure preparation `parts[i][1]` with probability `parts[i][0]`."""
    parts: Tuple[Tuple[float, Preparation], ...]
    is_mixed = True

    def __post_init__(self):
        if abs(sum(w for w, _ in self.parts) - 1.0) > 1e-9:
            raise PartitionError("Ensemble weights must sum to 1")

    @property
    def num_qubits(self):
        return self.parts[0][1].num_qubits

    def state(self) -> StateVector:
        raise PartitionError("A mixed preparation has no single state")

    def statements(self, array="qs", offset=0):
        raise PartitionError("A mixed preparation has no unitary circuit")

    def draw(self, rng):
        r = rng.random()
        total = 0.0
        for weight, prep in self.parts:
            total += weight
            if r < total:
                return prep
        return self.parts[-1][1]

    def components(self):
        return list(self.parts)

    def describe(self):
        return " + ".join(f"{w:.3f}*{p.describe()}" for w, p in self.parts)


def prepare_classical(x: int, n: int) -> StateVector:
    return ClassicalPrep(x, n).state()


def prepare_uniform(n: int) -> StateVector:
    if n < 1:
        raise PartitionError("Uniform superposition needs at least one qubit")
    return StateVector(np.full(2 ** n, 2 ** (-n / 2), dtype=complex), n, check=False)


def prepare_two_value(x: int, y: int, theta: float, n: int) -> StateVector:
    TwoValuePrep(x, y, theta, n)
    amps = np.zeros(2 ** n, dtype=complex)
    amps[x] = 1 / math.sqrt(2)
    amps[y] = np.exp(1j * theta) / math.sqrt(2)
    return StateVector(amps, n, check=False)


# ---------------------------------------------------------------------------
# Classes and frames
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Double:
    """
    A test double for a subroutine-typed variable. `factory(n, rng)` returns the
    definition to bind and information about it (e.g. the marked element).
    """
    label: str
    factory: Callable[[int, RandomStream], Tuple[SubroutineDef, Dict]] = field(compare=False)
    description: str = ""

    @staticmethod
    def fixed(label: str, definition: SubroutineDef, description: str = "") -> 'Double':
        return Double(label, lambda n, rng: (definition, {}), description or definition.name)

    def instantiate(self, n: int, rng: RandomStream) -> Tuple[SubroutineDef, Dict]:
        return self.factory(n, rng)


@dataclass(frozen=True)
class EquivalenceClass:
    variable: str
    kind: ClassKind
    label: str
    representative: Optional[int] = None
    lo: Optional[int] = None
    hi: Optional[int] = None
    double: Optional[Double] = None
    sampler: Optional[Callable[[int, RandomStream], Preparation]] = field(default=None, compare=False)

    def contains(self, value: int) -> bool:
        return (self.lo is None or value >= self.lo) and (self.hi is None or value <= self.hi)

    @property
    def display(self) -> str:
        if self.kind == ClassKind.SCALE and self.label[0] in "<>":
            return f"{self.variable}{self.label}"
        return f"{self.variable}={self.label}"


@dataclass(frozen=True)
class TestFrame:
    """One equivalence class per input variable."""
    classes: Tuple[EquivalenceClass, ...]

    __test__ = False

    @property
    def label(self) -> str:
        return ",".join(c.display for c in self.classes)

    def get(self, variable: str) -> Optional[EquivalenceClass]:
        for c in self.classes:
            if c.variable == variable:
                return c
        return None

    def variables(self) -> List[str]:
        return [c.variable for c in self.classes]

    def quantum_kind(self) -> Optional[ClassKind]:
        """The combined C/S/M character of the quantum inputs (mixed dominates)."""
        kinds = {c.kind for c in self.classes if c.kind in (ClassKind.CLASSICAL, ClassKind.SUPERPOSITION,
                                                              ClassKind.MIXED)}
        for kind in (ClassKind.MIXED, ClassKind.SUPERPOSITION, ClassKind.CLASSICAL):
            if kind in kinds:
                return kind
        return None


def _bucket_grammar():
    integer = Regex(r"-?\d+").set_parse_action(lambda s, loc, t: int(t[0]))
    ranged = (integer + Suppress("..") + integer).set_parse_action(lambda s, loc, t: ("..", t[0], t[1]))
    compared = (one_of(">= <= > <") + integer).set_parse_action(lambda s, loc, t: (t[0], t[1]))
    exact = integer.copy().set_parse_action(lambda s, loc, t: ("=", int(t[0])))
    rep = Opt(Suppress(pp.Keyword("rep")) + integer, default=None)
    bucket = pp.Group((ranged | compared | exact) + rep)
    return bucket + ZeroOrMore(Suppress("|") + bucket) + StringEnd()


_BUCKETS = _bucket_grammar()


def parse_buckets(variable: str, text: str,
                  default_representative: int = DEFAULT_REPRESENTATIVE) -> List[EquivalenceClass]:
    """
    Scale classes from bucket text such as "1 | 2 | >=3 rep 6". Unbounded buckets
    use the default representative when it lies inside them, else their bound.
    """
    try:
        groups = _BUCKETS.parse_string(text, parse_all=True)
    except pp.ParseBaseException as e:
        raise PartitionError(f"Bad bucket list '{text}' at column {e.col}: {e.msg}") from None
    classes = []
    for group in groups:
        shape, rep = group[0], group[1]
        if shape[0] == "=":
            lo = hi = shape[1]
            label = str(lo)
        elif shape[0] == "..":
            lo, hi = shape[1], shape[2]
            label = f"{lo}..{hi}"
        else:
            op, bound = shape
            lo, hi = {">=": (bound, None), ">": (bound + 1, None),
                      "<=": (None, bound), "<": (None, bound - 1)}[op]
            label = f"{op}{bound}"
        if rep is None:
            if lo is not None and hi is not None:
                rep = lo
            elif lo is not None:
                rep = default_representative if default_representative >= lo else lo
            else:
                rep = min(hi, default_representative) if hi >= 1 else hi
        cls = EquivalenceClass(variable, ClassKind.SCALE, label, rep, lo, hi)
        if not cls.contains(rep):
            raise PartitionError(f"Representative {rep} lies outside bucket {label} of {variable}")
        classes.append(cls)
    return classes


def partition_variable(var: IOVar, criterion: Optional[str] = None,
                       buckets: Optional[Union[str, Sequence[EquivalenceClass]]] = None,
                       doubles: Optional[Sequence[Double]] = None,
                       custom: Optional[Sequence[EquivalenceClass]] = None,
                       supports_mixed: bool = True) -> List[EquivalenceClass]:
    """
    Equivalence classes for one input variable.

    Args:
        var: The IO-mark variable
        criterion: "CSP" or "CSMP" for quantum data (or for doubles labelled C/S/M)
        buckets: Scale buckets for a classical variable (text or classes)
        doubles: Test doubles for a subroutine-typed variable
        custom: A hand-written class list, used as given
        supports_mixed: Whether the harness path can carry a mixed input
    """
    if custom:
        return list(custom)
    if var.kind == VarKind.CLASSICAL:
        if buckets is None:
            raise PartitionError(f"Classical variable '{var.name}' needs scale buckets")
        if isinstance(buckets, str):
            return parse_buckets(var.name, buckets)
        return list(buckets)
    if var.kind == VarKind.QUANTUM:
        if criterion == "CSP":
            kinds = [ClassKind.CLASSICAL, ClassKind.SUPERPOSITION]
        elif criterion == "CSMP":
            if not supports_mixed:
                raise PartitionError(f"Variable '{var.name}' cannot carry a mixed state; use CSP")
            kinds = [ClassKind.CLASSICAL, ClassKind.SUPERPOSITION, ClassKind.MIXED]
        else:
            raise PartitionError(f"Unknown criterion '{criterion}' for quantum variable '{var.name}'")
        return [EquivalenceClass(var.name, k, k.value) for k in kinds]
    # subroutine-typed
    if not doubles:
        raise PartitionError(f"Subroutine variable '{var.name}' needs at least one test double")
    chosen = list(doubles)
    if criterion is not None:
        wanted = {"CSP": ["C", "S"], "CSMP": ["C", "S", "M"]}.get(criterion)
        if wanted is None:
            raise PartitionError(f"Unknown criterion '{criterion}'")
        by_label = {d.label: d for d in doubles}
        missing = [w for w in wanted if w not in by_label]
        if missing:
            raise PartitionError(f"No double labelled {missing} for '{var.name}' under {criterion}")
        chosen = [by_label[w] for w in wanted]
    return [EquivalenceClass(var.name, ClassKind.DOUBLE, d.label, double=d) for d in chosen]


# ---------------------------------------------------------------------------
# Combination strategies
# ---------------------------------------------------------------------------

Factor = Sequence[Union[EquivalenceClass, TestFrame]]


def _choices(factor: Factor) -> List[Tuple[EquivalenceClass, ...]]:
    if not factor:
        raise PartitionError("Cannot combine an empty class list")
    return [c.classes if isinstance(c, TestFrame) else (c,) for c in factor]


def _frame(parts: Sequence[Tuple[EquivalenceClass, ...]]) -> TestFrame:
    classes = tuple(c for part in parts for c in part)
    names = [c.variable for c in classes]
    if len(names) != len(set(names)):
        raise PartitionError(f"Variables combined twice: {names}")
    return TestFrame(classes)


def _pairwise(sizes: List[int]) -> List[Tuple[int, ...]]:
    """Greedy pairwise covering array over factor indices; deterministic."""
    factors = list(range(len(sizes)))
    uncovered = set()
    for a, b in itertools.combinations(factors, 2):
        for va, vb in itertools.product(range(sizes[a]), range(sizes[b])):
            uncovered.add(frozenset([(a, va), (b, vb)]))

    def covered_by(case: Dict[int, int]):
        return {frozenset([(a, case[a]), (b, case[b])])
                for a, b in itertools.combinations(sorted(case), 2)}

    suite = []
    first = {f: 0 for f in factors}
    suite.append(first)
    uncovered -= covered_by(first)
    while uncovered:
        seed_pair = dict(sorted(uncovered, key=lambda pair: sorted(pair))[0])
        case = dict(seed_pair)
        for f in factors:
            if f in case:
                continue
            best_value, best_gain = 0, -1
            for value in range(sizes[f]):
                gain = len(covered_by({**case, f: value}) & uncovered)
                if gain > best_gain:
                    best_value, best_gain = value, gain
            case[f] = best_value
        suite.append(case)
        uncovered -= covered_by(case)
    return [tuple(case[f] for f in factors) for case in suite]


def combine(factors: Sequence[Factor], strategy: Union[str, Strategy] = Strategy.ACOC,
            base_frame: Optional[TestFrame] = None) -> List[TestFrame]:
    """
    Combine per-variable class lists (or lists of already-combined frames) into
    test frames.

    ACoC takes the full product; ECC makes each class appear at least once; PWC covers
    every pair of classes across two factors; BCC varies one factor at a time around
    a base frame.
    """
    strategy = Strategy(strategy) if isinstance(strategy, str) else strategy
    choices = [_choices(f) for f in factors]
    if not choices:
        raise PartitionError("Nothing to combine")
    sizes = [len(c) for c in choices]

    if strategy == Strategy.ACOC:
        picks = list(itertools.product(*[range(s) for s in sizes]))
    elif strategy == Strategy.ECC:
        picks = [tuple(i % s for s in sizes) for i in range(max(sizes))]
    elif strategy == Strategy.PWC:
        picks = _pairwise(sizes) if len(sizes) > 1 else [(i,) for i in range(sizes[0])]
    else:
        if base_frame is None:
            raise PartitionError("BCC needs a base frame")
        base = []
        for options in choices:
            match = [i for i, opt in enumerate(options) if all(c in base_frame.classes for c in opt)]
            if not match:
                raise PartitionError(f"Base frame {base_frame.label} does not pick from every factor")
            base.append(match[0])
        picks = [tuple(base)]
        for f, options in enumerate(choices):
            for i in range(len(options)):
                if i != base[f]:
                    variant = list(base)
                    variant[f] = i
                    picks.append(tuple(variant))
    return [_frame([choices[f][i] for f, i in enumerate(pick)]) for pick in picks]


def frame_from_labels(factors: Sequence[Factor], labels: Sequence[str]) -> TestFrame:
    """Pick, from each factor, the class whose display label is listed (for BCC bases)."""
    parts = []
    wanted = set(labels)
    for options in (_choices(f) for f in factors):
        match = [opt for opt in options if {c.display for c in opt} <= wanted]
        if not match:
            raise PartitionError(f"No class among {sorted(wanted)} for one of the factors")
        parts.append(match[0])
    return _frame(parts)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

@dataclass
class InputBinding:
    """Concrete inputs for one test case."""
    frame: TestFrame
    index: int
    classical: Dict[str, int]
    quantum: Dict[str, Preparation]
    doubles: Dict[str, SubroutineDef] = field(default_factory=dict)
    info: Dict[str, object] = field(default_factory=dict)
    scale: int = 1

    @property
    def id(self) -> str:
        return f"{self.frame.label}#{self.index}"

    @property
    def is_mixed(self) -> bool:
        return any(p.is_mixed for p in self.quantum.values())

    def describe(self) -> str:
        values = [f"{k}={v}" for k, v in self.classical.items()]
        values += [f"{k}={p.describe()}" for k, p in self.quantum.items()]
        values += [f"{k}={d.name}" for k, d in self.doubles.items()]
        return ", ".join(values)


def default_case_count(n: int) -> int:
    return 2 * n * n


def _draw_preparation(cls: EquivalenceClass, size: int, rng: RandomStream, theta: float) -> Preparation:
    if size < 1:
        raise PartitionError(f"Variable '{cls.variable}' has no qubits to prepare")
    if cls.kind == ClassKind.CLASSICAL:
        return ClassicalPrep(rng.integers(2 ** size), size)
    if cls.kind in (ClassKind.SUPERPOSITION, ClassKind.MIXED):
        x, y = rng.sample(list(range(2 ** size)), 2)
        if cls.kind == ClassKind.SUPERPOSITION:
            return TwoValuePrep(x, y, theta, size)
        w = 0.25 + 0.5 * rng.random()
        return EnsemblePrep(((w, ClassicalPrep(x, size)), (1 - w, ClassicalPrep(y, size))))
    if cls.kind == ClassKind.CUSTOM:
        if cls.sampler is None:
            raise PartitionError(f"Custom class {cls.label} of '{cls.variable}' has no sampler")
        return cls.sampler(size, rng)
    raise PartitionError(f"Class {cls.label} of '{cls.variable}' is not a quantum class")


def sample_cases(frame: TestFrame, mark: IOMark, sub: SubroutineDef, rng: RandomStream,
                 count: Optional[Union[int, Callable[[int], int]]] = None, theta: float = 0.0,
                 fixed: Optional[Dict[str, int]] = None) -> List[InputBinding]:
    """
    Draw concrete input bindings for a frame.

    Scale variables take their class representative; the first one is the scale n of
    the default 2n^2 case count. Every case draws from its own substream of `rng`, so
    sampling is reproducible and independent of the other frames.

    Args:
        frame: The test frame
        mark: IO mark of the subroutine under test
        sub: The subroutine (its parameters give each array's length)
        rng: Random stream for this suite
        count: Number of cases, or a rule n -> count (default 2n^2)
        theta: Relative phase of two-value superpositions
        fixed: Values of classical parameters that are not test inputs
    """
    for var in mark.inputs:
        if frame.get(var.name) is None:
            raise PartitionError(f"Frame {frame.label} does not cover input '{var.name}'")
    classical = dict(fixed or {})
    scale_values = []
    for cls in frame.classes:
        if cls.kind == ClassKind.SCALE:
            classical[cls.variable] = cls.representative
            scale_values.append(cls.representative)
    n = scale_values[0] if scale_values else 1
    if count is None:
        total = default_case_count(n)
    elif callable(count):
        total = count(n)
    else:
        total = int(count)

    try:
        layout = entry_layout(sub, classical)
    except ValueError as e:
        raise PartitionError(f"Frame {frame.label}: cannot size the registers of {sub.name}: {e}") from None

    cases = []
    for i in range(total):
        stream = rng.child(frame.label, i)
        quantum: Dict[str, Preparation] = {}
        doubles: Dict[str, SubroutineDef] = {}
        info: Dict[str, object] = {}
        for var in mark.inputs:
            cls = frame.get(var.name)
            if var.kind == VarKind.QUANTUM:
                quantum[var.name] = _draw_preparation(cls, len(layout[var.name]), stream.child(var.name), theta)
            elif var.kind == VarKind.SUBROUTINE:
                if cls.double is None:
                    raise PartitionError(f"Class {cls.label} of '{var.name}' carries no test double")
                definition, details = cls.double.instantiate(n, stream.child(var.name))
                doubles[var.name] = definition
                info.update(details)
        cases.append(InputBinding(frame, i, dict(classical), quantum, doubles, info, n))
    return cases
