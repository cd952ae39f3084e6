"""
Shipped benchmark programs with their IO marks, specifications and test doubles.

Each entry names the QPL-mini sources it needs, the subroutine under test and how
expected outputs are described. Expected outputs of basis inputs are given as
"monomial" maps j -> (index, phase), which also give the preparation of the
expected output of classical and two-value inputs for transform-based detection.
"""
import cmath
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from io_spec import (ClassicalPredicate, IdentitySpec, IOMark, MarkedOutcome, ProgramSpec, UnitaryFormula,
                     parse_io_mark)
from partition import (ClassicalPrep, ClassKind, Double, EquivalenceClass, PhaseProductPrep, Preparation, ProductPrep,
                       TwoValuePrep)
from program_model import BASE, Program, SubroutineDef, compose
from qpl_parser import load_program, parse_subroutine
from quantum_state import RandomStream, StateVector, probability_of

ROOT = Path(__file__).parent
PROGRAMS = ROOT / "programs"
PLANS = ROOT / "plans"

# j -> (image index, phase) for a register of `width` qubits at scale n
MonomialMap = Callable[[int, int, int], Tuple[int, float]]


def mirror(j: int, width: int) -> int:
    return int(format(j, f"0{width}b")[::-1], 2) if width else 0


def monomial_column(fn: MonomialMap, width: Callable[[int], int]) -> Callable[[int, int], StateVector]:
    def column(n: int, j: int) -> StateVector:
        w = width(n)
        index, phase = fn(n, j, w)
        amps = np.zeros(2 ** w, dtype=complex)
        amps[index] = cmath.exp(1j * phase)
        return StateVector(amps, w, check=False)
    return column


MAX_PERMUTATION_QUBITS = 14


def _qubit_permutation(fn: MonomialMap, n: int, width: int) -> Optional[List[int]]:
    """Image position of each qubit when fn moves qubits without phases, else None."""
    if width > MAX_PERMUTATION_QUBITS:
        return None
    image = []
    for q in range(width):
        index, _ = fn(n, 1 << (width - 1 - q), width)
        if index <= 0 or index & (index - 1):
            return None
        image.append(width - index.bit_length())
    if sorted(image) != list(range(width)):
        return None
    for j in range(2 ** width):
        index, phase = fn(n, j, width)
        moved = sum(1 << (width - 1 - image[q]) for q in range(width) if (j >> (width - 1 - q)) & 1)
        if index != moved or abs(phase) > 1e-12:
            return None
    return image


def _moved_parts(fn: MonomialMap, n: int, prep: ProductPrep) -> Optional[Preparation]:
    image = _qubit_permutation(fn, n, prep.num_qubits)
    if image is None:
        return None
    placed = []
    start = 0
    for part in prep.parts:
        block = image[start:start + part.num_qubits]
        if block != list(range(block[0], block[0] + len(block))):
            return None
        placed.append((block[0], part))
        start += part.num_qubits
    parts = tuple(part for _, part in sorted(placed, key=lambda item: item[0]))
    return parts[0] if len(parts) == 1 else ProductPrep(parts)


def monomial_transform(fn: MonomialMap) -> Callable[[int, Preparation], Optional[Preparation]]:
    """
    Expected-output preparation for inputs with one basis component, or two of equal
    weight. A product input whose map only moves whole parts to other qubits keeps
    its parts, reordered. None for anything else.
    """
    def transform(n: int, prep: Preparation) -> Optional[Preparation]:
        if isinstance(prep, ProductPrep) and len(prep.parts) > 1 and all(p.num_qubits for p in prep.parts):
            moved = _moved_parts(fn, n, prep)
            if moved is not None:
                return moved
        state = prep.state()
        width = state.num_qubits
        support = state.nonzero_indices()
        if len(support) == 1:
            index, _ = fn(n, support[0], width)
            return ClassicalPrep(index, width)
        if len(support) != 2:
            return None
        x, y = support
        ax, ay = state.amplitudes[x], state.amplitudes[y]
        if abs(abs(ax) - abs(ay)) > 1e-9:
            return None
        (x2, px), (y2, py) = fn(n, x, width), fn(n, y, width)
        theta = cmath.phase(ay / ax) + py - px
        theta = math.remainder(theta, 2 * math.pi)
        if abs(theta) < 1e-12:
            theta = 0.0
        return TwoValuePrep(x2, y2, theta, width)
    return transform


def qft_phases(j: int, n: int) -> Tuple[float, ...]:
    """Per-qubit phases of QFT|j>: qubit q carries 2 pi j / 2^(q+1)."""
    return tuple(2 * math.pi * j / 2 ** (q + 1) for q in range(n))


def qft_column(n: int, j: int) -> StateVector:
    dim = 2 ** n
    return StateVector([cmath.exp(2j * math.pi * j * k / dim) / math.sqrt(dim) for k in range(dim)], n)


def qft_transform(n: int, prep: Preparation) -> Optional[Preparation]:
    support = prep.state().nonzero_indices()
    if len(support) != 1:
        return None
    return PhaseProductPrep(qft_phases(support[0], prep.num_qubits))


def grover_iterations(n: int) -> int:
    """floor(pi/4 * sqrt(2^n)), computed exactly as grover.qpl does."""
    return math.isqrt(10000 * 2 ** n) * 7854 // 1000000


def grover_success(n: int, iterations: Optional[int] = None) -> float:
    """Probability of reading the marked element after the given number of iterations."""
    r = grover_iterations(n) if iterations is None else iterations
    theta = math.asin(2 ** (-n / 2))
    return math.sin((2 * r + 1) * theta) ** 2


# ---------------------------------------------------------------------------
# Test doubles
# ---------------------------------------------------------------------------

def phase_oracle(name: str, n: int, marked: int) -> SubroutineDef:
    """Phase flip of |marked> on an n-qubit register."""
    flips = "".join(f" X qs[{q}];" for q in range(n) if not (marked >> (n - 1 - q)) & 1)
    return parse_subroutine(f"sub {name}(qubits qs[n]) {{{flips} ctl(qs[0..n-2]) Z qs[n-1];{flips} }}")


def oracle_k_double() -> Double:
    def factory(n: int, rng: RandomStream):
        k = rng.integers(2 ** n)
        return phase_oracle(f"OracleK_{k}", n, k), {"K": k}
    return Double("Uf", factory, "phase flip of a random element K")


def upower_double(clock_bits: int) -> Double:
    """R1 powers on target[0]: eigenphase a / 2^clock_bits on |1>, exactly representable."""
    def factory(n: int, rng: RandomStream):
        a = rng.integers(2 ** clock_bits)
        sub = parse_subroutine(f"sub Upower_{a}(int power, qubits target[m]) "
                               f"{{ R1(2 * pi * power * {a} / 2^{clock_bits}) target[0]; }}")
        return sub, {"a": a}
    return Double("R1", factory, "R1 powers with a random exact phase")


def _pivot_statements(x: int, y: int, n: int, angle_gate: str, angle: Optional[float]) -> str:
    xb = [(x >> (n - 1 - q)) & 1 for q in range(n)]
    yb = [(y >> (n - 1 - q)) & 1 for q in range(n)]
    differ = [q for q in range(n) if xb[q] != yb[q]]
    p = differ[0]
    text = f" {angle_gate}({angle!r}) q[{p}];" if angle is not None else f" {angle_gate} q[{p}];"
    text += "".join(f" X q[{q}];" for q in range(n) if xb[q] == yb[q] == 1)
    for q in differ[1:]:
        text += f" CNOT q[{p}], q[{q}];"
        if xb[q] != xb[p]:
            text += f" X q[{q}];"
    return text


def gen_rho_doubles() -> List[Double]:
    """
    State generators for the purity benchmark: a random basis state (C), a random
    two-value superposition (S), and a measured superposition giving the mixture
    w|x><x| + (1-w)|y><y| with w in [0.25, 0.75] (M).
    """
    def classical(n, rng):
        x = rng.integers(2 ** n)
        body = "".join(f" X q[{q}];" for q in range(n) if (x >> (n - 1 - q)) & 1)
        return parse_subroutine(f"sub GenRho_C(qubits q[n]) {{{body} }}"), {"pure": True, "mix": 0.0}

    def superposition(n, rng):
        x, y = rng.sample(list(range(2 ** n)), 2)
        body = _pivot_statements(x, y, n, "H", None)
        return parse_subroutine(f"sub GenRho_S(qubits q[n]) {{{body} }}"), {"pure": True, "mix": 0.0}

    def mixed(n, rng):
        x, y = rng.sample(list(range(2 ** n)), 2)
        w = 0.25 + 0.5 * rng.random()
        pivot = [q for q in range(n) if ((x ^ y) >> (n - 1 - q)) & 1][0]
        x_on_one = (x >> (n - 1 - pivot)) & 1
        angle = 2 * (math.asin(math.sqrt(w)) if x_on_one else math.acos(math.sqrt(w)))
        body = _pivot_statements(x, y, n, "RY", angle) + " m = measure q;"
        return parse_subroutine(f"sub GenRho_M(qubits q[n]) {{{body} }}"), {"pure": False, "mix": w * (1 - w)}

    return [Double("C", classical, "random basis state"),
            Double("S", superposition, "random two-value superposition"),
            Double("M", mixed, "measured superposition (mixed)")]


def memory_oracle_double() -> SubroutineDef:
    """Stand-in for PO: flips the phase of address 101 without touching the memory cell."""
    return parse_subroutine("sub Uf(qubits addr[3], qubits cell[1]) { X addr[1]; ctl(addr[0..1]) Z addr[2]; "
                            "X addr[1]; }")


def builtin_doubles() -> Dict[str, SubroutineDef]:
    """Fixed doubles that plans can substitute by name."""
    return {"Uf": memory_oracle_double()}


# ---------------------------------------------------------------------------
# Custom input classes
# ---------------------------------------------------------------------------

def phase_flip_classes(variable: str = "qs") -> List[EquivalenceClass]:
    """
    Finer input classes for PhaseFlip: |0>, a nonzero basis state, a superposition of
    |0> with a nonzero state, and a superposition of two nonzero states.
    """
    def zero(size, rng):
        return ClassicalPrep(0, size)

    def nonzero(size, rng):
        return ClassicalPrep(rng.integers(1, 2 ** size), size)

    def with_zero(size, rng):
        return TwoValuePrep(0, rng.integers(1, 2 ** size), 0.0, size)

    def both_nonzero(size, rng):
        x, y = rng.sample(list(range(1, 2 ** size)), 2)
        return TwoValuePrep(x, y, 0.0, size)

    return [EquivalenceClass(variable, ClassKind.CUSTOM, label, sampler=fn)
            for label, fn in (("Z", zero), ("NZ", nonzero), ("SZ", with_zero), ("SNN", both_nonzero))]


def qpe_target_eigen(variable: str = "target") -> List[EquivalenceClass]:
    def eigen(size, rng):
        return ClassicalPrep(2 ** size - 1, size)
    return [EquivalenceClass(variable, ClassKind.CUSTOM, "E", sampler=eigen)]


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------

@dataclass
class BenchmarkEntry:
    """
    A benchmark: program sources, the subroutine under test, its IO mark and spec.

    `composite` builds the subroutine under test from program subroutines (used for
    identity-composition suites); `mutation_target` is the subroutine mutants edit.
    """
    name: str
    sources: Tuple[str, ...]
    subroutine: str
    mark: str
    spec: ProgramSpec
    description: str = ""
    doubles: Dict[str, List[Double]] = field(default_factory=dict)
    custom_classes: Dict[str, List[EquivalenceClass]] = field(default_factory=dict)
    composite: Optional[Tuple[str, Sequence]] = None
    mutation_target: Optional[str] = None
    plan: Optional[str] = None

    def load(self) -> Program:
        program = load_program(*(PROGRAMS / s for s in self.sources))
        if self.composite is not None:
            template_name, steps = self.composite
            program = program.with_subroutines(compose(self.subroutine, steps, program.get(template_name)))
        program.entry = self.subroutine
        return program

    def io_mark(self) -> IOMark:
        return parse_io_mark(self.mark)

    @property
    def target(self) -> str:
        return self.mutation_target or self.subroutine

    @property
    def plan_path(self) -> Path:
        return PLANS / (self.plan or f"{self.name.lower()}.plan")


def _reverse_map(n, j, width):
    return mirror(j, width), 0.0


def _multiswap_map(n, j, width):
    half = width // 2
    high, low = j >> half, j & (2 ** half - 1)
    return (low << half) | high, 0.0


def _phase_flip_map(n, j, width):
    return j, (math.pi if j > 0 else 0.0)


def _crk_map(k, j, width):
    return j, (2 * math.pi / 2 ** k if j == 3 else 0.0)


def _po_map(n, j, width):
    addr, cell = j >> 1, j & 1
    return j, (math.pi if (addr == 5) != (cell == 1) else 0.0)


def _qpe_probability(n: int, binding) -> float:
    if binding.info.get("a", 0) == 0:
        return 1.0
    target = binding.quantum.get("target")
    if target is None:
        return 0.0
    if target.is_mixed:
        return sum(w * probability_of(p.state(), [0], 1) for w, p in target.components())
    return probability_of(target.state(), [0], 1)


def _purity_frequency(binding) -> Optional[float]:
    if binding.info.get("pure", True):
        return None
    return 1 - (1 - binding.info["mix"]) ** binding.classical["t"]


def _purity_predicate(results, binding) -> bool:
    return results.get("isPure") == (1 if binding.info.get("pure", True) else 0)


def builtin_benchmarks() -> List[BenchmarkEntry]:
    reverse_spec = UnitaryFormula(monomial_column(_reverse_map, lambda n: n), "reverse",
                                  monomial_transform(_reverse_map))
    return [
        BenchmarkEntry("Reverse", ("reverse.qpl",), "Reverse", "Reverse : (n, *qs*) -> (*qs'*)",
                       reverse_spec, "|j1...jn> -> |jn...j1>"),
        BenchmarkEntry("MultiSWAP", ("multiswap.qpl",), "MultiSWAP",
                       "MultiSWAP : (n, *qs1*, *qs2*) -> (*qs1'*, *qs2'*)",
                       UnitaryFormula(monomial_column(_multiswap_map, lambda n: 2 * n), "multiswap",
                                      monomial_transform(_multiswap_map)),
                       "|phi>|psi> -> |psi>|phi>"),
        BenchmarkEntry("CRk", ("qft.qpl", "reverse.qpl"), "CRk", "CRk : (k, *c*, *t*) -> (*c'*, *t'*)",
                       UnitaryFormula(monomial_column(_crk_map, lambda k: 2), "controlled R1(2 pi / 2^k)",
                                      monomial_transform(_crk_map)),
                       "controlled phase rotation"),
        BenchmarkEntry("QFT", ("qft.qpl", "reverse.qpl"), "QFT", "QFT : (n, *qs*) -> (*qs'*)",
                       UnitaryFormula(qft_column, "qft", qft_transform), "quantum Fourier transform"),
        BenchmarkEntry("invQFT", ("qft.qpl", "reverse.qpl"), "QFTRoundTrip",
                       "QFTRoundTrip : (n, *qs*) -> (*qs'*)", IdentitySpec("QFT;invQFT = I"),
                       "hand-written inverse QFT, checked by composition with QFT",
                       composite=("QFT", [("QFT", BASE, ()), ("invQFT", BASE, ())]), mutation_target="invQFT"),
        BenchmarkEntry("PhaseFlip", ("phaseflip.qpl",), "PhaseFlip", "PhaseFlip : (n, *qs*) -> (*qs'*)",
                       UnitaryFormula(monomial_column(_phase_flip_map, lambda n: n), "phase flip",
                                      monomial_transform(_phase_flip_map)),
                       "|x> -> -|x> for x > 0", custom_classes={"qs": phase_flip_classes()}),
        BenchmarkEntry("Grover", ("phaseflip.qpl", "grover.qpl"), "Grover", "Grover : (n, _OracleK_) -> (*qs'*)",
                       MarkedOutcome(lambda b: b.info["K"], lambda n, b: grover_success(n), "qs",
                                     "reads K with the analytic success probability"),
                       "|0> -> approximately |K>", doubles={"OracleK": [oracle_k_double()]}),
        BenchmarkEntry("Purity", ("multiswap.qpl", "purity.qpl"), "Purity", "Purity : (n, t, _GenRho_) -> (isPure')",
                       ClassicalPredicate(_purity_predicate, _purity_frequency, "isPure"),
                       "TRUE iff the generated state is pure", doubles={"GenRho": gen_rho_doubles()}),
        BenchmarkEntry("QPE", ("qft.qpl", "reverse.qpl", "qpe.qpl"), "QPE",
                       "QPE : (Nclock, Ntarget, _Upower_, *target*) -> (*clock'*)",
                       MarkedOutcome(lambda b: b.info["a"], _qpe_probability, "clock", "reads the eigenphase"),
                       "phase estimation with controlled Upower powers and inverse QFT",
                       doubles={"Upower": [upower_double(3)]}, custom_classes={"target": qpe_target_eigen()}),
        BenchmarkEntry("PO", ("phaseflip.qpl", "memsearch.qpl"), "PO", "PO : (*addr*, *cell*) -> (*addr'*, *cell'*)",
                       UnitaryFormula(monomial_column(_po_map, lambda n: 4), "memory oracle",
                                      monomial_transform(_po_map)),
                       "phase flip of the searched memory cell"),
        BenchmarkEntry("GS", ("phaseflip.qpl", "memsearch.qpl"), "GS", "GS : () -> (*addr'*)",
                       MarkedOutcome(lambda b: 5, lambda n, b: grover_success(3, 2), "addr",
                                     "reads address 101"),
                       "memory search calling PO"),
    ]


def get_benchmark(name: str) -> BenchmarkEntry:
    for entry in builtin_benchmarks():
        if entry.name == name:
            return entry
    raise KeyError(f"Unknown benchmark '{name}'")
