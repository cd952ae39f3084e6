"""
Desk-scale Quantum State Simulator
Pure-state (statevector) and mixed-state (density matrix) simulation used by the
qprobe testing framework.

Conventions:
1. Qubit 0 is the most significant bit of a basis index: index k = j1 j2 ... jn
   assigns qubit 0 to j1. A StateVector reshaped to [2] * n therefore has axis i
   for qubit i.
2. At most MAX_QUBITS qubits per register.
3. Every random draw goes through an explicit RandomStream. Streams are derived
   from a master seed plus a label path, so results do not depend on the order in
   which independent streams are consumed.
"""
import cmath
import hashlib
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np


MAX_QUBITS = 14
UNITARY_TOL = 1e-12
NORM_TOL = 1e-9
DM_TOL = 1e-8
JACOBI_THRESHOLD = 1e-10
EIGEN_FLOOR = 1e-12


class SimulationError(ValueError):
    """Invalid simulator input (bad index, wrong dimension, non-physical state)."""


class MatrixError(SimulationError):
    """A matrix handed to the density-matrix utilities is not valid."""


def _label_key(label) -> int:
    if isinstance(label, (int, np.integer)) and label >= 0:
        return int(label)
    digest = hashlib.sha256(str(label).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


class RandomStream:
    """
    Seeded random source addressed by (master seed, label path).

    child("frame", 3) always yields the same stream for the same parent, no matter
    how many numbers the parent or its siblings have already produced.
    """
    def __init__(self, seed: int = 0, path: Tuple = ()):
        self.seed = int(seed)
        self.path = tuple(path)
        keys = tuple(_label_key(label) for label in self.path)
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=keys)
        self.generator = np.random.default_rng(sequence)

    def child(self, *labels) -> 'RandomStream':
        """Derive an independent substream."""
        return RandomStream(self.seed, self.path + tuple(labels))

    def random(self) -> float:
        return float(self.generator.random())

    def integers(self, low: int, high: Optional[int] = None) -> int:
        """Uniform integer in [low, high) (or [0, low) when high is omitted)."""
        if high is None:
            low, high = 0, low
        return int(self.generator.integers(low, high))

    def choice(self, items: Sequence):
        if len(items) == 0:
            raise SimulationError("Cannot choose from an empty sequence")
        return items[self.integers(len(items))]

    def sample(self, items: Sequence, k: int) -> list:
        """k distinct items, in draw order."""
        picks = self.generator.choice(len(items), size=k, replace=False)
        return [items[int(i)] for i in picks]

    def __repr__(self):
        return f"RandomStream(seed={self.seed}, path={self.path})"


class Gate:
    """
    An immutable named unitary acting on `arity` qubits.

    The matrix is indexed big-endian over the target list: the first target is the
    most significant bit of the row/column index.
    """
    def __init__(self, name: str, matrix: np.ndarray, angle: Optional[float] = None):
        matrix = np.array(matrix, dtype=complex)
        dim = matrix.shape[0]
        if matrix.ndim != 2 or matrix.shape[1] != dim or dim < 2 or dim & (dim - 1):
            raise SimulationError(f"Gate {name}: matrix must be square with a power-of-two size")
        deviation = np.max(np.abs(matrix.conj().T @ matrix - np.eye(dim)))
        if deviation > UNITARY_TOL:
            raise SimulationError(f"Gate {name} is not unitary (deviation {deviation:.3e})")
        matrix.setflags(write=False)
        self.name = name
        self.arity = dim.bit_length() - 1
        self.matrix = matrix
        self.angle = angle

    def adjoint(self) -> 'Gate':
        """The inverse gate, named the way QPL-mini names it."""
        if self.name in _PARAMETRIC:
            return make_gate(self.name, -self.angle)
        if self.name in ADJOINT_NAMES:
            return make_gate(ADJOINT_NAMES[self.name])
        return Gate(self.name + "_dg", self.matrix.conj().T)

    @staticmethod
    def custom(name: str, matrix) -> 'Gate':
        return Gate(name, matrix)

    def __repr__(self):
        if self.angle is not None:
            return f"Gate({self.name}({self.angle:.6f}))"
        return f"Gate({self.name})"


_SQRT2_INV = 1 / math.sqrt(2)

_FIXED = {
    "I": np.eye(2),
    "X": np.array([[0, 1], [1, 0]]),
    "Y": np.array([[0, -1j], [1j, 0]]),
    "Z": np.array([[1, 0], [0, -1]]),
    "H": np.array([[1, 1], [1, -1]]) * _SQRT2_INV,
    "S": np.array([[1, 0], [0, 1j]]),
    "SDG": np.array([[1, 0], [0, -1j]]),
    "T": np.array([[1, 0], [0, cmath.exp(1j * math.pi / 4)]]),
    "TDG": np.array([[1, 0], [0, cmath.exp(-1j * math.pi / 4)]]),
    "CNOT": np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]]),
    "CZ": np.diag([1, 1, 1, -1]),
    "SWAP": np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]]),
}

_PARAMETRIC = {
    "R1": lambda t: np.array([[1, 0], [0, cmath.exp(1j * t)]]),
    "RX": lambda t: np.array([[math.cos(t / 2), -1j * math.sin(t / 2)],
                              [-1j * math.sin(t / 2), math.cos(t / 2)]]),
    "RY": lambda t: np.array([[math.cos(t / 2), -math.sin(t / 2)],
                              [math.sin(t / 2), math.cos(t / 2)]]),
    "RZ": lambda t: np.array([[cmath.exp(-1j * t / 2), 0], [0, cmath.exp(1j * t / 2)]]),
}

ADJOINT_NAMES = {
    "I": "I", "X": "X", "Y": "Y", "Z": "Z", "H": "H",
    "S": "SDG", "SDG": "S", "T": "TDG", "TDG": "T",
    "CNOT": "CNOT", "CZ": "CZ", "SWAP": "SWAP",
}

GATE_ARITY = {name: int(m.shape[0]).bit_length() - 1 for name, m in _FIXED.items()}
GATE_ARITY.update({name: 1 for name in _PARAMETRIC})

_GATE_CACHE: Dict[str, Gate] = {}


def is_parametric(name: str) -> bool:
    return name in _PARAMETRIC


def builtin_gate_names() -> List[str]:
    return sorted(GATE_ARITY)


def make_gate(name: str, angle: Optional[float] = None) -> Gate:
    """Look up a built-in gate; parametric gates need an angle in radians."""
    if name in _PARAMETRIC:
        if angle is None:
            raise SimulationError(f"Gate {name} needs an angle")
        return Gate(name, _PARAMETRIC[name](float(angle)), angle=float(angle))
    if name not in _FIXED:
        raise SimulationError(f"Unknown gate: {name}")
    if angle is not None:
        raise SimulationError(f"Gate {name} takes no angle")
    if name not in _GATE_CACHE:
        _GATE_CACHE[name] = Gate(name, _FIXED[name])
    return _GATE_CACHE[name]


class StateVector:
    """
    Pure state of num_qubits qubits as 2^n complex amplitudes (double precision).
    """
    def __init__(self, amplitudes, num_qubits: Optional[int] = None, check: bool = True):
        amplitudes = np.asarray(amplitudes, dtype=complex).reshape(-1)
        dim = amplitudes.shape[0]
        if dim < 2 or dim & (dim - 1):
            raise SimulationError(f"Amplitude count {dim} is not a power of two >= 2")
        n = dim.bit_length() - 1
        if num_qubits is not None and num_qubits != n:
            raise SimulationError(f"{dim} amplitudes do not describe {num_qubits} qubits")
        if n > MAX_QUBITS:
            raise SimulationError(f"{n} qubits exceeds the cap of {MAX_QUBITS}")
        self.num_qubits = n
        self.amplitudes = amplitudes
        if check:
            norm = self.norm_squared()
            if abs(norm - 1.0) > NORM_TOL:
                raise SimulationError(f"State is not normalized (|psi|^2 = {norm:.12f})")

    @staticmethod
    def zero(num_qubits: int) -> 'StateVector':
        return StateVector.basis(num_qubits, 0)

    @staticmethod
    def basis(num_qubits: int, index: int) -> 'StateVector':
        if not 1 <= num_qubits <= MAX_QUBITS:
            raise SimulationError(f"Qubit count {num_qubits} outside 1..{MAX_QUBITS}")
        if not 0 <= index < 2 ** num_qubits:
            raise SimulationError(f"Basis index {index} out of range for {num_qubits} qubits")
        amplitudes = np.zeros(2 ** num_qubits, dtype=complex)
        amplitudes[index] = 1.0
        return StateVector(amplitudes, num_qubits, check=False)

    def norm_squared(self) -> float:
        return float(np.real(np.vdot(self.amplitudes, self.amplitudes)))

    def normalized(self) -> 'StateVector':
        norm = math.sqrt(self.norm_squared())
        if norm < 1e-15:
            raise SimulationError("Cannot normalize a zero vector")
        return StateVector(self.amplitudes / norm, self.num_qubits, check=False)

    def copy(self) -> 'StateVector':
        return StateVector(self.amplitudes.copy(), self.num_qubits, check=False)

    def tensor(self, other: 'StateVector') -> 'StateVector':
        """self ⊗ other (self occupies the leading, most significant qubits)."""
        return StateVector(np.kron(self.amplitudes, other.amplitudes),
                           self.num_qubits + other.num_qubits, check=False)

    def inner(self, other: 'StateVector') -> complex:
        """<self|other>."""
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def nonzero_indices(self, tol: float = 1e-12) -> List[int]:
        return [int(k) for k in np.flatnonzero(np.abs(self.amplitudes) > tol)]

    def __len__(self):
        return self.amplitudes.shape[0]

    def __repr__(self):
        return f"StateVector(n={self.num_qubits})"


@dataclass(frozen=True)
class MeasurementOutcome:
    """Measured bits in the order the qubits were listed."""
    bits: Tuple[int, ...]

    @property
    def as_integer(self) -> int:
        value = 0
        for bit in self.bits:
            value = (value << 1) | bit
        return value

    @staticmethod
    def from_integer(value: int, width: int) -> 'MeasurementOutcome':
        return MeasurementOutcome(tuple((value >> (width - 1 - i)) & 1 for i in range(width)))


class DensityMatrix:
    """
    Mixed state: Hermitian, positive semidefinite, unit-trace 2^n x 2^n matrix.
    """
    def __init__(self, entries, check: bool = True):
        entries = np.array(entries, dtype=complex)
        dim = entries.shape[0]
        if entries.ndim != 2 or entries.shape[1] != dim or dim < 2 or dim & (dim - 1):
            raise MatrixError("Density matrix must be square with a power-of-two size")
        self.num_qubits = dim.bit_length() - 1
        if self.num_qubits > MAX_QUBITS:
            raise MatrixError(f"{self.num_qubits} qubits exceeds the cap of {MAX_QUBITS}")
        self.entries = entries
        if check:
            self.validate()

    def validate(self):
        if np.max(np.abs(self.entries - self.entries.conj().T)) > NORM_TOL:
            raise MatrixError("Density matrix is not Hermitian")
        trace = np.trace(self.entries)
        if abs(trace - 1.0) > NORM_TOL:
            raise MatrixError(f"Density matrix trace is {trace.real:.12f}, not 1")
        smallest = float(np.min(np.linalg.eigvalsh(self.entries)))
        if smallest < -1e-10:
            raise MatrixError(f"Density matrix has negative eigenvalue {smallest:.3e}")

    @staticmethod
    def from_state(state: StateVector) -> 'DensityMatrix':
        return DensityMatrix(np.outer(state.amplitudes, state.amplitudes.conj()), check=False)

    def purity(self) -> float:
        """Tr(rho^2)."""
        return float(np.real(np.trace(self.entries @ self.entries)))

    def overlap(self, other: 'DensityMatrix') -> float:
        """Tr(rho sigma)."""
        return float(np.real(np.trace(self.entries @ other.entries)))

    def __repr__(self):
        return f"DensityMatrix(n={self.num_qubits}, purity={self.purity():.6f})"


def _check_qubits(num_qubits: int, qubits: Iterable[int], what: str = "qubit"):
    seen = set()
    for q in qubits:
        if not isinstance(q, (int, np.integer)) or not 0 <= q < num_qubits:
            raise SimulationError(f"{what} index {q} out of range for {num_qubits} qubits")
        if q in seen:
            raise SimulationError(f"{what} index {q} listed twice")
        seen.add(q)


def apply_unitary(state: StateVector, gate: Gate, controls: Sequence[int],
                  targets: Sequence[int]) -> StateVector:
    """
    Apply `gate` to `targets`, conditioned on every control qubit being |1>.

    Returns a new StateVector; the input is left untouched.
    """
    controls, targets = list(controls), list(targets)
    n = state.num_qubits
    if len(targets) != gate.arity:
        raise SimulationError(f"Gate {gate.name} acts on {gate.arity} qubit(s), got {len(targets)} targets")
    _check_qubits(n, targets, "target")
    _check_qubits(n, controls, "control")
    if set(controls) & set(targets):
        raise SimulationError(f"Controls {controls} overlap targets {targets}")
    if gate.name == "I":
        return state.copy()

    tensor = state.amplitudes.reshape([2] * n).copy()
    index = [slice(None)] * n
    for c in controls:
        index[c] = 1
    index = tuple(index)
    block = tensor[index]
    remaining = [q for q in range(n) if q not in controls]
    axes = [remaining.index(t) for t in targets]
    k = len(targets)
    moved = np.moveaxis(block, axes, list(range(k)))
    shape = moved.shape
    updated = (gate.matrix @ moved.reshape(2 ** k, -1)).reshape(shape)
    tensor[index] = np.moveaxis(updated, list(range(k)), axes)
    return StateVector(tensor.reshape(-1), n, check=False)


def marginal_probabilities(state: StateVector, qubits: Sequence[int]) -> np.ndarray:
    """Born distribution over the listed qubits (big-endian in list order)."""
    qubits = list(qubits)
    n = state.num_qubits
    _check_qubits(n, qubits)
    probs = np.abs(state.amplitudes.reshape([2] * n)) ** 2
    others = tuple(q for q in range(n) if q not in qubits)
    if others:
        probs = probs.sum(axis=others)
    ascending = sorted(qubits)
    perm = [ascending.index(q) for q in qubits]
    return np.transpose(probs, perm).reshape(-1) if qubits else np.array([float(np.sum(probs))])


def probability_of(state: StateVector, qubits: Sequence[int], outcome: int) -> float:
    """Exact probability of reading `outcome` on `qubits`; no collapse."""
    if not 0 <= outcome < 2 ** len(qubits):
        raise SimulationError(f"Outcome {outcome} does not fit in {len(qubits)} bits")
    return float(marginal_probabilities(state, qubits)[outcome])


def _draw(probs: np.ndarray, rng: RandomStream) -> int:
    total = float(np.sum(probs))
    if total < 1e-15:
        raise SimulationError("Cannot measure a zero-norm state")
    cumulative = np.cumsum(probs / total)
    index = int(np.searchsorted(cumulative, rng.random(), side="right"))
    # the draw can land past a trailing zero-probability bucket through rounding
    while index >= len(probs) or probs[index] == 0:
        index -= 1
    return index


def measure(state: StateVector, qubits: Sequence[int],
            rng: RandomStream) -> Tuple[MeasurementOutcome, StateVector]:
    """
    Projective measurement in the computational basis.

    Returns the outcome and the renormalized post-measurement state.
    """
    qubits = list(qubits)
    n = state.num_qubits
    probs = marginal_probabilities(state, qubits)
    value = _draw(probs, rng)
    outcome = MeasurementOutcome.from_integer(value, len(qubits))

    tensor = state.amplitudes.reshape([2] * n)
    collapsed = np.zeros_like(tensor)
    index = [slice(None)] * n
    for q, bit in zip(qubits, outcome.bits):
        index[q] = bit
    index = tuple(index)
    collapsed[index] = tensor[index]
    collapsed = collapsed.reshape(-1) / math.sqrt(probs[value])
    return outcome, StateVector(collapsed, n, check=False)


def reset(state: StateVector, qubits: Sequence[int], rng: RandomStream) -> StateVector:
    """Measure the listed qubits and flip every qubit that read 1 back to |0>."""
    qubits = list(qubits)
    if not qubits:
        return state.copy()
    outcome, state = measure(state, qubits, rng)
    x = make_gate("X")
    for q, bit in zip(qubits, outcome.bits):
        if bit:
            state = apply_unitary(state, x, [], [q])
    return state


def sample_counts(state: StateVector, qubits: Sequence[int], shots: int,
                  rng: RandomStream) -> Dict[int, int]:
    """Sample `shots` outcomes without collapsing the state."""
    probs = marginal_probabilities(state, qubits)
    counts: Dict[int, int] = {}
    for _ in range(shots):
        value = _draw(probs, rng)
        counts[value] = counts.get(value, 0) + 1
    return dict(sorted(counts.items()))


def tensor(*states: StateVector) -> StateVector:
    result = states[0]
    for other in states[1:]:
        result = result.tensor(other)
    return result


def fidelity(a: StateVector, b: StateVector) -> float:
    """|<a|b>|^2."""
    if a.num_qubits != b.num_qubits:
        raise SimulationError("Fidelity of states with different qubit counts")
    return abs(a.inner(b)) ** 2


def states_equal(a: StateVector, b: StateVector, tol: float = NORM_TOL,
                 up_to_phase: bool = True) -> bool:
    """
    Compare two states. With up_to_phase, |<a|b>| >= 1 - tol; otherwise
    amplitude-wise within tol.
    """
    if a.num_qubits != b.num_qubits:
        return False
    if up_to_phase:
        return abs(a.inner(b)) >= 1 - tol
    return bool(np.max(np.abs(a.amplitudes - b.amplitudes)) <= tol)


def dm_from_ensemble(parts: Sequence[Tuple[float, StateVector]]) -> DensityMatrix:
    """rho = sum_i w_i |psi_i><psi_i|."""
    if not parts:
        raise MatrixError("Empty ensemble")
    n = parts[0][1].num_qubits
    weights = [float(w) for w, _ in parts]
    if min(weights) < 0:
        raise MatrixError("Ensemble weights must be non-negative")
    if abs(sum(weights) - 1.0) > NORM_TOL:
        raise MatrixError(f"Ensemble weights sum to {sum(weights):.12f}, not 1")
    rho = np.zeros((2 ** n, 2 ** n), dtype=complex)
    for weight, state in parts:
        if state.num_qubits != n:
            raise MatrixError("Ensemble states have different qubit counts")
        rho += weight * np.outer(state.amplitudes, state.amplitudes.conj())
    return DensityMatrix(rho, check=False)


def jacobi_hermitian(matrix: np.ndarray, threshold: float = JACOBI_THRESHOLD,
                     max_sweeps: int = 100) -> Tuple[np.ndarray, np.ndarray, int]:
    """
    Diagonalize a Hermitian matrix by cyclic complex Jacobi rotations.

    Each rotation first removes the phase of A[p, q], then applies the real
    rotation that zeroes it.

    Returns:
        (eigenvalues, eigenvectors as columns, number of sweeps)
    """
    A = np.array(matrix, dtype=complex)
    n = A.shape[0]
    V = np.eye(n, dtype=complex)
    sweeps = 0

    def off_diagonal() -> float:
        if n < 2:
            return 0.0
        return float(np.max(np.abs(A - np.diag(np.diag(A)))))

    while off_diagonal() > threshold:
        if sweeps >= max_sweeps:
            raise MatrixError(f"Jacobi iteration did not converge in {max_sweeps} sweeps")
        sweeps += 1
        for p in range(n):
            for q in range(p + 1, n):
                apq = A[p, q]
                magnitude = abs(apq)
                if magnitude <= threshold:
                    continue
                phase = apq / magnitude
                app, aqq = A[p, p].real, A[q, q].real
                theta = 0.5 * math.atan2(2 * magnitude, aqq - app)
                c, s = math.cos(theta), math.sin(theta)
                rotation = np.array([[c, s],
                                     [-s * phase.conjugate(), c * phase.conjugate()]])
                cols = [p, q]
                A[:, cols] = A[:, cols] @ rotation
                A[cols, :] = rotation.conj().T @ A[cols, :]
                A[p, q] = A[q, p] = 0.0
                A[p, p], A[q, q] = A[p, p].real, A[q, q].real
                V[:, cols] = V[:, cols] @ rotation

    return np.real(np.diag(A)).copy(), V, sweeps


def ensemble_from_dm(rho: DensityMatrix) -> List[Tuple[float, StateVector]]:
    """
    Spectral decomposition of rho into (weight, pure state) pairs, heaviest first.
    Eigenvalues at or below 1e-12 are dropped.
    """
    entries = rho.entries
    if np.max(np.abs(entries - entries.conj().T)) > NORM_TOL:
        raise MatrixError("Density matrix is not Hermitian")
    values, vectors, _ = jacobi_hermitian(entries)
    if np.min(values) < -1e-10:
        raise MatrixError(f"Density matrix has negative eigenvalue {np.min(values):.3e}")

    order = sorted(range(len(values)), key=lambda i: (-values[i], i))
    parts = []
    for i in order:
        if values[i] <= EIGEN_FLOOR:
            continue
        vector = vectors[:, i]
        vector = vector / np.linalg.norm(vector)
        pivot = vector[int(np.argmax(np.abs(vector) > 1e-9))]
        vector = vector * (abs(pivot) / pivot)
        parts.append((float(values[i]), StateVector(vector, rho.num_qubits, check=False)))
    return parts


def partial_trace(state: Union[StateVector, DensityMatrix], keep: Sequence[int]) -> DensityMatrix:
    """Reduced density matrix on the `keep` qubits (in the listed order)."""
    keep = list(keep)
    if isinstance(state, StateVector):
        rho = np.outer(state.amplitudes, state.amplitudes.conj())
    else:
        rho = state.entries
    n = state.num_qubits
    _check_qubits(n, keep)
    traced = [q for q in range(n) if q not in keep]
    tensor = rho.reshape([2] * (2 * n))
    row_axes = keep + traced
    col_axes = [n + q for q in keep] + [n + q for q in traced]
    tensor = np.transpose(tensor, row_axes + col_axes)
    k = len(keep)
    tensor = tensor.reshape(2 ** k, 2 ** (n - k), 2 ** k, 2 ** (n - k))
    return DensityMatrix(np.einsum("ajbj->ab", tensor), check=False)
