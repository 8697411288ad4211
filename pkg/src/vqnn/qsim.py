"""Dense statevector simulator.

Basis ordering is little-endian throughout: bit ``k`` of a basis index is
qubit ``k``.  Bitstrings and Pauli letter strings follow the same rule, so
character ``k`` always refers to qubit ``k`` (``"10"`` means qubit 0 is set).

Rotations use the half-angle convention ``R_P(t) = exp(-i t P / 2)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np

from .errors import QubitCapError, ShapeError, UnboundParameterError, UnsupportedGradientError

MAX_QUBITS = 12
NORM_TOL = 1e-10

ROTATIONS = frozenset({"RX", "RY", "RZ"})
SINGLE = frozenset({"H", "X", "Y", "Z"}) | ROTATIONS
KINDS = SINGLE | {"CX"}

_S2 = 1 / math.sqrt(2)
_FIXED = {
    "H": np.array([[_S2, _S2], [_S2, -_S2]], dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}
_I2 = np.eye(2, dtype=complex)


def rotation_matrix(kind: str, angle: float) -> np.ndarray:
    c, s = math.cos(angle / 2), math.sin(angle / 2)
    if kind == "RX":
        return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)
    if kind == "RY":
        return np.array([[c, -s], [s, c]], dtype=complex)
    if kind == "RZ":
        return np.array([[c - 1j * s, 0], [0, c + 1j * s]], dtype=complex)
    raise ValueError(f"not a rotation: {kind}")


@dataclass(frozen=True)
class Gate:
    """A single gate application.

    ``qubits`` is ``(target,)`` for one-qubit gates and ``(control, target)``
    for CX.  Rotations carry an angle; when a circuit binds the gate to a
    named parameter the stored angle is ignored at run time.
    """

    kind: str
    qubits: tuple[int, ...]
    angle: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown gate kind {self.kind!r}")
        object.__setattr__(self, "qubits", tuple(int(q) for q in self.qubits))
        arity = 2 if self.kind == "CX" else 1
        if len(self.qubits) != arity:
            raise ValueError(f"{self.kind} takes {arity} qubit(s), got {self.qubits}")
        if any(q < 0 for q in self.qubits):
            raise IndexError(f"negative qubit index in {self.qubits}")
        if arity == 2 and self.qubits[0] == self.qubits[1]:
            raise ValueError("CX control and target must differ")
        if self.kind in ROTATIONS:
            angle = 0.0 if self.angle is None else float(self.angle)
            if not math.isfinite(angle):
                raise ValueError(f"non-finite angle {angle}")
            object.__setattr__(self, "angle", angle)
        elif self.angle is not None:
            raise ValueError(f"{self.kind} takes no angle")

    @property
    def target(self) -> int:
        return self.qubits[-1]

    def matrix(self, angle: float | None = None) -> np.ndarray:
        """Local matrix: 2x2, or 4x4 in (control, target) ordering for CX."""
        if self.kind in ROTATIONS:
            return rotation_matrix(self.kind, self.angle if angle is None else angle)
        if self.kind == "CX":
            m = np.eye(4, dtype=complex)
            m[2:, 2:] = _FIXED["X"]
            return m
        return _FIXED[self.kind].copy()

    def inverse(self) -> "Gate":
        if self.kind in ROTATIONS:
            return Gate(self.kind, self.qubits, -self.angle)
        return self


def h(q: int) -> Gate:
    return Gate("H", (q,))


def x(q: int) -> Gate:
    return Gate("X", (q,))


def rx(q: int, angle: float = 0.0) -> Gate:
    return Gate("RX", (q,), angle)


def ry(q: int, angle: float = 0.0) -> Gate:
    return Gate("RY", (q,), angle)


def rz(q: int, angle: float = 0.0) -> Gate:
    return Gate("RZ", (q,), angle)


def cx(control: int, target: int) -> Gate:
    return Gate("CX", (control, target))


def _check_cap(n_qubits: int, cap: int = MAX_QUBITS) -> None:
    if not 1 <= n_qubits <= cap:
        raise QubitCapError(f"n_qubits must be in [1, {cap}], got {n_qubits}")


@dataclass(frozen=True, eq=False)
class StateVector:
    n_qubits: int
    amps: np.ndarray

    def __post_init__(self):
        _check_cap(self.n_qubits)
        amps = np.array(self.amps, dtype=complex)
        if amps.shape != (1 << self.n_qubits,):
            raise ShapeError(f"expected {1 << self.n_qubits} amplitudes, got shape {amps.shape}")
        if not np.all(np.isfinite(amps)):
            raise ValueError("non-finite amplitude")
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > NORM_TOL:
            raise ValueError(f"state is not normalized (norm={norm!r})")
        amps.flags.writeable = False
        object.__setattr__(self, "amps", amps)

    def __len__(self):
        return len(self.amps)

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amps) ** 2

    def norm(self) -> float:
        return float(np.linalg.norm(self.amps))


def zero_state(n_qubits: int, cap: int = MAX_QUBITS) -> StateVector:
    _check_cap(n_qubits, cap)
    amps = np.zeros(1 << n_qubits, dtype=complex)
    amps[0] = 1.0
    return StateVector(n_qubits, amps)


def bitstring(index: int, n_qubits: int) -> str:
    """Basis index -> bitstring with character k holding qubit k."""
    return "".join(str((index >> k) & 1) for k in range(n_qubits))


# --- kernels on raw amplitude arrays ---------------------------------------

def _apply_1q(amps: np.ndarray, m: np.ndarray, q: int, n: int) -> np.ndarray:
    psi = amps.reshape(1 << (n - 1 - q), 2, 1 << q)
    return np.einsum("ij,ajb->aib", m, psi).reshape(-1)


def _apply_cx(amps: np.ndarray, control: int, target: int) -> np.ndarray:
    idx = np.arange(amps.shape[0])
    perm = np.where((idx >> control) & 1, idx ^ (1 << target), idx)
    return amps[perm]


def _apply(amps: np.ndarray, gate: Gate, n: int, angle: float | None = None) -> np.ndarray:
    if gate.kind == "CX":
        return _apply_cx(amps, *gate.qubits)
    return _apply_1q(amps, gate.matrix(angle), gate.target, n)


def _check_qubits(gate: Gate, n_qubits: int) -> None:
    if max(gate.qubits) >= n_qubits:
        raise IndexError(f"{gate.kind} on qubits {gate.qubits} but register has {n_qubits}")


def apply_gate(state: StateVector, gate: Gate) -> StateVector:
    _check_qubits(gate, state.n_qubits)
    return StateVector(state.n_qubits, _apply(state.amps, gate, state.n_qubits))


# --- circuits ----------------------------------------------------------------

@dataclass(frozen=True)
class Circuit:
    """Ordered gate list plus named parameters.

    ``params`` maps a symbol to ``(gate_index, scale)`` bindings; at run time
    each bound gate gets ``angle = value * scale``.
    """

    n_qubits: int
    gates: tuple[Gate, ...]
    params: Mapping[str, tuple[tuple[int, float], ...]] = field(default_factory=dict)

    def __post_init__(self):
        _check_cap(self.n_qubits)
        gates = tuple(self.gates)
        for g in gates:
            _check_qubits(g, self.n_qubits)
        params: dict[str, tuple[tuple[int, float], ...]] = {}
        seen: set[int] = set()
        for sym, binds in self.params.items():
            binds = tuple((int(i), float(s)) for i, s in binds)
            if not binds:
                raise ValueError(f"parameter {sym!r} binds no gate")
            for i, _ in binds:
                if not 0 <= i < len(gates):
                    raise IndexError(f"parameter {sym!r} binds missing gate {i}")
                if i in seen:
                    raise ValueError(f"gate {i} is bound to more than one parameter")
                seen.add(i)
            params[sym] = binds
        object.__setattr__(self, "gates", gates)
        object.__setattr__(self, "params", MappingProxyType(params))

    def __len__(self):
        return len(self.gates)

    def resolved_angles(self, bindings: Mapping[str, float] | None = None) -> list[float | None]:
        """Per-gate angle after substituting bindings (None for fixed gates)."""
        bindings = bindings or {}
        angles = [g.angle for g in self.gates]
        for sym, binds in self.params.items():
            if sym not in bindings:
                raise UnboundParameterError(f"no value bound for parameter {sym!r}")
            for i, scale in binds:
                angles[i] = float(bindings[sym]) * scale
        return angles

    def diagram(self, bindings: Mapping[str, float] | None = None) -> str:
        """One gate per line with resolved angles."""
        angles = self.resolved_angles(bindings)
        owner = {i: (sym, s) for sym, b in self.params.items() for i, s in b}
        lines = []
        for i, (g, a) in enumerate(zip(self.gates, angles)):
            if g.kind == "CX":
                text = f"CX       q{g.qubits[0]} -> q{g.qubits[1]}"
            elif a is None:
                text = f"{g.kind:<8} q{g.target}"
            else:
                # +0.0 folds negative zero so theta=0 prints 0.0000
                text = f"{g.kind}({a + 0.0:.4f}) q{g.target}"
            if i in owner:
                sym, s = owner[i]
                text += f"    [{sym} x {s:.4f}]"
            lines.append(f"{i:>3}  {text}")
        return "\n".join(lines)


def _evolve(circuit: Circuit, bindings: Mapping[str, float] | None,
            shift: tuple[int, float] | None = None) -> np.ndarray:
    angles = circuit.resolved_angles(bindings)
    if shift is not None:
        angles[shift[0]] += shift[1]
    n = circuit.n_qubits
    amps = np.zeros(1 << n, dtype=complex)
    amps[0] = 1.0
    for g, a in zip(circuit.gates, angles):
        amps = _apply(amps, g, n, a)
    return amps


def run(circuit: Circuit, bindings: Mapping[str, float] | None = None) -> StateVector:
    return StateVector(circuit.n_qubits, _evolve(circuit, bindings))


def _embed(m: np.ndarray, q: int, n: int) -> np.ndarray:
    # most significant qubit first in the Kronecker chain
    out = np.ones((1, 1), dtype=complex)
    for k in reversed(range(n)):
        out = np.kron(out, m if k == q else _I2)
    return out


def dense_unitary(circuit: Circuit, bindings: Mapping[str, float] | None = None,
                  max_qubits: int = 3) -> np.ndarray:
    """Full circuit unitary built from Kronecker products.

    Deliberately shares nothing with the statevector kernels so it can serve
    as an oracle for them.
    """
    n = circuit.n_qubits
    if n > max_qubits:
        raise QubitCapError(f"dense_unitary supports at most {max_qubits} qubits, got {n}")
    p0 = np.array([[1, 0], [0, 0]], dtype=complex)
    p1 = np.array([[0, 0], [0, 1]], dtype=complex)
    u = np.eye(1 << n, dtype=complex)
    for g, a in zip(circuit.gates, circuit.resolved_angles(bindings)):
        if g.kind == "CX":
            c, t = g.qubits
            full = _embed(p0, c, n) + _embed(p1, c, n) @ _embed(_FIXED["X"], t, n)
        else:
            full = _embed(g.matrix(a), g.target, n)
        u = full @ u
    return u


# --- observables ---------------------------------------------------------------

@dataclass(frozen=True)
class PauliString:
    coeff: float
    letters: str

    def __post_init__(self):
        if not math.isfinite(self.coeff):
            raise ValueError("coefficient must be finite")
        letters = self.letters.upper()
        if not letters or set(letters) - set("IXYZ"):
            raise ValueError(f"bad Pauli letters {self.letters!r}")
        object.__setattr__(self, "coeff", float(self.coeff))
        object.__setattr__(self, "letters", letters)

    @property
    def n_qubits(self) -> int:
        return len(self.letters)


@dataclass(frozen=True)
class Observable:
    terms: tuple[PauliString, ...]

    def __post_init__(self):
        terms = tuple(self.terms)
        if not terms:
            raise ValueError("observable needs at least one term")
        if len({t.n_qubits for t in terms}) != 1:
            raise ShapeError("all Pauli strings must act on the same number of qubits")
        object.__setattr__(self, "terms", terms)

    @classmethod
    def single(cls, letters: str, coeff: float = 1.0) -> "Observable":
        return cls((PauliString(coeff, letters),))

    @property
    def n_qubits(self) -> int:
        return self.terms[0].n_qubits

    def matrix(self) -> np.ndarray:
        """Dense matrix, for cross-checks on small registers."""
        n = self.n_qubits
        out = np.zeros((1 << n, 1 << n), dtype=complex)
        for t in self.terms:
            m = np.eye(1 << n, dtype=complex)
            for q, p in enumerate(t.letters):
                if p != "I":
                    m = _embed(_FIXED[p], q, n) @ m
            out += t.coeff * m
        return out


def _expect_amps(amps: np.ndarray, obs: Observable, n: int) -> float:
    total = 0j
    for term in obs.terms:
        phi = amps
        for q, p in enumerate(term.letters):
            if p != "I":
                phi = _apply_1q(phi, _FIXED[p], q, n)
        total += term.coeff * np.vdot(amps, phi)
    if abs(total.imag) > NORM_TOL:
        raise ArithmeticError(f"expectation has imaginary part {total.imag!r}")
    return float(total.real)


def expectation(state: StateVector, obs: Observable) -> float:
    if obs.n_qubits != state.n_qubits:
        raise ShapeError(f"observable acts on {obs.n_qubits} qubits, state has {state.n_qubits}")
    return _expect_amps(state.amps, obs, state.n_qubits)


def sample_measurements(state: StateVector, shots: int, seed: int) -> dict[str, int]:
    """Computational-basis measurement counts, keyed by bitstring."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    probs = state.probabilities()
    probs = probs / probs.sum()
    counts = np.random.default_rng(seed).multinomial(shots, probs)
    return {bitstring(i, state.n_qubits): int(c) for i, c in enumerate(counts) if c}


def parameter_shift_grad(circuit: Circuit, bindings: Mapping[str, float],
                         obs: Observable, symbol: str) -> float:
    """d<obs>/d(symbol) from two shifted evaluations per driven gate."""
    if symbol not in circuit.params:
        raise UnboundParameterError(f"circuit has no parameter {symbol!r}")
    if symbol not in bindings:
        raise UnboundParameterError(f"no value bound for parameter {symbol!r}")
    if obs.n_qubits != circuit.n_qubits:
        raise ShapeError("observable/circuit qubit mismatch")
    n = circuit.n_qubits
    grad = 0.0
    for i, scale in circuit.params[symbol]:
        kind = circuit.gates[i].kind
        if kind not in ROTATIONS:
            raise UnsupportedGradientError(f"parameter {symbol!r} drives non-rotation gate {kind}")
        plus = _expect_amps(_evolve(circuit, bindings, (i, math.pi / 2)), obs, n)
        minus = _expect_amps(_evolve(circuit, bindings, (i, -math.pi / 2)), obs, n)
        grad += scale * (plus - minus) / 2
    return grad


def random_circuit(rng: np.random.Generator, n_qubits: int, n_gates: int,
                   symbols: Sequence[str] = ()) -> Circuit:
    """Random gate soup; each symbol is bound to 1-3 random rotation gates."""
    gates = []
    for _ in range(n_gates):
        kind = str(rng.choice(sorted(KINDS if n_qubits > 1 else SINGLE)))
        if kind == "CX":
            c, t = rng.choice(n_qubits, size=2, replace=False)
            gates.append(cx(int(c), int(t)))
        elif kind in ROTATIONS:
            gates.append(Gate(kind, (int(rng.integers(n_qubits)),), float(rng.uniform(-np.pi, np.pi))))
        else:
            gates.append(Gate(kind, (int(rng.integers(n_qubits)),)))
    params = {}
    for sym in symbols:
        slots = []
        for _ in range(int(rng.integers(1, 4))):
            kind = str(rng.choice(sorted(ROTATIONS)))
            pos = int(rng.integers(len(gates) + 1))
            gates.insert(pos, Gate(kind, (int(rng.integers(n_qubits)),)))
            # shift existing bindings past the insertion point
            slots = [(i + (i >= pos), s) for i, s in slots]
            for other in params:
                params[other] = [(i + (i >= pos), s) for i, s in params[other]]
            slots.append((pos, float(rng.uniform(-2, 2))))
        params[sym] = slots
    return Circuit(n_qubits, tuple(gates), params)
