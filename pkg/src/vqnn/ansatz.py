"""QAOA-style quantum output layer.

The CNN's scalar output ``theta`` drives the phase of the cost block; the
per-layer ``gamma``/``beta`` are frozen hyperparameters.  Layer ``i`` is::

    RZ(2 g_i theta) on every qubit
    CX(j, j+1); RZ(2 g_i theta) on j+1; CX(j, j+1)     for each neighbour pair
    RX(2 b_i) on every qubit                            (mixer, sum of X)

preceded by a Hadamard on every qubit.  The layer output is the cost
expectation ``<Z...Z>`` mapped to a class-1 probability ``(1 - e) / 2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from . import qsim
from .errors import ShapeError
from .kvfile import parse_floats, read_kv, write_kv
from .qsim import Circuit, Observable

THETA = "theta"
THETA_REF = 0.7853981634
REFERENCE_EXPECTATION = -0.124
CALIBRATION_RESOURCE = "calibration.txt"
TIE_TOL = 1e-12


@dataclass(frozen=True)
class AnsatzConfig:
    gammas: tuple[float, ...]
    betas: tuple[float, ...]
    n_qubits: int = 2

    def __post_init__(self):
        gammas = tuple(float(g) for g in self.gammas)
        betas = tuple(float(b) for b in self.betas)
        if not gammas or len(gammas) != len(betas):
            raise ValueError(f"need matching non-empty gammas/betas, got {len(gammas)} and {len(betas)}")
        if not all(math.isfinite(v) for v in gammas + betas):
            raise ValueError("gammas and betas must be finite")
        if self.n_qubits < 2:
            raise ValueError("the cost block needs at least 2 qubits")
        object.__setattr__(self, "gammas", gammas)
        object.__setattr__(self, "betas", betas)

    @property
    def depth(self) -> int:
        return len(self.gammas)

    @classmethod
    def single(cls, gamma: float, beta: float, n_qubits: int = 2) -> "AnsatzConfig":
        return cls((gamma,), (beta,), n_qubits)

    @classmethod
    def from_calibration(cls, path: str | Path | None = None, n_qubits: int = 2) -> "AnsatzConfig":
        cal = load_calibration(path)
        return cls.single(cal.gamma, cal.beta, n_qubits)


def default_cost(n_qubits: int = 2) -> Observable:
    return Observable.single("Z" * n_qubits)


@dataclass(frozen=True)
class CostHamiltonian:
    observable: Observable = field(default_factory=default_cost)

    def __post_init__(self):
        if all(t.coeff == 0 for t in self.observable.terms):
            raise ValueError("cost Hamiltonian must be nonzero")

    @classmethod
    def default(cls, n_qubits: int = 2) -> "CostHamiltonian":
        return cls(default_cost(n_qubits))


@dataclass(frozen=True)
class QuantumLayerOutput:
    expectation: float
    probability: float
    grad_theta: float | None = None  # d expectation / d theta


def expectation_to_probability(e: float) -> float:
    return (1.0 - e) / 2.0


def build_ansatz(config: AnsatzConfig, theta: float | None = None) -> Circuit:
    """Circuit with ``theta`` registered as the named parameter ``THETA``.

    If ``theta`` is given the placeholder RZ angles are filled in as well, so
    the gate list reads correctly without bindings.
    """
    n = config.n_qubits
    gates: list[qsim.Gate] = [qsim.h(q) for q in range(n)]
    binds: list[tuple[int, float]] = []

    def phase(q: int, gamma: float):
        scale = 2.0 * gamma
        binds.append((len(gates), scale))
        gates.append(qsim.rz(q, 0.0 if theta is None else scale * theta))

    for gamma, beta in zip(config.gammas, config.betas):
        for q in range(n):
            phase(q, gamma)
        for q in range(n - 1):
            gates.append(qsim.cx(q, q + 1))
            phase(q + 1, gamma)
            gates.append(qsim.cx(q, q + 1))
        gates.extend(qsim.rx(q, 2.0 * beta) for q in range(n))
    return Circuit(n, tuple(gates), {THETA: binds})


@lru_cache(maxsize=64)
def _cached_circuit(config: AnsatzConfig) -> Circuit:
    return build_ansatz(config)


def _resolve_cost(config: AnsatzConfig, hc: CostHamiltonian | None) -> Observable:
    obs = (hc or CostHamiltonian.default(config.n_qubits)).observable
    if obs.n_qubits != config.n_qubits:
        raise ShapeError(f"cost acts on {obs.n_qubits} qubits, ansatz has {config.n_qubits}")
    return obs


def quantum_forward(theta: float, config: AnsatzConfig, hc: CostHamiltonian | None = None,
                    grad: bool = False) -> QuantumLayerOutput:
    obs = _resolve_cost(config, hc)
    circuit = _cached_circuit(config)
    e = qsim.expectation(qsim.run(circuit, {THETA: theta}), obs)
    g = qsim.parameter_shift_grad(circuit, {THETA: theta}, obs, THETA) if grad else None
    return QuantumLayerOutput(e, expectation_to_probability(e), g)


def quantum_backward(theta: float, config: AnsatzConfig, hc: CostHamiltonian | None = None) -> float:
    """d<C>/dtheta by parameter shift over every theta-driven RZ.

    The probability gradient is ``-0.5`` times this value.
    """
    obs = _resolve_cost(config, hc)
    return qsim.parameter_shift_grad(_cached_circuit(config), {THETA: theta}, obs, THETA)


# --- calibration -------------------------------------------------------------------

@dataclass(frozen=True)
class Calibration:
    gamma: float
    beta: float
    achieved_expectation: float
    theta_ref: float = THETA_REF
    target: float = REFERENCE_EXPECTATION
    grid_steps: int = 256

    @property
    def residual(self) -> float:
        return abs(self.achieved_expectation - self.target)


def calibrate_gamma_beta(target: float, theta: float, grid_steps: int = 256,
                         n_qubits: int = 2) -> tuple[float, float, float]:
    """Exhaustive (gamma, beta) scan over [0, pi]^2 for one QAOA layer.

    Row-major with gamma as the outer loop; the first point reaching the
    smallest ``|<C> - target|`` wins.  Residuals closer than ``TIE_TOL`` count
    as ties so rounding noise cannot displace an earlier exact hit.
    """
    if grid_steps < 8:
        raise ValueError("grid_steps must be >= 8")
    # Same gate layout, re-bound so gamma and beta are the free symbols at
    # fixed theta: cost RZ angle 2*gamma*theta, mixer RX angle 2*beta.
    base = build_ansatz(AnsatzConfig.single(1.0, 1.0, n_qubits))
    mixer = [(i, 2.0) for i, g in enumerate(base.gates) if g.kind == "RX"]
    cost = [(i, 2.0 * theta) for i, _ in base.params[THETA]]
    scan = Circuit(n_qubits, base.gates, {"gamma": cost, "beta": mixer})
    obs = default_cost(n_qubits)

    axis = np.linspace(0.0, math.pi, grid_steps)
    best = (math.inf, 0.0, 0.0, 0.0)
    for gamma in axis:
        for beta in axis:
            e = qsim.expectation(qsim.run(scan, {"gamma": gamma, "beta": beta}), obs)
            err = abs(e - target)
            if err < best[0] - TIE_TOL:
                best = (err, float(gamma), float(beta), e)
    return best[1], best[2], best[3]


def write_calibration(path: str | Path, cal: Calibration) -> None:
    write_kv(path, {
        "gamma": cal.gamma,
        "beta": cal.beta,
        "achieved_expectation": cal.achieved_expectation,
        "theta_ref": cal.theta_ref,
        "target": cal.target,
        "grid_steps": cal.grid_steps,
        "residual": cal.residual,
    }, header="QAOA layer calibration (gamma, beta) for the quantum output layer")


def load_calibration(path: str | Path | None = None) -> Calibration:
    """Read a calibration file; ``None`` loads the one shipped with the package."""
    if path is None:
        with resources.as_file(resources.files("vqnn") / CALIBRATION_RESOURCE) as p:
            kv = read_kv(p)
    else:
        kv = read_kv(path)
    try:
        return Calibration(
            gamma=float(kv["gamma"]),
            beta=float(kv["beta"]),
            achieved_expectation=float(kv["achieved_expectation"]),
            theta_ref=float(kv.get("theta_ref", THETA_REF)),
            target=float(kv.get("target", REFERENCE_EXPECTATION)),
            grid_steps=int(kv.get("grid_steps", 256)),
        )
    except (KeyError, ValueError) as exc:
        raise ValueError(f"malformed calibration file {path}: {exc}") from exc


def config_from_kv(kv: dict[str, str]) -> AnsatzConfig:
    return AnsatzConfig(parse_floats(kv["gamma"]), parse_floats(kv["beta"]), int(kv.get("n_qubits", 2)))


def config_to_kv(config: AnsatzConfig) -> dict[str, object]:
    return {"gamma": config.gammas, "beta": config.betas, "p": config.depth, "n_qubits": config.n_qubits}


def sweep(thetas: Sequence[float], config: AnsatzConfig) -> np.ndarray:
    return np.array([quantum_forward(t, config).expectation for t in thetas])
