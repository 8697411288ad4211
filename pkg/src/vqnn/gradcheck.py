"""Finite-difference checks for the quantum layer, the trunk and the full hybrid pipeline.

Each suite returns a :class:`CheckResult`; ``perturb`` scales the analytic
gradient before comparison so the harness itself can be shown to fail.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ansatz
from .ansatz import AnsatzConfig
from .data import two_blob_toy
from .nn import Trunk, TrunkConfig

QUANTUM_TOL = 1e-6
RELATIVE_TOL = 1e-4
RELATIVE_FLOOR = 0.01

TOY_TRUNK = TrunkConfig(input_shape=(1, 8, 8), conv1=(3, 3, 1), conv2=(4, 1, 1), dense=(5, 1), activation="tanh")


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_deviation: float
    tolerance: float
    cases: int

    @property
    def passed(self) -> bool:
        return math.isfinite(self.max_deviation) and self.max_deviation < self.tolerance

    def line(self) -> str:
        verdict = "ok" if self.passed else "FAIL"
        return f"{self.name:<8} max deviation {self.max_deviation:.3e} (tol {self.tolerance:.0e}, {self.cases} cases) {verdict}"


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(numeric), RELATIVE_FLOOR)


def random_ansatz(rng: np.random.Generator) -> AnsatzConfig:
    depth = int(rng.integers(1, 3))
    n = int(rng.integers(2, 4))
    return AnsatzConfig(tuple(rng.uniform(0, math.pi, depth)), tuple(rng.uniform(0, math.pi, depth)), n)


def quantum_check(seed: int = 0, cases: int = 100, h: float = 1e-5, perturb: float = 1.0) -> CheckResult:
    """Parameter-shift d<C>/dtheta against central differences."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        cfg = random_ansatz(rng)
        theta = float(rng.uniform(-math.pi, math.pi))
        shift = ansatz.quantum_backward(theta, cfg) * perturb
        up = ansatz.quantum_forward(theta + h, cfg).expectation
        down = ansatz.quantum_forward(theta - h, cfg).expectation
        worst = max(worst, abs(shift - (up - down) / (2 * h)))
    return CheckResult("quantum", worst, QUANTUM_TOL, cases)


def _sampled_entries(rng, shape, limit):
    flat = rng.permutation(int(np.prod(shape)))[:limit]
    return [np.unravel_index(i, shape) for i in flat]


def _param_check(name, trunk, loss, analytic, rng, per_param, h, perturb):
    worst, count = 0.0, 0
    for p in trunk.params():
        for idx in _sampled_entries(rng, p.value.shape, per_param):
            old = p.value[idx]
            p.value[idx] = old + h
            up = loss()
            p.value[idx] = old - h
            down = loss()
            p.value[idx] = old
            worst = max(worst, relative_error(analytic[p.name][idx] * perturb, (up - down) / (2 * h)))
            count += 1
    return CheckResult(name, worst, RELATIVE_TOL, count)


def trunk_check(seed: int = 0, per_param: int = 12, h: float = 1e-6, perturb: float = 1.0) -> CheckResult:
    """Backprop through the toy trunk against central differences of ``sum(w * theta)``."""
    rng = np.random.default_rng(seed)
    trunk = Trunk(TOY_TRUNK, seed)
    x = rng.uniform(0, 1, (3, *TOY_TRUNK.input_shape))
    w = rng.normal(size=3)

    def loss():
        return float(w @ trunk.forward(x))

    trunk.zero_grad()
    trunk.forward(x)
    trunk.backward(w)
    analytic = {p.name: p.grad.copy() for p in trunk.params()}
    return _param_check("trunk", trunk, loss, analytic, rng, per_param, h, perturb)


def hybrid_check(seed: int = 0, per_param: int = 12, h: float = 1e-6, perturb: float = 1.0) -> CheckResult:
    """Image -> trunk -> quantum layer -> BCE, against central differences."""
    from .train import HybridModel, hybrid_backward, hybrid_loss

    rng = np.random.default_rng(seed)
    model = HybridModel.create(TOY_TRUNK, AnsatzConfig.from_calibration(), seed)
    sample = two_blob_toy(2, size=8, seed=seed)[int(rng.integers(0, 4))]
    analytic = hybrid_backward(model, sample.image, sample.label)
    return _param_check("hybrid", model.trunk, lambda: hybrid_loss(model, sample.image, sample.label),
                        analytic, rng, per_param, h, perturb)


def run_all(seed: int = 0, perturb: float = 1.0) -> list[CheckResult]:
    return [quantum_check(seed, perturb=perturb), trunk_check(seed, perturb=perturb),
            hybrid_check(seed, perturb=perturb)]
