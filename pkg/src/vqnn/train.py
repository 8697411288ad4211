"""Hybrid CNN -> quantum-layer training.

Forward: image -> trunk -> theta -> QAOA layer -> <C> -> p = (1 - <C>)/2 -> BCE.
Backward: dL/dtheta = dL/dp * (-1/2) * d<C>/dtheta (parameter shift), then
ordinary backprop through the trunk.  gamma/beta stay frozen.
"""
from __future__ import annotations

import csv
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import ansatz, checkpoint
from .ansatz import AnsatzConfig, CostHamiltonian
from .data import DatasetSplit, Sample, stack
from .errors import CheckpointError, DivergenceError
from .kvfile import read_kv, write_kv
from .nn import SGD, Trunk, TrunkConfig

log = logging.getLogger(__name__)

EPS = 1e-7
CSV_HEADER = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc", "wall_ms")
SIDECAR_SUFFIX = ".cfg"


@dataclass
class HybridModel:
    trunk: Trunk
    ansatz: AnsatzConfig
    cost: CostHamiltonian = field(default_factory=CostHamiltonian)

    def __post_init__(self):
        if self.cost.observable.n_qubits != self.ansatz.n_qubits:
            raise ValueError("cost Hamiltonian and ansatz disagree on qubit count")

    @classmethod
    def create(cls, trunk_config: TrunkConfig, ansatz_config: AnsatzConfig, seed: int = 0) -> "HybridModel":
        return cls(Trunk(trunk_config, seed), ansatz_config, CostHamiltonian.default(ansatz_config.n_qubits))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 16
    lr: float = 0.05
    momentum: float = 0.9
    seed: int = 0
    dataset: str = "mnist"
    split_ratio: float = 0.8
    calibration: str | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")


# --- loss ----------------------------------------------------------------------------

def bce_loss(p: float, label: int) -> float:
    p = min(max(p, EPS), 1 - EPS)
    return -(label * math.log(p) + (1 - label) * math.log(1 - p))


def bce_grad(p: float, label: int) -> float:
    """dL/dp; zero where the clamp is active."""
    if p < EPS or p > 1 - EPS:
        return 0.0
    return -label / p + (1 - label) / (1 - p)


# --- single-sample pipeline ---------------------------------------------------------------

def hybrid_forward(model: HybridModel, image: np.ndarray) -> tuple[float, float]:
    theta = float(model.trunk.forward(image)[0])
    return theta, ansatz.quantum_forward(theta, model.ansatz, model.cost).probability


def hybrid_backward(model: HybridModel, image: np.ndarray, label: int) -> dict[str, np.ndarray]:
    """Gradients of the single-sample loss for every trunk parameter."""
    model.trunk.zero_grad()
    theta = float(model.trunk.forward(image)[0])
    out = ansatz.quantum_forward(theta, model.ansatz, model.cost, grad=True)
    dtheta = bce_grad(out.probability, label) * -0.5 * out.grad_theta
    model.trunk.backward(np.array([dtheta]))
    return {p.name: p.grad.copy() for p in model.trunk.params()}


def hybrid_loss(model: HybridModel, image: np.ndarray, label: int) -> float:
    return bce_loss(hybrid_forward(model, image)[1], label)


# --- batched helpers -----------------------------------------------------------------------

def _quantum_batch(model: HybridModel, thetas: np.ndarray, grad: bool):
    if not np.all(np.isfinite(thetas)):
        raise DivergenceError(f"trunk produced non-finite theta ({int(np.sum(~np.isfinite(thetas)))} of {len(thetas)})")
    outs = [ansatz.quantum_forward(float(t), model.ansatz, model.cost, grad=grad) for t in thetas]
    probs = np.array([o.probability for o in outs])
    grads = np.array([o.grad_theta for o in outs]) if grad else None
    return probs, grads


def train_batch(model: HybridModel, images: np.ndarray, labels: np.ndarray) -> float:
    """Accumulate mean-loss gradients for one batch into the trunk; returns the mean loss."""
    model.trunk.zero_grad()
    thetas = model.trunk.forward(images)
    probs, dexp = _quantum_batch(model, thetas, grad=True)
    losses = [bce_loss(p, int(y)) for p, y in zip(probs, labels)]
    dp = np.array([bce_grad(p, int(y)) for p, y in zip(probs, labels)])
    model.trunk.backward(dp * -0.5 * dexp / len(labels))
    return float(np.mean(losses))


@dataclass
class Evaluation:
    loss: float
    accuracy: float
    probabilities: np.ndarray
    predictions: np.ndarray
    thetas: np.ndarray


def predict_label(p: float) -> int:
    return int(p >= 0.5)


def evaluate(model: HybridModel, samples: Sequence[Sample], chunk: int = 256) -> Evaluation:
    if not samples:
        raise ValueError("cannot evaluate an empty sample list")
    thetas, probs = [], []
    for start in range(0, len(samples), chunk):
        images, _ = stack(samples[start:start + chunk])
        t = model.trunk.forward(images)
        thetas.append(t)
        probs.append(_quantum_batch(model, t, grad=False)[0])
    theta, p = np.concatenate(thetas), np.concatenate(probs)
    labels = np.array([s.label for s in samples])
    preds = (p >= 0.5).astype(np.int64)
    loss = float(np.mean([bce_loss(pi, int(y)) for pi, y in zip(p, labels)]))
    return Evaluation(loss, float(np.mean(preds == labels)), p, preds, theta)


# --- records ---------------------------------------------------------------------------------

@dataclass(frozen=True)
class EpochRow:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    wall_ms: int


@dataclass
class RunRecord:
    rows: list[EpochRow] = field(default_factory=list)

    def append(self, row: EpochRow) -> None:
        if self.rows and row.epoch <= self.rows[-1].epoch:
            raise ValueError("epochs must be strictly increasing")
        if not (0 <= row.train_acc <= 1 and 0 <= row.val_acc <= 1):
            raise ValueError("accuracies must lie in [0, 1]")
        self.rows.append(row)

    @property
    def final(self) -> EpochRow:
        return self.rows[-1]

    def to_csv(self, path: str | os.PathLike, wall_time: bool = True) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for r in self.rows:
                w.writerow([r.epoch, repr(r.train_loss), repr(r.train_acc), repr(r.val_loss), repr(r.val_acc),
                            r.wall_ms if wall_time else 0])

    @classmethod
    def from_csv(cls, path: str | os.PathLike) -> "RunRecord":
        rec = cls()
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != CSV_HEADER:
                raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
            for row in reader:
                rec.append(EpochRow(int(row["epoch"]), float(row["train_loss"]), float(row["train_acc"]),
                                    float(row["val_loss"]), float(row["val_acc"]), int(row["wall_ms"])))
        return rec


@dataclass
class FitResult:
    record: RunRecord
    best_epoch: int
    best_state: dict[str, np.ndarray]


def fit(model: HybridModel, dataset: DatasetSplit, config: TrainConfig,
        checkpoint_path: str | os.PathLike | None = None,
        on_epoch: Callable[[EpochRow], None] | None = None) -> FitResult:
    """Mini-batch SGD on ``dataset.train``; keeps the best-validation weights.

    The trunk ends training holding the final-epoch weights; the best ones are
    returned and, if ``checkpoint_path`` is given, written there.
    """
    rng = np.random.default_rng(config.seed)
    opt = SGD(model.trunk.params(), config.lr, config.momentum)
    images, labels = stack(dataset.train)
    record = RunRecord()
    best = (-1.0, math.inf)
    best_epoch, best_state = 0, model.trunk.state_dict()

    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        order = rng.permutation(len(labels))
        for b in range(0, len(order), config.batch_size):
            idx = order[b:b + config.batch_size]
            loss = train_batch(model, images[idx], labels[idx])
            if not math.isfinite(loss) or not all(np.all(np.isfinite(p.grad)) for p in model.trunk.params()):
                raise DivergenceError(f"non-finite loss/gradient at epoch {epoch}, batch {b // config.batch_size}"
                                      f" (loss={loss})")
            opt.step()
        tr = evaluate(model, dataset.train)
        va = evaluate(model, dataset.validation)
        if not (math.isfinite(tr.loss) and math.isfinite(va.loss)):
            raise DivergenceError(f"non-finite evaluation loss at epoch {epoch}")
        row = EpochRow(epoch, tr.loss, tr.accuracy, va.loss, va.accuracy,
                       int(round((time.perf_counter() - start) * 1000)))
        record.append(row)
        log.info("epoch %d train_loss=%.4f train_acc=%.4f val_loss=%.4f val_acc=%.4f (%d ms)",
                 epoch, tr.loss, tr.accuracy, va.loss, va.accuracy, row.wall_ms)
        if on_epoch:
            on_epoch(row)
        if (va.accuracy, -va.loss) > (best[0], -best[1]):
            best = (va.accuracy, va.loss)
            best_epoch, best_state = epoch, model.trunk.state_dict()

    if checkpoint_path is not None:
        save_model(checkpoint_path, model, best_state)
    return FitResult(record, best_epoch, best_state)


# --- persistence -------------------------------------------------------------------------------

def sidecar_path(path: str | os.PathLike) -> Path:
    return Path(str(path) + SIDECAR_SUFFIX)


def save_model(path: str | os.PathLike, model: HybridModel, state: dict[str, np.ndarray] | None = None) -> None:
    checkpoint.save(path, state if state is not None else model.trunk.state_dict())
    obs = model.cost.observable
    meta = dict(ansatz.config_to_kv(model.ansatz))
    meta["cost"] = ";".join(f"{t.coeff!r}*{t.letters}" for t in obs.terms)
    meta.update(model.trunk.config.to_kv())
    write_kv(sidecar_path(path), meta, header="hybrid model configuration")


def load_model(path: str | os.PathLike) -> HybridModel:
    from .qsim import Observable, PauliString

    tensors = checkpoint.load(path)
    side = sidecar_path(path)
    try:
        kv = read_kv(side)
        cfg = ansatz.config_from_kv(kv)
        terms = []
        for part in kv.get("cost", "1.0*" + "Z" * cfg.n_qubits).split(";"):
            coeff, letters = part.split("*")
            terms.append(PauliString(float(coeff), letters))
        trunk = Trunk(TrunkConfig.from_kv(kv))
        trunk.load_state_dict(tensors)
        return HybridModel(trunk, cfg, CostHamiltonian(Observable(tuple(terms))))
    except (OSError, KeyError, ValueError) as exc:
        raise CheckpointError(f"cannot restore model from {path} / {side}: {exc}") from exc
