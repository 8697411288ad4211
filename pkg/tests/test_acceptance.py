"""Acceptance criteria, each run at its stated tolerance.

Every test reports one PASS/FAIL/SKIP line; the lines are repeated in the
``acceptance criteria`` section of the pytest summary.
"""
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from vqnn import ansatz, cli, gradcheck, qsim
from vqnn.ansatz import AnsatzConfig
from vqnn.train import RunRecord

FIXTURE = Path(__file__).parent / "data"
CRACK_ENV = "VQNN_CRACK_DIR"


def _train(tmp_path, *argv):
    start = time.perf_counter()
    code = cli.main(["train", "--out", str(tmp_path), *argv])
    return code, time.perf_counter() - start


def test_mnist_binary_accuracy(tmp_path, criterion):
    code, seconds = _train(tmp_path, "--dataset", "mnist", "--data-dir", str(FIXTURE), "--limit", "200",
                           "--epochs", "20")
    final = RunRecord.from_csv(tmp_path / "mnist.csv").final
    ok = code == 0 and final.train_acc >= 0.97 and final.val_acc >= 0.95 and seconds <= 600
    criterion("MNIST 0/1, 200 train images, 20 epochs (>= 0.97 train, >= 0.95 val, <= 10 min)", ok,
              f"train {final.train_acc:.4f} val {final.val_acc:.4f} in {seconds:.1f} s")
    assert ok


def test_crack_detection_accuracy(tmp_path, criterion):
    name = "crack detection, 200/class at 64x64, 30 epochs (>= 0.80 train, >= 0.75 val, <= 30 min)"
    root = os.environ.get(CRACK_ENV)
    if not root:
        criterion(name, None, f"real crack corpus not available; set {CRACK_ENV} to its Negative/Positive root")
        pytest.skip(f"{CRACK_ENV} not set")
    code, seconds = _train(tmp_path, "--dataset", "crack", "--data-dir", root, "--limit", "200", "--size", "64",
                           "--epochs", "30")
    final = RunRecord.from_csv(tmp_path / "crack.csv").final
    ok = code == 0 and final.train_acc >= 0.80 and final.val_acc >= 0.75 and seconds <= 1800
    criterion(name, ok, f"train {final.train_acc:.4f} val {final.val_acc:.4f} in {seconds:.1f} s")
    assert ok


def test_crack_pipeline_on_synthetic_surrogate(tmp_path, criterion):
    """Not the criterion: same run on procedurally generated crack images."""
    from vqnn import synthetic

    synthetic.write_crack_folder(tmp_path / "crack", 200, size=227, seed=0)
    code, seconds = _train(tmp_path / "out", "--dataset", "crack", "--data-dir", str(tmp_path), "--limit", "200",
                           "--size", "64", "--epochs", "30")
    final = RunRecord.from_csv(tmp_path / "out" / "crack.csv").final
    ok = code == 0 and final.train_acc >= 0.80 and final.val_acc >= 0.75
    criterion("crack pipeline on SYNTHETIC surrogate images (informational, not the real corpus)", ok,
              f"train {final.train_acc:.4f} val {final.val_acc:.4f} in {seconds:.1f} s")
    assert ok


def test_reference_expectation(tmp_path, capsys, criterion):
    cal_path = tmp_path / "calibration.txt"
    assert cli.main(["calibrate", "--target", "-0.124", "--theta", "0.785398", "--grid", "256",
                     "--output", str(cal_path)]) == 0
    capsys.readouterr()
    code = cli.main(["expectation", "--theta", "0.785398", "--calibration", str(cal_path)])
    printed = capsys.readouterr().out.strip()
    cal = ansatz.load_calibration(cal_path)
    ok = code == 0 and abs(float(printed) - (-0.124)) <= 0.005
    criterion("reference expectation at theta=pi/4 after 256^2 calibration (-0.124 +/- 0.005)", ok,
              f"printed {printed}, gamma {cal.gamma:.6f} beta {cal.beta:.6f}, residual {cal.residual:.2e}")
    assert ok


def test_simulator_oracle_equivalence(criterion):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    for i in range(200):
        n = 1 + i % 3
        circ = qsim.random_circuit(rng, n, int(rng.integers(1, 25)))
        dense = qsim.dense_unitary(circ)[:, 0]
        worst = max(worst, float(np.max(np.abs(qsim.run(circ).amps - dense))))
    seconds = time.perf_counter() - start
    ok = worst <= 1e-9 and seconds < 10
    criterion("statevector vs dense Kronecker unitary, 200 random circuits <= 3 qubits (1e-9, < 10 s)", ok,
              f"max amplitude deviation {worst:.2e} in {seconds:.2f} s")
    assert ok


def test_gradient_fidelity(capsys, criterion):
    quantum = gradcheck.quantum_check(seed=0, cases=100)
    hybrid = gradcheck.hybrid_check(seed=0)
    code = cli.main(["gradcheck"])
    capsys.readouterr()
    ok = quantum.max_deviation < 1e-6 and hybrid.max_deviation < 1e-4 and code == 0
    criterion("parameter shift vs finite differences (1e-6 abs, 100 configs); hybrid (1e-4 rel); gradcheck exit 0",
              ok, f"quantum {quantum.max_deviation:.2e}, hybrid {hybrid.max_deviation:.2e}, exit {code}")
    assert ok


def test_null_physics_and_norms(criterion):
    rng = np.random.default_rng(7)
    worst_e = worst_p = 0.0
    for theta in np.concatenate([np.linspace(-2 * math.pi, 2 * math.pi, 41), rng.uniform(-10, 10, 60)]):
        for beta in np.concatenate([np.linspace(0, math.pi, 9), rng.uniform(-5, 5, 3)]):
            out = ansatz.quantum_forward(float(theta), AnsatzConfig.single(0.0, float(beta)))
            worst_e = max(worst_e, abs(out.expectation))
            worst_p = max(worst_p, abs(out.probability - 0.5))
    worst_norm = 0.0
    for i in range(300):
        circ = qsim.random_circuit(rng, 1 + i % 5, int(rng.integers(1, 40)))
        worst_norm = max(worst_norm, abs(qsim.run(circ).norm() - 1.0))
    for _ in range(100):
        cfg = gradcheck.random_ansatz(rng)
        state = qsim.run(ansatz.build_ansatz(cfg), {ansatz.THETA: float(rng.uniform(-4, 4))})
        worst_norm = max(worst_norm, abs(state.norm() - 1.0))
    ok = worst_e <= 1e-12 and worst_p <= 1e-12 and worst_norm < 1e-10
    criterion("gamma=0 gives <C>=0 and p=0.5 (1e-12); norm preserved (< 1e-10)", ok,
              f"max |<C>| {worst_e:.1e}, max |p-0.5| {worst_p:.1e}, max norm drift {worst_norm:.1e}")
    assert ok


def test_training_determinism(tmp_path, criterion):
    argv = ["--dataset", "mnist", "--data-dir", str(FIXTURE), "--limit", "60", "--epochs", "3", "--seed", "11"]
    assert _train(tmp_path / "a", *argv)[0] == 0
    assert _train(tmp_path / "b", *argv)[0] == 0
    a, b = (tmp_path / "a" / "mnist.csv").read_bytes(), (tmp_path / "b" / "mnist.csv").read_bytes()
    ck_a, ck_b = (tmp_path / "a" / "mnist.ckpt").read_bytes(), (tmp_path / "b" / "mnist.ckpt").read_bytes()
    ok = a == b
    criterion("two cmd_train runs with identical flags and seed give byte-identical CSV", ok,
              f"CSV {len(a)} bytes {'identical' if ok else 'DIFFER'}; checkpoints "
              f"{'identical' if ck_a == ck_b else 'differ'}")
    assert ok
