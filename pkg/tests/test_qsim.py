import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vqnn import qsim
from vqnn.errors import QubitCapError, ShapeError, UnboundParameterError, UnsupportedGradientError
from vqnn.qsim import Circuit, Gate, Observable, PauliString

S2 = 1 / math.sqrt(2)


def same_up_to_phase(a, b, atol=1e-10):
    k = int(np.argmax(np.abs(b)))
    phase = a[k] / b[k]
    return abs(abs(phase) - 1) < atol and np.allclose(a, phase * b, atol=atol)


def fd_grad(circuit, bindings, obs, sym, h=1e-5):
    up = dict(bindings, **{sym: bindings[sym] + h})
    dn = dict(bindings, **{sym: bindings[sym] - h})
    f = lambda b: qsim.expectation(qsim.run(circuit, b), obs)
    return (f(up) - f(dn)) / (2 * h)


def test_zero_state():
    np.testing.assert_array_equal(qsim.zero_state(1).amps, [1, 0])
    np.testing.assert_array_equal(qsim.zero_state(2).amps, [1, 0, 0, 0])
    with pytest.raises(QubitCapError):
        qsim.zero_state(13)
    with pytest.raises(QubitCapError):
        qsim.zero_state(0)


def test_statevector_rejects_unnormalized():
    with pytest.raises(ValueError):
        qsim.StateVector(1, np.array([1, 1], dtype=complex))
    with pytest.raises(ShapeError):
        qsim.StateVector(2, np.array([1, 0], dtype=complex))


def test_apply_gate_examples():
    s = qsim.apply_gate(qsim.zero_state(1), qsim.h(0))
    np.testing.assert_allclose(s.amps, [S2, S2], atol=1e-15)

    s = qsim.apply_gate(qsim.zero_state(1), qsim.rx(0, math.pi))
    np.testing.assert_allclose(s.amps, [0, -1j], atol=1e-15)

    # |10> : qubit 0 set -> index 1
    s10 = qsim.apply_gate(qsim.zero_state(2), qsim.x(0))
    assert s10.amps[1] == 1
    s11 = qsim.apply_gate(s10, qsim.cx(0, 1))
    np.testing.assert_allclose(s11.amps, [0, 0, 0, 1])


def test_apply_gate_bad_index():
    with pytest.raises(IndexError):
        qsim.apply_gate(qsim.zero_state(2), qsim.h(2))
    with pytest.raises(ValueError):
        qsim.cx(1, 1)


def test_run_examples():
    c = Circuit(1, [qsim.h(0)])
    np.testing.assert_allclose(qsim.run(c).amps, [S2, S2], atol=1e-15)

    bell = qsim.run(Circuit(2, [qsim.h(0), qsim.cx(0, 1)]))
    np.testing.assert_allclose(bell.amps, [S2, 0, 0, S2], atol=1e-15)

    c = Circuit(1, [qsim.rz(0)], {"t": [(0, 1.0)]})
    assert same_up_to_phase(qsim.run(c, {"t": 0.0}).amps, np.array([1, 0], dtype=complex))


def test_run_binding_scales_angle():
    c = Circuit(1, [qsim.rx(0)], {"t": [(0, 2.0)]})
    s = qsim.run(c, {"t": math.pi / 2})
    np.testing.assert_allclose(s.amps, [0, -1j], atol=1e-15)


def test_run_unbound():
    c = Circuit(1, [qsim.rx(0)], {"t": [(0, 1.0)]})
    with pytest.raises(UnboundParameterError):
        qsim.run(c, {})


def test_circuit_validation():
    with pytest.raises(IndexError):
        Circuit(2, [qsim.h(3)])
    with pytest.raises(ValueError):
        Circuit(1, [qsim.rx(0)], {"t": []})
    with pytest.raises(IndexError):
        Circuit(1, [qsim.rx(0)], {"t": [(4, 1.0)]})


def test_expectation_examples():
    z = Observable.single("Z")
    assert qsim.expectation(qsim.zero_state(1), z) == 1.0
    plus = qsim.run(Circuit(1, [qsim.h(0)]))
    assert abs(qsim.expectation(plus, z)) < 1e-15
    bell = qsim.run(Circuit(2, [qsim.h(0), qsim.cx(0, 1)]))
    assert qsim.expectation(bell, Observable.single("ZZ")) == pytest.approx(1.0, abs=1e-14)


def test_expectation_letter_order_is_qubit_order():
    s = qsim.apply_gate(qsim.zero_state(2), qsim.x(0))
    assert qsim.expectation(s, Observable.single("ZI")) == pytest.approx(-1.0)
    assert qsim.expectation(s, Observable.single("IZ")) == pytest.approx(1.0)


def test_expectation_shape_mismatch():
    with pytest.raises(ShapeError):
        qsim.expectation(qsim.zero_state(2), Observable.single("Z"))


def test_expectation_matches_dense_matrix():
    rng = np.random.default_rng(3)
    for _ in range(20):
        c = qsim.random_circuit(rng, 3, 12)
        s = qsim.run(c)
        terms = tuple(PauliString(float(rng.normal()), "".join(rng.choice(list("IXYZ"), 3))) for _ in range(4))
        obs = Observable(terms)
        ref = np.vdot(s.amps, obs.matrix() @ s.amps).real
        assert qsim.expectation(s, obs) == pytest.approx(ref, abs=1e-12)


def test_sample_measurements():
    assert qsim.sample_measurements(qsim.zero_state(1), 100, seed=0) == {"0": 100}

    plus = qsim.run(Circuit(1, [qsim.h(0)]))
    counts = qsim.sample_measurements(plus, 10000, seed=42)
    assert sum(counts.values()) == 10000
    # binomial(10000, 1/2): sigma = 50, 4 sigma = 200
    assert abs(counts["0"] - 5000) < 200

    bell = qsim.run(Circuit(2, [qsim.h(0), qsim.cx(0, 1)]))
    assert set(qsim.sample_measurements(bell, 1000, seed=1)) <= {"00", "11"}


def test_sample_bitstring_order():
    s = qsim.apply_gate(qsim.zero_state(3), qsim.x(0))
    assert qsim.sample_measurements(s, 5, seed=0) == {"100": 5}


def test_sampling_deterministic():
    s = qsim.run(qsim.random_circuit(np.random.default_rng(0), 3, 10))
    assert qsim.sample_measurements(s, 500, 9) == qsim.sample_measurements(s, 500, 9)
    with pytest.raises(ValueError):
        qsim.sample_measurements(s, 0, 9)


def test_dense_unitary_examples():
    u = qsim.dense_unitary(Circuit(1, [qsim.h(0)]))
    np.testing.assert_allclose(u, S2 * np.array([[1, 1], [1, -1]]), atol=1e-15)

    u = qsim.dense_unitary(Circuit(2, [qsim.cx(0, 1)]))
    perm = np.zeros((4, 4))
    for i, j in [(0, 0), (1, 3), (2, 2), (3, 1)]:
        perm[j, i] = 1
    np.testing.assert_array_equal(u, perm)

    with pytest.raises(QubitCapError):
        qsim.dense_unitary(Circuit(4, [qsim.h(0)]))


def test_dense_unitary_oracle_50_random():
    rng = np.random.default_rng(50)
    for _ in range(50):
        n = int(rng.integers(1, 4))
        c = qsim.random_circuit(rng, n, int(rng.integers(1, 15)), symbols=["a"])
        b = {"a": float(rng.uniform(-3, 3))}
        u = qsim.dense_unitary(c, b)
        np.testing.assert_allclose(u.conj().T @ u, np.eye(1 << n), atol=1e-10)
        np.testing.assert_allclose(qsim.run(c, b).amps, u[:, 0], atol=1e-9)


@pytest.mark.parametrize("kind", sorted(qsim.KINDS))
def test_gate_unitary(kind):
    if kind == "CX":
        g = qsim.cx(0, 1)
    else:
        g = Gate(kind, (0,), 0.731 if kind in qsim.ROTATIONS else None)
    m = g.matrix()
    np.testing.assert_allclose(m.conj().T @ m, np.eye(len(m)), atol=1e-12)


def test_parameter_shift_examples():
    c = Circuit(1, [qsim.rx(0)], {"t": [(0, 1.0)]})
    z = Observable.single("Z")
    assert qsim.parameter_shift_grad(c, {"t": 0.0}, z, "t") == pytest.approx(0.0, abs=1e-15)
    assert qsim.parameter_shift_grad(c, {"t": math.pi / 2}, z, "t") == pytest.approx(-1.0, abs=1e-14)


def test_parameter_shift_random_2q_matches_fd():
    rng = np.random.default_rng(11)
    c = qsim.random_circuit(rng, 2, 8, symbols=["t"])
    b = {"t": 0.37}
    obs = Observable((PauliString(0.7, "ZX"), PauliString(-0.2, "YI")))
    assert qsim.parameter_shift_grad(c, b, obs, "t") == pytest.approx(fd_grad(c, b, obs, "t"), abs=1e-6)


def test_parameter_shift_rejects_non_rotation():
    c = Circuit(1, [qsim.h(0)], {"t": [(0, 1.0)]})
    with pytest.raises(UnsupportedGradientError):
        qsim.parameter_shift_grad(c, {"t": 0.1}, Observable.single("Z"), "t")


def test_diagram_one_line_per_gate():
    c = Circuit(2, [qsim.h(0), qsim.rz(1), qsim.cx(0, 1)], {"t": [(1, 2.0)]})
    lines = c.diagram({"t": 0.0}).splitlines()
    assert len(lines) == 3
    assert "RZ(0.0000) q1" in lines[1]
    assert "q0 -> q1" in lines[2]


# --- properties ------------------------------------------------------------------

circuits = st.builds(
    lambda seed, n, g: qsim.random_circuit(np.random.default_rng(seed), n, g, symbols=["a", "b"]),
    st.integers(0, 2**32 - 1), st.integers(1, 3), st.integers(1, 20),
)
angles = st.floats(-2 * math.pi, 2 * math.pi)


@settings(max_examples=60, deadline=None)
@given(circuits, angles, angles)
def test_norm_preserved(c, a, b):
    n = c.n_qubits
    state = qsim.zero_state(n)
    for g, ang in zip(c.gates, c.resolved_angles({"a": a, "b": b})):
        if ang is not None:
            g = Gate(g.kind, g.qubits, ang)
        state = qsim.apply_gate(state, g)
        assert abs(state.norm() - 1) < 1e-10


@settings(max_examples=60, deadline=None)
@given(circuits, angles, angles)
def test_inverse_round_trip(c, a, b):
    state = qsim.run(qsim.random_circuit(np.random.default_rng(7), c.n_qubits, 5))
    for g, ang in zip(c.gates, c.resolved_angles({"a": a, "b": b})):
        if ang is not None:
            g = Gate(g.kind, g.qubits, ang)
        back = qsim.apply_gate(qsim.apply_gate(state, g), g.inverse())
        np.testing.assert_allclose(back.amps, state.amps, atol=1e-10)


@settings(max_examples=60, deadline=None)
@given(circuits, angles, angles)
def test_run_matches_dense_unitary(c, a, b):
    bind = {"a": a, "b": b}
    np.testing.assert_allclose(qsim.run(c, bind).amps, qsim.dense_unitary(c, bind)[:, 0], atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(circuits, angles, st.floats(-5, 5), st.text("IXYZ", min_size=3, max_size=3))
def test_expectation_real_and_bounded(c, a, coeff, letters):
    state = qsim.run(c, {"a": a, "b": 0.3})
    obs = Observable.single(letters[: c.n_qubits], coeff)
    val = np.vdot(state.amps, obs.matrix() @ state.amps)
    assert abs(val.imag) < 1e-10
    e = qsim.expectation(state, obs)
    assert -abs(coeff) - 1e-12 <= e <= abs(coeff) + 1e-12


def test_gradient_property_100_cases():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 4))
        c = qsim.random_circuit(rng, n, int(rng.integers(2, 12)), symbols=["t", "u"])
        b = {"t": float(rng.uniform(-np.pi, np.pi)), "u": float(rng.uniform(-np.pi, np.pi))}
        obs = Observable(tuple(
            PauliString(float(rng.normal()), "".join(rng.choice(list("IXYZ"), n))) for _ in range(2)))
        worst = max(worst, abs(qsim.parameter_shift_grad(c, b, obs, "t") - fd_grad(c, b, obs, "t")))
    assert worst < 1e-6
