import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qdmft.qsim import (Gate, GateTally, QubitIndexError, Statevector, apply_gate, apply_pauli,
                        exp_pauli_inplace, expectation_z, measure_qubit, pauli_kernel)

PAULI = {"X": np.array([[0, 1], [1, 0]]), "Y": np.array([[0, -1j], [1j, 0]]), "Z": np.diag([1, -1])}


def dense_pauli(paulis, n):
    # kron with qubit n-1 leftmost, so qubit 0 is the least significant bit
    ops = {q: PAULI[p] for q, p in paulis}
    m = np.eye(1)
    for q in reversed(range(n)):
        m = np.kron(m, ops.get(q, np.eye(2)))
    return m


def random_state(n, seed):
    r = np.random.default_rng(seed)
    v = r.normal(size=1 << n) + 1j * r.normal(size=1 << n)
    return Statevector(n, v / np.linalg.norm(v))


def test_hadamard_on_zero():
    sv = apply_gate(Statevector(1), Gate("H", 0))
    np.testing.assert_allclose(sv.amplitudes, [2**-0.5, 2**-0.5])


def test_cnot_control_set():
    # |10> in ket order q1 q0 means qubit 0 set: index 1
    sv = apply_gate(Statevector.basis(2, 0b01), Gate("CNOT", 1, control=0))
    assert np.argmax(np.abs(sv.amplitudes)) == 0b11


def test_r_gate_phase():
    sv = apply_gate(Statevector.basis(1, 1), Gate("R", 0, theta=0.3))
    assert sv.amplitudes[1] == pytest.approx(np.exp(0.3j))


@pytest.mark.parametrize("kind", ["H", "X", "Y", "S", "Z", "R"])
def test_gate_unitary(kind):
    m = Gate(kind, 0, theta=0.7).matrix()
    np.testing.assert_allclose(m.conj().T @ m, np.eye(2), atol=1e-12)


def test_bad_gates():
    with pytest.raises(ValueError):
        Gate("CNOT", 0)
    with pytest.raises(ValueError):
        Gate("X", 1, control=1)
    with pytest.raises(QubitIndexError):
        Statevector(2).apply(Gate("X", 2))


def test_tally_counts_labels():
    sv = Statevector(2)
    sv.apply_all([Gate("H", 0), Gate("X", 1, control=0), Gate("CNOT", 1, control=0), Gate("H", 0)])
    assert sv.tally.to_dict() == {"CNOT": 1, "CX": 1, "H": 2, "total": 4}


def test_measure_eigenstate():
    bit, post = measure_qubit(Statevector.basis(1, 1), 0, 5)
    assert bit == 1
    np.testing.assert_allclose(post.amplitudes, [0, 1])


def test_measure_frequency():
    sv = Statevector(1, [0.6, 0.8])
    ones = sum(measure_qubit(sv, 0, s)[0] for s in range(10_000))
    assert abs(ones / 1e4 - 0.64) < 0.015


def test_measure_deterministic():
    sv = random_state(3, 0)
    assert [measure_qubit(sv, 1, 9)[0] for _ in range(5)] == [measure_qubit(sv, 1, 9)[0]] * 5


def test_expectation_z():
    assert expectation_z(Statevector(1), 0) == 1.0
    assert expectation_z(apply_gate(Statevector(1), Gate("H", 0)), 0) == pytest.approx(0.0)
    assert expectation_z(Statevector(1, [0.6, 0.8]), 0) == pytest.approx(-0.28)


def test_norm_drift_long_sequence():
    r = np.random.default_rng(0)
    sv = random_state(4, 1)
    kinds = ["H", "Y", "S", "R", "CNOT"]
    for _ in range(20_000):
        k = kinds[r.integers(5)]
        t, c = r.choice(4, 2, replace=False)
        sv.apply(Gate(k, int(t), int(c) if k == "CNOT" or r.random() < 0.3 else None, theta=r.normal()))
    assert abs(sv.norm() - 1) < 1e-8


@settings(max_examples=60, deadline=None)
@given(kind=st.sampled_from(["H", "X", "Y", "S", "Z", "R", "CNOT"]), target=st.integers(0, 3),
       control=st.one_of(st.none(), st.integers(0, 3)), theta=st.floats(-6, 6), seed=st.integers(0, 999))
def test_gate_then_inverse(kind, target, control, theta, seed):
    if control == target or (kind == "CNOT" and control is None):
        control = (target + 1) % 4
    g = Gate(kind, target, control, theta)
    sv = random_state(4, seed)
    before = sv.amplitudes.copy()
    sv.apply(g).apply(g.inverse())
    np.testing.assert_allclose(sv.amplitudes, before, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(word=st.lists(st.sampled_from("IXYZ"), min_size=3, max_size=3), angle=st.floats(-3, 3),
       seed=st.integers(0, 999))
def test_pauli_kernels_match_dense(word, angle, seed):
    paulis = [(q, p) for q, p in enumerate(word) if p != "I"]
    kern = pauli_kernel(paulis, 3)
    P = dense_pauli(paulis, 3)
    psi = random_state(3, seed).amplitudes
    np.testing.assert_allclose(apply_pauli(psi, kern), P @ psi, atol=1e-12)
    arr = psi.copy()
    exp_pauli_inplace(arr, kern, angle)
    expected = (np.cos(angle) * np.eye(8) - 1j * np.sin(angle) * P) @ psi
    np.testing.assert_allclose(arr, expected, atol=1e-12)


def test_tally_total_is_sum():
    t = GateTally()
    t.add("H", 3)
    t.add("CNOT", 2)
    t.update(t, 2)
    assert t.total == sum(t.counts.values()) == 15
