import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qdmft.aim import hubbard_impurity, jordan_wigner
from qdmft.ed import dense_hamiltonian, ed_ground
from qdmft.qalg.adiabatic import (AdiabaticSchedule, PreparationError, free_orbitals, free_start,
                                  givens_network, prepare_exact, prepare_ground_state, prepare_slater,
                                  preparation_tally, slater_amplitudes)
from qdmft.qalg.qpe import QpeConfig, energy_moments
from qdmft.qsim import Statevector


def overlap(a, b):
    return abs(np.vdot(a, b)) ** 2


@pytest.fixture
def singlet_model():
    return hubbard_impurity(2.0, 1.0, [-0.8, 0.0, 0.8], [0.5, 0.3, 0.5])


@settings(max_examples=25, deadline=None)
@given(n=st.integers(2, 6), data=st.data())
def test_givens_network_builds_determinant(n, data):
    n_occ = data.draw(st.integers(1, n))
    seed = data.draw(st.integers(0, 10_000))
    r = np.random.default_rng(seed)
    a = r.normal(size=(n, n)) + 1j * r.normal(size=(n, n))
    Q = np.linalg.qr(a)[0][:n_occ]
    sv = prepare_slater(Q)
    assert overlap(sv.amplitudes, slater_amplitudes(Q)) == pytest.approx(1.0, abs=1e-12)
    assert len(givens_network(Q)) <= n_occ * (n - 1)


def test_free_start_adds_hartree_shift(singlet_model):
    m0 = free_start(singlet_model)
    assert m0.U == []
    np.testing.assert_allclose(np.diag(m0.t).real, [1.0, 1.0])


def test_free_orbitals_fill_negative_levels(singlet_model):
    m0 = free_start(singlet_model)
    Q = free_orbitals(m0)
    e = np.linalg.eigvalsh(m0.quadratic_matrix())
    assert Q.shape[0] == np.sum(e < 0)
    psi = prepare_slater(Q, m0.n_modes).amplitudes
    assert energy_moments(psi, jordan_wigner(m0))[0] == pytest.approx(e[e < 0].sum(), abs=1e-12)


def test_schedule_endpoints(singlet_model):
    sch = AdiabaticSchedule.linear(singlet_model, 1.0, steps=4)
    psi = Statevector(8, np.random.default_rng(0).normal(size=256)).amplitudes
    for s, which in ((0.0, "initial"), (1.0, "final")):
        d = sch.step_data(s)
        h = (d.diag + d.constant) * psi
        from qdmft.qsim import apply_pauli
        for c, k in d.strings:
            h = h + c * apply_pauli(psi, k)
        np.testing.assert_allclose(h, sch.terms(which).apply(psi), atol=1e-12)


def test_slow_ramp_reaches_ground_state(singlet_model):
    v0 = np.linalg.eigh(dense_hamiltonian(singlet_model))[1][:, 0]
    fast = AdiabaticSchedule.linear(singlet_model, 0.5).run()
    slow = AdiabaticSchedule.linear(singlet_model, 20.0).run()
    assert overlap(v0, slow.amplitudes) > 0.99
    assert overlap(v0, slow.amplitudes) > overlap(v0, fast.amplitudes)
    assert slow.tally.total > 0


def test_atomic_start_is_product_state(singlet_model):
    sch = AdiabaticSchedule.linear(singlet_model, 0.0, steps=1, start="atomic")
    psi = sch.initial_state().amplitudes
    e_atomic = ed_ground(sch.initial).energy
    assert energy_moments(psi, sch.terms("initial"))[0] == pytest.approx(e_atomic, abs=1e-12)


def test_prepare_with_hint(singlet_model):
    e0 = ed_ground(singlet_model).energy
    sch = AdiabaticSchedule.linear(singlet_model, 5.0)
    prep = prepare_ground_state(sch, QpeConfig(0.3, 5), seed=[1, 2], energy_hint=e0, max_step=0.01, qpe_order=2)
    state, energy, ok, tally = prep
    assert ok and abs(energy - e0) <= QpeConfig(0.3, 5).resolution / 2
    assert sum(prep.histogram.values()) == prep.attempts


def test_prepare_without_hint_uses_probes(singlet_model):
    e0 = ed_ground(singlet_model).energy
    sch = AdiabaticSchedule.linear(singlet_model, 5.0)
    prep = prepare_ground_state(sch, QpeConfig(0.3, 5), seed=3, max_step=0.01, qpe_order=2)
    assert prep.success and prep.attempts >= 3
    assert abs(prep.energy - e0) <= QpeConfig(0.3, 5).resolution / 2


def test_failure_is_reported(singlet_model):
    sch = AdiabaticSchedule.linear(singlet_model, 2.0)
    prep = prepare_ground_state(sch, QpeConfig(0.3, 5), seed=0, energy_hint=50.0, retries=4)
    assert not prep.success and prep.attempts == 4
    with pytest.raises(PreparationError, match="4 preparations"):
        prepare_ground_state(sch, QpeConfig(0.3, 5), seed=0, energy_hint=50.0, retries=4, raise_on_failure=True)


def test_prepare_exact(singlet_model):
    v0 = np.linalg.eigh(dense_hamiltonian(singlet_model))[1][:, 0]
    sch = AdiabaticSchedule.linear(singlet_model, 5.0)
    # the variance floor is set by the Trotter error of the QPE evolution
    prep = prepare_exact(sch, QpeConfig(0.3, 8), tol=1e-8, max_step=0.01)
    assert prep.success
    assert overlap(v0, prep.state.amplitudes) > 1 - 1e-7


def test_preparation_tally_adds_phases(singlet_model):
    sch = AdiabaticSchedule.linear(singlet_model, 5.0)
    bare = preparation_tally(sch, None)
    full = preparation_tally(sch, QpeConfig(0.3, 5))
    assert bare.total >= sch.step_tally().total * sch.steps
    assert full.total > bare.total
    assert full.counts["M"] == 5
