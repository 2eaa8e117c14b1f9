import math

import numpy as np
import pytest

from qdmft.aim import ImpurityModel, hubbard_impurity, jordan_wigner
from qdmft.qalg.qpe import (PhaseAliasingError, QpeConfig, energy_moments, ground_bin, project_to_ground,
                            outcome_distribution, purify, qpe_measure_energy, run_qpe)
from qdmft.qsim import Statevector


def level(eps):
    return jordan_wigner(ImpurityModel([[eps]], [], np.zeros((1, 0))))


def test_window_and_resolution():
    q = QpeConfig(0.5, 4, center=1.0)
    assert q.window == pytest.approx(4 * math.pi)
    assert q.resolution == pytest.approx(q.window / 16)
    assert q.total_time == pytest.approx(7.5)


def test_aliasing_rejected():
    with pytest.raises(PhaseAliasingError):
        QpeConfig(1.0, 3, width=7.0)
    QpeConfig(1.0, 3, width=2 * math.pi)


def test_decode():
    q = QpeConfig(2 * math.pi, 3)
    assert q.decode((0, 0, 0)) == 0.0
    assert q.decode((0, 1, 1)) == pytest.approx(3 / 8)
    # phases at or above 1/2 wrap below the centre
    assert q.decode((1, 0, 0)) == pytest.approx(-0.5)
    assert q.decode((1, 1, 1)) == pytest.approx(-1 / 8)


@pytest.mark.parametrize("k", [0, 1, 3, 5, -3])
def test_exact_bin_is_deterministic(k):
    q = QpeConfig(2 * math.pi / 8, 3)  # bins of width 1
    res = run_qpe(Statevector.basis(1, 1), level(float(k)), q, seed=0)
    expected = k if k < 4 else k - 8
    assert res.energy == pytest.approx(expected)
    assert res.probability == pytest.approx(1.0)


def test_superposition_outcome_frequencies():
    q = QpeConfig(2 * math.pi / 8, 3)
    psi = Statevector(1, [0.6, 0.8])  # energies 0 and 2 with weights 0.36, 0.64
    tg = level(2.0)
    hits = sum(qpe_measure_energy(psi, tg, q, seed=s)[0] == pytest.approx(2.0) for s in range(2000))
    assert abs(hits / 2000 - 0.64) < 0.035


def test_collapse_onto_measured_eigenstate():
    q = QpeConfig(2 * math.pi / 8, 3)
    e, post = qpe_measure_energy(Statevector(1, [0.6, 0.8]), level(2.0), q, seed=4)
    np.testing.assert_allclose(np.abs(post.amplitudes), [0, 1] if e == pytest.approx(2.0) else [1, 0], atol=1e-12)


def test_off_grid_energy_within_half_bin():
    tg = jordan_wigner(hubbard_impurity(2.0, 1.0, [0.3], [0.5]))
    e, v = np.linalg.eigh(tg.to_dense())
    q = QpeConfig(0.4, 6, center=e[0] + 0.37)
    res = run_qpe(v[:, 0], tg, q, seed=1, max_step=0.002, order=2)
    assert abs(res.energy - e[0]) <= q.resolution
    assert res.tally.counts["M"] == 6


def test_projection_succeeds_on_ground_state():
    tg = jordan_wigner(hubbard_impurity(2.0, 1.0, [0.3], [0.5]))
    e, v = np.linalg.eigh(tg.to_dense())
    ok, post = project_to_ground(v[:, 0], tg, QpeConfig(0.3, 4), e[0], seed=2, max_step=0.01, order=2)
    assert ok
    assert abs(np.vdot(v[:, 0], post.amplitudes)) ** 2 > 1 - 1e-6
    assert ground_bin(QpeConfig(0.3, 4)) == (0, 0, 0, 0)


def test_purify_filters_excited_weight():
    tg = jordan_wigner(hubbard_impurity(2.0, 1.0, [0.3], [0.5]))
    e, v = np.linalg.eigh(tg.to_dense())
    mix = np.sqrt(0.7) * v[:, 0] + np.sqrt(0.3) * v[:, 5]
    assert energy_moments(mix, tg)[1] > 0.01
    psi, energy, rounds, tally = purify(mix, tg, QpeConfig(0.3, 6), max_step=0.005, order=2)
    assert energy == pytest.approx(e[0], abs=1e-6)
    assert abs(np.vdot(v[:, 0], psi)) ** 2 > 1 - 1e-6
    assert rounds >= 1 and tally.total > 0


def test_outcome_distribution_matches_sampling_law():
    tg = jordan_wigner(hubbard_impurity(2.0, 1.0, [0.3], [0.5]))
    e, v = np.linalg.eigh(tg.to_dense())
    q = QpeConfig(2 * math.pi / 8, 3, center=round(e[0]))
    psi = (v[:, 0] + v[:, 3] + v[:, 9]) / np.sqrt(3)
    dist = outcome_distribution(psi, tg, q, max_step=0.005, order=2)
    energies = [x for x, _ in dist]
    assert energies == sorted(energies)
    assert sum(p for _, p in dist) == pytest.approx(1.0, abs=1e-10)
    # each outcome probability is what a forced run reports
    for energy, p in dist[:3]:
        bits = next(b for b in np.ndindex(2, 2, 2) if q.decode(b) == pytest.approx(energy))
        assert run_qpe(psi, tg, q, forced=bits, max_step=0.005, order=2).probability == pytest.approx(p, rel=1e-8)


def test_purify_from_a_fixed_centre_keeps_the_lowest_state():
    tg = jordan_wigner(hubbard_impurity(2.0, 1.0, [0.3], [0.5]))
    e, v = np.linalg.eigh(tg.to_dense())
    k = int(np.argmax(e > e[0] + 2.0))
    mix = np.sqrt(0.3) * v[:, 0] + np.sqrt(0.7) * v[:, k]
    q = QpeConfig(0.3, 6)
    # centred on <H> the filter ends on the dominant excited state
    psi, energy, *_ = purify(mix, tg, q, max_step=0.005, order=2)
    assert energy == pytest.approx(e[k], abs=1e-6)
    low = next(x for x, p in outcome_distribution(mix, tg, q.centered(e[0] + 1), max_step=0.005, order=2) if p > 0.05)
    psi, energy, *_ = purify(mix, tg, q, center=low, max_step=0.005, order=2)
    assert energy == pytest.approx(e[0], abs=1e-6)
