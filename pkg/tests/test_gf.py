import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qdmft.aim import ImpurityModel, hubbard_impurity, jordan_wigner
from qdmft.ed import ed_ground, ed_greens
from qdmft.gf import (GroundState, RealTimeGF, TimeGrid, measure_umeas, measurement_count, read_gf_tsv,
                      reconstruct_gf, sweep_greens, umeas_expectation, write_gf_tsv)


@pytest.fixture(scope="module")
def singlet():
    model = hubbard_impurity(2.0, 1.0, [-0.8, 0.0, 0.8], [0.5, 0.3, 0.5])
    sol = ed_ground(model)
    assert sol.degeneracy == 1
    ground = GroundState(sol.full_vector(), sol.energy, jordan_wigner(model), max_step=0.002, order=2, n_so=2)
    return model, sol, ground


def empty_level(eps):
    tg = jordan_wigner(ImpurityModel([[eps]], [], np.zeros((1, 0))))
    # a single level has only diagonal strings: any step is exact
    return GroundState(np.array([1.0, 0.0], dtype=complex), 0.0, tg, max_step=10.0, order=2)


def test_log_grid():
    g = TimeGrid.log(1e-5, 40.0, 1200)
    assert g.points[0] == 1e-5 and g.points[-1] == 40.0
    i = 517
    assert g.points[i] == pytest.approx(1e-5 * np.exp(np.log(40 / 1e-5) * i / 1199), rel=1e-13)
    with pytest.raises(ValueError):
        TimeGrid.log(1.0, 0.5, 10)
    with pytest.raises(ValueError):
        TimeGrid(np.array([0.1, 0.1, 0.2]))


def test_reconstruction_channels():
    assert reconstruct_gf(1.0, -1j) == pytest.approx((1.0, 0.0))
    assert reconstruct_gf(1.0, 1j) == pytest.approx((0.0, 1.0))


@given(st.complex_numbers(max_magnitude=1), st.complex_numbers(max_magnitude=1),
       st.complex_numbers(max_magnitude=1), st.complex_numbers(max_magnitude=1), st.floats(0, 1))
def test_reconstruction_is_linear(a11, a12, b11, b12, w):
    mixed = reconstruct_gf(w * a11 + (1 - w) * b11, w * a12 + (1 - w) * b12)
    sep = [w * x + (1 - w) * y for x, y in zip(reconstruct_gf(a11, a12), reconstruct_gf(b11, b12))]
    np.testing.assert_allclose(mixed, sep, atol=1e-12)


def test_measurement_count_plan():
    assert measurement_count(1000, 400, 2) == 3_200_000
    assert measurement_count(1000, 400, 2, anomalous=True) == 6_400_000
    assert measurement_count(1000, 400, 1) == 1_600_000


def test_umeas_at_zero_time_is_deterministic():
    g = empty_level(0.7)
    bits = {measure_umeas(g, 0, 0, 0.0, "11", "real", s)[0] for s in range(20)}
    assert bits == {0}


@pytest.mark.parametrize("t", [0.3, 1.7, 4.0])
def test_single_level_cosine(t):
    g = empty_level(0.9)
    assert umeas_expectation(g, 0, 0, t, "11").real == pytest.approx(np.cos(0.9 * t), abs=1e-10)
    n = 4000
    mean = np.mean([1 - 2 * measure_umeas(g, 0, 0, t, "11", "real", s)[0] for s in range(n)])
    assert abs(mean - np.cos(0.9 * t)) < 3 / np.sqrt(n)


def test_umeas_argument_checks():
    g = empty_level(0.5)
    with pytest.raises(IndexError):
        measure_umeas(g, 3, 0, 1.0, "11", "real", 0)
    with pytest.raises(ValueError):
        measure_umeas(g, 0, 0, -1.0, "11", "real", 0)
    with pytest.raises(ValueError):
        measure_umeas(g, 0, 0, 1.0, "13", "real", 0)


def test_exact_sweep_matches_ed(singlet):
    model, sol, ground = singlet
    grid = TimeGrid.log(1e-8, 10.0, 40)
    gf = sweep_greens(ground, grid, symmetry="none")
    ref = ed_greens(sol, grid)
    for a in range(2):
        assert np.max(np.abs(gf.gp[:, a, a] - ref.gp[:, a, a])) < 1e-6
        assert np.max(np.abs(gf.gh[:, a, a] - ref.gh[:, a, a])) < 1e-6
    assert gf.gp[0, 0, 0] + gf.gh[0, 0, 0] == pytest.approx(1.0, abs=1e-6)


def test_spin_degenerate_copy(singlet):
    _, _, ground = singlet
    gf = sweep_greens(ground, TimeGrid.log(0.01, 2.0, 5))
    np.testing.assert_array_equal(gf.gp[:, 1, 1], gf.gp[:, 0, 0])
    np.testing.assert_array_equal(gf.gh[:, 1, 1], gf.gh[:, 0, 0])


def test_offdiagonal_pair(singlet):
    model, sol, ground = singlet
    grid = TimeGrid.log(0.01, 2.0, 5)
    gf = sweep_greens(ground, grid, symmetry="none", pairs=[(0, 0), (0, 1)])
    # S_z conservation forbids up-down propagation
    assert np.max(np.abs(gf.gp[:, 0, 1])) < 1e-12


def test_binomial_shots_within_statistics(singlet):
    model, sol, ground = singlet
    grid = TimeGrid.log(0.01, 8.0, 25)
    n = 400
    gf = sweep_greens(ground, grid, n, seed=[7], estimator="shots")
    ref = ed_greens(sol, grid)
    # each of Gp, Gh is half a sum of two estimates with variance <= 2/n
    assert np.max(np.abs(gf.gp[:, 0, 0] - ref.gp[:, 0, 0])) < 3 * np.sqrt(2 / n)
    assert gf.stats["bits"] == 4 * n * grid.n
    assert gf.stats["planned_bits"] == measurement_count(grid.n, n, 1)
    again = sweep_greens(ground, grid, n, seed=[7], estimator="shots")
    np.testing.assert_array_equal(gf.gp, again.gp)


def test_circuit_shots_with_reprojection():
    model = hubbard_impurity(1.0, 0.5, [0.0], [0.4])
    sol = ed_ground(model)
    calls = []

    def reproject(psi, seed):
        calls.append(seed)
        return True, sol.full_vector()

    ground = GroundState(sol.full_vector(), sol.energy, jordan_wigner(model), 0.02, 2, n_so=2, reproject=reproject)
    grid = TimeGrid.log(0.1, 1.0, 2)
    n = 120
    gf = sweep_greens(ground, grid, n, seed=[1], estimator="shots", backend="circuit")
    ref = ed_greens(sol, grid)
    assert np.max(np.abs(gf.gp[:, 0, 0] - ref.gp[:, 0, 0])) < 3 * np.sqrt(2 / n)
    assert gf.stats["bits"] == len(calls) == 4 * n * grid.n


def test_shots_need_measurements(singlet):
    with pytest.raises(ValueError):
        sweep_greens(singlet[2], TimeGrid.log(0.1, 1.0, 3), 0, estimator="shots")


def test_tsv_roundtrip(tmp_path, singlet):
    _, sol, _ = singlet
    gf = ed_greens(sol, TimeGrid.log(1e-5, 40.0, 30))
    write_gf_tsv(gf, tmp_path / "g.tsv")
    back = read_gf_tsv(tmp_path / "g.tsv")
    np.testing.assert_array_equal(back.grid.points, gf.grid.points)
    np.testing.assert_array_equal(back.gp, gf.gp)
    np.testing.assert_array_equal(back.gh, gf.gh)
    assert isinstance(back, RealTimeGF) and back.estimator == "exact"
