import numpy as np
import pytest

from qdmft.aim import hubbard_impurity
from qdmft.config import RunConfig
from qdmft.ed import ed_ground, ed_greens
from qdmft.gf import TimeGrid
from qdmft.solvers import (magnetisation, reprojection_success, resource_report, schedule_for, solve_ed,
                           solve_impurity, solve_quantum, solver_model, spin_average, term_count_table, time_grid)

FAST = dict(n_t=60, t_max=10.0, prep_time=5.0, purify_bits=8, n_b=6)


@pytest.fixture(scope="module")
def model():
    return hubbard_impurity(2.0, 1.0, [-0.8, 0.0, 0.8], [0.5, 0.3, 0.5])


def test_quantum_exact_matches_ed(model):
    cfg = RunConfig(**FAST, trotter_step=0.005)
    q = solve_quantum(model, cfg, (0, 0))
    e = solve_ed(model, cfg)
    assert q.energy == pytest.approx(e.energy, abs=1e-6)
    assert np.max(np.abs(q.gf.gp - e.gf.gp)) < 1e-4
    assert np.max(np.abs(q.g_iw.values - e.g_iw.values)) < 1e-4
    assert q.info["purify_rounds"] >= 1
    assert q.gf.n_meas == 0


def test_chain_and_star_agree(model):
    cfg = RunConfig(**FAST, trotter_step=0.01)
    chain = solve_quantum(model, cfg)
    star = solve_quantum(model, cfg.replace(geometry="star"))
    assert np.max(np.abs(chain.gf.gp - star.gf.gp)) < 1e-4
    assert np.count_nonzero(np.abs(solver_model(model, cfg).V) > 1e-12) == 2


def test_shot_solver_statistics(model):
    cfg = RunConfig(**FAST, estimator="shots", n_meas=400, seed=4)
    q = solve_impurity(model, cfg, (4, 0))
    ref = ed_greens(ed_ground(model), time_grid(cfg))
    assert q.gf.n_meas == 400
    assert np.max(np.abs(q.gf.gp - ref.gp)) < 3 * np.sqrt(2 / 400) + 1e-3
    assert q.info["prep_attempts"] >= 1


def test_circuit_backend_runs_reprojection():
    m = hubbard_impurity(1.0, 0.5, [0.0], [0.4])
    cfg = RunConfig(n_t=3, t_min=0.1, t_max=1.0, n_b=2, n_meas=20, estimator="shots", shot_backend="circuit",
                    prep_time=3.0, qpe_bits=4, purify_bits=6)
    q = solve_quantum(m, cfg, (1, 0))
    st = q.gf.stats
    assert st["bits"] == 4 * 20 * 3
    assert st["reprojections"] == st["bits"]
    assert st["preparations"] == st["reprojection_failures"]


def test_multiplet_is_spin_averaged():
    atom = hubbard_impurity(4.0, 2.0, [], [])
    cfg = RunConfig(n_b=0, n_t=50, t_max=5.0)
    q = solve_quantum(atom, cfg)
    e = solve_ed(atom, cfg)
    assert abs(q.info["ground_sz"]) == pytest.approx(0.5)
    assert np.max(np.abs(q.gf.gp - e.gf.gp)) < 1e-10


def test_magnetisation_and_average():
    psi = np.zeros(4)
    psi[0b01] = 1.0  # mode 0 (spin up) occupied
    assert magnetisation(psi, hubbard_impurity(1.0, 0.5, [], [])) == 0.5
    sol = ed_ground(hubbard_impurity(1.0, 0.5, [0.2], [0.3]))
    gf = ed_greens(sol, TimeGrid.log(0.1, 1.0, 3))
    gf.gp[:, 1, 1] += 0.2
    spin_average(gf)
    np.testing.assert_array_equal(gf.gp[:, 0, 0], gf.gp[:, 1, 1])


def test_reprojection_success_limits(model):
    sol = ed_ground(model)
    early = ed_greens(sol, TimeGrid.log(1e-9, 1e-8, 3))
    # U^11 -> 1 leaves the state intact; <U^12> = i<2n - 1> vanishes at half filling
    assert reprojection_success(early) == pytest.approx(0.75)
    late = ed_greens(sol, TimeGrid.log(1.0, 40.0, 200))
    assert 0.5 <= reprojection_success(late) < 1.0


def test_resource_total_is_sum_of_phases(model):
    cfg = RunConfig(**FAST)
    qm = solver_model(model, cfg)
    gf = ed_greens(ed_ground(qm), time_grid(cfg))
    r = resource_report(cfg, qm, gf, 0.8, schedule_for(qm, cfg))
    bits = r.measurements
    expected = (r.preparations / 0.8 * r.gates_per_preparation + bits * r.gates_per_reprojection
                + bits * r.gates_per_measurement)
    assert r.total_gates == pytest.approx(expected, rel=1e-12)
    assert r.preparations == pytest.approx(1 + bits * (1 - r.reprojection_success))
    assert r.preparation_tally["total"] == r.gates_per_preparation


def test_term_table_rows():
    rows = term_count_table()
    assert {(r["n_so"], r["n_b"]) for r in rows} >= {(1, 0), (6, 20)}
    assert all(r["dense_U"] >= r["sparse_U"] for r in rows)


def test_beta_stability_of_converged_solution(tmp_path):
    """The fictitious beta only enters the fit; doubling it barely moves the converged G."""
    import warnings

    from qdmft.cli import main
    from qdmft.gf import read_gf_tsv
    from qdmft.matsubara import MatsubaraGrid, hilbert_to_matsubara

    grid = MatsubaraGrid(20.0, 400)
    g = {}
    for beta in (20, 40):
        cfg = tmp_path / f"b{beta}.cfg"
        cfg.write_text(f"U = 2\nsolver = ed\nn_b = 8\nn_t = 600\nbeta = {beta}\nn_w = {20 * beta}\n")
        assert main(["dmft-loop", str(cfg), "-o", str(tmp_path / str(beta))]) == 0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            g[beta] = hilbert_to_matsubara(read_gf_tsv(tmp_path / str(beta) / "greens_rt.tsv"), grid).diag()
    rel = np.abs(g[20] - g[40]) / np.abs(g[20])
    assert rel.max() < 0.1
    assert rel[2:].max() < 0.01
