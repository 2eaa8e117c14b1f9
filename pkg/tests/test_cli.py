import json

import numpy as np
import pytest

from qdmft import cli
from qdmft.matsubara import read_matsubara_tsv
from qdmft.solvers import SolverError

ATOM = """mu 2.0
t 0 0 0.0 0.0
t 1 1 0.0 0.0
U 0 1 1 0 4.0 0.0
"""


@pytest.fixture
def atom_cfg(tmp_path):
    (tmp_path / "atom.model").write_text(ATOM)
    cfg = tmp_path / "atom.cfg"
    cfg.write_text("model = atom.model\nn_b = 0\nt_min = 1e-8\nt_max = 200\nn_t = 8000\nseed = 2\n")
    return cfg


def run(*args):
    return cli.main([str(a) for a in args])


def test_ed_reference_atom_is_two_pole(atom_cfg, tmp_path):
    assert run("ed-reference", atom_cfg, "-o", tmp_path / "ed") == 0
    g = read_matsubara_tsv(tmp_path / "ed" / "greens_iw.tsv", 20.0)
    iw = g.grid.iw
    exact = 0.5 / (iw - 2.0) + 0.5 / (iw + 2.0)
    assert np.max(np.abs(g.diag(0) - exact)) < 1e-6
    for name in ("greens_rt.tsv", "aw.tsv", "resources.json"):
        assert (tmp_path / "ed" / name).exists()


def test_quantum_matches_ed(atom_cfg, tmp_path, capsys):
    assert run("ed-reference", atom_cfg, "-o", tmp_path / "ed") == 0
    assert run("solve-impurity", atom_cfg, "-o", tmp_path / "q") == 0
    for name in ("greens_rt.tsv", "greens_iw.tsv", "aw.tsv"):
        assert run("compare", tmp_path / "ed" / name, tmp_path / "q" / name, "--tol", "1e-6") == 0
    res = json.loads((tmp_path / "q" / "resources.json").read_text())
    assert res["energy"] == pytest.approx(-2.0)
    assert res["resources"]["total_gates"] > 0


def test_repeat_is_bit_identical(atom_cfg, tmp_path):
    for d in ("a", "b"):
        assert run("solve-impurity", atom_cfg, "-o", tmp_path / d) == 0
    for name in ("greens_rt.tsv", "greens_iw.tsv", "aw.tsv", "resources.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_missing_model_exits_2(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("model = absent.model\n")
    assert run("solve-impurity", cfg, "-o", tmp_path / "o") == 2
    assert str(tmp_path / "absent.model") in capsys.readouterr().err


def test_bad_config_exits_2(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("n_t = 2\n")
    assert run("dmft-loop", cfg) == 2
    assert "n_t" in capsys.readouterr().err


def test_numerical_failure_exits_1(atom_cfg, monkeypatch, capsys):
    def boom(*a, **k):
        raise SolverError("preparation failed")
    monkeypatch.setattr(cli, "solve_impurity", boom)
    assert run("solve-impurity", atom_cfg) == 1
    assert "preparation failed" in capsys.readouterr().err


def test_compare_detects_difference(atom_cfg, tmp_path, capsys):
    run("ed-reference", atom_cfg, "-o", tmp_path / "a")
    other = atom_cfg.parent / "other.cfg"
    other.write_text(atom_cfg.read_text().replace("atom.model", "shifted.model"))
    (atom_cfg.parent / "shifted.model").write_text(ATOM.replace("U 0 1 1 0 4.0", "U 0 1 1 0 4.2"))
    run("ed-reference", other, "-o", tmp_path / "b")
    assert run("compare", tmp_path / "a" / "aw.tsv", tmp_path / "b" / "aw.tsv", "--tol", "1e-3") == 1
    assert "exceeds" in capsys.readouterr().out
    assert run("compare", tmp_path / "a" / "aw.tsv", tmp_path / "b" / "greens_iw.tsv") == 2


def test_report_resources_plan(tmp_path, capsys):
    cfg = tmp_path / "plan.cfg"
    cfg.write_text("U = 8\nn_t = 1000\nn_meas = 400\nestimator = shots\nspin_symmetric = false\n")
    assert run("report-resources", cfg, "-o", tmp_path / "r.json") == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["measurements"] == 3_200_000
    assert "terms(sparse U)" in capsys.readouterr().out
    assert len(rep["term_counts"]) == 24


def test_dmft_loop_ed_small(tmp_path):
    cfg = tmp_path / "loop.cfg"
    cfg.write_text("U = 2\nsolver = ed\nn_b = 4\nn_t = 400\nmax_iter = 4\nfit_starts = 2\nn_omega = 101\n")
    for d in ("a", "b"):
        assert run("dmft-loop", cfg, "-o", tmp_path / d) == 0
    a, b = tmp_path / "a", tmp_path / "b"
    names = sorted(p.name for p in a.iterdir())
    assert "convergence.tsv" in names and "bath_final.txt" in names and "aw.tsv" in names
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes(), n
