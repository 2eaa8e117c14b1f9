"""Command-line driver.

Exit codes: 0 success, 1 numerical failure (or ``compare`` above tolerance),
2 configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .aim import ImpurityModel, hubbard_impurity, read_model, write_model
from .config import ConfigError, RunConfig, load_config
from .dmft import DmftError, DosSpec, LoopConfig, initial_bath, run_dmft, write_bath
from .ed import EdConvergenceError, ed_ground
from .gf import read_gf_tsv, write_gf_tsv
from .matsubara import read_matsubara_tsv, read_spectrum_tsv, write_matsubara_tsv, write_spectrum_tsv
from .qalg.adiabatic import PreparationError
from .solvers import (ImpuritySolution, SolverError, resource_report, schedule_for, solve_impurity,
                      solver_model)

log = logging.getLogger("qdmft")

NUMERICAL = (SolverError, DmftError, EdConvergenceError, PreparationError, np.linalg.LinAlgError)


def _load_model(cfg: RunConfig) -> ImpurityModel:
    if cfg.model is None:
        raise ConfigError("model: a model file is required for this command")
    p = Path(cfg.model)
    if not p.is_file():
        raise ConfigError(f"model: file not found: {p}")
    try:
        return read_model(p)
    except ValueError as exc:
        raise ConfigError(f"model: {p}: {exc}") from None


def _dos(cfg: RunConfig) -> DosSpec:
    if cfg.dos == "bethe":
        return DosSpec()
    p = Path(cfg.dos)
    if not p.is_file():
        raise ConfigError(f"dos: file not found: {p}")
    try:
        return DosSpec.from_file(p)
    except ValueError as exc:
        raise ConfigError(f"dos: {exc}") from None


def _write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _emit(sol: ImpuritySolution, cfg: RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_gf_tsv(sol.gf, out / "greens_rt.tsv")
    write_matsubara_tsv(sol.g_iw, out / "greens_iw.tsv")
    write_spectrum_tsv(sol.spectrum(cfg), out / "aw.tsv")
    if sol.resources is None:
        sol.resources = _dry_resources(cfg, sol.model)
    _write_json({"energy": sol.energy, "resources": sol.resources.to_dict()}, out / "resources.json")


def _dry_resources(cfg: RunConfig, model: ImpurityModel):
    """Resource report from classical references: ED Green's function and ramp fidelity."""
    from .ed import ed_greens
    from .solvers import time_grid

    qmodel = solver_model(model, cfg)
    sol = ed_ground(qmodel)
    schedule = schedule_for(qmodel, cfg)
    ramp = schedule.run()
    p = float(sum(abs(np.vdot(sol.full_vector(i), ramp.amplitudes)) ** 2 for i in range(sol.degeneracy)))
    gf = ed_greens(sol, time_grid(cfg), orbitals=[0])
    return resource_report(cfg, qmodel, gf, p, schedule)


def _template(cfg: RunConfig):
    """(U, mu, initial bath or None) for the DMFT loop."""
    if cfg.model is None:
        return cfg.U, cfg.chemical_potential, None
    model = _load_model(cfg)
    U = sum(v.real for a, b, c, d, v in model.U if (a, b, c, d) == (0, 1, 1, 0))
    up = np.nonzero(np.abs(model.V[0]) > 0)[0]
    from .dmft import BathParameters

    return U, model.mu, BathParameters(model.eps[up], np.abs(model.V[0, up])[None, :], model.mu)


# ---------------------------------------------------------------------------
# commands


def cmd_solve(cfg: RunConfig, out: Path) -> int:
    model = _load_model(cfg)
    sol = solve_impurity(model, cfg, (cfg.seed, 0))
    _emit(sol, cfg, out)
    print(f"E0 = {sol.energy:.10f}; files in {out}")
    return 0


def cmd_dmft(cfg: RunConfig, out: Path) -> int:
    U, mu, init = _template(cfg)
    cfg = cfg.replace(U=U, mu=mu)
    dos = _dos(cfg)
    lc = LoopConfig(U=U, n_b=cfg.n_b // 2, mu=mu, beta=cfg.beta, n_w=cfg.n_w, tolerance=cfg.dmft_tolerance,
                    max_iter=cfg.max_iter, mixing=cfg.mixing, fit_starts=cfg.fit_starts,
                    symmetric=cfg.symmetric_bath, seed=cfg.seed)

    def solve(bath, k):
        model = hubbard_impurity(U, mu, bath.eps, bath.V[0])
        return solve_impurity(model, cfg, (cfg.seed, k))

    out.mkdir(parents=True, exist_ok=True)
    history = run_dmft(lc, solve, dos, init if init is not None else initial_bath(lc, dos), out)
    last = history[-1]
    write_bath(last.bath, out / "bath_final.txt")
    write_model(last.solution.model, out / "model_final.txt")
    _emit(last.solution, cfg, out)
    status = "converged" if last.metric < lc.tolerance else "stopped at the iteration cap"
    print(f"{status} after {len(history)} iterations (metric {last.metric:.3e}); files in {out}")
    return 0


def cmd_ed(cfg: RunConfig, out: Path) -> int:
    return cmd_solve(cfg.replace(solver="ed"), out)


def cmd_resources(cfg: RunConfig, out: Path | None) -> int:
    if cfg.model is not None:
        model = _load_model(cfg)
    else:
        lc = LoopConfig(U=cfg.U, n_b=cfg.n_b // 2, mu=cfg.mu, beta=cfg.beta, n_w=cfg.n_w, seed=cfg.seed,
                        fit_starts=cfg.fit_starts, symmetric=cfg.symmetric_bath)
        bath = initial_bath(lc, _dos(cfg))
        model = hubbard_impurity(cfg.U, cfg.chemical_potential, bath.eps, bath.V[0])
    rep = _dry_resources(cfg, model).to_dict()
    text = json.dumps(rep, indent=2, sort_keys=True) + "\n"
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
    print(f"measurements: {rep['measurements']}")
    print(f"gates per preparation: {rep['gates_per_preparation']}")
    print(f"gates per reprojection: {rep['gates_per_reprojection']}")
    print(f"gates per measurement (mean): {rep['gates_per_measurement']:.0f}")
    print(f"preparations: {rep['preparations']:.0f}, QPE runs: {rep['qpe_runs']:.0f}")
    print(f"total gates: {rep['total_gates']:.3e}")
    print("n_so  n_b  terms(sparse U)  terms(dense U)  commuting layers(sparse U)")
    for r in rep["term_counts"]:
        print(f"{r['n_so']:4d} {r['n_b']:4d} {r['sparse_U']:16d} {r['dense_U']:14d} {r['layers_sparse_U']:26d}")
    return 0


def _read_any(path: Path):
    head = path.read_text().split("\n", 1)[0]
    if head.startswith("t\talpha"):
        gf = read_gf_tsv(path)
        return {"gp": gf.gp, "gh": gf.gh}
    if head.startswith("# orbital"):
        return {"g": read_matsubara_tsv(path, 1.0).values}
    if head.startswith("omega"):
        return {"A": read_spectrum_tsv(path).A}
    raise ConfigError(f"unrecognised file format: {path}")


def cmd_compare(a: Path, b: Path, tol: float) -> int:
    for p in (a, b):
        if not p.is_file():
            raise ConfigError(f"file not found: {p}")
    da, db = _read_any(a), _read_any(b)
    if da.keys() != db.keys() or any(da[k].shape != db[k].shape for k in da):
        raise ConfigError("files hold different quantities or grids")
    diff = max(float(np.max(np.abs(da[k] - db[k]))) for k in da)
    ok = diff <= tol
    print(f"max abs difference {diff:.3e} ({'within' if ok else 'exceeds'} tolerance {tol:g})")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qdmft", description="Simulated quantum impurity solver and DMFT loop.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in [("solve-impurity", "solve one impurity model"),
                        ("dmft-loop", "run the DMFT self-consistency"),
                        ("ed-reference", "solve the impurity model by exact diagonalisation")]:
        s = sub.add_parser(name, help=help_)
        s.add_argument("config", type=Path)
        s.add_argument("-o", "--out", type=Path, default=Path("out"))
        s.add_argument("--seed", type=int, help="override the config seed")
    s = sub.add_parser("report-resources", help="gate, preparation and measurement counts")
    s.add_argument("config", type=Path)
    s.add_argument("-o", "--out", type=Path, help="write the report as JSON")
    c = sub.add_parser("compare", help="max abs difference of two Green's-function or spectrum files")
    c.add_argument("a", type=Path)
    c.add_argument("b", type=Path)
    c.add_argument("--tol", type=float, default=1e-6)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "compare":
            return cmd_compare(args.a, args.b, args.tol)
        cfg = load_config(args.config)
        if getattr(args, "seed", None) is not None:
            cfg = cfg.replace(seed=args.seed)
        if args.command == "solve-impurity":
            return cmd_solve(cfg, args.out)
        if args.command == "dmft-loop":
            return cmd_dmft(cfg, args.out)
        if args.command == "ed-reference":
            return cmd_ed(cfg, args.out)
        return cmd_resources(cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NUMERICAL as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
