"""Impurity solvers (simulated quantum and ED) and resource accounting.

Seeds: every random draw derives from ``numpy.random.SeedSequence`` entropy
``[seed, *path]``; the paths used here are ``(iteration, 1)`` for the
preparation QPE, ``(iteration, 2)`` for the shots and ``(iteration, 3)`` for
per-shot reprojections.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .aim import (ChainMappingError, ImpurityModel, commuting_layers, count_terms, jordan_wigner, mode_spins,
                  star_to_chain, structural_model)
from .config import RunConfig
from .ed import ed_ground, ed_greens
from .gf import GroundState, RealTimeGF, TimeGrid, measurement_count, sweep_greens
from .matsubara import MatsubaraGF, MatsubaraGrid, SpectralFunction, TruncationWarning, hilbert_to_matsubara, spectral_function
from .qalg.adiabatic import AdiabaticSchedule, prepare_exact, prepare_ground_state, preparation_tally
from .qalg.circuits import controlled_pauli_gates
from .qalg.qpe import QpeConfig, _bit_tally, project_to_ground
from .qalg.trotter import plan_tally
from .qsim import Gate, GateTally

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


def time_grid(cfg: RunConfig) -> TimeGrid:
    return TimeGrid.log(cfg.t_min, cfg.t_max, cfg.n_t)


def matsubara_grid(cfg: RunConfig) -> MatsubaraGrid:
    return MatsubaraGrid(cfg.beta, cfg.n_w)


def omega_grid(cfg: RunConfig) -> np.ndarray:
    return np.linspace(cfg.omega_min, cfg.omega_max, cfg.n_omega)


def to_matsubara(gf: RealTimeGF, cfg: RunConfig) -> MatsubaraGF:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", TruncationWarning)
        g = hilbert_to_matsubara(gf, matsubara_grid(cfg))
    for w in caught:
        log.debug("%s", w.message)
    return g


@dataclass
class ResourceReport:
    gates_per_preparation: int
    gates_per_reprojection: int
    gates_per_measurement: float
    preparations: float
    reprojections: int
    qpe_runs: float
    measurements: int
    total_gates: float
    preparation_success: float
    reprojection_success: float
    preparation_tally: dict = field(default_factory=dict)
    term_counts: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ImpuritySolution:
    gf: RealTimeGF
    g_iw: MatsubaraGF
    energy: float
    model: ImpurityModel
    resources: ResourceReport | None = None
    info: dict = field(default_factory=dict)

    def spectrum(self, cfg: RunConfig) -> SpectralFunction:
        return spectral_function(self.gf, omega_grid(cfg), cfg.eta)


def solver_model(model: ImpurityModel, cfg: RunConfig) -> ImpurityModel:
    if cfg.geometry == "star" or model.n_b == 0:
        return model
    try:
        return star_to_chain(model)
    except ChainMappingError as exc:
        log.warning("chain mapping failed (%s); keeping the star geometry", exc)
        return model


def schedule_for(model: ImpurityModel, cfg: RunConfig) -> AdiabaticSchedule:
    return AdiabaticSchedule.linear(model, cfg.prep_time, cfg.prep_steps or None, cfg.prep_start, cfg.prep_order)


def _symmetry(cfg: RunConfig) -> str:
    return "spin-degenerate" if cfg.spin_symmetric else "none"


def magnetisation(psi: np.ndarray, model: ImpurityModel) -> float:
    """<S_z> of a statevector over the model's modes (ancilla bits ignored)."""
    spins = mode_spins(model)
    if spins is None:
        return 0.0
    prob = np.abs(psi) ** 2
    idx = np.arange(prob.size)
    return float(sum(s / 2 * prob[(idx >> m) & 1 == 1].sum() for m, s in enumerate(spins)))


def spin_average(gf: RealTimeGF) -> RealTimeGF:
    """Average the up and down impurity diagonals (modes 0 and 1) in place."""
    for g in (gf.gp, gf.gh):
        avg = (g[:, 0, 0] + g[:, 1, 1]) / 2
        g[:, 0, 0] = g[:, 1, 1] = avg
    return gf


def solve_ed(model: ImpurityModel, cfg: RunConfig) -> ImpuritySolution:
    sol = ed_ground(model)
    gf = ed_greens(sol, time_grid(cfg))
    return ImpuritySolution(gf, to_matsubara(gf, cfg), sol.energy, model, info={"degeneracy": sol.degeneracy})


def solve_quantum(model: ImpurityModel, cfg: RunConfig, seed=(0,)) -> ImpuritySolution:
    seed = tuple(np.atleast_1d(seed).tolist()) if not isinstance(seed, tuple) else seed
    qmodel = solver_model(model, cfg)
    tg = jordan_wigner(qmodel)
    schedule = schedule_for(qmodel, cfg)
    check = QpeConfig(cfg.qpe_time, cfg.qpe_bits)
    prep = prepare_exact(schedule, QpeConfig(cfg.qpe_time, cfg.purify_bits), max_rounds=cfg.purify_rounds,
                         max_step=cfg.qpe_step, qpe_order=cfg.qpe_order, probe=check)
    info = {"purify_rounds": prep.attempts, "energy_variance_ok": prep.success, "geometry": cfg.geometry}
    reproject = reprepare = None
    if cfg.estimator == "shots":
        # one realistic preparation: ramp, then sampled QPE until the ground bin
        shot_prep = prepare_ground_state(schedule, check, [*seed, 1], energy_hint=prep.energy, retries=cfg.retries,
                                         max_step=cfg.qpe_step, qpe_order=cfg.qpe_order)
        if not shot_prep.success:
            raise SolverError(f"ground-state preparation failed after {shot_prep.attempts} attempts: "
                              f"{shot_prep.histogram}")
        info.update(prep_attempts=shot_prep.attempts, prep_energy=shot_prep.energy)
        if cfg.shot_backend == "circuit":
            def reproject(psi, s):
                ok, sv = project_to_ground(psi, tg, check, prep.energy, s, max_step=cfg.qpe_step, order=cfg.qpe_order)
                return ok, sv.amplitudes

            def reprepare(s):
                p = prepare_ground_state(schedule, check, s, energy_hint=prep.energy, retries=cfg.retries,
                                         max_step=cfg.qpe_step, qpe_order=cfg.qpe_order)
                return p.state.amplitudes

    ground = GroundState(prep.state.amplitudes, prep.energy, tg, cfg.trotter_step, cfg.trotter_order,
                         n_so=model.n_so, reprepare=reprepare, reproject=reproject)
    symmetry = _symmetry(cfg)
    sz = magnetisation(prep.state.amplitudes, qmodel)
    multiplet = model.n_so == 2 and abs(sz) > 1e-6
    if multiplet:
        # a magnetised ground state belongs to a spin multiplet: measure both
        # spins so the result is the average over the degenerate pair
        symmetry = "none"
        info["ground_sz"] = sz
    gf = sweep_greens(ground, time_grid(cfg), cfg.n_meas, symmetry, [*seed, 2], cfg.estimator,
                      backend=cfg.shot_backend)
    if multiplet:
        spin_average(gf)
    if cfg.estimator == "exact":
        gf.n_meas = 0
    sol = ImpuritySolution(gf, to_matsubara(gf, cfg), prep.energy, model, info=info)
    ramp = schedule.run()
    p_ad = float(abs(np.vdot(prep.state.amplitudes, ramp.amplitudes)) ** 2)
    sol.resources = resource_report(cfg, qmodel, gf, p_ad, schedule)
    return sol


def solve_impurity(model: ImpurityModel, cfg: RunConfig, seed=(0,)) -> ImpuritySolution:
    if cfg.solver == "ed":
        return solve_ed(model, cfg)
    return solve_quantum(model, cfg, seed)


# ---------------------------------------------------------------------------
# resources


def measurement_tally(tg, t: float, step: float, order: int) -> GateTally:
    """Gates of one Hadamard-test circuit at time ``t`` (real part, q_1 q_1 on orbital 0)."""
    from .gf import q_operator

    n = tg.n_qubits
    tally = GateTally()
    c, _, paulis = q_operator(0, 1, n)
    gates = [Gate("H", n)] + controlled_pauli_gates(c, paulis, n) * 2 + [Gate("H", n)]
    tally.update(GateTally.from_gates(gates))
    steps = max(1, math.ceil(t / step - 1e-9))
    tally.update(plan_tally(tg, order, True), steps)
    tally.add("M")
    return tally


def reprojection_success(gf: RealTimeGF, orbital: int = 0) -> float:
    """Mean probability that a measured state projects back onto the ground state.

    After an ancilla outcome the system is ``(psi +/- e^{iw} V psi)/2``; summed
    over outcomes the ground weight is ``(1 + |<V>|^2)/2`` with ``|<U^11>| =
    |Gp + Gh|`` and ``|<U^12>| = |Gp - Gh|``.
    """
    gp, gh = gf.gp[:, orbital, orbital], gf.gh[:, orbital, orbital]
    u11, u12 = np.abs(gp + gh) ** 2, np.abs(gp - gh) ** 2
    return float(np.mean(np.clip((1 + np.concatenate([u11, u12])) / 2, 0, 1)))


def term_count_table(n_so_max: int = 6, n_bs=(0, 5, 10, 20)) -> list:
    rows = []
    for n_so in range(1, n_so_max + 1):
        for n_b in n_bs:
            rows.append({"n_so": n_so, "n_b": n_b, "sparse_U": count_terms(n_so, n_b, False),
                         "dense_U": count_terms(n_so, n_b, True),
                         "layers_sparse_U": commuting_layers(jordan_wigner(structural_model(n_so, n_b, False)))})
    return rows


def resource_report(cfg: RunConfig, qmodel: ImpurityModel, gf: RealTimeGF | None, p_prep: float,
                    schedule: AdiabaticSchedule | None = None) -> ResourceReport:
    tg = jordan_wigner(qmodel)
    schedule = schedule_for(qmodel, cfg) if schedule is None else schedule
    check = QpeConfig(cfg.qpe_time, cfg.qpe_bits)
    prep = preparation_tally(schedule, check, cfg.qpe_step, cfg.qpe_order)
    reproj = GateTally()
    for k in range(check.bits):
        t = check.time * 2**k
        reproj.update(_bit_tally(tg, max(1, math.ceil(t / cfg.qpe_step - 1e-9)), cfg.qpe_order))
    times = time_grid(cfg).points
    per_meas = float(np.mean([measurement_tally(tg, t, cfg.trotter_step, cfg.trotter_order).total for t in times]))
    n_spin = 1 if cfg.spin_symmetric else qmodel.n_so
    bits = measurement_count(cfg.n_t, cfg.n_meas, n_spin)
    rate = reprojection_success(gf) if gf is not None else 1.0
    preparations = 1 + bits * (1 - rate)
    attempts = 1 / max(p_prep, 1e-12)
    total = preparations * attempts * prep.total + bits * reproj.total + bits * per_meas
    return ResourceReport(
        gates_per_preparation=prep.total,
        gates_per_reprojection=reproj.total,
        gates_per_measurement=per_meas,
        preparations=preparations,
        reprojections=bits,
        qpe_runs=bits + preparations * attempts,
        measurements=bits,
        total_gates=total,
        preparation_success=p_prep,
        reprojection_success=rate,
        preparation_tally=prep.to_dict(),
        term_counts=term_count_table(),
    )
