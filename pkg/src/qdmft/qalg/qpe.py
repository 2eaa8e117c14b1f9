"""Iterative single-ancilla phase estimation of the energy.

With ``W = exp(+i (H - E_c) tau)`` an eigenstate of energy ``E`` has phase
``phi = (E - E_c) tau / 2pi (mod 1)``. Bits of ``phi`` are read from the least
significant one upwards: bit ``k`` uses controlled ``W^(2^(k-1))`` and a feedback
rotation built from the bits already measured. The energy window is therefore
``[E_c - pi/tau, E_c + pi/tau)`` and the bin width ``2pi / (tau 2^bits)``.

The ancilla is never stored explicitly: after controlled ``W^m`` and the
feedback phase the two outcome branches are ``(psi +/- e^{iw} W^m psi) / 2``,
which is what the circuit produces on the system register.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ..aim import TermGroup
from ..qsim import GateTally, Statevector
from .trotter import StepData, default_step, plan_tally, trotter_step


class PhaseAliasingError(ValueError):
    pass


@dataclass(frozen=True)
class QpeConfig:
    time: float  # tau, evolution time of the lowest bit
    bits: int
    center: float = 0.0
    width: float | None = None  # defaults to the full alias-free window

    def __post_init__(self):
        if self.bits < 1:
            raise ValueError("QPE needs at least one bit")
        if self.time <= 0:
            raise ValueError("QPE time per bit must be positive")
        if self.width is not None and self.width > 2 * math.pi / self.time * (1 + 1e-12):
            raise PhaseAliasingError(
                f"energy window {self.width:g} exceeds 2pi/tau = {2 * math.pi / self.time:g}"
            )

    @property
    def window(self) -> float:
        return 2 * math.pi / self.time if self.width is None else self.width

    @property
    def resolution(self) -> float:
        return 2 * math.pi / (self.time * 2**self.bits)

    @property
    def total_time(self) -> float:
        return self.time * (2**self.bits - 1)

    def centered(self, energy: float) -> QpeConfig:
        return replace(self, center=float(energy))

    def decode(self, bits) -> float:
        """Energy of the bin labelled by ``bits``; ``bits[0]`` is the most significant."""
        phi = sum(b / 2 ** (k + 1) for k, b in enumerate(bits))
        if phi >= 0.5:
            phi -= 1.0
        return self.center + phi * 2 * math.pi / self.time


@dataclass
class QpeResult:
    energy: float
    bits: tuple
    state: Statevector
    probability: float  # probability of the recorded outcome
    tally: GateTally


def _as_array(state) -> np.ndarray:
    return np.asarray(state.amplitudes if isinstance(state, Statevector) else state, dtype=complex)


def _bit_tally(terms: TermGroup, steps: int, order: int) -> GateTally:
    t = GateTally()
    t.update(plan_tally(terms, order, True), steps)
    t.add("H", 2)
    t.add("R", 2)  # feedback rotation and the E_c phase on the ancilla
    t.add("M")
    return t


def _bit_branches(psi: np.ndarray, data: StepData, qpe: QpeConfig, k: int, measured, step: float, order: int):
    """Unnormalised system states for ancilla outcomes 0 and 1 of bit ``k``."""
    t = qpe.time * 2 ** (k - 1)
    steps = max(1, math.ceil(t / step - 1e-9))
    phi = psi.copy()
    for _ in range(steps):
        trotter_step(phi, data, -t / steps, order)
    # W^power = e^{+i(H - E_c) t}
    phi *= np.exp(-1j * qpe.center * t)
    omega = -2 * math.pi * sum(b / 2 ** (j - k + 1) for j, b in measured)
    phi *= np.exp(1j * omega)
    return (psi + phi) / 2, (psi - phi) / 2, steps


def run_qpe(state, terms: TermGroup, qpe: QpeConfig, seed=None, forced=None,
            max_step: float | None = None, order: int = 1) -> QpeResult:
    """One iterative QPE run.

    Bits are sampled with the Born rule from ``seed``; ``forced`` (a sequence of
    bits, most significant first) post-selects those outcomes instead.
    """
    psi = _as_array(state).copy()
    psi /= np.linalg.norm(psi)
    rng = np.random.default_rng(seed)
    data = StepData.from_terms(terms)
    step = default_step(terms) if max_step is None else max_step
    m = qpe.bits
    bits = [0] * m
    prob = 1.0
    tally = GateTally()
    measured = []  # (k, bit) already known, k counts from the top bit
    for k in range(m, 0, -1):
        branch0, branch1, steps = _bit_branches(psi, data, qpe, k, measured, step, order)
        p0 = float(np.vdot(branch0, branch0).real)
        if forced is not None:
            b = int(forced[k - 1])
        else:
            b = int(rng.random() >= p0)
        p = p0 if b == 0 else 1 - p0
        if p <= 1e-300:
            raise ValueError("post-selected QPE outcome has zero probability")
        psi = (branch0 if b == 0 else branch1) / math.sqrt(p)
        prob *= p
        bits[k - 1] = b
        measured.append((k, b))
        tally.update(_bit_tally(terms, steps, order))
    return QpeResult(qpe.decode(bits), tuple(bits), Statevector(terms.n_qubits, psi), prob, tally)


def outcome_distribution(state, terms: TermGroup, qpe: QpeConfig, max_step: float | None = None, order: int = 1,
                         cutoff: float = 1e-10) -> list[tuple[float, float]]:
    """Exact (energy, probability) of every QPE outcome above ``cutoff``, lowest energy first.

    Both ancilla branches are followed at each bit, so the cost is about
    ``bits`` single runs.
    """
    psi = _as_array(state)
    psi = psi / np.linalg.norm(psi)
    data = StepData.from_terms(terms)
    step = default_step(terms) if max_step is None else max_step
    branches = [(psi, [])]
    for k in range(qpe.bits, 0, -1):
        nxt = []
        for phi, measured in branches:
            for b, v in enumerate(_bit_branches(phi, data, qpe, k, measured, step, order)[:2]):
                if np.vdot(v, v).real > cutoff:
                    nxt.append((v, measured + [(k, b)]))
        branches = nxt
    out = []
    for v, measured in branches:
        bits = [0] * qpe.bits
        for k, b in measured:
            bits[k - 1] = b
        out.append((qpe.decode(bits), float(np.vdot(v, v).real)))
    return sorted(out)


def qpe_measure_energy(state, terms: TermGroup, qpe: QpeConfig, seed, **kw) -> tuple[float, Statevector]:
    res = run_qpe(state, terms, qpe, seed, **kw)
    res.state.tally.update(res.tally)
    return res.energy, res.state


def ground_bin(qpe: QpeConfig) -> tuple:
    return (0,) * qpe.bits


def project_to_ground(state, terms: TermGroup, qpe: QpeConfig, e0: float, seed, **kw) -> tuple[bool, Statevector]:
    """QPE centred on ``e0``; success iff the outcome is the bin containing ``e0``."""
    res = run_qpe(state, terms, qpe.centered(e0), seed, **kw)
    res.state.tally.update(res.tally)
    return res.bits == ground_bin(qpe), res.state


def energy_moments(psi: np.ndarray, terms: TermGroup) -> tuple[float, float]:
    hpsi = terms.apply(psi)
    e = float(np.vdot(psi, hpsi).real)
    var = float(np.vdot(hpsi, hpsi).real) - e * e
    return e, max(var, 0.0)


def purify(state, terms: TermGroup, qpe: QpeConfig, tol: float = 1e-10, max_rounds: int = 50,
           stall: float = 0.9, center: float | None = None, **kw) -> tuple[np.ndarray, float, int, GateTally]:
    """Post-select the ground bin repeatedly until Var(H) < tol.

    Each round recentres the window on the current <H> (the first one on
    ``center`` when given). The loop also stops
    once a round shrinks the variance by less than the factor ``stall`` (the
    filter has converged to the eigenvector of the Trotterised evolution).
    Returns the state, its energy expectation, the number of rounds and the
    gates spent.
    """
    psi = _as_array(state)
    psi = psi / np.linalg.norm(psi)
    tally = GateTally()
    e, var = energy_moments(psi, terms)
    rounds = 0
    while (var > tol or (rounds == 0 and center is not None)) and rounds < max_rounds:
        c = center if rounds == 0 and center is not None else e
        res = run_qpe(psi, terms, qpe.centered(c), forced=ground_bin(qpe), **kw)
        psi = res.state.amplitudes
        tally.update(res.tally)
        e, new_var = energy_moments(psi, terms)
        rounds += 1
        if new_var > stall * var:
            break
        var = new_var
    return psi, e, rounds, tally
