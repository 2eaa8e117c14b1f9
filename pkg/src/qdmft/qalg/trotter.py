"""Trotterised time evolution on the statevector.

One first-order step is ``D(tau) P_1(tau) ... P_m(tau)`` where ``D`` collects every
Z-only string (one diagonal phase) and ``P_k`` are exponentials of the remaining
Pauli strings, group by group. The second-order step is the symmetric product.
Evolution is done with array kernels; gate counts come from the equivalent
circuits in :mod:`.circuits`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..aim import TermGroup
from ..qsim import GateTally, Statevector, exp_pauli_inplace
from .circuits import step_tally


@dataclass
class StepData:
    """Coefficients of one (possibly time-dependent) Hamiltonian in kernel form."""

    diag: np.ndarray
    constant: float
    strings: list  # [(coefficient, PauliKernel)]

    @classmethod
    def from_terms(cls, tg: TermGroup) -> StepData:
        strings = [(c, k) for g in tg.kernels()[1:] for c, k in g]
        return cls(tg.diagonal(), tg.constant, strings)


def trotter_step(arr: np.ndarray, data: StepData, tau: float, order: int = 1) -> None:
    """Apply one Trotter step in place to ``arr`` (last axis = system register)."""
    if order == 1:
        arr *= np.exp(-1j * tau * (data.diag + data.constant))
        for c, k in data.strings:
            exp_pauli_inplace(arr, k, c * tau)
        return
    if order != 2:
        raise ValueError("Trotter order must be 1 or 2")
    half = np.exp(-0.5j * tau * (data.diag + data.constant))
    if not data.strings:
        arr *= half * half
        return
    arr *= half
    for c, k in data.strings[:-1]:
        exp_pauli_inplace(arr, k, 0.5 * c * tau)
    c, k = data.strings[-1]
    exp_pauli_inplace(arr, k, c * tau)
    for c, k in reversed(data.strings[:-1]):
        exp_pauli_inplace(arr, k, 0.5 * c * tau)
    arr *= half


def default_step(tg: TermGroup, scale: float = 0.05) -> float:
    """Step size bound ``scale / max|coefficient|`` over the fermionic terms."""
    m = tg.max_coefficient()
    return scale / m if m > 0 else 1.0


@dataclass
class TrotterPlan:
    terms: TermGroup
    time: float
    steps: int
    order: int = 1

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("TrotterPlan needs at least one step")
        if self.order not in (1, 2):
            raise ValueError("Trotter order must be 1 or 2")

    @property
    def dt(self) -> float:
        return self.time / self.steps

    @classmethod
    def for_time(cls, terms: TermGroup, time: float, max_step: float | None = None, order: int = 1) -> TrotterPlan:
        max_step = default_step(terms) if max_step is None else max_step
        return cls(terms, time, max(1, math.ceil(abs(time) / max_step - 1e-9)), order)


def system_view(state: Statevector, n_sys: int, control: int | None) -> np.ndarray:
    """Writable view on the amplitudes the system evolution acts on.

    With a control qubit (which must lie above the system register) only the
    control=1 half is returned.
    """
    amps = state.amplitudes
    if control is None:
        return amps.reshape(-1, 1 << n_sys)
    if control < n_sys:
        raise ValueError("control qubit must lie outside the system register")
    v = amps.reshape(-1, 2, 1 << (control - n_sys), 1 << n_sys)
    return v[:, 1]


_tally_cache: dict = {}


def plan_tally(tg: TermGroup, order: int, controlled: bool) -> GateTally:
    key = (id(tg), order, controlled)
    hit = _tally_cache.get(key)
    if hit is None or hit[0] is not tg:
        hit = (tg, step_tally(tg, order, controlled))
        _tally_cache[key] = hit
    return hit[1]


def evolve_array(arr: np.ndarray, data: StepData, time: float, steps: int, order: int = 1) -> None:
    tau = time / steps
    for _ in range(steps):
        trotter_step(arr, data, tau, order)


def trotter_evolve(state: Statevector, plan: TrotterPlan, controlled_on: int | None = None) -> Statevector:
    """exp(-i H t) on the lowest ``plan.terms.n_qubits`` qubits, optionally controlled."""
    out = state.copy()
    n_sys = plan.terms.n_qubits
    if n_sys > out.n_qubits:
        raise ValueError("plan acts on more qubits than the state has")
    view = system_view(out, n_sys, controlled_on)
    evolve_array(view, StepData.from_terms(plan.terms), plan.time, plan.steps, plan.order)
    out.tally.update(plan_tally(plan.terms, plan.order, controlled_on is not None), plan.steps)
    return out
