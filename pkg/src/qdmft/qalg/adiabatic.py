"""Adiabatic ground-state preparation followed by a QPE energy check.

The start Hamiltonian is either the model without interactions (with the
Hartree shift ``U/2`` folded into the impurity levels, so the particle-hole
structure is kept) or the atomic limit (impurity decoupled from the bath). Both
have Slater-determinant ground states, prepared from a computational basis
state by a network of nearest-neighbour Givens rotations.
"""
from __future__ import annotations

import math
from itertools import combinations
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from ..aim import ImpurityModel, TermGroup, jordan_wigner, mode_spins, qubit_operator
from ..qsim import Gate, GateTally, Statevector
from .circuits import pauli_rotation_gates, step_tally
from .qpe import QpeConfig, energy_moments, outcome_distribution, purify, run_qpe
from .trotter import StepData, default_step, trotter_step


class PreparationError(RuntimeError):
    def __init__(self, attempts: int, histogram: dict):
        lines = ", ".join(f"{e:.4f}: {n}" for e, n in sorted(histogram.items()))
        super().__init__(f"no ground state after {attempts} preparations; energies seen {{{lines}}}")
        self.attempts = attempts
        self.histogram = histogram


# ---------------------------------------------------------------------------
# start Hamiltonians


def free_start(model: ImpurityModel) -> ImpurityModel:
    """Interactions off, mean-field ``U n_a n_b`` shift kept on the impurity levels."""
    t = model.t.copy()
    for a, b, c, d, u in model.U:
        if (a, b) == (d, c) and a != b:
            t[a, a] += u.real / 2
            t[b, b] += u.real / 2
        elif (a, b) == (c, d) and a != b:
            t[a, a] -= u.real / 2
            t[b, b] -= u.real / 2
    return replace(model, t=t, U=[], V=model.V.copy(), eps=model.eps.copy(),
                   bath_hopping=model.bath_hopping.copy())


def atomic_start(model: ImpurityModel) -> ImpurityModel:
    return replace(model, V=np.zeros_like(model.V), t=model.t.copy(), eps=model.eps.copy(),
                   U=list(model.U), bath_hopping=model.bath_hopping.copy())


# ---------------------------------------------------------------------------
# Slater determinants


def slater_amplitudes(orbitals: np.ndarray) -> np.ndarray:
    """prod_k b+_k |0> with b+_k = sum_p Q_kp c+_p, straight from determinants."""
    Q = np.atleast_2d(np.asarray(orbitals, dtype=complex))
    n_occ, n = Q.shape
    out = np.zeros(1 << n, dtype=complex)
    for occ in combinations(range(n), n_occ):
        idx = sum(1 << p for p in occ)
        out[idx] = np.linalg.det(Q[:, list(occ)]) if n_occ else 1.0
    return out


@dataclass
class Givens:
    mode: int  # rotates modes (mode, mode + 1)
    theta: float
    phi: float

    def generator(self):
        """Hermitian A of the real rotation, exp(-i A), as a ladder-product sum.

        The complex rotation is ``e^{i phi n} exp(-i A) e^{-i phi n}`` with ``n``
        the occupation of ``mode + 1``.
        """
        j = self.mode
        return [(-1j * self.theta, ((j, 1), (j + 1, 0))), (1j * self.theta, ((j + 1, 1), (j, 0)))]

    def gates(self) -> list:
        j = self.mode
        out = []
        if self.phi != 0:
            out.append(Gate("R", j + 1, None, -self.phi))
        _, terms = qubit_operator(self.generator(), j + 2)
        for t in terms:
            out += pauli_rotation_gates(t.paulis, t.coefficient.real)
        if self.phi != 0:
            out.append(Gate("R", j + 1, None, self.phi))
        return out


def givens_network(orbitals: np.ndarray) -> list[Givens]:
    """Rotations taking ``|1..1 0..0>`` to the determinant of ``orbitals``.

    Each row of ``Q`` is reduced to a unit vector by column rotations on
    neighbouring modes, right to left; applying the rotations in reverse order
    to the reference state builds the determinant (up to a global phase).
    """
    Q = np.atleast_2d(np.asarray(orbitals, dtype=complex)).copy()
    n_occ, n = Q.shape
    rots = []
    for r in range(n_occ):
        for j in range(n - 2, r - 1, -1):
            a, b = Q[r, j], Q[r, j + 1]
            if abs(b) < 1e-15:
                continue
            theta = math.atan2(abs(b), abs(a))
            phi = np.angle(b) - (np.angle(a) if abs(a) > 0 else 0.0)
            c, s = math.cos(theta), math.sin(theta)
            g = np.array([[c, -np.exp(1j * phi) * s], [np.exp(-1j * phi) * s, c]])
            Q[:, j:j + 2] = Q[:, j:j + 2] @ g
            rots.append(Givens(j, theta, phi))
    return rots[::-1]


def prepare_slater(orbitals: np.ndarray, n_qubits: int | None = None) -> Statevector:
    Q = np.atleast_2d(np.asarray(orbitals, dtype=complex))
    n_occ, n = Q.shape
    n_qubits = n if n_qubits is None else n_qubits
    sv = Statevector(n_qubits)
    sv.apply_all(Gate("X", q) for q in range(n_occ))
    for g in givens_network(Q):
        sv.apply_all(g.gates())
    return sv


def _fill(h: np.ndarray, modes: list[int], n_fill: int) -> list[np.ndarray]:
    e, w = np.linalg.eigh(h[np.ix_(modes, modes)])
    rows = []
    for k in range(n_fill):
        row = np.zeros(h.shape[0], dtype=complex)
        row[modes] = w[:, k]
        rows.append(row)
    return rows


def free_orbitals(model: ImpurityModel, tol: float = 1e-9) -> np.ndarray:
    """Occupied orbitals of the quadratic model: all negative levels per spin.

    Zero modes are filled alternately between spin species to keep S_z minimal.
    """
    h = model.quadratic_matrix()
    spins = mode_spins(model)
    blocks = [list(range(model.n_modes))] if spins is None else [
        [p for p in range(model.n_modes) if spins[p] == s] for s in (1, -1)
    ]
    rows = []
    zero_turn = 1  # give the first zero mode to the second block
    for bi, modes in enumerate(blocks):
        if not modes:
            continue
        e = np.linalg.eigvalsh(h[np.ix_(modes, modes)])
        n_neg = int(np.sum(e < -tol))
        n_zero = int(np.sum(np.abs(e) <= tol))
        extra = n_zero // 2 + (n_zero % 2 if bi == zero_turn else 0)
        rows += _fill(h, modes, n_neg + extra)
    return np.array(rows) if rows else np.zeros((0, model.n_modes))


def atomic_orbitals(model: ImpurityModel, tol: float = 1e-9) -> np.ndarray:
    """Impurity in its lowest Fock state, bath levels below zero filled.

    Zero-energy bath levels go to whichever spin species is behind, up to half
    filling of the whole system.
    """
    from ..ed import ed_ground

    n_so, n = model.n_so, model.n_modes
    imp = ImpurityModel(model.t, np.zeros(0), np.zeros((n_so, 0)), mu=model.mu, U=model.U)
    sol = ed_ground(imp, spins=None)
    key, vec = sol.vectors[0]
    occ_state = int(sol.sectors[key].states[np.argmax(np.abs(vec))])
    spins = mode_spins(model)
    spins = np.ones(n, dtype=int) if spins is None else spins
    rows, count = [], {1: 0, -1: 0}
    for a in range(n_so):
        if occ_state >> a & 1:
            row = np.zeros(n, dtype=complex)
            row[a] = 1.0
            rows.append(row)
            count[int(spins[a])] += 1
    eb = model.bath_matrix()
    zero = []
    for s in (1, -1):
        modes = [i for i in range(model.n_b) if spins[n_so + i] == s]
        if not modes:
            continue
        e, w = np.linalg.eigh(eb[np.ix_(modes, modes)])
        for k in range(len(e)):
            row = np.zeros(n, dtype=complex)
            row[[n_so + i for i in modes]] = w[:, k]
            if e[k] < -tol:
                rows.append(row)
                count[s] += 1
            elif e[k] <= tol:
                zero.append((s, row))
    while zero and len(rows) < n // 2:
        s = min(count, key=lambda x: (count[x], -x))
        pick = next((z for z in zero if z[0] == s), zero[0])
        zero.remove(pick)
        rows.append(pick[1])
        count[pick[0]] += 1
    return np.array(rows)


# ---------------------------------------------------------------------------
# schedule


@dataclass
class AdiabaticSchedule:
    """Linear ramp ``H(s) = (1 - s) H0 + s H`` over ``time`` in ``steps`` Trotter steps."""

    initial: ImpurityModel
    final: ImpurityModel
    time: float
    steps: int
    order: int = 1
    start: str = "free"
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.initial.n_modes != self.final.n_modes or self.initial.n_so != self.final.n_so:
            raise ValueError("schedule endpoints act on different mode sets")
        if self.steps < 1 or self.time < 0:
            raise ValueError("schedule needs steps >= 1 and time >= 0")

    @classmethod
    def linear(cls, final: ImpurityModel, time: float, steps: int | None = None, start: str = "free",
               order: int = 1) -> AdiabaticSchedule:
        initial = {"free": free_start, "atomic": atomic_start}[start](final)
        if steps is None:
            tg = jordan_wigner(final)
            steps = max(1, math.ceil(time / default_step(tg) - 1e-9))
        return cls(initial, final, time, steps, order, start)

    @property
    def dt(self) -> float:
        return self.time / self.steps

    def model_at(self, s: float) -> ImpurityModel:
        a, b = self.initial, self.final
        lin = lambda x, y: (1 - s) * x + s * y
        U = {}
        for (p, q, r, w, v) in a.U:
            U[(p, q, r, w)] = U.get((p, q, r, w), 0) + (1 - s) * v
        for (p, q, r, w, v) in b.U:
            U[(p, q, r, w)] = U.get((p, q, r, w), 0) + s * v
        return ImpurityModel(
            lin(a.t, b.t), lin(a.eps, b.eps), lin(a.V, b.V), mu=lin(a.mu, b.mu),
            U=[(*k, v) for k, v in U.items() if v != 0], bath_hopping=lin(a.bath_hopping, b.bath_hopping),
        )

    def terms(self, which: str) -> TermGroup:
        if which not in self._cache:
            model = {"initial": self.initial, "final": self.final, "mid": self.model_at(0.5)}[which]
            self._cache[which] = jordan_wigner(model)
        return self._cache[which]

    def _endpoint_data(self):
        """Kernel data of both endpoints over a shared list of strings."""
        if "data" in self._cache:
            return self._cache["data"]
        t0, t1, tm = self.terms("initial"), self.terms("final"), self.terms("mid")
        keys, kern = [], {}
        for grp_k, grp in zip(tm.kernels()[1:], tm.groups[1:]):
            for (c, k), qt in zip(grp_k, grp):
                keys.append(qt.paulis)
                kern[qt.paulis] = k
        coeff = []
        for tg in (t0, t1):
            d = {qt.paulis: qt.coefficient.real for g in tg.groups[1:] for qt in g}
            extra = set(d) - set(kern)
            if extra:
                raise ValueError("endpoint has strings absent from the interpolated Hamiltonian")
            coeff.append(np.array([d.get(k, 0.0) for k in keys]))
        data = (t0.diagonal(), t1.diagonal(), t0.constant, t1.constant, coeff[0], coeff[1], [kern[k] for k in keys])
        self._cache["data"] = data
        return data

    def step_data(self, s: float) -> StepData:
        d0, d1, c0, c1, k0, k1, kerns = self._endpoint_data()
        coeffs = (1 - s) * k0 + s * k1
        return StepData((1 - s) * d0 + s * d1, (1 - s) * c0 + s * c1, list(zip(coeffs, kerns)))

    def step_tally(self) -> GateTally:
        if "tally" not in self._cache:
            self._cache["tally"] = step_tally(self.terms("mid"), self.order, False)
        return self._cache["tally"]

    def initial_orbitals(self) -> np.ndarray:
        return free_orbitals(self.initial) if self.start == "free" else atomic_orbitals(self.final)

    def initial_state(self) -> Statevector:
        return prepare_slater(self.initial_orbitals(), self.final.n_modes)

    def evolve(self, sv: Statevector) -> Statevector:
        if self.time == 0:
            return sv
        arr = sv.amplitudes
        for k in range(self.steps):
            trotter_step(arr, self.step_data((k + 0.5) / self.steps), self.dt, self.order)
        sv.tally.update(self.step_tally(), self.steps)
        return sv

    def run(self) -> Statevector:
        return self.evolve(self.initial_state())


def preparation_tally(schedule: AdiabaticSchedule, qpe: QpeConfig | None, max_step: float | None = None,
                      order: int = 1) -> GateTally:
    """Gates of one preparation attempt (Slater circuit, ramp and one QPE run)."""
    sv = schedule.initial_state()
    tally = GateTally()
    tally.update(sv.tally)
    tally.update(schedule.step_tally(), schedule.steps)
    if qpe is not None:
        from .qpe import _bit_tally

        tg = schedule.terms("final")
        step = default_step(tg) if max_step is None else max_step
        for k in range(qpe.bits):
            t = qpe.time * 2**k
            tally.update(_bit_tally(tg, max(1, math.ceil(t / step - 1e-9)), order))
    return tally


# ---------------------------------------------------------------------------
# preparation with energy check


@dataclass
class Preparation:
    state: Statevector
    energy: float
    success: bool
    tally: GateTally
    attempts: int = 1
    histogram: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.state, self.energy, self.success, self.tally))


def prepare_ground_state(schedule: AdiabaticSchedule, qpe: QpeConfig, seed, energy_hint: float | None = None,
                         retries: int = 100, probes: int = 3, max_step: float | None = None,
                         qpe_order: int = 1, raise_on_failure: bool = False) -> Preparation:
    """Ramp, then QPE; repeat while the measured energy looks like an excited state.

    An attempt succeeds when its QPE energy is within half a resolution bin of
    the reference: ``energy_hint`` if given, otherwise the lowest energy seen in
    the first ``probes`` attempts.
    """
    tg = schedule.terms("final")
    ramped = schedule.run()
    window = qpe
    if qpe.center == 0.0:
        window = qpe.centered(energy_moments(ramped.amplitudes, tg)[0])
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    hist: Counter = Counter()
    tally = GateTally()
    best = None
    for attempt in range(1, retries + 1):
        res = run_qpe(ramped, tg, window, ss.spawn(1)[0], max_step=max_step, order=qpe_order)
        tally.update(ramped.tally)
        tally.update(res.tally)
        e = round(res.energy, 10)
        hist[e] += 1
        if best is None or res.energy < best.energy:
            best = res
        ref = energy_hint
        if ref is None:
            if attempt < probes:
                continue
            ref = best.energy
            res = best
        if abs(res.energy - ref) <= qpe.resolution / 2 + 1e-12:
            res.state.tally = tally
            return Preparation(res.state, res.energy, True, tally, attempt, dict(hist))
    if raise_on_failure:
        raise PreparationError(retries, dict(hist))
    best.state.tally = tally
    return Preparation(best.state, best.energy, False, tally, retries, dict(hist))


def prepare_exact(schedule: AdiabaticSchedule, qpe: QpeConfig, tol: float = 1e-10, max_rounds: int = 50,
                  max_step: float | None = None, qpe_order: int = 2, probe: QpeConfig | None = None,
                  floor: float = 0.05) -> Preparation:
    """Ramp, then post-select the ground bin repeatedly (exact-expectation mode).

    With ``probe`` the exact outcome distribution of that coarser QPE is taken
    first and a probe-resolution filter is started at its lowest bin holding at
    least ``floor`` of the weight. Without it the filter starts at <H>, which
    can lock onto an excited state when the ramp splits the weight.
    """
    tg = schedule.terms("final")
    ramped = schedule.run()
    psi = ramped.amplitudes
    tally = GateTally()
    tally.update(ramped.tally)
    rounds = 0
    kw = dict(max_step=max_step, order=qpe_order)
    if probe is not None:
        window = probe.centered(energy_moments(psi, tg)[0])
        low = next(e for e, p in outcome_distribution(psi, tg, window, **kw) if p >= floor)
        psi, _, rounds, t = purify(psi, tg, probe, tol=tol, max_rounds=max_rounds, center=low, **kw)
        tally.update(t)
    psi, e, more, t = purify(psi, tg, qpe, tol=tol, max_rounds=max_rounds, **kw)
    tally.update(t)
    _, var = energy_moments(psi, tg)
    sv = Statevector(tg.n_qubits, psi, tally)
    return Preparation(sv, e, var <= tol, tally, rounds + more, {})
