"""Real-time Green's functions from Hadamard-test measurements.

For an orbital pair (a, b) the measured unitaries are

    U^{ij}_ab(t) = e^{itH} q_i(a) e^{-itH} q_j(b),   q_1 = c + c+,  q_2 = i(c - c+)

and for a number-conserving ground state ``Gp = (U11 + i U12)/2``,
``Gh = (U11 - i U12)/2``. The circuit applies controlled ``q_j(b)``, controlled
``exp(-iHt)`` and controlled ``q_i(a)``; the leading ``e^{itH}`` acting on the
ground state is the classical factor ``e^{itE0}``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .aim import TermGroup, pauli_of_ladder_sum
from .qalg.circuits import controlled_pauli_gates
from .qalg.trotter import StepData, TrotterPlan, default_step, trotter_evolve, trotter_step
from .qsim import Gate, GateTally, Statevector, apply_pauli


@dataclass
class TimeGrid:
    points: np.ndarray
    t_min: float = 0.0
    t_max: float = 0.0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 1 or self.points.size < 2:
            raise ValueError("time grid needs at least two points")
        if np.any(np.diff(self.points) <= 0) or self.points[0] <= 0:
            raise ValueError("time grid must be positive and strictly increasing")
        self.t_min = float(self.points[0])
        self.t_max = float(self.points[-1])

    @classmethod
    def log(cls, t_min: float, t_max: float, n: int) -> TimeGrid:
        """t_i = t_min exp(log(t_max/t_min) i/(n-1))."""
        if not 0 < t_min < t_max or n < 2:
            raise ValueError("need 0 < t_min < t_max and n >= 2")
        i = np.arange(n)
        pts = t_min * np.exp(np.log(t_max / t_min) * i / (n - 1))
        pts[-1] = t_max
        return cls(pts)

    @property
    def n(self) -> int:
        return self.points.size

    @property
    def log_step(self) -> float:
        return math.log(self.t_max / self.t_min) / (self.n - 1)


@dataclass
class RealTimeGF:
    grid: TimeGrid
    gp: np.ndarray  # (n_t, n_so, n_so)
    gh: np.ndarray
    n_meas: int = 0
    estimator: str = "exact"
    stats: dict = field(default_factory=dict)

    @property
    def n_so(self) -> int:
        return self.gp.shape[1]


def write_gf_tsv(gf: RealTimeGF, path) -> None:
    r = repr
    lines = ["t\talpha\tbeta\tReGp\tImGp\tReGh\tImGh\tn_meas"]
    for i, t in enumerate(gf.grid.points):
        for a in range(gf.n_so):
            for b in range(gf.n_so):
                p, h = gf.gp[i, a, b], gf.gh[i, a, b]
                lines.append(
                    f"{r(float(t))}\t{a}\t{b}\t{r(float(p.real))}\t{r(float(p.imag))}"
                    f"\t{r(float(h.real))}\t{r(float(h.imag))}\t{gf.n_meas}"
                )
    Path(path).write_text("\n".join(lines) + "\n")


def read_gf_tsv(path) -> RealTimeGF:
    rows = [ln.split("\t") for ln in Path(path).read_text().splitlines()[1:] if ln.strip()]
    times = sorted({float(r[0]) for r in rows})
    tindex = {t: i for i, t in enumerate(times)}
    n_so = 1 + max(max(int(r[1]), int(r[2])) for r in rows)
    gp = np.zeros((len(times), n_so, n_so), dtype=complex)
    gh = np.zeros_like(gp)
    n_meas = 0
    for r in rows:
        i, a, b = tindex[float(r[0])], int(r[1]), int(r[2])
        gp[i, a, b] = complex(float(r[3]), float(r[4]))
        gh[i, a, b] = complex(float(r[5]), float(r[6]))
        n_meas = int(r[7])
    return RealTimeGF(TimeGrid(np.array(times)), gp, gh, n_meas, "exact" if n_meas == 0 else "shots")


def reconstruct_gf(u11, u12):
    """(Gp, Gh) from <U^11> and <U^12>."""
    u11 = np.asarray(u11)
    u12 = np.asarray(u12)
    return (u11 + 1j * u12) / 2, (u11 - 1j * u12) / 2


def measurement_count(n_t: int, n_meas: int, n_spin_channels: int = 2, anomalous: bool = False) -> int:
    """Bits needed for one Green's function: real and imaginary parts of U^11 and
    U^12 (4 per point), all four U^ij when anomalous terms are present (8)."""
    return n_t * n_meas * (8 if anomalous else 4) * n_spin_channels


# ---------------------------------------------------------------------------
# q operators


def q_operator(mode: int, kind: int, n_qubits: int):
    """q_1 = c + c+ or q_2 = i(c - c+) as a single (coefficient, kernel, paulis)."""
    if kind == 1:
        products = [(1.0, ((mode, 0),)), (1.0, ((mode, 1),))]
    elif kind == 2:
        products = [(1j, ((mode, 0),)), (-1j, ((mode, 1),))]
    else:
        raise ValueError("q operator kind must be 1 or 2")
    (term,) = pauli_of_ladder_sum(products, n_qubits)
    return term


def apply_q(arr: np.ndarray, mode: int, kind: int, n_qubits: int) -> np.ndarray:
    c, k, _ = q_operator(mode, kind, n_qubits)
    return c * apply_pauli(arr, k)


@dataclass
class GroundState:
    """What a Green's-function sweep needs from the preparation stage.

    ``energy`` is the ground energy used for the classical phase factor.
    ``reprepare`` (optional) returns a fresh ground state and is used by the
    shot-by-shot workflow; ``reproject`` (optional) maps a post-measurement
    state to ``(success, state)``.
    """

    state: np.ndarray
    energy: float
    terms: TermGroup
    max_step: float | None = None
    order: int = 2
    n_so: int = 1
    reprepare: Callable | None = None
    reproject: Callable | None = None
    tally: GateTally = field(default_factory=GateTally)

    @property
    def n_qubits(self) -> int:
        return self.terms.n_qubits

    @property
    def step(self) -> float:
        return default_step(self.terms) if self.max_step is None else self.max_step


def _plan(ground: GroundState, t: float) -> TrotterPlan:
    return TrotterPlan.for_time(ground.terms, t, ground.step, ground.order)


def measure_umeas(ground: GroundState, alpha: int, beta: int, t: float, which: str, part: str, seed,
                  state: np.ndarray | None = None) -> tuple[int, Statevector]:
    """One Hadamard-test shot; returns the ancilla bit and the system state after it.

    ``E[(-1)^bit]`` is ``Re <q_i(a) e^{-iHt} q_j(b)>`` for ``part='real'`` and
    ``-Im`` of it for ``part='imag'`` (S gate on the ancilla).
    """
    n = ground.n_qubits
    for m in (alpha, beta):
        if not 0 <= m < n:
            raise IndexError(f"orbital {m} out of range")
    if t < 0:
        raise ValueError("t must be >= 0")
    if which not in ("11", "12", "21", "22") or part not in ("real", "imag"):
        raise ValueError("which in {11,12,21,22}, part in {real, imag}")
    psi = ground.state if state is None else state
    sv = Statevector(n + 1, np.concatenate([psi, np.zeros_like(psi)]))
    anc = n
    ca, _, pa = q_operator(alpha, int(which[0]), n)
    cb, _, pb = q_operator(beta, int(which[1]), n)
    sv.apply(Gate("H", anc))
    sv.apply_all(controlled_pauli_gates(cb, pb, anc))
    if t > 0:
        sv = trotter_evolve(sv, _plan(ground, t), controlled_on=anc)
    sv.apply_all(controlled_pauli_gates(ca, pa, anc))
    if part == "imag":
        sv.apply(Gate("S", anc))
    sv.apply(Gate("H", anc))
    p1 = sv.probability_one(anc)
    bit = int(np.random.default_rng(seed).random() < p1)
    sv.project(anc, bit)
    half = sv.amplitudes.reshape(2, -1)[bit].copy()
    return bit, Statevector(n, half, sv.tally)


def umeas_expectation(ground: GroundState, alpha: int, beta: int, t: float, which: str) -> complex:
    """Exact <q_i(a) e^{-iHt} q_j(b)> (without the e^{itE0} factor)."""
    n = ground.n_qubits
    phi = apply_q(ground.state, beta, int(which[1]), n)
    if t > 0:
        plan = _plan(ground, t)
        data = StepData.from_terms(ground.terms)
        for _ in range(plan.steps):
            trotter_step(phi, data, plan.dt, plan.order)
    bra = apply_q(ground.state, alpha, int(which[0]), n)
    return complex(np.vdot(bra, phi))


def _evolved_overlaps(ground: GroundState, times: np.ndarray, alpha: int, beta: int) -> np.ndarray:
    """<q_1(a) psi| e^{-iHt} q_j(b) psi> for j=1,2 at every t; shape (2, n_t)."""
    n = ground.n_qubits
    data = StepData.from_terms(ground.terms)
    kets = np.stack([apply_q(ground.state, beta, 1, n), apply_q(ground.state, beta, 2, n)])
    bra = apply_q(ground.state, alpha, 1, n)
    out = np.zeros((2, times.size), dtype=complex)
    t_prev = 0.0
    for i, t in enumerate(times):
        dt = t - t_prev
        if dt > 0:
            steps = max(1, math.ceil(dt / ground.step - 1e-9))
            for _ in range(steps):
                trotter_step(kets, data, dt / steps, ground.order)
        out[:, i] = kets @ bra.conj()
        t_prev = t
    return out


def sweep_greens(ground: GroundState, grid: TimeGrid, n_meas: int = 0, symmetry: str = "spin-degenerate",
                 seed=0, estimator: str = "exact", orbitals=None, backend: str = "binomial",
                 pairs=None) -> RealTimeGF:
    """Measure Gp, Gh on every grid point.

    ``estimator='exact'`` evaluates the Hadamard-test expectations exactly;
    ``'shots'`` draws ``n_meas`` ancilla bits per (t, channel). With
    ``backend='binomial'`` the bits are drawn from the exact outcome
    probabilities of the ideal circuit on the ground state; ``'circuit'`` runs
    every shot through :func:`measure_umeas` with re-projection (small models).
    ``symmetry='spin-degenerate'`` measures orbital 0 only and copies it.
    """
    n_so = ground.n_so
    if orbitals is None:
        orbitals = [0] if symmetry == "spin-degenerate" else list(range(n_so))
    if pairs is None:
        pairs = [(a, a) for a in orbitals]
    if estimator == "shots" and n_meas < 1:
        raise ValueError("shot estimator needs n_meas >= 1")
    t = grid.points
    gp = np.zeros((t.size, n_so, n_so), dtype=complex)
    gh = np.zeros_like(gp)
    phase = np.exp(1j * t * ground.energy)
    stats = {"bits": 0, "preparations": 0, "reprojections": 0, "reprojection_failures": 0}
    for ch, (a, b) in enumerate(pairs):
        if estimator == "exact":
            v = _evolved_overlaps(ground, t, a, b)
        elif backend == "binomial":
            v = _binomial_estimates(_evolved_overlaps(ground, t, a, b), n_meas, [seed, ch])
            stats["bits"] += 4 * n_meas * t.size
        elif backend == "circuit":
            v = _circuit_estimates(ground, t, a, b, n_meas, [seed, ch], stats)
        else:
            raise ValueError(f"unknown shot backend {backend!r}")
        p, h = reconstruct_gf(phase * v[0], phase * v[1])
        gp[:, a, b], gh[:, a, b] = p, h
    if symmetry == "spin-degenerate":
        for a in range(n_so):
            if a not in orbitals:
                gp[:, a, a] = gp[:, orbitals[0], orbitals[0]]
                gh[:, a, a] = gh[:, orbitals[0], orbitals[0]]
    n_spin = 1 if symmetry == "spin-degenerate" else len(pairs)
    stats["planned_bits"] = measurement_count(t.size, n_meas, n_spin) if estimator == "shots" else 0
    return RealTimeGF(grid, gp, gh, n_meas if estimator == "shots" else 0, estimator, stats)


def _binomial_estimates(v: np.ndarray, n_meas: int, seed) -> np.ndarray:
    """Shot estimates of the complex expectations ``v`` (shape (2, n_t))."""
    rng = np.random.default_rng(seed)
    out = np.zeros_like(v)
    for j in range(v.shape[0]):
        # E[(-1)^bit] = Re v (real part) and -Im v (with S)
        p_re = np.clip((1 - v[j].real) / 2, 0, 1)
        p_im = np.clip((1 + v[j].imag) / 2, 0, 1)
        ones_re = rng.binomial(n_meas, p_re)
        ones_im = rng.binomial(n_meas, p_im)
        out[j] = (1 - 2 * ones_re / n_meas) - 1j * (1 - 2 * ones_im / n_meas)
    return out


def _circuit_estimates(ground: GroundState, times, a, b, n_meas, seed, stats) -> np.ndarray:
    out = np.zeros((2, len(times)), dtype=complex)
    ss = np.random.SeedSequence(seed)
    state = ground.state
    for i, t in enumerate(times):
        for j, which in enumerate(("11", "12")):
            acc = {"real": 0, "imag": 0}
            for part in ("real", "imag"):
                for s in range(n_meas):
                    child = ss.spawn(1)[0]
                    bit, post = measure_umeas(ground, a, b, t, which, part, child, state=state)
                    acc[part] += 1 - 2 * bit
                    stats["bits"] += 1
                    state = _next_ground(ground, post, child, stats)
            out[j, i] = acc["real"] / n_meas - 1j * acc["imag"] / n_meas
    return out


def _next_ground(ground: GroundState, post: Statevector, seed, stats) -> np.ndarray:
    if ground.reproject is not None:
        stats["reprojections"] += 1
        ok, st = ground.reproject(post.amplitudes, seed)
        if ok:
            return st
        stats["reprojection_failures"] += 1
    stats["preparations"] += 1
    if ground.reprepare is not None:
        return ground.reprepare(seed)
    return ground.state
