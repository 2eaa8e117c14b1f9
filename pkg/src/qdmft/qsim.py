"""Dense statevector simulator.

Qubit ``q`` is bit ``q`` of the basis-state index (qubit 0 is the least
significant bit). Gates act in place on :class:`Statevector` objects through
:meth:`Statevector.apply`; :func:`apply_gate` is the value-semantic wrapper.

Besides the elementary gate set this module holds the fast kernels used by the
time-evolution code: diagonal phases and exponentials of Pauli strings. Those
kernels operate on any array whose last axis spans the system register, so a
controlled application is just the kernel run on the control=1 slice.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

_SQ2 = 1 / np.sqrt(2)

_FIXED = {
    "H": np.array([[1, 1], [1, -1]], dtype=complex) * _SQ2,
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    # basis-change gate of the hopping circuits, exp(i pi X / 4)
    "Y": np.array([[1, 1j], [1j, 1]], dtype=complex) * _SQ2,
    "S": np.array([[1, 0], [0, 1j]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}
_SELF_INVERSE = {"H", "X", "Z", "CNOT"}
KINDS = ("H", "X", "Y", "S", "Z", "R", "CNOT")


class QubitIndexError(IndexError):
    pass


@dataclass(frozen=True)
class Gate:
    """One elementary gate.

    ``kind`` is one of H, X, Y, S, Z, R, CNOT. ``R`` is ``diag(1, e^{i theta})``
    and ``Y`` is the paper-style basis change ``(1 + iX)/sqrt(2)``. CNOT needs a
    control; every other kind may carry one to become its controlled variant.
    """

    kind: str
    target: int
    control: int | None = None
    theta: float = 0.0
    adjoint: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown gate kind {self.kind!r}")
        if self.kind == "CNOT" and self.control is None:
            raise ValueError("CNOT requires a control qubit")
        if self.control is not None and self.control == self.target:
            raise ValueError(f"control equals target ({self.target})")

    def matrix(self) -> np.ndarray:
        if self.kind == "R":
            m = np.array([[1, 0], [0, np.exp(1j * self.theta)]], dtype=complex)
        elif self.kind == "CNOT":
            m = _FIXED["X"]
        else:
            m = _FIXED[self.kind]
        return m.conj().T if self.adjoint else m

    def inverse(self) -> Gate:
        if self.kind in _SELF_INVERSE:
            return self
        if self.kind == "R":
            return Gate("R", self.target, self.control, -self.theta)
        return Gate(self.kind, self.target, self.control, adjoint=not self.adjoint)

    @property
    def label(self) -> str:
        name = self.kind + ("dg" if self.adjoint else "")
        if self.control is not None and self.kind != "CNOT":
            return "C" + name
        return name


@dataclass
class GateTally:
    counts: Counter = field(default_factory=Counter)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def add(self, label: str, n: int = 1) -> None:
        if n:
            self.counts[label] += n

    def update(self, other: GateTally, times: int = 1) -> None:
        for k, v in other.counts.items():
            self.counts[k] += v * times

    def scaled(self, times: int) -> GateTally:
        out = GateTally()
        out.update(self, times)
        return out

    def to_dict(self) -> dict:
        d = {k: int(v) for k, v in sorted(self.counts.items())}
        d["total"] = self.total
        return d

    @classmethod
    def from_gates(cls, gates) -> GateTally:
        return cls(Counter(g.label for g in gates))


class Statevector:
    """Amplitudes of ``n_qubits`` qubits plus a running gate tally."""

    def __init__(self, n_qubits: int, amplitudes=None, tally: GateTally | None = None):
        self.n_qubits = int(n_qubits)
        dim = 1 << self.n_qubits
        if amplitudes is None:
            amplitudes = np.zeros(dim, dtype=complex)
            amplitudes[0] = 1.0
        amplitudes = np.ascontiguousarray(amplitudes, dtype=complex)
        if amplitudes.shape != (dim,):
            raise ValueError(f"expected {dim} amplitudes, got shape {amplitudes.shape}")
        self.amplitudes = amplitudes
        self.tally = tally if tally is not None else GateTally()

    @classmethod
    def basis(cls, n_qubits: int, index: int) -> Statevector:
        amps = np.zeros(1 << n_qubits, dtype=complex)
        amps[index] = 1.0
        return cls(n_qubits, amps)

    def copy(self) -> Statevector:
        return Statevector(self.n_qubits, self.amplitudes.copy(), self.tally.scaled(1))

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def _check(self, q: int) -> None:
        if not 0 <= q < self.n_qubits:
            raise QubitIndexError(f"qubit {q} out of range for {self.n_qubits} qubits")

    def _tensor(self) -> np.ndarray:
        return self.amplitudes.reshape((2,) * self.n_qubits)

    def _slices(self, target: int, control: int | None):
        n = self.n_qubits
        i0 = [slice(None)] * n
        i0[n - 1 - target] = 0
        i1 = list(i0)
        i1[n - 1 - target] = 1
        if control is not None:
            i0[n - 1 - control] = 1
            i1[n - 1 - control] = 1
        return tuple(i0), tuple(i1)

    def apply(self, gate: Gate) -> Statevector:
        self._check(gate.target)
        if gate.control is not None:
            self._check(gate.control)
        m = gate.matrix()
        v = self._tensor()
        s0, s1 = self._slices(gate.target, gate.control)
        if m[0, 1] == 0 and m[1, 0] == 0:
            if m[0, 0] != 1:
                v[s0] *= m[0, 0]
            v[s1] *= m[1, 1]
        else:
            a0 = v[s0].copy()
            a1 = v[s1]
            v[s0] = m[0, 0] * a0 + m[0, 1] * a1
            v[s1] = m[1, 0] * a0 + m[1, 1] * a1
        self.tally.add(gate.label)
        return self

    def apply_all(self, gates) -> Statevector:
        for g in gates:
            self.apply(g)
        return self

    def probability_one(self, q: int) -> float:
        self._check(q)
        v = self.amplitudes.reshape(-1, 2, 1 << q)
        return float(np.sum(np.abs(v[:, 1, :]) ** 2))

    def project(self, q: int, bit: int) -> float:
        """Project qubit ``q`` on ``bit`` and renormalise; returns the probability."""
        self._check(q)
        v = self.amplitudes.reshape(-1, 2, 1 << q)
        p = float(np.sum(np.abs(v[:, bit, :]) ** 2))
        if p <= 0.0:
            raise ValueError(f"outcome {bit} on qubit {q} has zero probability")
        v[:, 1 - bit, :] = 0.0
        self.amplitudes /= np.sqrt(p)
        return p


def apply_gate(state: Statevector, gate: Gate) -> Statevector:
    return state.copy().apply(gate)


def measure_qubit(state: Statevector, q: int, rng_seed) -> tuple[int, Statevector]:
    """Sample qubit ``q`` in the computational basis; the input is left untouched."""
    out = state.copy()
    p1 = out.probability_one(q)
    rng = np.random.default_rng(rng_seed)
    bit = int(rng.random() < p1)
    out.project(q, bit)
    return bit, out


def expectation_z(state: Statevector, q: int) -> float:
    return 1.0 - 2.0 * state.probability_one(q)


# ---------------------------------------------------------------------------
# kernels on raw amplitude arrays (last axis = system register)


@dataclass(frozen=True)
class PauliKernel:
    """Precomputed action of a Pauli string P on basis states.

    ``(P psi)[y] = weight[y] * psi[perm[y]]`` with ``perm = y ^ flip``.
    """

    flip: int
    perm: np.ndarray
    weight: np.ndarray

    @property
    def diagonal(self) -> bool:
        return self.flip == 0


def pauli_kernel(paulis, n_qubits: int) -> PauliKernel:
    """``paulis`` is an iterable of (qubit, 'X'|'Y'|'Z')."""
    idx = np.arange(1 << n_qubits)
    flip = 0
    phase = np.ones(1 << n_qubits, dtype=complex)
    for q, p in paulis:
        if not 0 <= q < n_qubits:
            raise QubitIndexError(f"qubit {q} out of range for {n_qubits} qubits")
        bit = (idx >> q) & 1
        sign = 1 - 2 * bit
        if p == "X":
            flip |= 1 << q
        elif p == "Y":
            flip |= 1 << q
            phase = phase * (1j * sign)
        elif p == "Z":
            phase = phase * sign
        else:
            raise ValueError(f"unknown Pauli {p!r}")
    perm = idx ^ flip
    # phase was evaluated on the source state x = y ^ flip
    return PauliKernel(flip, perm, phase[perm])


def apply_pauli(arr: np.ndarray, kern: PauliKernel) -> np.ndarray:
    if kern.flip == 0:
        return arr * kern.weight
    return arr[..., kern.perm] * kern.weight


def exp_pauli_inplace(arr: np.ndarray, kern: PauliKernel, angle: float) -> None:
    """arr <- exp(-i angle P) arr, for Hermitian P (real ``angle``)."""
    c, s = np.cos(angle), np.sin(angle)
    if kern.flip == 0:
        arr *= c - 1j * s * kern.weight.real
        return
    moved = arr[..., kern.perm] * kern.weight
    arr *= c
    arr += (-1j * s) * moved
