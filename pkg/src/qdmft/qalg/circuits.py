"""Gate-level circuits for single Trotter factors.

These are the circuits whose gates are tallied. The fast simulation path in
:mod:`.trotter` must agree with them (exactly for controlled circuits, up to a
global phase otherwise); the tests check this on small registers.
"""
from __future__ import annotations

import numpy as np

from ..aim import FermionTerm, TermGroup, qubit_operator
from ..qsim import Gate, GateTally


def number_gates(q: int, eps: float, tau: float, control=None) -> list[Gate]:
    """exp(-i tau eps n_q)."""
    return [Gate("R", q, control, -tau * eps)]


def density_gates(i: int, j: int, U: float, tau: float, control=None) -> list[Gate]:
    """exp(-i tau U n_i n_j) with theta = tau U / 2."""
    th = tau * U / 2
    return [
        Gate("R", i, control, -th),
        Gate("R", j, control, -th),
        Gate("CNOT", j, i),
        Gate("R", j, control, th),
        Gate("CNOT", j, i),
    ]


def pauli_rotation_gates(paulis, angle: float, control=None) -> list[Gate]:
    """exp(-i angle P) for a Pauli string P given as ((qubit, 'X'|'Y'|'Z'), ...)."""
    if not paulis:
        return [Gate("R", control, None, -angle)] if control is not None else []
    pre, post = [], []
    for q, p in paulis:
        if p == "X":
            pre.append(Gate("H", q))
            post.append(Gate("H", q))
        elif p == "Y":
            # Y = Yb Z Yb^dagger
            pre.append(Gate("Y", q, adjoint=True))
            post.append(Gate("Y", q))
    qs = [q for q, _ in paulis]
    ladder = [Gate("CNOT", qs[k + 1], qs[k]) for k in range(len(qs) - 1)]
    last = qs[-1]
    core = [Gate("R", last, control, 2 * angle)]
    if control is not None:
        core.append(Gate("R", control, None, -angle))
    return pre + ladder + core + ladder[::-1] + post[::-1]


def controlled_pauli_gates(coeff: complex, paulis, control: int) -> list[Gate]:
    """Controlled application of the unitary ``coeff * P`` (|coeff| = 1)."""
    gates = []
    for q, p in paulis:
        if p == "X":
            gates.append(Gate("CNOT", q, control))
        elif p == "Z":
            gates.append(Gate("Z", q, control))
        else:
            gates += [Gate("S", q, adjoint=True), Gate("CNOT", q, control), Gate("S", q)]
    phase = np.angle(coeff)
    if abs(phase) > 1e-15:
        if abs(abs(phase) - np.pi) < 1e-12:
            gates.append(Gate("Z", control))
        else:
            gates.append(Gate("R", control, None, phase))
    return gates


def term_gates(term: FermionTerm, tau: float, n_qubits: int, control=None) -> list[Gate]:
    """Circuit for exp(-i tau h) of one Hamiltonian term."""
    if term.kind == "number":
        (c, ((q, _), _)), = term.products
        return number_gates(q, c.real, tau, control)
    if term.kind == "density":
        (c, ops), = term.products
        i, j = ops[0][0], ops[1][0]
        # c+_a c+_b c_b c_a = n_a n_b ; c+_a c+_b c_a c_b = -n_a n_b
        sign = 1 if ops[2][0] == j else -1
        return density_gates(min(i, j), max(i, j), sign * c.real, tau, control)
    const, strings = qubit_operator(term.products, n_qubits)
    gates = []
    if control is not None and const != 0:
        gates.append(Gate("R", control, None, -tau * np.real(const)))
    for s in strings:
        gates += pauli_rotation_gates(s.paulis, tau * s.coefficient.real, control)
    return gates


def _factor_gates(tg: TermGroup, tau: float, n_qubits: int, control=None) -> list[list[Gate]]:
    """Gate lists for the Trotter factors of ``tg``, in kernel order.

    Factor 0 is the diagonal part: number and density-density terms use their
    dedicated circuits, any other Z-only strings a generic rotation. The
    remaining factors are the non-diagonal strings group by group.
    """
    special = [t for t in tg.fermion_terms if t.kind in ("number", "density")]
    other = [p for t in tg.fermion_terms if t.kind not in ("number", "density") for p in t.products]
    diag = [g for t in special for g in term_gates(t, tau, n_qubits, control)]
    const, strings = qubit_operator(other, n_qubits)
    if control is not None and abs(const) > 0:
        diag.append(Gate("R", control, None, -tau * np.real(const)))
    for s in strings:
        if s.flip == 0:
            diag += pauli_rotation_gates(s.paulis, tau * s.coefficient.real, control)
    factors = [diag]
    for group in tg.groups[1:]:
        for s in group:
            factors.append(pauli_rotation_gates(s.paulis, tau * s.coefficient.real, control))
    return factors


def step_gates(tg: TermGroup, tau: float, order: int = 1, control=None) -> list[Gate]:
    """One Trotter step exp(-i tau H) as elementary gates."""
    n = tg.n_qubits
    if order == 1:
        return [g for f in _factor_gates(tg, tau, n, control) for g in f]
    if order != 2:
        raise ValueError("Trotter order must be 1 or 2")
    half = _factor_gates(tg, tau / 2, n, control)
    mid = _factor_gates(tg, tau, n, control)[-1]
    gates = [g for f in half[:-1] for g in f] + mid
    for f in reversed(half[:-1]):
        gates += f
    return gates


def step_tally(tg: TermGroup, order: int = 1, controlled: bool = False) -> GateTally:
    control = tg.n_qubits if controlled else None
    return GateTally.from_gates(step_gates(tg, 1.0, order, control))
