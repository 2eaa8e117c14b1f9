"""Anderson impurity Hamiltonian, its Jordan-Wigner form and bath geometry.

Mode layout: impurity spin-orbitals occupy modes ``0..n_so-1``, bath site ``i``
is mode ``n_so + i``. The Hamiltonian is

    H = sum t_ab c+_a c_b - mu sum n_a + sum U_abcd c+_a c+_b c_c c_d
        + sum (V_ai c+_a d_i + h.c.) + sum eps_i n_i + sum_{i != j} h_ij d+_i d_j

where the last (bath hopping) block is zero in star geometry and tridiagonal
after :func:`star_to_chain`.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .qsim import PauliKernel, pauli_kernel


class ChainMappingError(RuntimeError):
    def __init__(self, iteration: int, residual: float):
        super().__init__(
            f"Krylov breakdown at block {iteration}: residual norm {residual:.3e}"
        )
        self.iteration = iteration
        self.residual = residual


@dataclass
class ImpurityModel:
    t: np.ndarray
    eps: np.ndarray
    V: np.ndarray
    mu: float = 0.0
    U: list = field(default_factory=list)
    bath_hopping: np.ndarray | None = None

    def __post_init__(self):
        self.t = np.atleast_2d(np.asarray(self.t, dtype=complex))
        self.eps = np.asarray(self.eps, dtype=float).reshape(-1)
        n_so, n_b = self.t.shape[0], self.eps.size
        self.V = np.asarray(self.V, dtype=complex).reshape(n_so, n_b)
        self.U = [(int(a), int(b), int(c), int(d), complex(v)) for a, b, c, d, v in self.U]
        if self.bath_hopping is None:
            self.bath_hopping = np.zeros((n_b, n_b), dtype=complex)
        self.bath_hopping = np.asarray(self.bath_hopping, dtype=complex).reshape(n_b, n_b)
        if not np.allclose(self.t, self.t.conj().T, atol=1e-12):
            raise ValueError("impurity hopping matrix t is not Hermitian")
        if not np.allclose(self.bath_hopping, self.bath_hopping.conj().T, atol=1e-12):
            raise ValueError("bath hopping matrix is not Hermitian")
        for a, b, c, d, _ in self.U:
            if max(a, b, c, d) >= n_so or min(a, b, c, d) < 0:
                raise ValueError(f"interaction index out of range: {(a, b, c, d)}")

    @property
    def n_so(self) -> int:
        return self.t.shape[0]

    @property
    def n_b(self) -> int:
        return self.eps.size

    @property
    def n_modes(self) -> int:
        return self.n_so + self.n_b

    def bath_matrix(self) -> np.ndarray:
        return np.diag(self.eps).astype(complex) + self.bath_hopping

    def quadratic_matrix(self) -> np.ndarray:
        """Single-particle matrix h with H_quadratic = sum h_pq c+_p c_q."""
        n_so = self.n_so
        h = np.zeros((self.n_modes, self.n_modes), dtype=complex)
        h[:n_so, :n_so] = self.t - self.mu * np.eye(n_so)
        h[:n_so, n_so:] = self.V
        h[n_so:, :n_so] = self.V.conj().T
        h[n_so:, n_so:] = self.bath_matrix()
        return h

    def hybridization(self, z) -> np.ndarray:
        """Delta(z) = V (z - E_bath)^-1 V^+, shape (len(z), n_so, n_so)."""
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        e, w = np.linalg.eigh(self.bath_matrix())
        vw = self.V @ w
        return np.einsum("ak,nk,bk->nab", vw, 1.0 / (z[:, None] - e[None, :]), vw.conj())


def hubbard_impurity(U: float, mu: float, eps, V, interleave: bool = False) -> ImpurityModel:
    """Single spinful impurity (modes 0=up, 1=down) with a spin-degenerate bath.

    ``eps``/``V`` describe the bath of one spin species. Bath modes are ordered
    all-up then all-down unless ``interleave`` is set.
    """
    eps = np.asarray(eps, dtype=float).reshape(-1)
    Vs = np.asarray(V, dtype=complex).reshape(-1)
    nb = eps.size
    full_eps = np.zeros(2 * nb)
    full_V = np.zeros((2, 2 * nb), dtype=complex)
    for s in range(2):
        for i in range(nb):
            j = 2 * i + s if interleave else s * nb + i
            full_eps[j] = eps[i]
            full_V[s, j] = Vs[i]
    Uterms = [(0, 1, 1, 0, U)] if U != 0 else []
    return ImpurityModel(np.zeros((2, 2)), full_eps, full_V, mu=mu, U=Uterms)


def mode_spins(model: ImpurityModel) -> np.ndarray | None:
    """Spin label (+1/-1) per mode if the model conserves S_z, else None.

    Impurity mode ``a`` is taken to carry spin ``+1`` for even ``a``; bath modes
    inherit the spin of the impurity modes they couple to (directly or through
    bath hopping).
    """
    n_so = model.n_so
    spins = np.zeros(model.n_modes, dtype=int)
    spins[:n_so] = np.where(np.arange(n_so) % 2 == 0, 1, -1)
    h = model.quadratic_matrix()
    changed = True
    while changed:
        changed = False
        for p in range(model.n_modes):
            for q in np.nonzero(np.abs(h[p]) > 0)[0]:
                if p == q or spins[p] == 0 or spins[q] != 0:
                    continue
                spins[q] = spins[p]
                changed = True
    spins[spins == 0] = 1
    nz = np.abs(h) > 0
    if np.any(nz & (spins[:, None] != spins[None, :])):
        return None
    for a, b, c, d, _ in model.U:
        if spins[a] + spins[b] != spins[c] + spins[d]:
            return None
    return spins


# ---------------------------------------------------------------------------
# fermionic terms


@dataclass(frozen=True)
class FermionTerm:
    """A Hamiltonian term as a sum of ladder-operator products.

    ``products`` holds ``(coefficient, ((mode, dagger), ...))`` with operators
    written left to right. Hopping-type terms carry their Hermitian partner.
    """

    kind: str
    products: tuple


def fermion_terms(model: ImpurityModel) -> list[FermionTerm]:
    n_so = model.n_so
    out = []
    tt = model.t - model.mu * np.eye(n_so)
    for a in range(n_so):
        if tt[a, a] != 0:
            out.append(FermionTerm("number", ((tt[a, a], ((a, 1), (a, 0))),)))
    for a in range(n_so):
        for b in range(n_so):
            if a != b and tt[a, b] != 0:
                out.append(FermionTerm("hopping", ((tt[a, b], ((a, 1), (b, 0))),)))
    for a, b, c, d, v in model.U:
        if v == 0 or a == b or c == d:
            continue
        kind = "density" if {a, b} == {c, d} else "interaction"
        out.append(FermionTerm(kind, ((v, ((a, 1), (b, 1), (c, 0), (d, 0))),)))
    for a in range(n_so):
        for i in range(model.n_b):
            v = model.V[a, i]
            if v != 0:
                p = n_so + i
                out.append(FermionTerm("hopping", ((v, ((a, 1), (p, 0))), (np.conj(v), ((p, 1), (a, 0))))))
    for i in range(model.n_b):
        if model.eps[i] != 0:
            p = n_so + i
            out.append(FermionTerm("number", ((model.eps[i], ((p, 1), (p, 0))),)))
    h = model.bath_hopping
    for i in range(model.n_b):
        for j in range(i + 1, model.n_b):
            if h[i, j] != 0:
                p, q = n_so + i, n_so + j
                out.append(FermionTerm("hopping", ((h[i, j], ((p, 1), (q, 0))), (h[j, i], ((q, 1), (p, 0))))))
    return out


def count_terms(n_so: int, n_b: int, dense_U: bool = False) -> int:
    """Number of nonzero one- and two-body terms of a generic model.

    ``dense_U=False`` is the Hubbard-like structure: diagonal impurity levels and
    one density-density interaction per pair of spin-orbitals. ``dense_U=True``
    fills the whole hopping matrix and every non-vanishing ``U_abcd``. Bath
    levels and impurity-bath couplings are always fully populated.
    """
    if n_so < 1 or n_b < 0:
        raise ValueError("need n_so >= 1 and n_b >= 0")
    model = structural_model(n_so, n_b, dense_U)
    return len(fermion_terms(model))


def structural_model(n_so: int, n_b: int, dense_U: bool) -> ImpurityModel:
    """Model with every structurally allowed coefficient nonzero."""
    rng = np.random.default_rng(n_so * 1000 + n_b)
    if dense_U:
        t = rng.normal(size=(n_so, n_so)) + 1j * rng.normal(size=(n_so, n_so))
        t = t + t.conj().T + 0.1 * np.eye(n_so)
        U = [
            (a, b, c, d, 1.0 + rng.random())
            for a in range(n_so) for b in range(n_so) for c in range(n_so) for d in range(n_so)
            if a != b and c != d
        ]
    else:
        t = np.diag(1.0 + rng.random(n_so))
        U = [(a, b, b, a, 1.0 + rng.random()) for a in range(n_so) for b in range(a + 1, n_so)]
    eps = 0.5 + rng.random(n_b)
    V = 0.5 + rng.random((n_so, n_b))
    return ImpurityModel(t, eps, V, mu=0.0, U=U)


# ---------------------------------------------------------------------------
# Jordan-Wigner mapping
#
# Pauli strings are kept in (x, z) bitmask form meaning X^x Z^z per qubit.


def _mul(a, b):
    (x1, z1, c1), (x2, z2, c2) = a, b
    sign = -1 if bin(z1 & x2).count("1") % 2 else 1
    return (x1 ^ x2, z1 ^ z2, c1 * c2 * sign)


def _ladder(mode: int, dagger: bool):
    x = 1 << mode
    zl = x - 1
    s = 0.5 if dagger else -0.5
    return [(x, zl, 0.5), (x, zl | x, s)]


def _product_to_pauli(coeff, ops) -> dict:
    acc = {(0, 0): complex(coeff)}
    for mode, dag in ops:
        new = {}
        for (x1, z1), c1 in acc.items():
            for term in _ladder(mode, bool(dag)):
                x, z, c = _mul((x1, z1, c1), term)
                new[(x, z)] = new.get((x, z), 0) + c
        acc = new
    return acc


@dataclass(frozen=True)
class QubitTerm:
    coefficient: complex
    paulis: tuple  # ((qubit, 'X'|'Y'|'Z'), ...)

    @property
    def flip(self) -> int:
        m = 0
        for q, p in self.paulis:
            if p in "XY":
                m |= 1 << q
        return m


def _to_qubit_term(x: int, z: int, c: complex) -> QubitTerm:
    paulis = []
    q = 0
    m = x | z
    while m >> q:
        xb, zb = (x >> q) & 1, (z >> q) & 1
        if xb and zb:
            paulis.append((q, "Y"))
            c *= -1j  # X Z = -i Y
        elif xb:
            paulis.append((q, "X"))
        elif zb:
            paulis.append((q, "Z"))
        q += 1
    return QubitTerm(complex(c), tuple(paulis))


@dataclass
class TermGroup:
    """Qubit Hamiltonian split into groups for Trotter products.

    Group 0 holds every Z-only string (they commute); each further group holds
    the strings sharing one X/Y support mask.
    """

    n_qubits: int
    constant: float
    groups: list
    fermion_terms: list = field(default_factory=list)
    _kernels: list | None = field(default=None, repr=False)

    @property
    def terms(self) -> list:
        return [t for g in self.groups for t in g]

    def kernels(self) -> list:
        if self._kernels is None:
            self._kernels = [
                [(t.coefficient.real, pauli_kernel(t.paulis, self.n_qubits)) for t in g]
                for g in self.groups
            ]
        return self._kernels

    def diagonal(self) -> np.ndarray:
        """Diagonal of the Z-only part (without the constant)."""
        d = np.zeros(1 << self.n_qubits)
        for c, k in self.kernels()[0]:
            if k.diagonal:
                d += c * k.weight.real
        return d

    def max_coefficient(self) -> float:
        vals = [abs(p[0]) for ft in self.fermion_terms for p in ft.products]
        return max(vals) if vals else 0.0

    def norm_bound(self) -> float:
        return abs(self.constant) + sum(abs(t.coefficient) for t in self.terms)

    def apply(self, arr: np.ndarray) -> np.ndarray:
        out = self.constant * arr
        for g in self.kernels():
            for c, k in g:
                out = out + c * (arr * k.weight if k.diagonal else arr[..., k.perm] * k.weight)
        return out

    def to_dense(self) -> np.ndarray:
        dim = 1 << self.n_qubits
        return self.apply(np.eye(dim, dtype=complex)).T


def _symplectic(term: QubitTerm) -> tuple[int, int]:
    x = z = 0
    for q, p in term.paulis:
        if p in "XY":
            x |= 1 << q
        if p in "YZ":
            z |= 1 << q
    return x, z


def commuting_layers(tg: TermGroup) -> int:
    """Greedy partition of the Pauli strings into mutually commuting layers.

    A depth proxy only: no hardware scheduling is modelled.
    """
    layers: list[list[tuple[int, int]]] = []
    for term in tg.terms:
        x, z = _symplectic(term)
        for layer in layers:
            if all(bin((x & z2) ^ (z & x2)).count("1") % 2 == 0 for x2, z2 in layer):
                layer.append((x, z))
                break
        else:
            layers.append([(x, z)])
    return len(layers)


def qubit_operator(products, n_qubits: int, tol: float = 1e-14):
    """Pauli expansion of a sum of ladder products -> (constant, [QubitTerm])."""
    acc: dict = {}
    for coeff, ops in products:
        for key, c in _product_to_pauli(coeff, ops).items():
            acc[key] = acc.get(key, 0) + c
    const = 0.0
    terms = []
    for (x, z), c in sorted(acc.items()):
        if abs(c) < tol:
            continue
        if x == 0 and z == 0:
            const = c
            continue
        terms.append(_to_qubit_term(x, z, c))
    return const, terms


def jordan_wigner(model: ImpurityModel, tol: float = 1e-14) -> TermGroup:
    fterms = fermion_terms(model)
    products = [p for ft in fterms for p in ft.products]
    const, terms = qubit_operator(products, model.n_modes, tol)
    for t in terms:
        if abs(t.coefficient.imag) > 1e-10:
            raise ValueError("Hamiltonian has a non-Hermitian Pauli coefficient")
    terms = [QubitTerm(complex(t.coefficient.real), t.paulis) for t in terms]
    diag = [t for t in terms if t.flip == 0]
    by_flip: dict = {}
    for t in terms:
        if t.flip:
            by_flip.setdefault(t.flip, []).append(t)
    groups = [diag] + [by_flip[k] for k in by_flip]
    if abs(np.imag(const)) > 1e-10:
        raise ValueError("Hamiltonian has a complex constant")
    return TermGroup(model.n_modes, float(np.real(const)), groups, fterms)


def pauli_of_ladder_sum(products, n_qubits: int) -> list[tuple[complex, PauliKernel, tuple]]:
    const, terms = qubit_operator(products, n_qubits)
    out = [(t.coefficient, pauli_kernel(t.paulis, n_qubits), t.paulis) for t in terms]
    if const != 0:
        out.append((const, pauli_kernel((), n_qubits), ()))
    return out


# ---------------------------------------------------------------------------
# star -> chain


def star_to_chain(model: ImpurityModel, tol: float = 1e-12) -> ImpurityModel:
    """Block-Lanczos the bath into ``n_so``-wide blocks coupled like a chain.

    The impurity block is untouched; only bath orbitals are rotated, so the
    impurity Green's function and hybridization are preserved.
    """
    n_so, n_b = model.n_so, model.n_b
    if n_b == 0:
        return replace(model)
    E = model.bath_matrix()
    cols: list[np.ndarray] = []

    def orthonormal_block(M, it):
        for q in cols:
            M = M - np.outer(q, q.conj() @ M)
        for q in cols:  # second pass for full reorthogonalisation
            M = M - np.outer(q, q.conj() @ M)
        block = []
        for j in range(M.shape[1]):
            v = M[:, j]
            for q in block:
                v = v - q * (q.conj() @ v)
            for q in block:
                v = v - q * (q.conj() @ v)
            nv = np.linalg.norm(v)
            if nv > tol:
                block.append(v / nv)
        if not block:
            raise ChainMappingError(it, float(np.linalg.norm(M)))
        return block

    block = orthonormal_block(model.V.conj().T.copy(), 0)
    it = 0
    while True:
        cols.extend(block)
        if len(cols) >= n_b:
            break
        it += 1
        block = orthonormal_block(E @ np.array(block).T, it)
    W = np.array(cols[:n_b]).T
    Vc = model.V @ W
    Ec = W.conj().T @ E @ W
    Vc[np.abs(Vc) < tol] = 0
    Ec[np.abs(Ec) < tol] = 0
    eps = Ec.diagonal().real.copy()
    hop = Ec - np.diag(Ec.diagonal())
    return ImpurityModel(model.t.copy(), eps, Vc, mu=model.mu, U=list(model.U), bath_hopping=hop)


# ---------------------------------------------------------------------------
# model file


def _fmt(x: float) -> str:
    return repr(float(x))


def write_model(model: ImpurityModel, path) -> None:
    lines = [f"# impurity model: n_so={model.n_so} n_b={model.n_b}"]
    lines.append(f"mu {_fmt(model.mu)}")
    for a in range(model.n_so):
        for b in range(model.n_so):
            v = model.t[a, b]
            if a == b or v != 0:
                lines.append(f"t {a} {b} {_fmt(v.real)} {_fmt(v.imag)}")
    for a, b, c, d, v in model.U:
        lines.append(f"U {a} {b} {c} {d} {_fmt(v.real)} {_fmt(v.imag)}")
    for i, e in enumerate(model.eps):
        lines.append(f"eps {i} {_fmt(e)}")
    for a in range(model.n_so):
        for i in range(model.n_b):
            v = model.V[a, i]
            if v != 0:
                lines.append(f"V {a} {i} {_fmt(v.real)} {_fmt(v.imag)}")
    h = model.bath_hopping
    for i in range(model.n_b):
        for j in range(model.n_b):
            if i != j and h[i, j] != 0:
                lines.append(f"h {i} {j} {_fmt(h[i, j].real)} {_fmt(h[i, j].imag)}")
    Path(path).write_text("\n".join(lines) + "\n")


def parse_model(text: str) -> ImpurityModel:
    mu = 0.0
    t_ent, U, eps_ent, V_ent, h_ent = {}, [], {}, {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        key, args = tok[0], tok[1:]
        try:
            if key == "mu" and len(args) == 1:
                mu = float(args[0])
            elif key == "t" and len(args) == 4:
                t_ent[int(args[0]), int(args[1])] = complex(float(args[2]), float(args[3]))
            elif key == "U" and len(args) == 6:
                U.append((*map(int, args[:4]), complex(float(args[4]), float(args[5]))))
            elif key == "eps" and len(args) == 2:
                eps_ent[int(args[0])] = float(args[1])
            elif key == "V" and len(args) == 4:
                V_ent[int(args[0]), int(args[1])] = complex(float(args[2]), float(args[3]))
            elif key == "h" and len(args) == 4:
                h_ent[int(args[0]), int(args[1])] = complex(float(args[2]), float(args[3]))
            else:
                raise ValueError
        except ValueError:
            raise ValueError(f"line {lineno}: cannot parse {raw!r}") from None
    n_so = 1 + max([max(k) for k in t_ent] + [a for a, _ in V_ent] + [max(u[:4]) for u in U] + [0])
    n_b = 1 + max([i for i in eps_ent] + [i for _, i in V_ent] + [max(k) for k in h_ent] + [-1])
    t = np.zeros((n_so, n_so), dtype=complex)
    for k, v in t_ent.items():
        t[k] = v
    eps = np.zeros(n_b)
    for k, v in eps_ent.items():
        eps[k] = v
    V = np.zeros((n_so, n_b), dtype=complex)
    for k, v in V_ent.items():
        V[k] = v
    h = np.zeros((n_b, n_b), dtype=complex)
    for k, v in h_ent.items():
        h[k] = v
    return ImpurityModel(t, eps, V, mu=mu, U=U, bath_hopping=h)


def read_model(path) -> ImpurityModel:
    return parse_model(Path(path).read_text())
