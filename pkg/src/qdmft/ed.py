"""Exact diagonalisation of the impurity model in particle-number sectors.

Operators act on occupation bitstrings directly (fermionic signs counted from
the occupied modes below the acted-on mode), independently of the Pauli-string
machinery, so this module doubles as the reference for the quantum path.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .aim import ImpurityModel, fermion_terms, mode_spins

MAX_MODES = 16
DENSE_LIMIT = 1500


class EdConvergenceError(RuntimeError):
    pass


def ladder(states: np.ndarray, mode: int, dagger: bool):
    """Apply c+_mode (or c_mode) to bitstrings; returns (new_states, sign, valid)."""
    bit = np.int64(1) << mode
    occ = (states & bit) != 0
    valid = ~occ if dagger else occ
    below = np.bitwise_count(states & (bit - 1)).astype(np.int64)
    sign = 1 - 2 * (below & 1)
    return states ^ bit, sign, valid


def apply_product(states: np.ndarray, ops):
    """Apply a ladder product (written left to right) to each bitstring."""
    coeff = np.ones(states.size)
    valid = np.ones(states.size, dtype=bool)
    cur = states.copy()
    for mode, dag in reversed(ops):
        cur, s, v = ladder(cur, mode, bool(dag))
        coeff *= s
        valid &= v
    return cur, coeff, valid


@dataclass
class Sector:
    n: int
    sz: int | None
    states: np.ndarray

    @property
    def key(self):
        return (self.n, self.sz)

    @property
    def dim(self) -> int:
        return self.states.size

    def index(self, states: np.ndarray) -> np.ndarray:
        pos = np.searchsorted(self.states, states)
        pos = np.minimum(pos, self.dim - 1)
        return np.where(self.states[pos] == states, pos, -1)


def enumerate_sectors(n_modes: int, spins: np.ndarray | None) -> dict:
    allst = np.arange(1 << n_modes, dtype=np.int64)
    nocc = np.bitwise_count(allst).astype(int)
    if spins is None:
        szs = np.zeros_like(nocc)
    else:
        up = sum(1 << m for m in range(n_modes) if spins[m] > 0)
        nup = np.bitwise_count(allst & up).astype(int)
        szs = 2 * nup - nocc
    out = {}
    for n in range(n_modes + 1):
        sel = nocc == n
        for sz in np.unique(szs[sel]):
            key = (n, int(sz) if spins is not None else None)
            out[key] = Sector(n, key[1], allst[sel & (szs == sz)])
    return out


def sector_hamiltonian(model: ImpurityModel, sector: Sector) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for term in fermion_terms(model):
        for coeff, ops in term.products:
            new, sgn, ok = apply_product(sector.states, ops)
            j = np.nonzero(ok)[0]
            i = sector.index(new[j])
            keep = i >= 0
            rows.append(i[keep])
            cols.append(j[keep])
            vals.append(coeff * sgn[j][keep])
    d = sector.dim
    if not rows:
        return sp.csr_matrix((d, d), dtype=complex)
    return sp.csr_matrix(
        (np.concatenate(vals).astype(complex), (np.concatenate(rows), np.concatenate(cols))), shape=(d, d)
    )


def dense_hamiltonian(model: ImpurityModel) -> np.ndarray:
    """Full 2^n Hamiltonian in the occupation basis (index bit m = mode m)."""
    states = np.arange(1 << model.n_modes, dtype=np.int64)
    full = Sector(-1, None, states)
    return sector_hamiltonian(model, full).toarray()


def ladder_matrix(n_modes: int, mode: int, dagger: bool) -> np.ndarray:
    states = np.arange(1 << n_modes, dtype=np.int64)
    new, sgn, ok = ladder(states, mode, dagger)
    m = np.zeros((1 << n_modes, 1 << n_modes))
    m[new[ok], states[ok]] = sgn[ok]
    return m


@dataclass
class EdSolution:
    """Ground manifold and sector data.

    ``vectors`` holds ``(sector_key, vector)`` for every state of the
    (possibly degenerate) ground manifold.
    """

    energy: float
    vectors: list
    spectrum: np.ndarray
    model: ImpurityModel
    sectors: dict
    spins: np.ndarray | None
    _eig: dict = field(default_factory=dict, repr=False)

    @property
    def degeneracy(self) -> int:
        return len(self.vectors)

    def sector_eigen(self, key):
        if key not in self._eig:
            h = sector_hamiltonian(self.model, self.sectors[key]).toarray()
            self._eig[key] = np.linalg.eigh(h)
        return self._eig[key]

    def ground_vector(self) -> tuple:
        return self.vectors[0]

    def full_vector(self, i: int = 0) -> np.ndarray:
        """Ground vector ``i`` embedded in the 2^n occupation basis."""
        key, v = self.vectors[i]
        out = np.zeros(1 << self.model.n_modes, dtype=complex)
        out[self.sectors[key].states] = v
        return out


def _lowest(h: sp.csr_matrix, k: int):
    d = h.shape[0]
    if d <= DENSE_LIMIT:
        e, v = np.linalg.eigh(h.toarray())
        return e[:k], v[:, :k]
    try:
        e, v = spla.eigsh(h, k=min(k, d - 1), which="SA", tol=1e-12, maxiter=20000, v0=np.ones(d))
    except spla.ArpackNoConvergence as exc:
        raise EdConvergenceError(f"eigsh did not converge on a sector of dimension {d}") from exc
    order = np.argsort(e)
    return e[order], v[:, order]


def ed_ground(model: ImpurityModel, spins="auto", degeneracy_tol: float = 1e-8, n_low: int = 4) -> EdSolution:
    """Lowest state over all particle-number (and S_z) sectors."""
    if model.n_modes > MAX_MODES:
        raise ValueError(f"ED is limited to {MAX_MODES} modes, model has {model.n_modes}")
    if isinstance(spins, str):
        spins = mode_spins(model)
    sectors = enumerate_sectors(model.n_modes, spins)
    found = []
    for key, sec in sectors.items():
        e, v = _lowest(sector_hamiltonian(model, sec), n_low)
        for k in range(len(e)):
            found.append((e[k], key, v[:, k]))
    found.sort(key=lambda x: x[0])
    e0 = found[0][0]
    ground = [(key, vec) for e, key, vec in found if e - e0 < degeneracy_tol]
    sol = EdSolution(float(e0), ground, np.array([f[0] for f in found]), model, sectors, spins)
    for key, vec in ground:
        h = sector_hamiltonian(model, sectors[key])
        res = np.linalg.norm(h @ vec - e0 * vec)
        if res > 1e-8:
            raise EdConvergenceError(f"ground-state residual {res:.2e} in sector {key}")
    return sol


def _target_key(sol: EdSolution, key, mode: int, dagger: bool):
    n, sz = key
    dn = 1 if dagger else -1
    if sz is None:
        return (n + dn, None)
    return (n + dn, sz + dn * int(sol.spins[mode]))


def _excitation(sol: EdSolution, key, vec, mode: int, dagger: bool):
    """(target key, amplitudes <m| c(+)_mode |g>) in the target eigenbasis, or None."""
    tkey = _target_key(sol, key, mode, dagger)
    if tkey not in sol.sectors:
        return None
    src = sol.sectors[key]
    new, sgn, ok = ladder(src.states, mode, dagger)
    tgt = sol.sectors[tkey]
    phi = np.zeros(tgt.dim, dtype=complex)
    idx = tgt.index(new[ok])
    phi[idx] = sgn[ok] * vec[ok]
    e, w = sol.sector_eigen(tkey)
    return tkey, e, w.conj().T @ phi


def lehmann_weights(sol: EdSolution, alpha: int, beta: int):
    """Poles and residues of the particle and hole Green's functions.

    Returns ``(ep, wp, eh, wh)`` with ``Gp_ab(t) = sum wp exp(-i ep t)`` and
    ``Gh_ab(t) = sum wh exp(-i eh t)``; energies are excitation energies (>= 0
    up to degeneracy). Averaged over the ground manifold.
    """
    ep, wp, eh, wh = [], [], [], []
    nd = len(sol.vectors)
    for key, vec in sol.vectors:
        pb = _excitation(sol, key, vec, beta, True)
        pa = _excitation(sol, key, vec, alpha, True) if alpha != beta else pb
        if pb is not None and pa is not None and pa[0] == pb[0]:
            _, e, ab = pb
            aa = pa[2]
            ep.append(e - sol.energy)
            wp.append(aa.conj() * ab / nd)
        hb = _excitation(sol, key, vec, beta, False)
        ha = _excitation(sol, key, vec, alpha, False) if alpha != beta else hb
        if hb is not None and ha is not None and ha[0] == hb[0]:
            _, e, hb_amp = hb
            ha_amp = ha[2]
            eh.append(e - sol.energy)
            wh.append(ha_amp.conj() * hb_amp / nd)
    cat = lambda xs: np.concatenate(xs) if xs else np.zeros(0)
    return cat(ep), cat(wp), cat(eh), cat(wh)


def ed_greens(sol: EdSolution, grid, orbitals=None):
    """Exact real-time particle/hole Green's functions on ``grid``."""
    from .gf import RealTimeGF

    n_so = sol.model.n_so
    orbitals = list(range(n_so)) if orbitals is None else list(orbitals)
    t = np.asarray(grid.points)
    gp = np.zeros((t.size, n_so, n_so), dtype=complex)
    gh = np.zeros_like(gp)
    for a, b in itertools.product(orbitals, orbitals):
        ep, wp, eh, wh = lehmann_weights(sol, a, b)
        gp[:, a, b] = np.exp(-1j * np.outer(t, ep)) @ wp
        # <c+_a(t) c_b> = sum <g|c+_a|m><m|c_b|g> e^{i(E0-Em)t}
        gh[:, a, b] = np.exp(-1j * np.outer(t, eh)) @ wh
    return RealTimeGF(grid, gp, gh, n_meas=0, estimator="exact")


def ed_matsubara(sol: EdSolution, iw: np.ndarray, orbitals=None) -> np.ndarray:
    """G_ab(i w_n) directly from the Lehmann representation."""
    n_so = sol.model.n_so
    orbitals = list(range(n_so)) if orbitals is None else list(orbitals)
    z = 1j * np.asarray(iw, dtype=float)
    out = np.zeros((z.size, n_so, n_so), dtype=complex)
    for a, b in itertools.product(orbitals, orbitals):
        ep, wp, eh, wh = lehmann_weights(sol, a, b)
        out[:, a, b] = (1.0 / (z[:, None] - ep[None, :])) @ wp
        # hole part enters through conj(Gh): pole at -eh with residue conj(wh)
        out[:, a, b] += (1.0 / (z[:, None] + eh[None, :])) @ wh.conj()
    return out
