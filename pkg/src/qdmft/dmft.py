"""Classical DMFT self-consistency: Dyson equation, lattice sum, bath fit, loop."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np
from scipy import integrate, optimize

from .matsubara import MatsubaraGF, MatsubaraGrid, read_matsubara_tsv, write_matsubara_tsv

log = logging.getLogger(__name__)


class DmftError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# bath


@dataclass
class BathParameters:
    eps: np.ndarray  # (n_b,)
    V: np.ndarray  # (n_so, n_b)
    mu: float = 0.0

    def __post_init__(self):
        self.eps = np.asarray(self.eps, dtype=float).reshape(-1)
        V = np.atleast_2d(np.asarray(self.V, dtype=complex))
        self.V = V.reshape(-1, self.eps.size) if self.eps.size else V.reshape(V.shape[0], 0)
        if not (np.all(np.isfinite(self.eps)) and np.all(np.isfinite(self.V)) and np.isfinite(self.mu)):
            raise ValueError("bath parameters must be finite")

    @property
    def n_b(self) -> int:
        return self.eps.size

    @property
    def n_so(self) -> int:
        return self.V.shape[0]

    def hybridization(self, z) -> np.ndarray:
        """Delta_ab(z) = sum_i V_ai conj(V_bi) / (z - eps_i); shape (n_z, n_so, n_so)."""
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        return np.einsum("ai,zi,bi->zab", self.V, 1.0 / (z[:, None] - self.eps[None, :]), self.V.conj())


def write_bath(bath: BathParameters, path) -> None:
    r = repr
    lines = [f"mu {r(float(bath.mu))}"]
    lines += [f"eps {i} {r(float(e))}" for i, e in enumerate(bath.eps)]
    for a in range(bath.n_so):
        for i in range(bath.n_b):
            v = bath.V[a, i]
            lines.append(f"V {a} {i} {r(float(v.real))} {r(float(v.imag))}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_bath(path) -> BathParameters:
    mu, eps, V = 0.0, {}, {}
    for ln in Path(path).read_text().splitlines():
        f = ln.split("#")[0].split()
        if not f:
            continue
        if f[0] == "mu":
            mu = float(f[1])
        elif f[0] == "eps":
            eps[int(f[1])] = float(f[2])
        elif f[0] == "V":
            V[int(f[1]), int(f[2])] = complex(float(f[3]), float(f[4]))
        else:
            raise ValueError(f"unknown bath record {f[0]!r}")
    n_b = len(eps)
    n_so = 1 + max((a for a, _ in V), default=0)
    Vm = np.zeros((n_so, n_b), dtype=complex)
    for (a, i), v in V.items():
        Vm[a, i] = v
    return BathParameters(np.array([eps[i] for i in range(n_b)]), Vm, mu)


# ---------------------------------------------------------------------------
# density of states


@dataclass
class DosSpec:
    kind: str = "bethe"
    energies: np.ndarray | None = None
    weights: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("bethe", "tabulated"):
            raise ValueError("DOS kind must be 'bethe' or 'tabulated'")
        if self.kind == "tabulated":
            e = np.asarray(self.energies, dtype=float)
            d = np.asarray(self.weights, dtype=float)
            if e.shape != d.shape or e.ndim != 1 or np.any(np.diff(e) <= 0):
                raise ValueError("tabulated DOS needs increasing energies and matching weights")
            if np.any(d < 0):
                raise ValueError("DOS must be non-negative")
            norm = np.trapezoid(d, e)
            if abs(norm - 1) > 1e-6:
                raise ValueError(f"DOS integrates to {norm:.8f}, not 1")
            self.energies, self.weights = e, d

    @classmethod
    def semicircle_table(cls, n: int = 40001) -> DosSpec:
        e = np.linspace(-2, 2, n)
        d = np.sqrt(np.clip(4 - e * e, 0, None)) / (2 * np.pi)
        return cls("tabulated", e, d / np.trapezoid(d, e))

    @classmethod
    def from_file(cls, path) -> DosSpec:
        arr = np.loadtxt(path, ndmin=2)
        return cls("tabulated", arr[:, 0], arr[:, 1])

    def density(self, e):
        if self.kind == "bethe":
            e = np.asarray(e, dtype=float)
            return np.sqrt(np.clip(4 - e * e, 0, None)) / (2 * np.pi)
        return np.interp(e, self.energies, self.weights, left=0.0, right=0.0)


def bethe_g(z) -> np.ndarray:
    """Semicircular (half-bandwidth 2) local Green's function, Im G < 0 for Im z > 0."""
    z = np.asarray(z, dtype=complex)
    root = np.sqrt(z * z - 4)
    plus, minus = z + root, z - root
    den = np.where(np.abs(plus) >= np.abs(minus), plus, minus)
    return 2.0 / den


def hilbert_dos(z: complex, dos: DosSpec) -> complex:
    """int D(e) / (z - e) de by adaptive quadrature."""
    lo, hi = (-2.0, 2.0) if dos.kind == "bethe" else (dos.energies[0], dos.energies[-1])
    f = dos.density
    kw = dict(epsabs=1e-11, epsrel=1e-10, limit=400)
    with warnings.catch_warnings():
        # round-off notices near the requested floor
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        re = integrate.quad(lambda e: (f(e) / (z - e)).real, lo, hi, **kw)[0]
        im = integrate.quad(lambda e: (f(e) / (z - e)).imag, lo, hi, **kw)[0]
    return complex(re, im)


# ---------------------------------------------------------------------------
# Dyson pieces


def _inv(values: np.ndarray, what: str) -> np.ndarray:
    det = np.linalg.det(values)
    bad = np.nonzero(np.abs(det) < 1e-12)[0]
    if bad.size:
        raise DmftError(f"{what} is singular at frequency index {int(bad[0])}")
    return np.linalg.inv(values)


def g0_discrete(bath: BathParameters, grid: MatsubaraGrid) -> MatsubaraGF:
    """G0(iw)^-1 = iw + mu - Delta(iw)."""
    iw = grid.iw
    eye = np.eye(bath.n_so)
    g0inv = (iw + bath.mu)[:, None, None] * eye - bath.hybridization(iw)
    return MatsubaraGF(grid, np.linalg.inv(g0inv))


def self_energy(g0: MatsubaraGF, g: MatsubaraGF) -> MatsubaraGF:
    return MatsubaraGF(g.grid, _inv(g0.values, "G0") - _inv(g.values, "G"))


def dyson(g0: MatsubaraGF, sigma: MatsubaraGF) -> MatsubaraGF:
    """G = (G0^-1 - Sigma)^-1."""
    return MatsubaraGF(g0.grid, _inv(_inv(g0.values, "G0") - sigma.values, "G^-1"))


def lattice_g(sigma: MatsubaraGF, dos: DosSpec, mu: float) -> MatsubaraGF:
    """G(iw) = int D(e) / (iw + mu - Sigma - e) de, orbital-diagonal Sigma."""
    iw = sigma.grid.iw
    n = sigma.n_so
    out = np.zeros_like(sigma.values)
    for a in range(n):
        z = iw + mu - sigma.values[:, a, a]
        if dos.kind == "bethe":
            out[:, a, a] = bethe_g(z)
        else:
            out[:, a, a] = [hilbert_dos(zz, dos) for zz in z]
    return MatsubaraGF(sigma.grid, out)


def new_g0(g_imp: MatsubaraGF, sigma: MatsubaraGF | None, dos: DosSpec, mu: float, bethe_shortcut: bool = True) -> MatsubaraGF:
    """Next Weiss field: (G_loc^-1 + Sigma)^-1, or iw + mu - G on the Bethe lattice."""
    iw = g_imp.grid.iw
    eye = np.eye(g_imp.n_so)
    if dos.kind == "bethe" and bethe_shortcut:
        return MatsubaraGF(g_imp.grid, np.linalg.inv((iw + mu)[:, None, None] * eye - g_imp.values))
    gl = lattice_g(sigma, dos, mu)
    return MatsubaraGF(g_imp.grid, _inv(_inv(gl.values, "lattice G") + sigma.values, "G0^-1"))


# ---------------------------------------------------------------------------
# bath fit


class FitResult(NamedTuple):
    bath: BathParameters
    residual: float
    converged: bool


def fit_cost(target_g0: MatsubaraGF, bath: BathParameters) -> float:
    g0d = g0_discrete(bath, target_g0.grid)
    diff = np.linalg.inv(target_g0.values) - np.linalg.inv(g0d.values)
    return float(np.sum(np.abs(diff) ** 2))


def _unpack(x: np.ndarray, n_b: int, symmetric: bool):
    if not symmetric:
        return x[:n_b], x[n_b:]
    n_pair = n_b // 2
    e, v = x[:n_pair], x[n_pair:2 * n_pair]
    eps = np.concatenate([-e[::-1], e])
    V = np.concatenate([v[::-1], v])
    if n_b % 2:
        eps = np.concatenate([eps[:n_pair], [0.0], eps[n_pair:]])
        V = np.concatenate([V[:n_pair], [x[2 * n_pair]], V[n_pair:]])
    return eps, V


def _pack(eps: np.ndarray, V: np.ndarray, symmetric: bool) -> np.ndarray:
    if not symmetric:
        return np.concatenate([eps, V])
    order = np.argsort(eps)
    eps, V = eps[order], np.abs(V[order])
    n_b = eps.size
    n_pair = n_b // 2
    # average each +/- pair, the middle level (odd n_b) sits at zero
    e = (eps[n_b - n_pair:] - eps[:n_pair][::-1]) / 2
    v = np.sqrt((V[n_b - n_pair:] ** 2 + V[:n_pair][::-1] ** 2) / 2)
    x = np.concatenate([e, v])
    if n_b % 2:
        x = np.concatenate([x, [V[n_pair]]])
    return x


def _pad(init: BathParameters | None, n_b: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Initial (eps, V) of size n_b from a possibly smaller or larger bath."""
    if init is None or init.n_b == 0:
        eps = np.linspace(-2, 2, n_b) if n_b > 1 else np.zeros(n_b)
        return eps, np.full(n_b, 0.5)
    eps = init.eps.copy()
    V = np.abs(init.V[0]).copy()
    if eps.size > n_b:
        keep = np.argsort(-V)[:n_b]
        return eps[keep], V[keep]
    while eps.size < n_b:
        eps = np.append(eps, 0.0 if eps.size % 2 == 0 else rng.normal(0, 0.5))
        V = np.append(V, 1e-2)
    return eps, V


def fit_bath(target: MatsubaraGF, n_b: int, init: BathParameters | None = None, seed=0, starts: int = 8,
             symmetric: bool = False, orbital: int = 0) -> FitResult:
    """Least-squares fit of a discrete bath to the Weiss field ``target``.

    Cost: sum_n |target^-1(iw_n) - G0_discr^-1(iw_n)|^2 for one orbital (the
    driver is spin degenerate). Start 0 is ``init`` padded to ``n_b`` sites; the
    others perturb it with a generator seeded from ``seed``.
    """
    grid = target.grid
    iw = grid.iw
    mu = init.mu if init is not None else 0.0
    tinv = 1.0 / target.values[:, orbital, orbital]
    if n_b == 0:
        bath = BathParameters(np.zeros(0), np.zeros((1, 0)), mu)
        resid = fit_cost(MatsubaraGF(grid, target.values[:, orbital, orbital]), bath)
        return FitResult(bath, resid, True)
    # iw + mu cancels in the difference: fit Delta directly
    delta_t = iw + mu - tinv
    rng = np.random.default_rng(seed)

    def resid(x):
        eps, V = _unpack(x, n_b, symmetric)
        d = (V * V)[None, :] / (iw[:, None] - eps[None, :])
        r = d.sum(axis=1) - delta_t
        return np.concatenate([r.real, r.imag])

    e0, v0 = _pad(init, n_b, rng)
    x0 = _pack(e0, v0, symmetric)
    scale = np.maximum(np.abs(x0), 0.1)
    best = None
    converged = False
    for s in range(starts):
        x = x0 if s == 0 else x0 + rng.normal(0, 0.3, x0.size) * scale
        try:
            sol = optimize.least_squares(resid, x, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=50000)
        except ValueError:
            continue
        cost = float(np.sum(sol.fun**2))
        if best is None or cost < best[0]:
            best = (cost, sol.x, sol.success)
    if best is None:
        raise DmftError("bath fit failed for every start")
    cost, x, converged = best
    eps, V = _unpack(x, n_b, symmetric)
    V = np.abs(V)
    order = np.argsort(eps, kind="stable")
    bath = BathParameters(eps[order], V[order][None, :], mu)
    return FitResult(bath, cost, bool(converged))


# ---------------------------------------------------------------------------
# loop


@dataclass
class LoopConfig:
    U: float
    n_b: int = 5  # bath sites per spin
    mu: float | None = None
    beta: float = 20.0
    n_w: int = 400
    tolerance: float = 1e-5
    max_iter: int = 30
    mixing: float = 0.7
    fit_starts: int = 8
    symmetric: bool = True
    seed: int = 0

    @property
    def chemical_potential(self) -> float:
        return self.U / 2 if self.mu is None else self.mu


@dataclass
class DmftState:
    iteration: int
    bath: BathParameters
    g_imp: MatsubaraGF
    g0: MatsubaraGF
    sigma: MatsubaraGF
    metric: float
    fit_residual: float
    history: list = field(default_factory=list)
    solution: object | None = None  # solver output of this iteration


def initial_bath(cfg: LoopConfig, dos: DosSpec) -> BathParameters:
    """Bath fitted to the Weiss field of the lattice with only the Hartree self-energy."""
    grid = MatsubaraGrid(cfg.beta, cfg.n_w)
    mu = cfg.chemical_potential
    hartree = MatsubaraGF(grid, np.full((cfg.n_w, 1, 1), cfg.U / 2, dtype=complex))
    g_loc = lattice_g(hartree, dos, mu)
    g0 = new_g0(g_loc, hartree, dos, mu)
    start = BathParameters(np.linspace(-1.5, 1.5, cfg.n_b), np.full((1, cfg.n_b), 0.5), mu)
    return fit_bath(g0, cfg.n_b, start, seed=[cfg.seed, 0], starts=cfg.fit_starts, symmetric=cfg.symmetric).bath


def run_dmft(cfg: LoopConfig, solve: Callable, dos: DosSpec | None = None, init: BathParameters | None = None,
             outdir=None) -> list[DmftState]:
    """Iterate solve -> Sigma -> new Weiss field -> fit until G_imp stops changing.

    ``solve(bath, iteration)`` returns an object with a ``g_iw`` attribute
    (MatsubaraGF of the impurity, orbital 0 used). History is written to
    ``outdir`` after every iteration; solver or fit failures abort with the
    partial history on disk.
    """
    dos = DosSpec() if dos is None else dos
    grid = MatsubaraGrid(cfg.beta, cfg.n_w)
    mu = cfg.chemical_potential
    bath = init if init is not None else initial_bath(cfg, dos)
    bath = BathParameters(bath.eps, bath.V, mu)
    out = Path(outdir) if outdir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    history: list[DmftState] = []
    conv_rows = []
    g_prev = None
    for k in range(cfg.max_iter):
        sol = solve(bath, k)
        g = MatsubaraGF(grid, sol.g_iw.values[:, :1, :1])
        g0 = g0_discrete(bath, grid)
        sigma = self_energy(g0, g)
        target = new_g0(g, sigma, dos, mu)
        mixed = MatsubaraGF(grid, cfg.mixing * target.values + (1 - cfg.mixing) * g0.values)
        metric = float(np.max(np.abs(g.values - g_prev.values))) if g_prev is not None else float("inf")
        fit = fit_bath(mixed, cfg.n_b, bath, seed=[cfg.seed, k + 1], starts=cfg.fit_starts, symmetric=cfg.symmetric)
        state = DmftState(k, bath, g, g0, sigma, metric, fit.residual, solution=sol)
        history.append(state)
        conv_rows.append((k, metric, fit.residual))
        if out is not None:
            _persist(out, state, conv_rows)
        log.info("iteration %d: metric %.3e, fit residual %.3e", k, metric, fit.residual)
        if metric < cfg.tolerance:
            break
        g_prev = g
        bath = fit.bath
    return history


def _persist(out: Path, state: DmftState, rows) -> None:
    k = state.iteration
    write_bath(state.bath, out / f"bath_{k}.txt")
    write_matsubara_tsv(state.g_imp, out / f"giw_{k}.tsv")
    write_matsubara_tsv(state.sigma, out / f"sigma_{k}.tsv")
    lines = ["iteration\tmetric\tfit_residual"]
    lines += [f"{i}\t{m!r}\t{r!r}" for i, m, r in rows]
    (out / "convergence.tsv").write_text("\n".join(lines) + "\n")


def load_history(outdir, beta: float) -> list[tuple[BathParameters, MatsubaraGF, MatsubaraGF]]:
    out = Path(outdir)
    res = []
    k = 0
    while (out / f"bath_{k}.txt").exists():
        res.append((read_bath(out / f"bath_{k}.txt"), read_matsubara_tsv(out / f"giw_{k}.tsv", beta),
                    read_matsubara_tsv(out / f"sigma_{k}.tsv", beta)))
        k += 1
    return res
