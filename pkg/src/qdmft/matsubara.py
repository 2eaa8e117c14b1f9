"""Real-time Green's functions to Matsubara and real frequencies.

Both transforms evaluate

    G(z) = -i int_0^inf dt e^{izt} [Gp(t) + conj(Gh(t))]

with ``z = i w_n`` (optionally plus ``i eta``) or ``z = w + i eta``. The integral
over ``[t_min, t_max]`` uses Simpson weights in ``u = log t`` (the grid is
uniform there) and ``[0, t_min)`` is a rectangle at ``t_min``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .gf import RealTimeGF, TimeGrid


class TruncationWarning(UserWarning):
    pass


@dataclass
class MatsubaraGrid:
    beta: float
    n_w: int

    def __post_init__(self):
        if self.beta <= 0 or self.n_w < 1:
            raise ValueError("need beta > 0 and n_w >= 1")

    @property
    def w(self) -> np.ndarray:
        return np.pi * (2 * np.arange(self.n_w) + 1) / self.beta

    @property
    def iw(self) -> np.ndarray:
        return 1j * self.w


@dataclass
class MatsubaraGF:
    grid: MatsubaraGrid
    values: np.ndarray  # (n_w, n_so, n_so)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.ndim == 1:
            v = v[:, None, None]
        self.values = v

    @property
    def n_so(self) -> int:
        return self.values.shape[1]

    def diag(self, a: int = 0) -> np.ndarray:
        return self.values[:, a, a]


@dataclass
class SpectralFunction:
    omega: np.ndarray
    A: np.ndarray  # (n_omega, n_so)
    eta: float

    def weight(self, a: int = 0) -> float:
        """int A(w) dw / 2pi (trapezoid on the stored grid)."""
        return float(np.trapezoid(self.A[:, a], self.omega) / (2 * np.pi))


def simpson_weights(n: int, h: float) -> np.ndarray:
    """Composite Simpson weights for ``n`` equally spaced points.

    For an even number of points the last interval uses the three-point
    quadratic through the final samples.
    """
    if n < 3:
        return np.full(n, h / 2) if n == 2 else np.zeros(n)
    w = np.zeros(n)
    m = n if n % 2 == 1 else n - 1
    w[:m:2] += 2 * h / 3
    w[1:m:2] += 4 * h / 3
    w[0] -= h / 3
    w[m - 1] -= h / 3
    if m < n:
        w[n - 3] += -h / 12
        w[n - 2] += 8 * h / 12
        w[n - 1] += 5 * h / 12
    return w


def time_weights(grid: TimeGrid) -> np.ndarray:
    """Quadrature weights for int_0^t_max f(t) dt on the log grid."""
    w = simpson_weights(grid.n, grid.log_step) * grid.points
    w[0] += grid.t_min
    return w


def _integrand(gf: RealTimeGF) -> np.ndarray:
    return gf.gp + np.conj(gf.gh)


def transform(gf: RealTimeGF, z: np.ndarray) -> np.ndarray:
    """-i int dt e^{izt} [Gp + conj(Gh)] for every z (Im z > 0); shape (n_z, n, n)."""
    w = time_weights(gf.grid)
    kern = np.exp(1j * np.outer(z, gf.grid.points)) * w[None, :]
    f = _integrand(gf)
    return -1j * np.einsum("zt,tab->zab", kern, f)


def truncation_estimate(gf: RealTimeGF, decay: float) -> float:
    f = _integrand(gf)[-1]
    return float(np.abs(f).max() * np.exp(-decay * gf.grid.t_max) / decay)


def hilbert_to_matsubara(gf: RealTimeGF, grid: MatsubaraGrid, eta: float = 0.0, tol: float = 1e-6) -> MatsubaraGF:
    decay = grid.w[0] + eta
    if np.exp(-decay * gf.grid.t_max) > tol:
        warnings.warn(
            f"time grid ends at t={gf.grid.t_max:g}: exp(-w0 t_max) = {np.exp(-decay * gf.grid.t_max):.2e}, "
            f"truncation error up to ~{truncation_estimate(gf, decay):.2e}",
            TruncationWarning,
            stacklevel=2,
        )
    return MatsubaraGF(grid, transform(gf, grid.iw + 1j * eta))


def spectral_function(gf: RealTimeGF, omega, eta: float) -> SpectralFunction:
    """A(w) = -2 Im G(w + i eta) per diagonal orbital."""
    if eta <= 0:
        raise ValueError("real-frequency transform needs eta > 0")
    omega = np.asarray(omega, dtype=float)
    g = transform(gf, omega + 1j * eta)
    A = -2 * np.imag(np.einsum("zaa->za", g))
    return SpectralFunction(omega, A, eta)


def write_matsubara_tsv(g: MatsubaraGF, path) -> None:
    r = repr
    lines = []
    for a in range(g.n_so):
        lines.append(f"# orbital {a}")
        lines.append("iw\tReG\tImG")
        for w, v in zip(g.grid.w, g.values[:, a, a]):
            lines.append(f"{r(float(w))}\t{r(float(v.real))}\t{r(float(v.imag))}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_matsubara_tsv(path, beta: float) -> MatsubaraGF:
    blocks: list[list] = []
    for ln in Path(path).read_text().splitlines():
        if ln.startswith("# orbital"):
            blocks.append([])
        elif ln and not ln.startswith("iw"):
            _, re_, im_ = ln.split("\t")
            blocks[-1].append(complex(float(re_), float(im_)))
    n_w = len(blocks[0])
    vals = np.zeros((n_w, len(blocks), len(blocks)), dtype=complex)
    for a, b in enumerate(blocks):
        vals[:, a, a] = b
    return MatsubaraGF(MatsubaraGrid(beta, n_w), vals)


def write_spectrum_tsv(s: SpectralFunction, path) -> None:
    r = repr
    cols = "\t".join(f"A{a}" for a in range(s.A.shape[1])) if s.A.shape[1] > 1 else "A"
    lines = [f"omega\t{cols}"]
    for w, row in zip(s.omega, s.A):
        lines.append(r(float(w)) + "\t" + "\t".join(r(float(x)) for x in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_spectrum_tsv(path, eta: float = 0.0) -> SpectralFunction:
    rows = [ln.split("\t") for ln in Path(path).read_text().splitlines()[1:] if ln.strip()]
    arr = np.array([[float(x) for x in r] for r in rows])
    return SpectralFunction(arr[:, 0], arr[:, 1:], eta)
