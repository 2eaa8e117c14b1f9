"""Run configuration: flat ``key = value`` text, ``#`` starts a comment.

Energies are in units of the lattice hopping (half-bandwidth 2), times in
inverse hopping.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


def _choice(*opts):
    def check(v):
        if v not in opts:
            raise ValueError(f"must be one of {', '.join(opts)}")
    return check


def _positive(v):
    if not v > 0:
        raise ValueError("must be > 0")


def _nonneg(v):
    if not v >= 0:
        raise ValueError("must be >= 0")


def _unit(v):
    if not 0 < v <= 1:
        raise ValueError("must lie in (0, 1]")


def _order(v):
    if v not in (1, 2):
        raise ValueError("must be 1 or 2")


def _at_least(n):
    def check(v):
        if v < n:
            raise ValueError(f"must be >= {n}")
    return check


def opt(default, doc: str, check=None):
    return dataclasses.field(default=default, metadata={"doc": doc, "check": check})


@dataclass
class RunConfig:
    model: str | None = opt(None, "impurity model file (records t/U/V/eps/mu/h); optional for dmft-loop")
    solver: str = opt("quantum", "impurity solver: quantum | ed", _choice("quantum", "ed"))
    estimator: str = opt("exact", "exact expectations or sampled ancilla bits: exact | shots", _choice("exact", "shots"))
    shot_backend: str = opt("binomial", "shots drawn from outcome probabilities, or per-shot circuits: binomial | circuit",
                            _choice("binomial", "circuit"))
    n_meas: int = opt(400, "ancilla bits per time point and channel", _positive)
    t_min: float = opt(1e-5, "first time of the log grid [1/t]", _positive)
    t_max: float = opt(40.0, "last time of the log grid [1/t]", _positive)
    n_t: int = opt(1200, "number of time points", _at_least(3))
    beta: float = opt(20.0, "fictitious inverse temperature of the Matsubara grid [1/t]", _positive)
    n_w: int = opt(400, "number of Matsubara frequencies", _positive)
    eta: float = opt(0.15, "broadening of the real-frequency spectrum [t]", _positive)
    omega_min: float = opt(-8.0, "spectrum window start [t]")
    omega_max: float = opt(8.0, "spectrum window end [t]")
    n_omega: int = opt(1601, "spectrum points", _positive)
    U: float = opt(8.0, "Hubbard interaction for dmft-loop without a model file [t]", _nonneg)
    mu: float | None = opt(None, "chemical potential [t]; default U/2")
    n_b: int = opt(10, "bath sites (both spins together)", _nonneg)
    dos: str = opt("bethe", "lattice DOS: bethe, or a two-column file (energy, weight)")
    geometry: str = opt("chain", "bath geometry used by the quantum solver: chain | star", _choice("chain", "star"))
    spin_symmetric: bool = opt(True, "measure one spin and copy it to the other")
    prep_start: str = opt("free", "adiabatic start: free (U off) | atomic (V off)", _choice("free", "atomic"))
    prep_time: float = opt(10.0, "adiabatic ramp time [1/t]", _nonneg)
    prep_steps: int = opt(0, "ramp Trotter steps; 0 picks step 0.05/max|coefficient|", _nonneg)
    prep_order: int = opt(1, "Trotter order of the ramp", _order)
    qpe_time: float = opt(0.15, "QPE evolution time of the lowest bit [1/t]", _positive)
    qpe_bits: int = opt(6, "QPE bits for the energy check and reprojection", _positive)
    purify_bits: int = opt(9, "QPE bits of the post-selected purification", _positive)
    purify_rounds: int = opt(20, "maximum purification rounds", _positive)
    qpe_order: int = opt(2, "Trotter order inside QPE", _order)
    qpe_step: float = opt(0.025, "Trotter step inside QPE [1/t]", _positive)
    trotter_order: int = opt(2, "Trotter order of the Green's-function evolution", _order)
    trotter_step: float = opt(0.02, "Trotter step of the Green's-function evolution [1/t]", _positive)
    tolerance: float | None = opt(None, "DMFT convergence on max|dG(iw)|; default 1e-5 exact, 1e-3 shots")
    max_iter: int = opt(30, "DMFT iteration cap", _positive)
    mixing: float = opt(0.7, "weight of the new Weiss field", _unit)
    fit_starts: int = opt(8, "bath-fit multistarts", _positive)
    symmetric_bath: bool = opt(True, "particle-hole symmetric bath parametrisation")
    retries: int = opt(100, "preparations allowed per required ground state", _positive)
    seed: int = opt(0, "top-level seed", _nonneg)

    def __post_init__(self):
        for f in fields(self):
            check = f.metadata.get("check")
            v = getattr(self, f.name)
            if check is not None and v is not None:
                try:
                    check(v)
                except ValueError as exc:
                    raise ConfigError(f"{f.name}: {exc}") from None
        if not self.t_min < self.t_max:
            raise ConfigError("t_min: must be smaller than t_max")
        if not self.omega_min < self.omega_max:
            raise ConfigError("omega_min: must be smaller than omega_max")
        if self.n_b % 2 and self.spin_symmetric:
            raise ConfigError("n_b: must be even for a spin-symmetric bath")

    @property
    def dmft_tolerance(self) -> float:
        if self.tolerance is not None:
            return self.tolerance
        return 1e-5 if self.estimator == "exact" else 1e-3

    @property
    def chemical_potential(self) -> float:
        return self.U / 2 if self.mu is None else self.mu

    def replace(self, **kw) -> RunConfig:
        return dataclasses.replace(self, **kw)

    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            lines.append(f"{f.name} = {_fmt(v)}  # {f.metadata['doc']}")
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _convert(name: str, raw: str, typ: str):
    raw = raw.strip()
    base = typ.replace(" | None", "")
    if raw.lower() in ("none", "") and "None" in typ:
        return None
    try:
        if base == "bool":
            if raw.lower() in ("true", "yes", "1"):
                return True
            if raw.lower() in ("false", "no", "0"):
                return False
            raise ValueError
        if base == "int":
            return int(raw)
        if base == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{name}: cannot read {raw!r} as {base}") from None


def parse_config(text: str, base_dir=None) -> RunConfig:
    types = {f.name: f.type for f in fields(RunConfig)}
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"{key}: unknown key (line {n})")
        values[key] = _convert(key, raw, types[key])
    if base_dir is not None:
        for key in ("model", "dos"):
            v = values.get(key)
            if v and v != "bethe" and not Path(v).is_absolute():
                values[key] = str(Path(base_dir) / v)
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text(), base_dir=p.parent)
