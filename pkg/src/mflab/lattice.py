"""Periodic lattices, one-body operators, pair potentials and field arithmetic.

All sums over sites use the counting measure: no factor of the spacing ``h``
multiplies a lattice sum.  Only derivatives carry ``h`` (through the
nearest-neighbour stencil), so the many-body model and the lattice Hartree
equation built on top of this module are an exactly matched pair.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError

__all__ = [
    "Grid",
    "LatticeWavefunction",
    "PotentialSpec",
    "laplacian",
    "one_body_operator",
    "convolve",
    "sobolev_pair_form",
    "pair_potential",
    "external_potential",
    "load_pair_table",
    "initial_wavefunction",
]


@dataclass(frozen=True)
class Grid:
    """Periodic hypercubic lattice with ``m`` points per axis and spacing ``spacing``."""

    dim: int
    m: int
    spacing: float = 1.0

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ConfigError(f"dimension must be 1, 2 or 3, got {self.dim}", "grid.dim")
        if int(self.m) != self.m or self.m < 2:
            raise ConfigError(f"points per axis must be an integer >= 2, got {self.m}", "grid.m")
        if not np.isfinite(self.spacing) or self.spacing <= 0:
            raise ConfigError(f"spacing must be positive, got {self.spacing}", "grid.spacing")

    @property
    def sites(self) -> int:
        return self.m**self.dim

    @property
    def length(self) -> float:
        return self.m * self.spacing

    @property
    def shape(self) -> tuple:
        return (self.m,) * self.dim

    def coords(self) -> np.ndarray:
        """Integer coordinates of every site, shape ``(sites, dim)``, row-major."""
        return np.array(np.unravel_index(np.arange(self.sites), self.shape)).T

    def minimal_image(self) -> np.ndarray:
        """Displacement vectors (physical units) of every site index, minimal image."""
        c = self.coords()
        c = np.where(c > self.m // 2, c - self.m, c)
        return c * self.spacing

    def displacement_index(self) -> np.ndarray:
        """``idx[x, y]`` = site index of the periodic displacement ``x - y``."""
        c = self.coords()
        diff = (c[:, None, :] - c[None, :, :]) % self.m
        return np.ravel_multi_index(tuple(np.moveaxis(diff, -1, 0)), self.shape)

    def negated_index(self) -> np.ndarray:
        """Site index of ``-r`` for each displacement index ``r``."""
        c = (-self.coords()) % self.m
        return np.ravel_multi_index(tuple(c.T), self.shape)

    def distance(self, x: int, y: int) -> float:
        """Periodic Euclidean distance between sites ``x`` and ``y``."""
        r = self.minimal_image()[self.displacement_index()[x, y]]
        return float(np.linalg.norm(r))

    def describe(self) -> dict:
        return {"dim": self.dim, "m": self.m, "spacing": self.spacing}


@dataclass(frozen=True)
class LatticeWavefunction:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex).reshape(-1)
        if v.size != self.grid.sites:
            raise ConfigError(f"expected {self.grid.sites} amplitudes, got {v.size}")
        object.__setattr__(self, "values", v)

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def normalized(self) -> "LatticeWavefunction":
        return LatticeWavefunction(self.grid, self.values / self.norm())

    def inner(self, other: "LatticeWavefunction") -> complex:
        """``<self, other>``, antilinear in ``self``."""
        return complex(np.vdot(self.values, other.values))

    def __mul__(self, c):
        return LatticeWavefunction(self.grid, self.values * c)

    __rmul__ = __mul__


@dataclass(frozen=True)
class PotentialSpec:
    """Pair potential sampled per periodic displacement, plus an external potential."""

    grid: Grid
    pair_values: np.ndarray
    external_values: np.ndarray = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.grid.sites
        pv = np.asarray(self.pair_values, dtype=float).reshape(-1)
        ev = np.zeros(n) if self.external_values is None else np.asarray(self.external_values, dtype=float).reshape(-1)
        if pv.size != n:
            raise ConfigError(f"pair potential has {pv.size} samples, grid has {n} sites", "potential")
        if ev.size != n:
            raise ConfigError(f"external potential has {ev.size} samples, grid has {n} sites", "external")
        if not (np.all(np.isfinite(pv)) and np.all(np.isfinite(ev))):
            raise ConfigError("potential samples must be finite", "potential")
        asym = np.max(np.abs(pv - pv[self.grid.negated_index()]))
        if asym > 1e-12 * max(1.0, np.max(np.abs(pv))):
            raise ConfigError(f"pair potential is not even under r -> -r (max asymmetry {asym:.2e})", "potential")
        object.__setattr__(self, "pair_values", pv)
        object.__setattr__(self, "external_values", ev)

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.pair_values)))

    @property
    def l1_norm(self) -> float:
        return float(np.sum(np.abs(self.pair_values)))

    def pair_matrix(self) -> np.ndarray:
        """Dense ``V(x - y)`` as a ``sites x sites`` real symmetric matrix."""
        return self.pair_values[self.grid.displacement_index()]

    def scaled(self, factor: float) -> "PotentialSpec":
        return PotentialSpec(self.grid, self.pair_values * factor, self.external_values,
                             self.name, {**self.params, "scale": factor})

    def describe(self) -> dict:
        return {"name": self.name, "params": self.params,
                "sup_norm": self.sup_norm, "l1_norm": self.l1_norm}


def laplacian(grid: Grid) -> sp.csr_matrix:
    """Minus the nearest-neighbour periodic Laplacian, ``(2 phi(x) - phi(x+h) - phi(x-h)) / h^2`` per axis."""
    n = grid.sites
    idx = np.arange(n).reshape(grid.shape)
    rows, cols, vals = [np.arange(n)], [np.arange(n)], [np.full(n, 2.0 * grid.dim)]
    for axis in range(grid.dim):
        for shift in (1, -1):
            rows.append(idx.reshape(-1))
            cols.append(np.roll(idx, -shift, axis=axis).reshape(-1))
            vals.append(np.full(n, -1.0))
    mat = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return (mat.tocsr() / grid.spacing**2).tocsr()


def one_body_operator(grid: Grid, pot: PotentialSpec) -> sp.csr_matrix:
    """``-Delta + V_ext`` as a real symmetric sparse matrix."""
    if pot.grid != grid:
        raise ConfigError("potential was built for a different grid")
    return (laplacian(grid) + sp.diags(pot.external_values)).tocsr()


def convolve(pot: PotentialSpec, density: np.ndarray) -> np.ndarray:
    """Periodic counting-measure convolution ``sum_y V(x - y) rho(y)``."""
    grid = pot.grid
    rho = np.asarray(density, dtype=float).reshape(-1)
    if rho.size != grid.sites:
        raise ConfigError(f"density has {rho.size} samples, grid has {grid.sites} sites")
    vk = np.fft.fftn(pot.pair_values.reshape(grid.shape))
    rk = np.fft.fftn(rho.reshape(grid.shape))
    return np.real(np.fft.ifftn(vk * rk)).reshape(-1)


def _forward_diff(arr: np.ndarray, axis: int, h: float) -> np.ndarray:
    return (np.roll(arr, -1, axis=axis) - arr) / h


def sobolev_pair_form(grid: Grid, psi: np.ndarray, which: str = "product") -> float:
    """Quadratic forms of two-particle derivative operators with forward differences.

    ``"product"`` evaluates ``<psi, (1 - Delta_1)(1 - Delta_2) psi>`` and
    ``"mixed"`` evaluates ``<psi, ((grad_1 . grad_2)^2 - Delta_1 - Delta_2 + 1) psi>``.
    ``psi`` is a ``(sites, sites)`` array (or anything reshapeable to it).
    """
    if which not in ("product", "mixed"):
        raise ValueError(f"unknown operator tag {which!r}; use 'product' or 'mixed'")
    d, h = grid.dim, grid.spacing
    arr = np.asarray(psi, dtype=complex).reshape(grid.shape * 2)

    def sq(a):
        return float(np.vdot(a, a).real)

    d1 = [_forward_diff(arr, a, h) for a in range(d)]
    d2 = [_forward_diff(arr, d + b, h) for b in range(d)]
    value = sq(arr) + sum(sq(x) for x in d1) + sum(sq(x) for x in d2)
    if which == "product":
        value += sum(sq(_forward_diff(d1[a], d + b, h)) for a in range(d) for b in range(d))
    else:
        dot = sum(_forward_diff(d1[a], d + a, h) for a in range(d))
        value += sq(dot)
    return value


# -- potential and initial-state families ---------------------------------

def pair_potential(grid: Grid, family: str, external=None, **params) -> PotentialSpec:
    """Build a named pair-potential family sampled at minimal-image displacements.

    Families: ``zero``, ``gaussian`` (amplitude, width), ``box`` (amplitude,
    radius), ``kronecker_delta`` (coupling), ``random`` (amplitude, seed;
    even, with sup norm equal to the amplitude), ``table`` (path).
    """
    r = np.linalg.norm(grid.minimal_image(), axis=1)
    if family == "zero":
        vals = np.zeros(grid.sites)
    elif family == "gaussian":
        vals = params["amplitude"] * np.exp(-r**2 / (2.0 * params["width"] ** 2))
    elif family == "box":
        vals = np.where(r <= params["radius"] + 1e-12, float(params["amplitude"]), 0.0)
    elif family == "kronecker_delta":
        vals = np.zeros(grid.sites)
        vals[0] = params["coupling"]
    elif family == "random":
        raw = np.random.default_rng(params["seed"]).uniform(-1.0, 1.0, grid.sites)
        raw = 0.5 * (raw + raw[grid.negated_index()])
        vals = params["amplitude"] * raw / np.max(np.abs(raw))
    elif family == "table":
        vals = load_pair_table(grid, params["path"])
    else:
        raise ConfigError(f"unknown pair potential family {family!r}", "potential.family")
    return PotentialSpec(grid, vals, external, name=family, params=dict(params))


def external_potential(grid: Grid, family: str = "zero", **params) -> np.ndarray:
    """Named external-potential families: ``zero``, ``constant`` (value), ``harmonic`` (strength, center)."""
    if family == "zero":
        return np.zeros(grid.sites)
    if family == "constant":
        return np.full(grid.sites, float(params["value"]))
    if family == "harmonic":
        center = np.broadcast_to(np.asarray(params.get("center", 0.0), dtype=float), (grid.dim,))
        pos = grid.coords() * grid.spacing
        disp = (pos - center + grid.length / 2) % grid.length - grid.length / 2
        return params["strength"] * np.sum(disp**2, axis=1)
    raise ConfigError(f"unknown external potential family {family!r}", "external.family")


def load_pair_table(grid: Grid, path) -> np.ndarray:
    """Read ``<displacement index per axis> <value>`` lines; missing displacements are zero.

    Displacement indices may be negative; they are reduced modulo ``m``.
    """
    vals = np.zeros(grid.sites)
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != grid.dim + 1:
            raise ConfigError(f"{path}:{lineno}: expected {grid.dim} indices and a value", "potential.path")
        idx = tuple(int(p) % grid.m for p in parts[:-1])
        vals[np.ravel_multi_index(idx, grid.shape)] = float(parts[-1])
    return vals


def initial_wavefunction(grid: Grid, family: str, **params) -> LatticeWavefunction:
    """Normalized initial one-body states: ``uniform``, ``plane_wave`` (k), ``gaussian_packet``
    (center, width, momentum), ``modes`` (amplitudes of the lowest plane waves)."""
    x = grid.coords() * grid.spacing
    if family == "uniform":
        vals = np.ones(grid.sites, dtype=complex)
    elif family == "plane_wave":
        k = np.broadcast_to(np.asarray(params["k"], dtype=float), (grid.dim,))
        vals = np.exp(2j * np.pi * (x @ k) / grid.length)
    elif family == "gaussian_packet":
        center = np.broadcast_to(np.asarray(params["center"], dtype=float), (grid.dim,))
        disp = (x - center + grid.length / 2) % grid.length - grid.length / 2
        p = np.broadcast_to(np.asarray(params.get("momentum", 0.0), dtype=float), (grid.dim,))
        vals = np.exp(-np.sum(disp**2, axis=1) / (2 * params["width"] ** 2) + 1j * (disp @ p))
    elif family == "modes":
        vals = np.zeros(grid.sites, dtype=complex)
        for k, amp in enumerate(params["amplitudes"]):
            if isinstance(amp, (list, tuple)):
                amp = complex(amp[0], amp[1])
            vals += amp * np.exp(2j * np.pi * k * x[:, 0] / grid.length)
    else:
        raise ConfigError(f"unknown initial state family {family!r}", "initial.family")
    wf = LatticeWavefunction(grid, vals)
    if wf.norm() == 0:
        raise ConfigError("initial state vanishes identically", "initial")
    return wf.normalized()
