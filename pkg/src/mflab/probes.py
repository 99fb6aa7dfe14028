"""Random-state probes of two-particle Sobolev and Poincare type inequalities on 3D lattices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .lattice import Grid, PotentialSpec, sobolev_pair_form

__all__ = [
    "ProbeResult",
    "random_pair_state",
    "probe_sobolev_L1",
    "probe_nabla_dot",
    "probe_poincare",
    "mollifier",
    "trial_stability",
]


@dataclass
class ProbeResult:
    name: str
    ratios: np.ndarray
    seed: int

    @property
    def max_ratio(self) -> float:
        return float(np.max(self.ratios)) if len(self.ratios) else 0.0

    def prefix_max(self, trials: int) -> float:
        return float(np.max(self.ratios[:trials]))


def random_pair_state(grid: Grid, rng: np.random.Generator, band: int = 1) -> np.ndarray:
    """Normalized two-particle field with Fourier support ``|k_a| <= band`` on every axis."""
    m = grid.m
    k = np.fft.fftfreq(m, d=1.0 / m)
    allowed = np.abs(k) <= band
    mask = allowed
    for _ in range(2 * grid.dim - 1):
        mask = np.multiply.outer(mask, allowed)
    shape = (m,) * (2 * grid.dim)
    coef = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * mask
    psi = np.fft.ifftn(coef)
    return (psi / np.linalg.norm(psi)).reshape(grid.sites, grid.sites)


def _check_grid(grid: Grid, trials: int):
    if grid.dim != 3:
        raise ConfigError("probes run on three-dimensional grids", "grid.dim")
    if grid.m > 8:
        raise ConfigError("probe grids are limited to m <= 8", "grid.m")
    if trials < 1:
        raise ConfigError("need at least one trial", "trials")


def probe_sobolev_L1(pot: PotentialSpec, trials: int = 100, seed: int = 0, band: int = 1) -> ProbeResult:
    """Ratios ``|<psi, V(x1 - x2) psi>| / (||V||_1 <psi, (1 - Delta_1)(1 - Delta_2) psi>)``."""
    grid = pot.grid
    _check_grid(grid, trials)
    vm = pot.pair_matrix()
    l1 = pot.l1_norm
    rng = np.random.default_rng(seed)
    ratios = np.empty(trials)
    for i in range(trials):
        psi = random_pair_state(grid, rng, band)
        num = abs(float(np.sum(vm * np.abs(psi) ** 2)))
        ratios[i] = 0.0 if l1 == 0 else num / (l1 * sobolev_pair_form(grid, psi, "product"))
    return ProbeResult("sobolev_L1", ratios, seed)


def probe_nabla_dot(pot: PotentialSpec, trials: int = 100, seed: int = 0, band: int = 1) -> ProbeResult:
    """Ratios ``|<phi, V psi>| / (||V||_1 Q(phi)^{1/2} Q(psi)^{1/2})`` with the mixed-derivative form ``Q``."""
    grid = pot.grid
    _check_grid(grid, trials)
    vm = pot.pair_matrix()
    l1 = pot.l1_norm
    rng = np.random.default_rng(seed)
    ratios = np.empty(trials)
    for i in range(trials):
        phi = random_pair_state(grid, rng, band)
        psi = random_pair_state(grid, rng, band)
        num = abs(complex(np.sum(np.conj(phi) * vm * psi)))
        den = np.sqrt(sobolev_pair_form(grid, phi, "mixed") * sobolev_pair_form(grid, psi, "mixed"))
        ratios[i] = 0.0 if l1 == 0 else num / (l1 * den)
    return ProbeResult("nabla_dot", ratios, seed)


def mollifier(grid: Grid, alpha: float, profile: str = "bump") -> np.ndarray:
    """Lattice samples of ``h(x / alpha)`` at minimal-image displacements, normalized to unit sum.

    ``bump`` is ``(1 - |x|^2)^2`` on the unit ball.  For ``alpha`` below the
    spacing only the origin survives and the result is the Kronecker delta.
    """
    r = np.linalg.norm(grid.minimal_image(), axis=1) / alpha if alpha > 0 else None
    if r is None:
        vals = np.zeros(grid.sites)
        vals[0] = 1.0
        return vals
    if profile == "bump":
        vals = np.clip(1.0 - r**2, 0.0, None) ** 2
    elif profile == "gaussian":
        vals = np.exp(-r**2 / 2.0)
    else:
        raise ConfigError(f"unknown mollifier profile {profile!r}", "mollifier")
    return vals / vals.sum()


def _delta_pairing(grid: Grid, h_vals: np.ndarray, phi: np.ndarray, psi: np.ndarray) -> complex:
    diff = h_vals.copy()
    diff[0] -= 1.0
    dm = diff[grid.displacement_index()]
    return complex(np.sum(np.conj(phi) * dm * psi))


def probe_poincare(grid: Grid, alphas, kappa: float = 0.25, trials: int = 100, seed: int = 0,
                   band: int = 1, profile: str = "bump") -> dict:
    """Max over random ``(phi, psi)`` of
    ``|<phi, (h_alpha - delta)(x1 - x2) psi>| / (alpha^kappa Q(phi)^{1/2} Q(psi)^{1/2})``
    for each ``alpha`` (``Q`` the product Sobolev form).  Returns ``{alpha: ProbeResult}``.
    """
    _check_grid(grid, trials)
    if not 0 <= kappa < 0.5:
        raise ConfigError(f"kappa must lie in [0, 1/2), got {kappa}", "kappa")
    alphas = [float(a) for a in alphas]
    for a in alphas:
        if a < 2 * grid.spacing - 1e-12:
            raise ConfigError(f"alpha {a} is below the lattice resolution 2h = {2 * grid.spacing}", "alphas")
    moll = {a: mollifier(grid, a, profile) for a in alphas}
    rng = np.random.default_rng(seed)
    ratios = {a: np.empty(trials) for a in alphas}
    for i in range(trials):
        phi = random_pair_state(grid, rng, band)
        psi = random_pair_state(grid, rng, band)
        den = np.sqrt(sobolev_pair_form(grid, phi, "product") * sobolev_pair_form(grid, psi, "product"))
        for a in alphas:
            ratios[a][i] = abs(_delta_pairing(grid, moll[a], phi, psi)) / (a**kappa * den)
    return {a: ProbeResult(f"poincare[alpha={a}]", ratios[a], seed) for a in alphas}


def trial_stability(result: ProbeResult, trials: int) -> float:
    """``max over all trials / max over the first `trials``` (>= 1 for a shared-seed prefix)."""
    first = result.prefix_max(trials)
    if first == 0:
        return 1.0 if result.max_ratio == 0 else np.inf
    return result.max_ratio / first
