"""Lattice Hartree and cubic (GP-type) one-body equations, split-step integrator."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .lattice import Grid, LatticeWavefunction, PotentialSpec, convolve, one_body_operator

__all__ = [
    "EffectiveEquationConfig",
    "Trajectory",
    "effective_evolve",
    "effective_energy",
    "strang_trajectory",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EffectiveEquationConfig:
    """Nonlinear one-body equation ``i d_t phi = (-Delta + V_ext) phi + W[phi] phi``.

    ``W[phi] = V * |phi|^2`` in convolution mode (``pot`` given) and
    ``sigma |phi|^2`` in cubic mode (``sigma`` given).
    """

    grid: Grid
    external: np.ndarray = None
    pot: PotentialSpec = None
    sigma: float = None
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if (self.pot is None) == (self.sigma is None):
            raise ConfigError("exactly one of a pair potential or a local coupling must be set", "nonlinearity")
        ext = np.zeros(self.grid.sites) if self.external is None else np.asarray(self.external, dtype=float)
        if ext.shape != (self.grid.sites,):
            raise ConfigError("external potential does not match the grid", "external")
        if self.pot is not None and self.pot.grid != self.grid:
            raise ConfigError("pair potential was built for another grid", "potential")
        object.__setattr__(self, "external", ext)

    @classmethod
    def from_potential(cls, pot: PotentialSpec) -> "EffectiveEquationConfig":
        return cls(pot.grid, pot.external_values, pot=pot)

    @classmethod
    def cubic(cls, grid: Grid, sigma: float, external=None) -> "EffectiveEquationConfig":
        return cls(grid, external, sigma=float(sigma))

    @property
    def mode(self) -> str:
        return "convolution" if self.pot is not None else "cubic"

    def one_body(self) -> np.ndarray:
        if "h1" not in self._cache:
            ext_pot = PotentialSpec(self.grid, np.zeros(self.grid.sites), self.external)
            self._cache["h1"] = one_body_operator(self.grid, ext_pot).toarray()
        return self._cache["h1"]

    def _eig(self):
        if "eig" not in self._cache:
            self._cache["eig"] = np.linalg.eigh(self.one_body())
        return self._cache["eig"]

    def linear_propagator(self, tau: float) -> np.ndarray:
        """``exp(-i tau (-Delta + V_ext))`` from the exact eigendecomposition."""
        lam, q = self._eig()
        return (q * np.exp(-1j * tau * lam)) @ q.conj().T

    def mean_field(self, phi: np.ndarray) -> np.ndarray:
        rho = np.abs(phi) ** 2
        if self.pot is not None:
            return convolve(self.pot, rho)
        return self.sigma * rho


def effective_energy(cfg: EffectiveEquationConfig, phi) -> float:
    """``<phi, (-Delta + V_ext) phi> + 1/2 sum_x W[phi](x) |phi(x)|^2``."""
    v = phi.values if isinstance(phi, LatticeWavefunction) else np.asarray(phi, dtype=complex)
    kin = float(np.vdot(v, cfg.one_body() @ v).real)
    return kin + 0.5 * float(np.sum(cfg.mean_field(v) * np.abs(v) ** 2))


@dataclass
class Trajectory:
    grid: Grid
    times: np.ndarray
    states: np.ndarray
    dt: float
    mass: np.ndarray = None
    energy: np.ndarray = None

    def index(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-12 * max(1.0, abs(t)):
            raise KeyError(f"time {t} is not a sample of this trajectory")
        return i

    def at(self, t: float) -> LatticeWavefunction:
        return LatticeWavefunction(self.grid, self.states[self.index(t)])


def strang_trajectory(cfg: EffectiveEquationConfig, phi0: np.ndarray, times, dt: float) -> np.ndarray:
    """Second-order split-step run through ``times`` (first entry is the start) with steps <= ``dt``."""
    times = np.asarray(times, dtype=float)
    phi = np.asarray(phi0, dtype=complex).copy()
    out = np.empty((len(times), phi.size), dtype=complex)
    out[0] = phi
    props = {}
    for i in range(1, len(times)):
        span = times[i] - times[i - 1]
        nsteps = max(1, int(math.ceil(span / dt - 1e-9)))
        tau = span / nsteps
        key = round(tau, 15)
        if key not in props:
            props[key] = (cfg.linear_propagator(tau / 2), cfg.linear_propagator(tau))
        half, full = props[key]
        phi = half @ phi
        for step in range(nsteps):
            phi = np.exp(-1j * tau * cfg.mean_field(phi)) * phi
            phi = (half if step == nsteps - 1 else full) @ phi
        out[i] = phi
    return out


def effective_evolve(cfg: EffectiveEquationConfig, phi0, t: float, dt_target: float = 0.01,
                     sample_times=None, tol: float = 1e-8, dt_min: float = 1e-6) -> Trajectory:
    """Integrate the effective equation and return states at the sample times.

    Step-doubling: the run is repeated with half the step until two successive
    runs differ by less than ``tol`` (max amplitude over all samples); the
    finer run is returned.
    """
    v0 = phi0.values if isinstance(phi0, LatticeWavefunction) else np.asarray(phi0, dtype=complex)
    if abs(np.linalg.norm(v0) - 1.0) > 1e-10:
        raise ConfigError(f"initial state must be normalized (norm {np.linalg.norm(v0)!r})")
    if sample_times is None:
        sample_times = [t]
    times = np.unique(np.concatenate([[0.0], np.asarray(sample_times, dtype=float), [t]]))
    times = times[(times >= 0) & (times <= t + 1e-15)]
    dt = float(dt_target)
    coarse = strang_trajectory(cfg, v0, times, dt)
    while True:
        if dt / 2 < dt_min:
            raise RuntimeError(f"step size underflow: dt {dt / 2:.2e} below {dt_min:.2e}")
        fine = strang_trajectory(cfg, v0, times, dt / 2)
        diff = float(np.max(np.abs(fine - coarse)))
        dt /= 2
        if diff < tol:
            break
        coarse = fine
    log.debug("effective_evolve: dt=%g diff=%g", dt, diff)
    mass = np.linalg.norm(fine, axis=1)
    energy = np.array([effective_energy(cfg, s) for s in fine])
    return Trajectory(cfg.grid, times, fine, dt, mass, energy)
