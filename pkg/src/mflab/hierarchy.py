"""BBGKY / infinite-hierarchy machinery on dense k-body lattice operators.

Operators are plain ``(S^k, S^k)`` complex arrays with ``S`` the number of
sites; row index ``(x_1, ..., x_k)`` is row-major in the particle slots.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .hartree import EffectiveEquationConfig, Trajectory
from .lattice import Grid, PotentialSpec
from .marginals import trace_norm

__all__ = [
    "DensityFamily",
    "one_body_propagator",
    "free_evolution",
    "collision_A",
    "collision_B",
    "factorized_power",
    "infinite_hierarchy_residual",
    "PicardResult",
    "picard_iterate",
]


@dataclass
class DensityFamily:
    """Operators ``gamma^(k)`` for ``k = 1..K_max``."""

    grid: Grid
    gammas: list

    @property
    def k_max(self) -> int:
        return len(self.gammas)

    @classmethod
    def factorized(cls, phi: np.ndarray, grid: Grid, k_max: int) -> "DensityFamily":
        return cls(grid, [factorized_power(phi, k) for k in range(1, k_max + 1)])


def _order(grid: Grid, gamma: np.ndarray) -> int:
    side = gamma.shape[0]
    k = int(round(np.log(side) / np.log(grid.sites)))
    if grid.sites**k != side or gamma.shape != (side, side):
        raise ConfigError(f"operator of shape {gamma.shape} is not a k-body operator on {grid.sites} sites")
    return k


def factorized_power(phi: np.ndarray, k: int) -> np.ndarray:
    v = np.asarray(phi, dtype=complex)
    vk = v
    for _ in range(k - 1):
        vk = np.kron(vk, v)
    return np.outer(vk, vk.conj())


def one_body_propagator(cfg: EffectiveEquationConfig, t: float) -> np.ndarray:
    return cfg.linear_propagator(t)


def _kron_power(u: np.ndarray, k: int) -> np.ndarray:
    out = u
    for _ in range(k - 1):
        out = np.kron(out, u)
    return out


def free_evolution(cfg: EffectiveEquationConfig, k: int, t: float, gamma: np.ndarray) -> np.ndarray:
    """``U^{(x)k} gamma U^{(x)k,*}`` with ``U = exp(-i t (-Delta + V_ext))``."""
    if gamma.shape != (cfg.grid.sites**k,) * 2:
        raise ConfigError(f"gamma has shape {gamma.shape}, expected a {k}-body operator")
    uk = _kron_power(cfg.linear_propagator(t), k)
    return uk @ gamma @ uk.conj().T


def _pair_sum(grid: Grid, pot: PotentialSpec, k: int) -> np.ndarray:
    """Diagonal ``sum_{i<j} V(x_i - x_j)`` on the k-particle configuration space."""
    vm = pot.pair_matrix()
    s = grid.sites
    w = np.zeros((s,) * k)
    for i in range(k):
        for j in range(i + 1, k):
            shape = [1] * k
            shape[i], shape[j] = s, s
            w = w + vm.reshape(shape)
    return w.reshape(-1)


def collision_A(pot: PotentialSpec, k: int, gamma: np.ndarray) -> np.ndarray:
    """``-i sum_{i<j} [V(x_i - x_j), gamma]``."""
    if gamma.shape != (pot.grid.sites**k,) * 2:
        raise ConfigError(f"gamma has shape {gamma.shape}, expected a {k}-body operator")
    if k < 2:
        return np.zeros_like(gamma, dtype=complex)
    w = _pair_sum(pot.grid, pot, k)
    return -1j * (w[:, None] - w[None, :]) * gamma


def collision_B(pot: PotentialSpec, k: int, gamma_next: np.ndarray) -> np.ndarray:
    """``-i sum_j Tr_{k+1} [V(x_j - x_{k+1}), gamma^(k+1)]`` from the kernel
    ``sum_y (V(x_j - y) - V(x'_j - y)) gamma(x, y; x', y)``."""
    s = pot.grid.sites
    if gamma_next.shape != (s ** (k + 1),) * 2:
        raise ConfigError(f"gamma has shape {gamma_next.shape}, expected a {k + 1}-body operator")
    vm = pot.pair_matrix()
    t = np.asarray(gamma_next).reshape((s,) * (2 * k + 2))
    letters = string.ascii_letters
    xs = letters[:k]
    xps = letters[k:2 * k]
    y = letters[2 * k]
    # diagonal in the traced slot: d[x, x', y] = gamma(x, y; x', y)
    diag = np.einsum(f"{xs}{y}{xps}{y}->{xs}{xps}{y}", t)
    out = np.zeros((s,) * (2 * k), dtype=complex)
    for j in range(k):
        out += np.einsum(f"{xs[j]}{y},{xs}{xps}{y}->{xs}{xps}", vm, diag)
        out -= np.einsum(f"{xps[j]}{y},{xs}{xps}{y}->{xs}{xps}", vm, diag)
    return -1j * out.reshape(s**k, s**k)


def _time_grid(t: float, dt: float) -> np.ndarray:
    n = int(round(t / dt))
    if n < 1 or abs(n * dt - t) > 1e-9 * max(1.0, t):
        raise ConfigError(f"time {t} is not a multiple of the quadrature step {dt}")
    return np.linspace(0.0, t, n + 1)


def _trajectory_states(traj: Trajectory, times: np.ndarray) -> np.ndarray:
    try:
        idx = [traj.index(s) for s in times]
    except KeyError as exc:
        raise ConfigError(f"insufficient trajectory resolution: {exc}") from None
    return traj.states[idx]


def _duhamel_integrals(cfg: EffectiveEquationConfig, k: int, dt: float, sources: np.ndarray) -> np.ndarray:
    """Composite-trapezoid ``I_j = int_0^{s_j} U(s_j - s) F(s) ds`` for every grid time ``s_j``.

    Uses ``I_{j+1} = U(dt) (I_j + dt/2 F_j) + dt/2 F_{j+1}``, which is the
    trapezoid rule on ``[0, s_{j+1}]`` exactly.
    """
    uk = _kron_power(cfg.linear_propagator(dt), k)
    uk_h = uk.conj().T
    out = np.zeros_like(sources)
    for j in range(len(sources) - 1):
        acc = out[j] + 0.5 * dt * sources[j]
        out[j + 1] = uk @ acc @ uk_h + 0.5 * dt * sources[j + 1]
    return out


def infinite_hierarchy_residual(cfg: EffectiveEquationConfig, traj: Trajectory, k: int, t: float,
                                quadrature_dt: float) -> float:
    """Trace norm of the defect of the Hartree-factorized family in the integral hierarchy.

    ``Tr | gamma_t - U(t) gamma_0 - int_0^t U(t - s) B gamma^(k+1)_s ds |`` with
    ``gamma^(j)_s = |phi_s><phi_s|^{(x)j}`` and the integral by composite trapezoid.
    """
    if cfg.pot is None:
        raise ConfigError("the hierarchy needs a pair potential (convolution mode)")
    times = _time_grid(t, quadrature_dt)
    phis = _trajectory_states(traj, times)
    sources = np.array([collision_B(cfg.pot, k, factorized_power(p, k + 1)) for p in phis])
    integral = _duhamel_integrals(cfg, k, quadrature_dt, sources)[-1]
    gamma_t = factorized_power(phis[-1], k)
    gamma_0 = factorized_power(phis[0], k)
    defect = gamma_t - free_evolution(cfg, k, t, gamma_0) - integral
    return trace_norm(defect)


@dataclass
class PicardResult:
    times: np.ndarray
    family: list  # family[k-1] has shape (len(times), S^k, S^k)
    increments: list = field(default_factory=list)
    closure_order: int = 0
    truncated: bool = True

    def ratios(self, floor: float = 1e-13) -> list:
        inc = self.increments
        return [inc[i + 1] / inc[i] for i in range(len(inc) - 1) if inc[i] > floor and inc[i + 1] > floor]


def picard_iterate(cfg: EffectiveEquationConfig, family0: DensityFamily, t: float, n: int,
                   quadrature_dt: float, closure: Trajectory = None) -> PicardResult:
    """Picard iteration of the integral form of the infinite hierarchy on ``[0, t]``.

    Iterate 0 is the free evolution of ``family0``.  Level ``K_max`` needs
    ``gamma^(K_max+1)``; it is closed with the Hartree-factorized operator from
    ``closure`` (or left at zero interaction input if ``closure`` is None) and
    ``truncated`` is set.  ``increments[i]`` is the largest trace-norm change,
    over levels and grid times, between iterates ``i`` and ``i+1``.
    """
    if cfg.pot is None:
        raise ConfigError("the hierarchy needs a pair potential (convolution mode)")
    if n < 0:
        raise ConfigError("iteration order must be >= 0")
    times = _time_grid(t, quadrature_dt)
    kmax = family0.k_max
    fam = []
    for k, g0 in enumerate(family0.gammas, start=1):
        uk = _kron_power(cfg.linear_propagator(quadrature_dt), k)
        levels = np.empty((len(times),) + g0.shape, dtype=complex)
        levels[0] = g0
        for j in range(1, len(times)):
            levels[j] = uk @ levels[j - 1] @ uk.conj().T
        fam.append(levels)
    free = [lv.copy() for lv in fam]
    if closure is not None:
        phis = _trajectory_states(closure, times)
        top_source = np.array([collision_B(cfg.pot, kmax, factorized_power(p, kmax + 1)) for p in phis])
    else:
        top_source = np.zeros_like(fam[-1])
    increments = []
    for _ in range(n):
        new = []
        for k in range(1, kmax + 1):
            if k < kmax:
                src = np.array([collision_B(cfg.pot, k, g) for g in fam[k]])
            else:
                src = top_source
            new.append(free[k - 1] + _duhamel_integrals(cfg, k, quadrature_dt, src))
        increments.append(max(max(trace_norm(a - b) for a, b in zip(nl, ol)) for nl, ol in zip(new, fam)))
        fam = new
    return PicardResult(times, fam, increments, closure_order=kmax + 1, truncated=True)
