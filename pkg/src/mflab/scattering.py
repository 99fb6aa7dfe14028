"""Zero-energy scattering for radial 3D potentials.

The radial reduction ``u = r f`` turns ``(-Delta + V/2) f = 0`` into
``u'' = V(r) u / 2`` with ``u(0) = 0``.  Outside the potential ``u`` is
linear, ``u = c (r - a0)``; ``a0`` is the scattering length.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, InvariantViolation

__all__ = [
    "RadialPotential",
    "ScatteringResult",
    "radial_potential",
    "solve_zero_energy",
    "scaled_potential",
    "scaled_scattering_length",
    "coupling_for_beta",
    "square_barrier_length",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RadialPotential:
    """Piecewise-smooth radial potential.

    ``pieces`` is a list of ``(r_start, r_end, fn)`` covering ``[0, inf)``;
    each ``fn`` is smooth on its closed interval, so breakpoints (e.g. the
    edge of a square barrier) fall on mesh nodes and are integrated exactly.
    ``r_max`` is the support or effective decay radius.
    """

    pieces: tuple
    r_max: float
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        for a, b, fn in self.pieces:
            sel = (r >= a) & (r < b)
            out[sel] = fn(r[sel])
        return out

    def scaled(self, strength: float) -> "RadialPotential":
        pieces = tuple((a, b, (lambda fn: lambda r: strength * fn(r))(fn)) for a, b, fn in self.pieces)
        return RadialPotential(pieces, self.r_max, self.name, {**self.params, "strength": strength})

    def samples(self, r) -> np.ndarray:
        return self(r)

    def tail_exponent(self) -> float:
        """Log-log slope of ``|V|`` over ``[r_max, 2 r_max]`` (``-inf`` if it vanishes there)."""
        r = np.linspace(self.r_max, 2 * self.r_max, 64)
        v = np.abs(self(r))
        ok = v > 0
        if ok.sum() < 2:
            return -math.inf
        return float(np.polyfit(np.log(r[ok]), np.log(v[ok]), 1)[0])


def radial_potential(family: str, **params) -> RadialPotential:
    """Named radial families: ``zero``, ``square_barrier`` (V0, R), ``gaussian`` (amplitude,
    width), ``soft_power`` (amplitude, R, power: ``A / (1 + (r/R)^p)``), ``table`` (path)."""
    inf = math.inf
    if family == "zero":
        return RadialPotential(((0.0, inf, lambda r: np.zeros_like(r)),), 1.0, family, params)
    if family == "square_barrier":
        v0, R = float(params["V0"]), float(params["R"])
        if R <= 0:
            raise ConfigError("barrier radius must be positive", "potential.R")
        return RadialPotential(((0.0, R, lambda r: np.full_like(r, v0)), (R, inf, lambda r: np.zeros_like(r))),
                               R, family, params)
    if family == "gaussian":
        a, w = float(params["amplitude"]), float(params["width"])
        return RadialPotential(((0.0, inf, lambda r: a * np.exp(-r**2 / (2 * w**2))),), 8.0 * w, family, params)
    if family == "soft_power":
        a, R, p = float(params["amplitude"]), float(params["R"]), float(params["power"])
        r_eff = R * 1e3 ** (1.0 / p)
        return RadialPotential(((0.0, inf, lambda r: a / (1.0 + (r / R) ** p)),), r_eff, family, params)
    if family == "table":
        data = np.loadtxt(Path(params["path"]), ndmin=2)
        rs, vs = data[:, 0], data[:, 1]
        return RadialPotential(((0.0, float(rs[-1]), lambda r: np.interp(r, rs, vs)),
                                (float(rs[-1]), inf, lambda r: np.zeros_like(r))), float(rs[-1]), family, params)
    raise ConfigError(f"unknown radial potential family {family!r}", "potential.family")


def scaled_potential(pot: RadialPotential, n: float) -> RadialPotential:
    """``V_n(r) = n^2 V(n r)``."""
    pieces = tuple((a / n, b / n, (lambda fn: lambda r: n**2 * fn(n * r))(fn)) for a, b, fn in pot.pieces)
    return RadialPotential(pieces, pot.r_max / n, pot.name, {**pot.params, "scale": n})


def square_barrier_length(V0: float, R: float) -> float:
    """Closed form ``R - tanh(kappa R) / kappa`` with ``kappa = sqrt(V0 / 2)``."""
    if V0 == 0:
        return 0.0
    kappa = math.sqrt(V0 / 2.0)
    return R - math.tanh(kappa * R) / kappa


@dataclass
class ScatteringResult:
    r: np.ndarray
    f_profile: np.ndarray
    a0: float
    a0_integral: float
    b0: float
    rho: float
    dr: float
    r_max: float
    fit_residual: float = 0.0
    refinements: int = 0
    tail_exponent: float = -math.inf

    @property
    def identity_gap(self) -> float:
        """``|a0 - a0_integral| / |a0|`` (absolute when ``a0 == 0``)."""
        gap = abs(self.a0 - self.a0_integral)
        return gap / abs(self.a0) if self.a0 != 0 else gap

    def summary(self) -> dict:
        return {"a0": self.a0, "a0_integral": self.a0_integral, "identity_gap": self.identity_gap,
                "b0": self.b0, "rho": self.rho, "eight_pi_a0": 8 * math.pi * self.a0,
                "dr": self.dr, "r_max": self.r_max, "fit_residual": self.fit_residual,
                "refinements": self.refinements, "tail_exponent": self.tail_exponent}


def _segments(pot: RadialPotential, r_end: float, dr: float):
    segs = []
    for a, b, fn in pot.pieces:
        if a >= r_end:
            break
        b = min(b, r_end)
        nsteps = max(2, int(math.ceil((b - a) / dr)))
        nsteps += nsteps % 2
        segs.append((a, b, nsteps, fn))
    return segs


def _rk4_segment(fn, a, b, nsteps, u0, du0):
    """RK4 for ``u'' = V u / 2`` on a uniform mesh; returns nodes, u, u'."""
    h = (b - a) / nsteps
    r = a + h * np.arange(nsteps + 1)
    half = a + h * (np.arange(nsteps) + 0.5)
    v_nodes = fn(r)
    v_half = fn(half)
    u = np.empty(nsteps + 1)
    du = np.empty(nsteps + 1)
    u[0], du[0] = u0, du0
    for i in range(nsteps):
        y, p = u[i], du[i]
        k1y, k1p = p, 0.5 * v_nodes[i] * y
        y2, p2 = y + 0.5 * h * k1y, p + 0.5 * h * k1p
        k2y, k2p = p2, 0.5 * v_half[i] * y2
        y3, p3 = y + 0.5 * h * k2y, p + 0.5 * h * k2p
        k3y, k3p = p3, 0.5 * v_half[i] * y3
        y4, p4 = y + h * k3y, p + h * k3p
        k4y, k4p = p4, 0.5 * v_nodes[i + 1] * y4
        u[i + 1] = y + h / 6.0 * (k1y + 2 * k2y + 2 * k3y + k4y)
        du[i + 1] = p + h / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p)
    return r, u, du, v_nodes


def _simpson(y, h):
    return h / 3.0 * (y[0] + y[-1] + 4.0 * y[1:-1:2].sum() + 2.0 * y[2:-1:2].sum())


def _solve_once(pot: RadialPotential, r_end: float, dr: float, fit_tol: float):
    u0, du0 = 0.0, 1.0
    rs, us, vs = [], [], []
    int_vur = 0.0
    int_vr2 = 0.0
    int_vr = 0.0
    for a, b, nsteps, fn in _segments(pot, r_end, dr):
        r, u, du, v = _rk4_segment(fn, a, b, nsteps, u0, du0)
        h = (b - a) / nsteps
        int_vur += _simpson(v * u * r, h)
        int_vr2 += _simpson(v * r**2, h)
        int_vr += _simpson(v * r, h)
        u0, du0 = u[-1], du[-1]
        skip = 1 if rs else 0
        rs.append(r[skip:])
        us.append(u[skip:])
        vs.append(v[skip:])
    r = np.concatenate(rs)
    u = np.concatenate(us)
    v = np.concatenate(vs)
    if np.any(u[1:] <= 0):
        raise ConfigError("zero-energy solution crosses zero: potential too attractive (bound state)",
                          "potential")
    window = r >= 0.7 * r_end
    c, d = np.polyfit(r[window], u[window], 1)
    resid = float(np.max(np.abs(c * r[window] + d - u[window])) / max(abs(c) * r_end, 1e-300))
    if resid > fit_tol:
        log.warning("asymptotic fit residual %.2e exceeds %.2e; enlarge r_max", resid, fit_tol)
    a0 = -d / c
    f = np.empty_like(u)
    f[1:] = u[1:] / (c * r[1:])
    f[0] = 1.0 / c
    a0_int = 0.5 * int_vur / c
    b0 = 4 * math.pi * int_vr2
    rho = float(np.max(r**2 * np.abs(v)) + 4 * math.pi * int_vr)
    return ScatteringResult(r, f, float(a0), float(a0_int), float(b0), rho, dr, r_end, resid)


def solve_zero_energy(pot: RadialPotential, r_max: float = None, dr: float = None, refine: bool = True,
                      refine_tol: float = 1e-8, max_refinements: int = 12, fit_tol: float = 1e-8) -> ScatteringResult:
    """Solve the zero-energy scattering equation and extract ``a0`` two ways.

    ``a0`` comes from the linear fit of ``u`` on ``[0.7 r_max, r_max]``;
    ``a0_integral`` is ``(1/8 pi) int V f`` by Simpson quadrature.  With
    ``refine`` the mesh is halved until ``a0`` moves by less than
    ``refine_tol`` (relative).
    """
    if r_max is None:
        r_max = 10.0 * pot.r_max
    if r_max < pot.r_max:
        raise ConfigError("integration radius is inside the potential support", "r_max")
    if dr is None:
        dr = pot.r_max / 64.0
    res = _solve_once(pot, r_max, dr, fit_tol)
    level = 0
    while refine and level < max_refinements:
        nxt = _solve_once(pot, r_max, dr / 2 ** (level + 1), fit_tol)
        level += 1
        change = abs(nxt.a0 - res.a0)
        res = nxt
        if change <= refine_tol * max(abs(res.a0), 1e-300) or change == 0:
            break
    res.refinements = level
    res.tail_exponent = pot.tail_exponent()
    if res.tail_exponent > -5:
        log.warning("potential %s decays like r^%.2f, slower than r^-5", pot.name, res.tail_exponent)
    return res


def scaled_scattering_length(pot: RadialPotential, n: float, base: ScatteringResult = None, rtol: float = 1e-8):
    """Scattering length of ``n^2 V(n x)``, checked against ``a0 / n``.

    The scaled problem is solved on the exactly rescaled mesh, so the profile
    satisfies ``f_n(r) = f(n r)`` node by node.  Returns ``(a_n, scaled_result, base)``.
    """
    if n < 1:
        raise ConfigError(f"scale must be >= 1, got {n}", "n")
    if base is None:
        base = solve_zero_energy(pot)
    res = solve_zero_energy(scaled_potential(pot, n), r_max=base.r_max / n, dr=base.dr / n, refine=False)
    if base.a0 != 0 and abs(res.a0 - base.a0 / n) > rtol * abs(base.a0 / n):
        raise InvariantViolation(f"scaled scattering length {res.a0!r} != a0/n = {base.a0 / n!r}")
    return res.a0, res, base


def coupling_for_beta(pot: RadialPotential, beta: float, result: ScatteringResult = None) -> float:
    """Effective cubic coupling: ``8 pi a0`` at ``beta = 1`` and ``b0 = int V`` for ``0 < beta < 1``."""
    if not 0 < beta <= 1:
        raise ConfigError(f"beta must lie in (0, 1], got {beta}", "beta")
    if result is None:
        result = solve_zero_energy(pot)
    if np.any(pot(result.r) < 0):
        raise ConfigError("GP couplings require a non-negative potential", "potential")
    return 8 * math.pi * result.a0 if beta == 1 else result.b0
