"""Bosonic Fock space over lattice modes.

States are stored in the occupation-number representation, so permutation
symmetry is automatic.  A basis is a list of fixed particle-number sectors,
each enumerated in descending lexicographic order of the occupation vector
``(n_0, ..., n_{M-1})``; a cutoff basis concatenates the sectors
``n = 0, 1, ..., n_max`` in that order.  Index lookup uses the combinatorial
number system, so no hash tables are needed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit, prange
from scipy.special import gammaln
from scipy.stats import poisson

from .errors import ConfigError, TruncationError
from .lattice import Grid, LatticeWavefunction, PotentialSpec, one_body_operator

__all__ = [
    "ENUMERATION_VERSION",
    "FixedN",
    "Cutoff",
    "SectorBasis",
    "FockBasis",
    "FockVector",
    "ManyBodyHamiltonian",
    "vacuum",
    "apply_create",
    "apply_annihilate",
    "apply_number",
    "number_moment",
    "apply_hamiltonian",
    "weyl_apply",
    "coherent_state",
    "coherent_cutoff",
    "factorized_state",
    "annihilation_columns",
    "save_fock_vector",
    "load_fock_vector",
]

ENUMERATION_VERSION = "desc-lex-sector-v1"


@dataclass(frozen=True)
class FixedN:
    n: int

    def __post_init__(self):
        if self.n < 0:
            raise ConfigError(f"particle number must be >= 0, got {self.n}", "sector.n")

    @property
    def numbers(self):
        return range(self.n, self.n + 1)


@dataclass(frozen=True)
class Cutoff:
    n_max: int

    def __post_init__(self):
        if self.n_max < 0:
            raise ConfigError(f"cutoff must be >= 0, got {self.n_max}", "sector.n_max")

    @property
    def numbers(self):
        return range(0, self.n_max + 1)


def coherent_cutoff(mean_number: float) -> int:
    """Occupation cap ``ceil(N + 8 sqrt(N) + 8)`` for a coherent state of mean ``N``."""
    return int(math.ceil(mean_number + 8.0 * math.sqrt(mean_number) + 8.0 - 1e-12))


# -- enumeration and ranking ---------------------------------------------

def _count_table(modes: int, n_max: int) -> np.ndarray:
    """``table[k, s]`` = number of occupation vectors of ``k`` modes summing to ``s``."""
    table = np.zeros((modes + 1, n_max + 2), dtype=np.int64)
    for k in range(1, modes + 1):
        for s in range(n_max + 2):
            table[k, s] = math.comb(s + k - 1, k - 1)
    return table


def _enumerate(modes: int, n: int) -> np.ndarray:
    memo = {}

    def rec(m, r):
        key = (m, r)
        if key in memo:
            return memo[key]
        if m == 1:
            out = np.array([[r]], dtype=np.int16)
        else:
            parts = []
            for v in range(r, -1, -1):
                tail = rec(m - 1, r - v)
                head = np.full((tail.shape[0], 1), v, dtype=np.int16)
                parts.append(np.hstack([head, tail]))
            out = np.vstack(parts)
        memo[key] = out
        return out

    return np.ascontiguousarray(rec(modes, n))


@njit(cache=True)
def _rank_row(row, n, table):
    modes = row.shape[0]
    r = 0
    rem = n
    for i in range(modes - 1):
        s = rem - row[i] - 1
        if s >= 0:
            r += table[modes - i, s]
        rem -= row[i]
    return r


@njit(cache=True, inline="always")
def _rank_moved(row, n, table, x, dx, y, dy):
    """Rank of ``row + dx e_x + dy e_y`` (pass ``y = -1`` for a single change) without copying."""
    modes = row.shape[0]
    r = 0
    rem = n
    for i in range(modes - 1):
        v = row[i]
        if i == x:
            v += dx
        if i == y:
            v += dy
        s = rem - v - 1
        if s >= 0:
            r += table[modes - i, s]
        rem -= v
    return r


def _rank_many(occ: np.ndarray, n: int, table: np.ndarray) -> np.ndarray:
    modes = occ.shape[1]
    rem = n - np.concatenate([np.zeros((occ.shape[0], 1), dtype=np.int64),
                              np.cumsum(occ, axis=1, dtype=np.int64)[:, :-1]], axis=1)
    s = rem - occ - 1
    out = np.zeros(occ.shape[0], dtype=np.int64)
    for i in range(modes - 1):
        si = s[:, i]
        ok = si >= 0
        out[ok] += table[modes - i, si[ok]]
    return out


class SectorBasis:
    """All occupation vectors of ``modes`` modes with total ``n``, descending lexicographic."""

    def __init__(self, modes: int, n: int):
        self.modes = modes
        self.n = n
        self.table = _count_table(modes, n + 1)
        self.dim = int(self.table[modes, n]) if modes > 0 else 1
        self._occ = None

    @property
    def occ(self) -> np.ndarray:
        if self._occ is None:
            self._occ = _enumerate(self.modes, self.n)
        return self._occ

    def rank(self, occ: np.ndarray) -> np.ndarray:
        occ = np.atleast_2d(np.asarray(occ, dtype=np.int64))
        if np.any(occ.sum(axis=1) != self.n) or np.any(occ < 0):
            raise ValueError(f"occupation vectors do not belong to the n={self.n} sector")
        return _rank_many(occ, self.n, self.table)


_SECTOR_CACHE: dict = {}


def _sector(modes: int, n: int) -> SectorBasis:
    key = (modes, n)
    if key not in _SECTOR_CACHE:
        _SECTOR_CACHE[key] = SectorBasis(modes, n)
    return _SECTOR_CACHE[key]


class FockBasis:
    """Occupation basis of a fixed-``n`` sector or of all sectors up to a cutoff."""

    def __init__(self, grid: Grid, sector):
        if not isinstance(sector, (FixedN, Cutoff)):
            raise ConfigError("sector must be FixedN or Cutoff")
        self.grid = grid
        self.sector = sector
        self.modes = grid.sites
        self.numbers = list(sector.numbers)
        self.blocks = {n: _sector(self.modes, n) for n in self.numbers}
        self.offsets = {}
        off = 0
        for n in self.numbers:
            self.offsets[n] = off
            off += self.blocks[n].dim
        self.dim = off

    @property
    def fixed(self) -> bool:
        return isinstance(self.sector, FixedN)

    @property
    def n_top(self) -> int:
        return self.numbers[-1]

    def sector_slice(self, n: int) -> slice:
        if n not in self.blocks:
            raise KeyError(f"sector n={n} not in basis")
        return slice(self.offsets[n], self.offsets[n] + self.blocks[n].dim)

    def states(self) -> np.ndarray:
        """Every occupation vector in basis order, shape ``(dim, modes)``."""
        return np.vstack([self.blocks[n].occ for n in self.numbers])

    def totals(self) -> np.ndarray:
        """Total particle number of every basis state."""
        return np.concatenate([np.full(self.blocks[n].dim, n) for n in self.numbers])

    def index(self, occupation) -> int:
        occ = np.asarray(occupation, dtype=np.int64)
        n = int(occ.sum())
        return self.offsets[n] + int(self.blocks[n].rank(occ)[0])

    def describe(self) -> dict:
        sector = ({"kind": "FixedN", "n": self.sector.n} if self.fixed
                  else {"kind": "Cutoff", "n_max": self.sector.n_max})
        return {**self.grid.describe(), "sector": sector,
                "enumeration": ENUMERATION_VERSION, "dimension": self.dim}

    def __eq__(self, other):
        return isinstance(other, FockBasis) and self.grid == other.grid and self.sector == other.sector

    def __hash__(self):
        return hash((self.grid, self.sector))

    def __repr__(self):
        return f"FockBasis({self.grid}, {self.sector}, dim={self.dim})"


@dataclass
class FockVector:
    basis: FockBasis
    coeffs: np.ndarray
    leakage: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex).reshape(-1)
        if c.size != self.basis.dim:
            raise ConfigError(f"coefficient vector has {c.size} entries, basis has {self.basis.dim}")
        self.coeffs = c

    def sector(self, n: int) -> np.ndarray:
        return self.coeffs[self.basis.sector_slice(n)]

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def inner(self, other: "FockVector") -> complex:
        return complex(np.vdot(self.coeffs, other.coeffs))

    def sector_weights(self) -> dict:
        return {n: float(np.vdot(self.sector(n), self.sector(n)).real) for n in self.basis.numbers}

    def copy(self) -> "FockVector":
        return FockVector(self.basis, self.coeffs.copy(), self.leakage, dict(self.meta))

    def with_coeffs(self, coeffs, leakage=None) -> "FockVector":
        return FockVector(self.basis, coeffs, self.leakage if leakage is None else leakage)

    def __add__(self, other):
        return self.with_coeffs(self.coeffs + other.coeffs, max(self.leakage, other.leakage))

    def __sub__(self, other):
        return self.with_coeffs(self.coeffs - other.coeffs, max(self.leakage, other.leakage))

    def __mul__(self, c):
        return self.with_coeffs(self.coeffs * c)

    __rmul__ = __mul__


def vacuum(basis: FockBasis) -> FockVector:
    if 0 not in basis.blocks:
        raise ConfigError("basis does not contain the vacuum sector")
    c = np.zeros(basis.dim, dtype=complex)
    c[basis.offsets[0]] = 1.0
    return FockVector(basis, c)


# -- numba gather kernels -------------------------------------------------

@njit(cache=True, parallel=True)
def _annihilate_columns(occ_t, n_t, src, table_src):
    """``out[s, x, j] = sqrt(n_x + 1) * src[rank(s + e_x), j]`` for target sector states ``s``."""
    d_t, modes = occ_t.shape
    k = src.shape[1]
    out = np.zeros((d_t, modes, k), dtype=src.dtype)
    for s in prange(d_t):
        row = occ_t[s]
        for x in range(modes):
            amp = math.sqrt(row[x] + 1.0)
            j = _rank_moved(row, n_t + 1, table_src, x, 1, -1, 0)
            for c in range(k):
                out[s, x, c] = amp * src[j, c]
    return out


@njit(cache=True, parallel=True)
def _create_gather(occ_t, n_t, src, f, table_src):
    """``out[s] = sum_x f_x sqrt(n_x) src[rank(s - e_x)]`` for target sector states ``s``."""
    d_t, modes = occ_t.shape
    out = np.zeros(d_t, dtype=np.complex128)
    for s in prange(d_t):
        row = occ_t[s]
        acc = 0j
        for x in range(modes):
            nx = row[x]
            if nx == 0 or f[x] == 0:
                continue
            j = _rank_moved(row, n_t - 1, table_src, x, -1, -1, 0)
            acc += f[x] * math.sqrt(nx) * src[j]
        out[s] = acc
    return out


@njit(cache=True, parallel=True)
def _annihilate_gather(occ_t, n_t, src, fbar, table_src):
    """``out[s] = sum_x conj(f_x) sqrt(n_x + 1) src[rank(s + e_x)]``."""
    d_t, modes = occ_t.shape
    out = np.zeros(d_t, dtype=np.complex128)
    for s in prange(d_t):
        row = occ_t[s]
        acc = 0j
        for x in range(modes):
            if fbar[x] == 0:
                continue
            amp = math.sqrt(row[x] + 1.0)
            j = _rank_moved(row, n_t + 1, table_src, x, 1, -1, 0)
            acc += fbar[x] * amp * src[j]
        out[s] = acc
    return out


@njit(cache=True, parallel=True)
def _hamiltonian_gather(occ, n, psi, diag, hop_x, hop_y, hop_t, table):
    """``out[s] = diag[s] psi[s] + sum_{x != y} T_xy sqrt(n_x (n_y + 1)) psi[rank(s - e_x + e_y)]``."""
    d = occ.shape[0]
    npairs = hop_x.shape[0]
    out = np.empty(d, dtype=np.complex128)
    for s in prange(d):
        row = occ[s]
        acc = diag[s] * psi[s]
        for p in range(npairs):
            x = hop_x[p]
            nx = row[x]
            if nx == 0:
                continue
            y = hop_y[p]
            ny = row[y]
            j = _rank_moved(row, n, table, x, -1, y, 1)
            acc += hop_t[p] * math.sqrt(nx * (ny + 1.0)) * psi[j]
        out[s] = acc
    return out


def _as_modes(f, modes: int) -> np.ndarray:
    vals = f.values if isinstance(f, LatticeWavefunction) else np.asarray(f)
    vals = np.asarray(vals, dtype=complex).reshape(-1)
    if vals.size != modes:
        raise ConfigError(f"one-body function has {vals.size} entries, basis has {modes} modes")
    return vals


def annihilation_columns(modes: int, n: int, src: np.ndarray) -> np.ndarray:
    """Apply every ``a_x`` to a batch of sector-``n`` vectors.

    ``src`` has shape ``(dim_n, k)``; the result has shape ``(dim_{n-1}, modes, k)``.
    """
    if n == 0:
        return np.zeros((0, modes, src.shape[1]), dtype=complex)
    tgt = _sector(modes, n - 1)
    srcb = _sector(modes, n)
    return _annihilate_columns(tgt.occ, n - 1, np.ascontiguousarray(src, dtype=complex), srcb.table)


def _create_sector(modes, n_src, src, f):
    tgt = _sector(modes, n_src + 1)
    return _create_gather(tgt.occ, n_src + 1, np.ascontiguousarray(src), f, _sector(modes, n_src).table)


def _annihilate_sector(modes, n_src, src, f):
    if n_src == 0:
        return np.zeros(0, dtype=complex)
    tgt = _sector(modes, n_src - 1)
    return _annihilate_gather(tgt.occ, n_src - 1, np.ascontiguousarray(src), np.conj(f),
                              _sector(modes, n_src).table)


# -- operators ------------------------------------------------------------

def apply_create(f, psi: FockVector, tol: float = 1e-8) -> FockVector:
    """``a*(f) psi`` on a cutoff basis.

    The image of the top sector falls outside the basis; its norm is computed
    exactly from ``||a*(f) chi||^2 = ||a(f) chi||^2 + ||f||^2 ||chi||^2`` and
    reported as ``leakage``.  A leak above ``tol * max(1, ||psi||)`` raises.
    """
    basis = psi.basis
    if basis.fixed:
        raise ConfigError("a*(f) maps a fixed-N sector out of the basis; use a Cutoff basis")
    f = _as_modes(f, basis.modes)
    out = np.zeros(basis.dim, dtype=complex)
    for n in basis.numbers[:-1]:
        out[basis.sector_slice(n + 1)] = _create_sector(basis.modes, n, psi.sector(n), f)
    top = psi.sector(basis.n_top)
    down = _annihilate_sector(basis.modes, basis.n_top, top, f)
    leaked = math.sqrt(max(0.0, float(np.vdot(down, down).real) + np.vdot(f, f).real * np.vdot(top, top).real))
    if leaked > tol * max(1.0, psi.norm()):
        raise TruncationError("a*(f) overflowed the occupation cutoff", leaked)
    return FockVector(basis, out, max(psi.leakage, leaked))


def apply_annihilate(f, psi: FockVector) -> FockVector:
    """``a(f) psi = sum_x conj(f(x)) a_x psi``; on a fixed-N basis the result lives in sector ``n-1``."""
    basis = psi.basis
    f = _as_modes(f, basis.modes)
    if basis.fixed:
        n = basis.sector.n
        if n == 0:
            raise ConfigError("cannot annihilate in the zero-particle fixed sector")
        target = FockBasis(basis.grid, FixedN(n - 1))
        return FockVector(target, _annihilate_sector(basis.modes, n, psi.coeffs, f), psi.leakage)
    out = np.zeros(basis.dim, dtype=complex)
    for n in basis.numbers[1:]:
        out[basis.sector_slice(n - 1)] = _annihilate_sector(basis.modes, n, psi.sector(n), f)
    return FockVector(basis, out, psi.leakage)


def apply_number(psi: FockVector) -> FockVector:
    return psi.with_coeffs(psi.basis.totals() * psi.coeffs)


def number_moment(psi: FockVector, j: int = 1) -> float:
    """``<psi, N^j psi> / ||psi||^2``."""
    w = psi.sector_weights()
    total = sum(w.values())
    return sum(float(n) ** j * wn for n, wn in w.items()) / total


class ManyBodyHamiltonian:
    """Second-quantized mean-field Hamiltonian on a lattice Fock basis.

    ``H = sum_{x,y} T_xy a*_x a_y + (1/2N) sum_{x,y} V(x - y) a*_x a*_y a_y a_x``
    with ``T = -Delta + V_ext`` the one-body matrix and ``N = n_param``.
    The action is matrix-free and block diagonal over particle-number sectors.
    """

    def __init__(self, basis: FockBasis, pot: PotentialSpec, n_param=None, beta=None):
        if pot.grid != basis.grid:
            raise ConfigError("potential and basis live on different grids")
        if n_param is None:
            if not basis.fixed:
                raise ConfigError("n_param is required on a cutoff basis", "n_param")
            n_param = basis.sector.n
        if n_param <= 0:
            raise ConfigError(f"mean-field scale must be positive, got {n_param}", "n_param")
        self.basis = basis
        self.pot = pot
        self.n_param = float(n_param)
        self.beta = beta
        t = one_body_operator(basis.grid, pot).toarray()
        self.t_matrix = t
        self.v_matrix = pot.pair_matrix()
        off = t - np.diag(np.diag(t))
        hx, hy = np.nonzero(off)
        self._hop_x = hx.astype(np.int64)
        self._hop_y = hy.astype(np.int64)
        self._hop_t = off[hx, hy].astype(float)
        self._diag = {}

    def sector_diagonal(self, n: int) -> np.ndarray:
        if n not in self._diag:
            occ = self.basis.blocks[n].occ.astype(float)
            kin = occ @ np.diag(self.t_matrix)
            inter = np.einsum("sx,xy,sy->s", occ, self.v_matrix, occ) - self.v_matrix[0, 0] * occ.sum(axis=1)
            self._diag[n] = kin + inter / (2.0 * self.n_param)
        return self._diag[n]

    def apply_sector(self, n: int, vec: np.ndarray) -> np.ndarray:
        block = self.basis.blocks[n]
        vec = np.ascontiguousarray(vec, dtype=complex)
        return _hamiltonian_gather(block.occ, n, vec, self.sector_diagonal(n),
                                   self._hop_x, self._hop_y, self._hop_t, block.table)

    def sector_operator(self, n: int):
        return lambda v: self.apply_sector(n, v)

    def blocks(self):
        """``(slice, matvec)`` pairs for each invariant particle-number sector."""
        return [(self.basis.sector_slice(n), self.sector_operator(n)) for n in self.basis.numbers]

    def matvec(self, coeffs: np.ndarray) -> np.ndarray:
        out = np.empty(self.basis.dim, dtype=complex)
        for n in self.basis.numbers:
            sl = self.basis.sector_slice(n)
            out[sl] = self.apply_sector(n, coeffs[sl])
        return out

    __call__ = matvec

    @property
    def dim(self) -> int:
        return self.basis.dim

    def to_dense(self, cap: int = 5000) -> np.ndarray:
        if self.basis.dim > cap:
            from .errors import DenseCapError
            raise DenseCapError(f"dimension {self.basis.dim} exceeds dense cap {cap}")
        eye = np.eye(self.basis.dim, dtype=complex)
        return np.column_stack([self.matvec(eye[:, j]) for j in range(self.basis.dim)])

    def expectation(self, psi: FockVector) -> float:
        return float(np.vdot(psi.coeffs, self.matvec(psi.coeffs)).real / np.vdot(psi.coeffs, psi.coeffs).real)

    def norm_bound(self) -> float:
        """Upper bound on the operator norm over the basis (used for step heuristics)."""
        n = self.basis.n_top
        return n * float(np.max(np.sum(np.abs(self.t_matrix), axis=1))) + \
            n * (n - 1) / (2.0 * self.n_param) * float(np.max(np.abs(self.v_matrix)))


def apply_hamiltonian(H: ManyBodyHamiltonian, psi: FockVector) -> FockVector:
    if psi.basis != H.basis:
        raise ConfigError("state and Hamiltonian use different bases")
    return psi.with_coeffs(H.matvec(psi.coeffs))


class _WeylGenerator:
    """Hermitian ``i (a*(f) - a(f))`` on a cutoff basis, so ``exp(-i K) = W(f)``."""

    def __init__(self, basis: FockBasis, f: np.ndarray):
        self.basis = basis
        self.f = f
        self.dim = basis.dim

    def matvec(self, coeffs):
        b = self.basis
        out = np.zeros(b.dim, dtype=complex)
        for n in b.numbers:
            src = coeffs[b.sector_slice(n)]
            if n < b.n_top:
                out[b.sector_slice(n + 1)] += 1j * _create_sector(b.modes, n, src, self.f)
            if n > 0:
                out[b.sector_slice(n - 1)] -= 1j * _annihilate_sector(b.modes, n, src, self.f)
        return out

    __call__ = matvec

    def norm_bound(self):
        return 2.0 * float(np.linalg.norm(self.f)) * math.sqrt(self.basis.n_top + 1)


def _top_overflow(basis: FockBasis, coeffs: np.ndarray, f: np.ndarray) -> float:
    top = coeffs[basis.sector_slice(basis.n_top)]
    down = _annihilate_sector(basis.modes, basis.n_top, top, f)
    return math.sqrt(max(0.0, float(np.vdot(down, down).real) + float(np.vdot(f, f).real * np.vdot(top, top).real)))


def weyl_apply(f, psi: FockVector, tol: float = 1e-6, krylov_tol: float = 1e-13) -> FockVector:
    """``W(f) psi = exp(a*(f) - a(f)) psi`` by a Krylov exponential on the truncated space.

    The truncated generator stays anti-Hermitian, so the result is unitary up
    to rounding; truncation shows up instead as the norm ``||a*(f) P_top W psi||``
    that the exact generator would push past the cutoff.  That number is stored
    as ``leakage`` and a value above ``tol`` raises.  It bounds the true
    truncation error from above, usually by orders of magnitude, hence the
    looser default.
    """
    from .propagate import evolve

    basis = psi.basis
    if basis.fixed:
        raise ConfigError("Weyl operators need a Cutoff basis")
    f = _as_modes(f, basis.modes)
    if not np.any(f):
        return psi.copy()
    gen = _WeylGenerator(basis, f)
    out = evolve(gen, psi.coeffs, 1.0, tol=krylov_tol)
    leaked = _top_overflow(basis, out, f)
    if leaked > tol:
        raise TruncationError("Weyl operator leaked past the occupation cutoff", leaked)
    return FockVector(basis, out, max(psi.leakage, leaked))


def _product_amplitudes(occ: np.ndarray, f: np.ndarray) -> np.ndarray:
    """``prod_x f_x^{n_x} / sqrt(n_x!)`` for each occupation row, evaluated in log space."""
    occ = occ.astype(np.int64)
    nz = f != 0
    logf = np.zeros(f.shape, dtype=complex)
    logf[nz] = np.log(f[nz])
    bad = (occ[:, ~nz] > 0).any(axis=1) if (~nz).any() else np.zeros(occ.shape[0], dtype=bool)
    logamp = occ @ logf - 0.5 * gammaln(occ + 1.0).sum(axis=1)
    amp = np.exp(logamp)
    amp[bad] = 0.0
    return amp


def coherent_state(f, basis: FockBasis = None, tol: float = 1e-8) -> FockVector:
    """Coherent state ``W(f) Omega`` from its closed form ``e^{-|f|^2/2} sum_n f^{(x)n} / sqrt(n!)``.

    Without an explicit basis the cutoff follows :func:`coherent_cutoff`.  The
    stored vector is the exact projection onto the cutoff space; ``leakage`` is
    the Poisson mass beyond the cutoff.
    """
    if isinstance(f, LatticeWavefunction):
        grid, vals = f.grid, f.values
    else:
        if basis is None:
            raise ConfigError("pass a LatticeWavefunction or an explicit basis")
        grid, vals = basis.grid, np.asarray(f, dtype=complex)
    mean = float(np.vdot(vals, vals).real)
    if basis is None:
        basis = FockBasis(grid, Cutoff(coherent_cutoff(mean)))
    if basis.fixed:
        raise ConfigError("coherent states need a Cutoff basis")
    vals = _as_modes(vals, basis.modes)
    coeffs = np.empty(basis.dim, dtype=complex)
    for n in basis.numbers:
        coeffs[basis.sector_slice(n)] = _product_amplitudes(basis.blocks[n].occ, vals)
    coeffs *= math.exp(-mean / 2.0)
    leaked = float(poisson.sf(basis.n_top, mean)) if mean > 0 else 0.0
    if leaked > tol:
        raise TruncationError("coherent state does not fit under the occupation cutoff", leaked)
    return FockVector(basis, coeffs, leaked)


def factorized_state(phi: LatticeWavefunction, n: int) -> FockVector:
    """``phi^{(x)n}`` in the fixed-``n`` occupation basis."""
    norm = phi.norm()
    if abs(norm - 1.0) > 1e-10:
        raise ConfigError(f"factorized states need a normalized one-body state (norm {norm})")
    basis = FockBasis(phi.grid, FixedN(n))
    amps = _product_amplitudes(basis.blocks[n].occ, phi.values) * math.exp(0.5 * gammaln(n + 1.0))
    return FockVector(basis, amps)


# -- serialization --------------------------------------------------------

def save_fock_vector(path, psi: FockVector) -> None:
    """Write a ``.npz`` snapshot: coefficients plus a JSON basis header."""
    header = {**psi.basis.describe(), "leakage": psi.leakage}
    with open(path, "wb") as fh:
        np.savez(fh, coeffs=psi.coeffs, header=np.array(json.dumps(header, sort_keys=True)))


def load_fock_vector(path) -> FockVector:
    with np.load(Path(path), allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        coeffs = data["coeffs"]
    if header.get("enumeration") != ENUMERATION_VERSION:
        raise ConfigError(f"snapshot uses enumeration {header.get('enumeration')!r}, "
                          f"this build reads {ENUMERATION_VERSION!r}")
    grid = Grid(header["dim"], header["m"], header["spacing"])
    sec = header["sector"]
    sector = FixedN(sec["n"]) if sec["kind"] == "FixedN" else Cutoff(sec["n_max"])
    return FockVector(FockBasis(grid, sector), coeffs, header.get("leakage", 0.0))
