"""Reduced density matrices of Fock-space states and trace-norm distances."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DenseCapError, InvariantViolation
from .fock import FockVector, annihilation_columns
from .lattice import Grid, LatticeWavefunction

__all__ = [
    "ReducedDensityMatrix",
    "reduce",
    "projector",
    "trace_norm",
    "trace_distance",
    "observable_expectation",
    "trace_distance_rank_one_shortcut",
    "partial_trace_last",
    "save_marginal",
    "load_marginal",
    "MAX_ORDER",
]

MAX_ORDER = 3
DEFAULT_SIDE_CAP = 4096


@dataclass(frozen=True)
class ReducedDensityMatrix:
    """k-body operator on the lattice; entries indexed ``[(x_1..x_k), (x'_1..x'_k)]`` row-major."""

    grid: Grid
    k: int
    entries: np.ndarray

    def __post_init__(self):
        side = self.grid.sites**self.k
        e = np.asarray(self.entries, dtype=complex)
        if e.shape != (side, side):
            raise ConfigError(f"expected a {side}x{side} matrix for k={self.k}, got {e.shape}")
        object.__setattr__(self, "entries", e)

    def trace(self) -> complex:
        return complex(np.trace(self.entries))

    def check(self, herm_tol=1e-12, trace_tol=1e-10, pos_tol=1e-10) -> None:
        """Raise :class:`InvariantViolation` unless Hermitian, trace one and positive."""
        e = self.entries
        herm = float(np.max(np.abs(e - e.conj().T)))
        if herm > herm_tol * max(1.0, float(np.max(np.abs(e)))):
            raise InvariantViolation(f"marginal not Hermitian (deviation {herm:.2e})")
        if abs(self.trace() - 1.0) > trace_tol:
            raise InvariantViolation(f"marginal trace {self.trace()} != 1")
        lam = np.linalg.eigvalsh(0.5 * (e + e.conj().T))
        if lam[0] < -pos_tol:
            raise InvariantViolation(f"marginal has negative eigenvalue {lam[0]:.2e}")

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(0.5 * (self.entries + self.entries.conj().T))


def projector(phi, k: int = 1) -> ReducedDensityMatrix:
    """``|phi><phi|^{(x)k}``."""
    v = phi.values
    vk = v
    for _ in range(k - 1):
        vk = np.kron(vk, v)
    return ReducedDensityMatrix(phi.grid, k, np.outer(vk, vk.conj()))


def reduce(psi: FockVector, k: int = 1, side_cap: int = DEFAULT_SIDE_CAP) -> ReducedDensityMatrix:
    """Normalized k-particle marginal of a Fock state.

    Entry ``(x; x')`` is proportional to ``<psi, a*_{x'_1}..a*_{x'_k} a_{x_1}..a_{x_k} psi>``.
    Each sector ``n >= k`` contributes the Gram matrix of the vectors
    ``a_{x_1}..a_{x_k} psi_n``; the trace normalizer is ``<N(N-1)..(N-k+1)>``,
    which reduces to ``<psi, N psi>`` at ``k = 1``.
    """
    grid = psi.basis.grid
    modes = psi.basis.modes
    if k < 1 or k > MAX_ORDER:
        raise ConfigError(f"marginal order must be between 1 and {MAX_ORDER}, got {k}")
    side = modes**k
    if side > side_cap:
        raise DenseCapError(f"k={k} marginal side {side} exceeds cap {side_cap}")
    acc = np.zeros((side, side), dtype=complex)
    for n in psi.basis.numbers:
        if n < k:
            continue
        cols = psi.sector(n).reshape(-1, 1)
        if not np.any(cols):
            continue
        for level in range(k):
            c = annihilation_columns(modes, n - level, cols)
            cols = c.reshape(c.shape[0], -1)
        # cols[:, (x_1, ..., x_k)] = a_{x_1} ... a_{x_k} psi_n, with x_k varying slowest
        order = cols.reshape(cols.shape[0], *([modes] * k))
        order = np.transpose(order, [0] + list(range(k, 0, -1))).reshape(cols.shape[0], side)
        acc += order.T @ order.conj()
    tr = np.trace(acc).real
    if tr <= 0:
        raise ConfigError(f"state has fewer than {k} particles; marginal undefined")
    return ReducedDensityMatrix(grid, k, acc / tr)


def trace_norm(a: np.ndarray) -> float:
    """Trace norm via singular values (eigenvalues for Hermitian input)."""
    a = np.asarray(a)
    if np.allclose(a, a.conj().T, atol=1e-14, rtol=0):
        return float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (a + a.conj().T)))))
    return float(np.sum(np.linalg.svd(a, compute_uv=False)))


def _entries(x):
    return x.entries if isinstance(x, ReducedDensityMatrix) else np.asarray(x)


def trace_distance(a, b) -> float:
    """``Tr |a - b|``."""
    if isinstance(a, ReducedDensityMatrix) and isinstance(b, ReducedDensityMatrix):
        if a.grid != b.grid or a.k != b.k:
            raise ConfigError("marginals differ in grid or order")
    ea, eb = _entries(a), _entries(b)
    if ea.shape != eb.shape:
        raise ConfigError(f"shape mismatch {ea.shape} vs {eb.shape}")
    d = ea - eb
    return float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (d + d.conj().T)))))


def observable_expectation(rho, J) -> complex:
    """``Tr(J rho)``."""
    er, ej = _entries(rho), np.asarray(J)
    if er.shape != ej.shape:
        raise ConfigError(f"observable shape {ej.shape} does not match marginal {er.shape}")
    return complex(np.einsum("ij,ji->", ej, er))


def trace_distance_rank_one_shortcut(gamma: ReducedDensityMatrix, phi: LatticeWavefunction, tol=1e-8):
    """Return ``(Tr|gamma - P_phi|, 2 ||gamma - P_phi||_op)`` after checking they agree.

    ``gamma - P_phi`` is traceless with at most one negative eigenvalue, so the
    two numbers coincide.
    """
    if gamma.k != 1:
        raise ConfigError("rank-one shortcut needs a one-particle marginal")
    if abs(phi.norm() - 1.0) > 1e-10:
        raise ConfigError("phi must be normalized")
    d = gamma.entries - np.outer(phi.values, phi.values.conj())
    lam = np.linalg.eigvalsh(0.5 * (d + d.conj().T))
    tr = float(np.sum(np.abs(lam)))
    op2 = 2.0 * float(np.max(np.abs(lam)))
    if abs(tr - op2) > tol:
        raise InvariantViolation(f"trace norm {tr!r} differs from twice the operator norm {op2!r}")
    return tr, op2


def partial_trace_last(entries: np.ndarray, sites: int, k_plus_1: int) -> np.ndarray:
    """Trace out the last particle slot of a ``(k+1)``-body operator."""
    side = sites ** (k_plus_1 - 1)
    t = np.asarray(entries).reshape(side, sites, side, sites)
    return np.einsum("aibi->ab", t)


def save_marginal(path, rho: ReducedDensityMatrix) -> None:
    """Plain-text export: header line, then ``row col re im`` per entry."""
    g = rho.grid
    side = rho.entries.shape[0]
    rows, cols = np.indices((side, side))
    data = np.column_stack([rows.ravel(), cols.ravel(), rho.entries.real.ravel(), rho.entries.imag.ravel()])
    header = f"k={rho.k} dim={g.dim} m={g.m} spacing={g.spacing!r}"
    with open(path, "w") as fh:
        fh.write(f"# {header}\n")
        for r, c, re_, im_ in data:
            fh.write(f"{int(r)} {int(c)} {float(re_)!r} {float(im_)!r}\n")


def load_marginal(path) -> ReducedDensityMatrix:
    with open(path) as fh:
        header = fh.readline().lstrip("#").split()
        meta = dict(item.split("=") for item in header)
        data = np.loadtxt(fh, ndmin=2)
    grid = Grid(int(meta["dim"]), int(meta["m"]), float(meta["spacing"]))
    k = int(meta["k"])
    side = grid.sites**k
    e = np.zeros((side, side), dtype=complex)
    e[data[:, 0].astype(int), data[:, 1].astype(int)] = data[:, 2] + 1j * data[:, 3]
    return ReducedDensityMatrix(grid, k, e)
