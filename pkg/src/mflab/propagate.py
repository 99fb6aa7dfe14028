"""Unitary propagation ``exp(-iHt)`` for Hermitian matrix-free operators."""

from __future__ import annotations

import logging

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .errors import DenseCapError

__all__ = ["evolve", "krylov_expm", "dense_expm_oracle", "DEFAULT_DENSE_CAP"]

log = logging.getLogger(__name__)

DEFAULT_DENSE_CAP = 5000
KRYLOV_MIN = 8
KRYLOV_MAX = 64
_FULL_REORTH_DIM = 50_000


def _phase_vector(alpha, beta, tau):
    """``exp(-i tau T) e_1`` for the real symmetric tridiagonal ``T``."""
    if len(alpha) == 1:
        return np.array([np.exp(-1j * tau * alpha[0])])
    lam, q = eigh_tridiagonal(alpha, beta)
    return q @ (np.exp(-1j * tau * lam) * q[0])


def krylov_expm(matvec, v, t, tol=1e-10, kmin=KRYLOV_MIN, kmax=KRYLOV_MAX):
    """Lanczos approximation of ``exp(-i t H) v`` with adaptive substeps.

    Each substep builds a Krylov basis of dimension between ``kmin`` and
    ``kmax`` and accepts step ``tau`` once the a-posteriori estimate
    ``beta_{j+1} |[exp(-i tau T_j) e_1]_j|`` drops below ``tol * tau / |t|``.
    If ``kmax`` is reached first the step is halved against the same basis.
    """
    v = np.asarray(v, dtype=complex)
    nrm = float(np.linalg.norm(v))
    if t == 0 or nrm == 0:
        return v.copy()
    n = v.size
    kmax = min(kmax, n)
    kmin = min(kmin, kmax)
    total = abs(float(t))
    direction = np.sign(t)
    w = v / nrm
    remaining = total
    tau = total
    tau_min = total * 1e-12
    full_reorth = n <= _FULL_REORTH_DIM
    while remaining > 0:
        tau = min(tau, remaining)
        basis = np.empty((kmax, n), dtype=complex)
        basis[0] = w
        alpha, beta = [], []
        accepted = None
        for j in range(kmax):
            u = matvec(basis[j])
            a = float(np.vdot(basis[j], u).real)
            u = u - a * basis[j]
            if j > 0:
                u -= beta[-1] * basis[j - 1]
            if full_reorth:
                u -= basis[: j + 1].T @ (basis[: j + 1].conj() @ u)
            alpha.append(a)
            b = float(np.linalg.norm(u))
            breakdown = b <= 1e-13 * max(1.0, abs(a))
            if breakdown:
                y = _phase_vector(np.array(alpha), np.array(beta), direction * remaining)
                accepted = (remaining, y, j + 1)
                break
            if j + 1 >= kmin or j + 1 == kmax:
                while True:
                    y = _phase_vector(np.array(alpha), np.array(beta), direction * tau)
                    err = b * abs(y[-1])
                    if err <= tol * tau / total:
                        accepted = (tau, y, j + 1)
                        break
                    if j + 1 < kmax:
                        break
                    tau *= 0.5
                    if tau < tau_min:
                        raise RuntimeError(
                            f"Krylov propagation failed to converge (step {tau:.2e}, error {err:.2e})")
                if accepted is not None:
                    break
            beta.append(b)
            if j + 1 < kmax:
                basis[j + 1] = u / b
        step, y, k = accepted
        w = basis[:k].T @ y
        w /= np.linalg.norm(w)
        remaining -= step
        if remaining <= total * 1e-15:
            break
        tau = step * 2.0 if k < kmax // 2 else step
    return nrm * w


def evolve(H, psi, t, tol=1e-10):
    """``exp(-i H t) psi`` for a Hermitian operator ``H``.

    ``H`` is anything with a ``matvec`` method (or a plain callable).  If it
    also exposes ``blocks()`` returning ``(slice, matvec)`` pairs of invariant
    subspaces, each block is propagated separately.  ``psi`` may be a
    :class:`~mflab.fock.FockVector` or a complex array; the same kind is
    returned.
    """
    coeffs = getattr(psi, "coeffs", psi)
    coeffs = np.asarray(coeffs, dtype=complex)
    if not np.isfinite(t):
        raise ValueError("propagation time must be finite")
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    if hasattr(H, "blocks"):
        blocks = H.blocks()
    else:
        blocks = [(slice(None), getattr(H, "matvec", H))]
    out = np.zeros_like(coeffs)
    for sl, op in blocks:
        v = coeffs[sl]
        if not np.any(v):
            continue
        out[sl] = krylov_expm(op, v, t, tol)
    if hasattr(psi, "with_coeffs"):
        return psi.with_coeffs(out)
    return out


def dense_expm_oracle(Hd, psi, t, cap=DEFAULT_DENSE_CAP, herm_tol=1e-10):
    """Exact propagation by Hermitian eigendecomposition of a dense matrix."""
    Hd = np.asarray(Hd)
    if Hd.shape[0] > cap:
        raise DenseCapError(f"dimension {Hd.shape[0]} exceeds dense cap {cap}")
    asym = float(np.max(np.abs(Hd - Hd.conj().T))) if Hd.size else 0.0
    if asym > herm_tol:
        raise ValueError(f"matrix is not Hermitian (max deviation {asym:.2e})")
    coeffs = np.asarray(getattr(psi, "coeffs", psi), dtype=complex)
    lam, q = np.linalg.eigh(Hd)
    out = q @ (np.exp(-1j * lam * t) * (q.conj().T @ coeffs))
    if hasattr(psi, "with_coeffs"):
        return psi.with_coeffs(out)
    return out
