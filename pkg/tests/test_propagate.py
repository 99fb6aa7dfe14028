import numpy as np
import pytest

from mflab.errors import DenseCapError
from mflab.fock import FixedN, FockBasis, ManyBodyHamiltonian, factorized_state, number_moment
from mflab.lattice import Grid, initial_wavefunction, pair_potential
from mflab.propagate import dense_expm_oracle, evolve, krylov_expm

from oracles import random_hermitian


def _system(m=4, n=2, seed=7):
    grid = Grid(1, m)
    pot = pair_potential(grid, "random", amplitude=1.0, seed=seed)
    H = ManyBodyHamiltonian(FockBasis(grid, FixedN(n)), pot)
    phi = initial_wavefunction(grid, "gaussian_packet", center=1.0, width=1.0, momentum=0.5)
    return H, factorized_state(phi, n)


@pytest.mark.parametrize("m", [4, 6])
def test_krylov_matches_dense_oracle(m):
    H, psi = _system(m)
    Hd = H.to_dense()
    for t in np.linspace(0, 1, 6):
        a = evolve(H, psi, t).coeffs
        b = dense_expm_oracle(Hd, psi, t).coeffs
        assert np.max(np.abs(a - b)) <= 1e-8


def test_zero_time_is_identity():
    H, psi = _system()
    np.testing.assert_array_equal(evolve(H, psi, 0.0).coeffs, psi.coeffs)


def test_diagonal_phases():
    d = np.array([0.0, 1.0, -2.5, 4.0])
    v = np.array([1, 1j, 0.5, -1]) / np.sqrt(3.25)
    out = krylov_expm(lambda x: d * x, v, 0.7)
    np.testing.assert_allclose(out, np.exp(-0.7j * d) * v, atol=1e-12)


def test_group_law_and_reversibility():
    H, psi = _system(6)
    one = evolve(H, evolve(H, psi, 0.3), 0.4)
    both = evolve(H, psi, 0.7)
    assert np.max(np.abs(one.coeffs - both.coeffs)) < 1e-9
    back = evolve(H, both, -0.7)
    assert np.max(np.abs(back.coeffs - psi.coeffs)) < 1e-9


def test_conservation_along_trajectory():
    H, psi = _system(6)
    e0 = H.expectation(psi)
    for t in (0.5, 1.0, 2.0):
        out = evolve(H, psi, t)
        assert abs(out.norm() - 1.0) < 1e-10
        assert abs(number_moment(out, 1) - 2.0) < 1e-10
        assert abs(H.expectation(out) - e0) < 1e-8 * (1 + abs(e0))


def test_long_time_adaptive_substeps():
    rng = np.random.default_rng(0)
    A = random_hermitian(rng, 300, 5.0)
    v = rng.standard_normal(300) + 0j
    v /= np.linalg.norm(v)
    out = krylov_expm(lambda x: A @ x, v, 10.0)
    ref = dense_expm_oracle(A, v, 10.0)
    assert np.max(np.abs(out - ref)) < 1e-8


def test_dense_oracle_refusals():
    rng = np.random.default_rng(1)
    with pytest.raises(DenseCapError):
        dense_expm_oracle(random_hermitian(rng, 20), np.ones(20), 1.0, cap=10)
    bad = rng.standard_normal((5, 5))
    with pytest.raises(ValueError, match="Hermitian"):
        dense_expm_oracle(bad, np.ones(5), 1.0)


def test_invalid_inputs():
    H, psi = _system()
    with pytest.raises(ValueError):
        evolve(H, psi, np.inf)
    with pytest.raises(ValueError):
        evolve(H, psi, 1.0, tol=0)
