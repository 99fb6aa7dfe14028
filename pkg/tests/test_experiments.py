import numpy as np
import pytest

from mflab.errors import ConfigError
from mflab.experiments import (ConvergenceExperiment, _trajectory, coherent_study, fit_exponential, fit_rate,
                               fluctuation_growth, fluctuation_moments, run_coherent, run_delta_limit,
                               hartree_reference, run_factorized)
from mflab.fock import Cutoff, FockBasis, FockVector, coherent_state, number_moment, vacuum, weyl_apply
from mflab.lattice import Grid, LatticeWavefunction, initial_wavefunction, pair_potential
from mflab.marginals import observable_expectation, projector, reduce, trace_distance

from oracles import random_hermitian


def _packet(grid, phase=0.0):
    phi = initial_wavefunction(grid, "gaussian_packet", center=1.5, width=1.0, momentum=0.6)
    return phi * np.exp(1j * phase)


def _exp(kind="factorized", pot=None, times=(0.0, 0.3), n_list=(1, 2, 3), m=4, **kw):
    g = Grid(1, m)
    pot = pot or pair_potential(g, "gaussian", amplitude=1.0, width=1.0)
    return ConvergenceExperiment(g, pot, kw.pop("phi0", _packet(g)), list(n_list), list(times), kind, **kw)


# -- fits -------------------------------------------------------------------------

def test_fit_exact_power_law():
    fit = fit_rate([(n, 0.3 / n) for n in (2, 3, 4, 5, 6)])
    assert abs(fit.slope + 1) <= 1e-12
    assert fit.residual < 1e-12 and fit.n_points == 5


def test_fit_constant():
    assert abs(fit_rate([(n, 0.2) for n in (1, 2, 4, 8)]).slope) < 1e-12


def test_fit_floor_handling():
    ns = [2**k for k in range(1, 31)]
    floor = 1e-9
    fit = fit_rate([(n, 0.5 * (1 / n + floor)) for n in ns], floor=floor)
    assert fit.excluded
    assert abs(fit.slope + 1) <= 0.05


def test_fit_refusal():
    with pytest.raises(ConfigError):
        fit_rate([(2, 0.1), (3, 0.05)])
    with pytest.raises(ConfigError):
        fit_rate([(2, 0.1), (3, 1e-12), (4, 1e-12)], floor=1e-12)


def test_fit_exponential_examples():
    t = np.array([0.25, 0.5, 1.0])
    fit = fit_exponential(t, 0.02 * np.exp(3 * t))
    assert fit.rate == pytest.approx(3.0) and fit.prefactor == pytest.approx(0.02)
    assert fit.residual < 1e-12
    with pytest.raises(ConfigError):
        fit_exponential([0.0, 1.0], [0.0, 1.0])


# -- validation -------------------------------------------------------------------

def test_experiment_validation():
    with pytest.raises(ConfigError, match="three"):
        _exp(n_list=(1, 2))
    with pytest.raises(ConfigError):
        _exp(n_list=(3, 2, 4))
    with pytest.raises(ConfigError):
        _exp(times=(0.5, 0.2))
    with pytest.raises(ConfigError):
        _exp(kind="other")
    g = Grid(1, 4)
    with pytest.raises(ConfigError):
        _exp(phi0=LatticeWavefunction(g, 2 * _packet(g).values))
    with pytest.raises(ConfigError):
        run_coherent(_exp())
    with pytest.raises(ConfigError):
        run_factorized(_exp(kind="coherent"))


# -- trivial runs ------------------------------------------------------------------

def test_factorized_zero_time_and_free():
    res = run_factorized(_exp())
    for r in res.rows:
        if r.t == 0:
            assert r.distance <= res.floor
    g = Grid(1, 4)
    free = run_factorized(_exp(pot=pair_potential(g, "zero"), times=(0.3, 0.6)))
    assert max(r.distance for r in free.rows) <= 1e-9


def test_coherent_zero_time_and_free():
    res = run_coherent(_exp(kind="coherent", times=(0.0,)))
    assert all(r.distance <= max(1e-9, r.leakage) for r in res.rows)
    g = Grid(1, 4)
    free = _exp(kind="coherent", pot=pair_potential(g, "zero"), times=(0.0, 0.4))
    dist, fl = coherent_study(free, j_max=2)
    assert max(r.distance for r in dist.rows) <= 1e-9
    for mom in fl.moments.values():
        assert max(mom) <= 1e-9


def test_distances_gauge_invariant():
    g = Grid(1, 4)
    a = run_factorized(_exp(times=(0.3,)))
    b = run_factorized(_exp(times=(0.3,), phi0=_packet(g, 1.1)))
    for ra, rb in zip(a.rows, b.rows):
        assert abs(ra.distance - rb.distance) < 1e-10


def test_observable_bound_along_run():
    exp = _exp(times=(0.3,))
    ref = hartree_reference(exp)
    rng = np.random.default_rng(0)
    for t, psi, _ in _trajectory(exp, 3):
        gam = reduce(psi)
        p = projector(ref.at(t))
        d = trace_distance(gam, p)
        for _ in range(5):
            J = random_hermitian(rng, 4)
            gap = abs(observable_expectation(gam, J) - observable_expectation(p, J))
            assert gap <= np.linalg.norm(J, 2) * d + 1e-12


def test_budget_skip_with_notice(caplog):
    exp = _exp(n_list=(1, 2, 3, 40), max_dim=100)
    with caplog.at_level("WARNING"):
        res = run_factorized(exp)
    assert 40 in res.skipped and "budget" in res.skipped[40]
    assert {r.n for r in res.rows} == {1, 2, 3}
    assert "skipping" in caplog.text


def test_delta_limit_validation_and_free_case():
    g = Grid(1, 4)
    exp = _exp(pot=pair_potential(g, "kronecker_delta", coupling=0.0), coupling=0.0, times=(0.3,))
    assert max(r.distance for r in run_delta_limit(exp).rows) <= 1e-9
    with pytest.raises(ConfigError):
        run_delta_limit(_exp(coupling=1.0))
    with pytest.raises(ConfigError):
        run_delta_limit(_exp())


# -- fluctuation moments -------------------------------------------------------------

def test_fluctuation_moments_match_explicit_weyl():
    g = Grid(1, 3)
    rng = np.random.default_rng(5)
    basis = FockBasis(g, Cutoff(24))
    f = 0.5 * (rng.standard_normal(3) + 1j * rng.standard_normal(3))
    c = np.zeros(basis.dim, complex)
    c[: basis.offsets[4]] = rng.standard_normal(basis.offsets[4])
    psi = FockVector(basis, c / np.linalg.norm(c))
    shifted = weyl_apply(-f, psi)
    ref = [number_moment(shifted, j) / shifted.norm() ** 2 for j in (1, 2, 3)]
    got = fluctuation_moments(psi, f, 3)
    np.testing.assert_allclose(got, ref, rtol=1e-9, atol=1e-10)


def test_fluctuation_vacuum_for_coherent_state():
    g = Grid(1, 3)
    f = np.array([0.4, 0.3j, -0.2])
    psi = coherent_state(f, FockBasis(g, Cutoff(16)))
    assert max(fluctuation_moments(psi, f, 2)) <= max(1e-10, psi.leakage)
    om = vacuum(FockBasis(g, Cutoff(3)))
    assert fluctuation_moments(om, np.zeros(3), 2) == [0.0, 0.0]
    with pytest.raises(ConfigError):
        fluctuation_moments(om, np.zeros(3), 0)


def test_fluctuation_growth_small_run():
    exp = _exp(kind="coherent", times=(0.0, 0.25, 0.5), n_list=(1, 2, 3))
    res = fluctuation_growth(exp)
    for n in (1, 2, 3):
        assert res.moments[(n, 0.0)][0] <= 1e-9
        assert res.moments[(n, 0.5)][0] > res.moments[(n, 0.25)][0] > 0
        assert n in res.fits
    with pytest.raises(ConfigError):
        fluctuation_growth(_exp())
