"""Acceptance criteria 1-10, each at its stated tolerance.

Every test records one line in ``RESULTS``; the lines are printed as a
PASS/FAIL block when the module finishes (also when run as a script).
Criteria 5 and 6 share one exact coherent run per N and take several
minutes; they carry the ``slow`` marker.
"""

import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from mflab.cli import run
from mflab.experiments import ConvergenceExperiment, coherent_study, run_factorized
from mflab.fock import (Cutoff, FixedN, FockBasis, FockVector, ManyBodyHamiltonian, apply_annihilate,
                        apply_create, coherent_cutoff, coherent_state, factorized_state, number_moment, vacuum,
                        weyl_apply)
from mflab.hartree import EffectiveEquationConfig, effective_evolve
from mflab.hierarchy import (DensityFamily, collision_A, collision_B, free_evolution, infinite_hierarchy_residual,
                             picard_iterate)
from mflab.lattice import Grid, external_potential, initial_wavefunction, pair_potential
from mflab.marginals import trace_norm
from mflab.probes import probe_nabla_dot, probe_poincare, probe_sobolev_L1, trial_stability
from mflab.propagate import dense_expm_oracle, evolve
from mflab.scattering import radial_potential, scaled_scattering_length, solve_zero_energy

from oracles import SQUARE_BARRIER_A0_V2_R1, random_hermitian

CANNED = Path(__file__).resolve().parent / "configs"
RESULTS = {}


def record(n, ok, detail):
    RESULTS[n] = (bool(ok), detail)
    assert ok, f"criterion {n}: {detail}"


@pytest.fixture(scope="module", autouse=True)
def summary(request):
    yield
    rep = request.config.pluginmanager.get_plugin("terminalreporter")
    lines = [f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {d}" for n, (ok, d) in sorted(RESULTS.items())]
    for line in ["", "acceptance summary"] + lines:
        if rep is not None:
            rep.write_line(line)
        else:
            print(line)


def _packet(grid, center, width, momentum):
    return initial_wavefunction(grid, "gaussian_packet", center=center, width=width, momentum=momentum)


# 1 --------------------------------------------------------------------------------

def test_c01_oracle_propagation():
    start = time.perf_counter()
    worst = 0.0
    for m in (4, 6):
        grid = Grid(1, m)
        pot = pair_potential(grid, "random", amplitude=1.0, seed=7)
        H = ManyBodyHamiltonian(FockBasis(grid, FixedN(2)), pot)
        psi = factorized_state(_packet(grid, 1.0, 1.0, 0.5), 2)
        Hd = H.to_dense()
        for t in np.linspace(0.0, 1.0, 11):
            err = np.max(np.abs(evolve(H, psi, t).coeffs - dense_expm_oracle(Hd, psi, t).coeffs))
            worst = max(worst, float(err))
    elapsed = time.perf_counter() - start
    record(1, worst <= 1e-8 and elapsed < 1.0,
           f"max amplitude error {worst:.2e} (limit 1e-8), runtime {elapsed:.2f} s (limit 1 s)")


# 2 --------------------------------------------------------------------------------

def test_c02_conservation():
    start = time.perf_counter()
    tol = 1e-10
    worst = {"norm": 0.0, "number": 0.0, "energy": 0.0}
    cases = []
    for m in (4, 6):
        grid = Grid(1, m)
        psi = factorized_state(_packet(grid, 1.0, 1.0, 0.5), 2)
        cases.append((grid, pair_potential(grid, "random", amplitude=1.0, seed=7), psi, 2))
    grid = Grid(1, 3)
    f = math.sqrt(2.0) * _packet(grid, 1.0, 1.0, 0.5).values
    cases.append((grid, pair_potential(grid, "gaussian", amplitude=1.0, width=1.0),
                  coherent_state(f, FockBasis(grid, Cutoff(coherent_cutoff(2.0)))), 2))
    for grid, pot, psi, n in cases:
        H = ManyBodyHamiltonian(psi.basis, pot, n_param=n)
        e0, n0 = H.expectation(psi), number_moment(psi)
        for t in (0.5, 1.0, 2.0):
            out = evolve(H, psi, t, tol=tol)
            worst["norm"] = max(worst["norm"], abs(out.norm() - psi.norm()) / tol)
            worst["number"] = max(worst["number"], abs(number_moment(out) - n0) / (tol * (1 + abs(n0))))
            worst["energy"] = max(worst["energy"], abs(H.expectation(out) - e0) / (tol * (1 + abs(e0))))
    exact_ok = max(worst.values()) <= 1.0

    grid = Grid(1, 16)
    ext = external_potential(grid, "harmonic", strength=0.01, center=8.0)
    cfg = EffectiveEquationConfig.from_potential(pair_potential(grid, "gaussian", external=ext,
                                                                amplitude=1.0, width=1.5))
    mass_err, drift = 0.0, 0.0
    for phi in (_packet(grid, 6.0, 2.0, 0.6), _packet(grid, 8.0, 1.0, -1.0)):
        traj = effective_evolve(cfg, phi, 2.0, sample_times=np.linspace(0, 2, 9))
        mass_err = max(mass_err, float(np.max(np.abs(traj.mass - 1.0))))
        drift = max(drift, float(np.max(np.abs(traj.energy - traj.energy[0])) / abs(traj.energy[0])))
    elapsed = time.perf_counter() - start
    ok = exact_ok and mass_err <= 1e-10 and drift <= 1e-6 and elapsed < 10.0
    record(2, ok, f"exact errors/tol norm {worst['norm']:.1e} number {worst['number']:.1e} "
                  f"energy {worst['energy']:.1e} (limit 1); Hartree mass {mass_err:.1e} (1e-10), "
                  f"energy {drift:.1e} (1e-6); runtime {elapsed:.1f} s (limit 10 s)")


# 3 --------------------------------------------------------------------------------

def test_c03_fock_algebra():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    grid = Grid(1, 3)
    basis = FockBasis(grid, Cutoff(5))
    n_tot = basis.totals()
    bound_gap, comm_err = -np.inf, 0.0
    for _ in range(200):
        f = rng.uniform(0.1, 2.0) * (rng.standard_normal(3) + 1j * rng.standard_normal(3))
        g = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        c = rng.standard_normal(basis.dim) + 1j * rng.standard_normal(basis.dim)
        c[basis.offsets[4]:] = 0  # headroom for one creation followed by one annihilation
        psi = FockVector(basis, c / np.linalg.norm(c))
        w = np.abs(psi.coeffs) ** 2
        nf = np.linalg.norm(f)
        bound_gap = max(bound_gap,
                        apply_annihilate(f, psi).norm() - nf * math.sqrt(np.sum(n_tot * w)),
                        apply_create(f, psi).norm() - nf * math.sqrt(np.sum((n_tot + 1) * w)))
        lhs = apply_annihilate(f, apply_create(g, psi)) - apply_create(g, apply_annihilate(f, psi))
        comm_err = max(comm_err, float(np.max(np.abs(lhs.coeffs - np.vdot(f, g) * psi.coeffs))))
    algebra_ok = bound_gap <= 1e-10 and comm_err <= 1e-10

    cb = FockBasis(grid, Cutoff(coherent_cutoff(3.0) + 6))
    coh = {}
    for _ in range(5):
        f = 0.4 * (rng.standard_normal(3) + 1j * rng.standard_normal(3))
        g = 0.4 * (rng.standard_normal(3) + 1j * rng.standard_normal(3))
        pf, pg = coherent_state(f, cb), coherent_state(g, cb)
        leak = max(pf.leakage, pg.leakage)
        lim = max(1e-8, leak)
        # i: W(f) W(g) Omega = exp(-i Im<f,g>) W(f+g) Omega
        wfg = weyl_apply(f, weyl_apply(g, vacuum(cb)))
        e1 = float(np.max(np.abs(wfg.coeffs - np.exp(-1j * np.vdot(f, g).imag) * coherent_state(f + g, cb).coeffs)))
        # iv: a(g) psi(f) = <g, f> psi(f), away from the cutoff sector
        top = cb.sector_slice(cb.n_top)
        ex = np.vdot(g, f) * pf.coeffs
        ex[top] = 0
        e4 = float(np.max(np.abs(apply_annihilate(g, pf).coeffs - ex)))
        # v: Poisson statistics of the number operator
        m2 = np.vdot(f, f).real
        e5 = max(abs(number_moment(pf, 1) - m2), abs(number_moment(pf, 2) - number_moment(pf, 1) ** 2 - m2))
        # vi: overlaps
        ov = np.exp(-0.5 * (np.vdot(f, f).real + np.vdot(g, g).real) + np.vdot(f, g))
        e6 = abs(np.vdot(pf.coeffs, pg.coeffs) - ov)
        for name, err in (("i", e1 / max(lim, wfg.leakage)), ("iv", e4 / lim), ("v", e5 / lim), ("vi", e6 / lim)):
            coh[name] = max(coh.get(name, 0.0), err)
    coh_ok = max(coh.values()) <= 1.0
    elapsed = time.perf_counter() - start
    record(3, algebra_ok and coh_ok and elapsed < 30.0,
           f"bound excess {bound_gap:.1e}, commutator error {comm_err:.1e} (limit 1e-10); coherent items "
           + ", ".join(f"{k} {v:.1e}" for k, v in coh.items()) + " x limit; "
           f"runtime {elapsed:.1f} s (limit 30 s)")


# 4 --------------------------------------------------------------------------------

def test_c04_factorized_convergence():
    grid = Grid(1, 8)
    pot = pair_potential(grid, "gaussian", amplitude=1.0, width=1.0)
    assert pot.sup_norm == pytest.approx(1.0)
    exp = ConvergenceExperiment(grid, pot, _packet(grid, 3.0, 1.2, 0.8), [2, 3, 4, 5, 6], [0.5])
    res = run_factorized(exp)
    d = res.distances(0.5)
    vals = [d[n] for n in sorted(d)]
    fit = res.fits.get(0.5)
    decreasing = len(vals) == 5 and all(b < a for a, b in zip(vals, vals[1:]))
    ok = decreasing and fit is not None and fit.slope <= -0.5 and fit.residual < 0.15
    record(4, ok, f"D(N) = {[f'{v:.4f}' for v in vals]}, strictly decreasing {decreasing}, "
                  f"slope {fit.slope:.3f} (limit -0.5), residual {fit.residual:.4f} (limit 0.15)")


# 5 and 6 ----------------------------------------------------------------------------

@pytest.fixture(scope="module")
def coherent_runs():
    grid = Grid(1, 6)
    pot = pair_potential(grid, "gaussian", amplitude=1.0, width=1.0)
    exp = ConvergenceExperiment(grid, pot, _packet(grid, 2.0, 1.0, 0.5), [1, 2, 4, 8], [0.25, 0.5, 1.0],
                                state_kind="coherent")
    start = time.perf_counter()
    dist, fluct = coherent_study(exp, j_max=1)
    return dist, fluct, time.perf_counter() - start


@pytest.mark.slow
def test_c05_coherent_rate(coherent_runs):
    dist, _, elapsed = coherent_runs
    fit = dist.fits.get(0.5)
    ok = not dist.skipped and fit is not None and fit.n_points == 4 and fit.slope <= -0.8 \
        and dist.max_leakage < 1e-8
    record(5, ok, f"slope {fit.slope:.3f} at t = 0.5 (limit -0.8), max leakage {dist.max_leakage:.1e} "
                  f"(limit 1e-8), skipped {sorted(dist.skipped)}, runtime {elapsed:.0f} s")


@pytest.mark.slow
def test_c06_fluctuation_bound(coherent_runs):
    _, fl, _ = coherent_runs
    spreads = {}
    for t in (0.25, 0.5, 1.0):
        vals = [fl.moments[(n, t)][0] for n in (2, 4, 8)]
        spreads[t] = max(vals) / min(vals)
    resid = {n: fl.fits[n].residual for n in (2, 4, 8)}
    ok = max(spreads.values()) < 2.0 and max(resid.values()) < 0.3
    record(6, ok, "spread across N " + ", ".join(f"t={t}: {s:.3f}" for t, s in spreads.items())
                  + " (limit 2); exponential fit residuals "
                  + ", ".join(f"N={n}: {r:.3f}" for n, r in resid.items()) + " (limit 0.3)")


# 7 --------------------------------------------------------------------------------

def test_c07_hierarchy():
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    g4 = Grid(1, 4)
    pot4 = pair_potential(g4, "random", amplitude=1.0, seed=3)
    cfg4 = EffectiveEquationConfig.from_potential(pot4)
    excess = -np.inf
    for _ in range(100):
        k = int(rng.integers(1, 3))
        gk = random_hermitian(rng, 4**k, rng.uniform(0.1, 3.0))
        gk1 = random_hermitian(rng, 4 ** (k + 1), rng.uniform(0.1, 3.0))
        tg = trace_norm(gk)
        excess = max(excess,
                     abs(trace_norm(free_evolution(cfg4, k, rng.uniform(0, 2), gk)) - tg),
                     trace_norm(collision_A(pot4, k, gk)) - k * k * pot4.sup_norm * tg,
                     trace_norm(collision_B(pot4, k, gk1)) - 2 * k * pot4.sup_norm * trace_norm(gk1))
    bounds_ok = excess <= 1e-10

    grid = Grid(1, 8)
    pot = pair_potential(grid, "gaussian", amplitude=1.0, width=1.0)
    cfg = EffectiveEquationConfig.from_potential(pot)
    phi = _packet(grid, 3.0, 1.2, 0.8)
    t = 0.25
    fine = 1 / 512
    samples = np.round(np.arange(0, round(t / fine) + 1) * fine, 15)
    traj = effective_evolve(cfg, phi, t, dt_target=fine, sample_times=samples, tol=1e-11)
    dts = [1 / 64, 1 / 128, 1 / 256, 1 / 512]
    res = [infinite_hierarchy_residual(cfg, traj, 1, t, dt) for dt in dts]
    order = math.log2(res[-2] / res[-1])

    tp = 1.0 / (16.0 * pot.sup_norm)
    samples = np.round(np.arange(0, round(tp / fine) + 1) * fine, 15)
    ptraj = effective_evolve(cfg, phi, tp, dt_target=fine, sample_times=samples, tol=1e-11)
    pr = picard_iterate(cfg, DensityFamily.factorized(phi.values, grid, 2), tp, 4, fine, closure=ptraj)
    ratios = pr.ratios()
    elapsed = time.perf_counter() - start
    ok = bounds_ok and abs(order - 2.0) <= 0.3 and res[-1] <= 1e-5 and ratios and max(ratios) <= 0.6 \
        and elapsed < 60
    record(7, ok, f"bound excess {excess:.1e} (limit 1e-10); residual order {order:.3f} (2 +- 0.3), "
                  f"residual at dt=1/512 {res[-1]:.2e} (limit 1e-5); Picard ratios "
                  f"{[f'{r:.3g}' for r in ratios]} (limit 0.6); runtime {elapsed:.1f} s (limit 60 s)")


# 8 --------------------------------------------------------------------------------

def test_c08_scattering():
    start = time.perf_counter()
    pot = radial_potential("square_barrier", V0=2.0, R=1.0)
    res = solve_zero_energy(pot, refine_tol=1e-10)
    rel = abs(res.a0 - SQUARE_BARRIER_A0_V2_R1) / SQUARE_BARRIER_A0_V2_R1
    a4, _, _ = scaled_scattering_length(pot, 4, base=res, rtol=math.inf)
    scale_err = abs(a4 - res.a0 / 4) / (res.a0 / 4)
    lams = [0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0]
    born = [solve_zero_energy(pot.scaled(lam)) for lam in lams]
    born_ok = all(8 * math.pi * r.a0 <= r.b0 for r in born)
    elapsed = time.perf_counter() - start
    ok = rel <= 1e-6 and res.identity_gap <= 1e-6 and scale_err <= 1e-8 and born_ok and elapsed < 5
    record(8, ok, f"closed-form error {rel:.1e} (1e-6), identity gap {res.identity_gap:.1e} (1e-6), "
                  f"n=4 scaling error {scale_err:.1e} (1e-8), 8 pi a0 <= b0 on {len(lams)} couplings "
                  f"{born_ok}; runtime {elapsed:.2f} s (limit 5 s)")


# 9 --------------------------------------------------------------------------------

def test_c09_probes():
    start = time.perf_counter()
    grid = Grid(3, 6)
    pot = pair_potential(grid, "gaussian", amplitude=1.0, width=1.0)
    trials = 100
    drift, finite = {}, True
    for name, fn in (("sobolev_L1", probe_sobolev_L1), ("nabla_dot", probe_nabla_dot)):
        r = fn(pot, 2 * trials, seed=0)
        finite &= bool(np.all(np.isfinite(r.ratios)))
        drift[name] = trial_stability(r, trials)
    alphas = [4.0, 2.0]  # dyadic ladder down to 2h
    pc = probe_poincare(grid, alphas, kappa=0.25, trials=2 * trials, seed=0)
    for a in alphas:
        finite &= bool(np.all(np.isfinite(pc[a].ratios)))
        drift[f"poincare a={a:g}"] = trial_stability(pc[a], trials)
    inflation = max(pc[b].max_ratio / pc[a].max_ratio for a, b in zip(alphas, alphas[1:]))
    elapsed = time.perf_counter() - start
    ok = finite and max(drift.values()) < 2.0 and inflation <= 1.5 and elapsed < 120
    record(9, ok, "drift " + ", ".join(f"{k} {v:.3f}" for k, v in drift.items())
                  + f" (limit 2); ladder inflation {inflation:.3f} (limit 1.5); runtime {elapsed:.0f} s (120 s)")


# 10 -------------------------------------------------------------------------------

def test_c10_reproducibility(tmp_path):
    for sub in ("a", "b"):
        assert run("converge-factorized", CANNED / "pass.yaml", tmp_path / sub, workers=1, seed=11) == 0
    da = next((tmp_path / "a").iterdir())
    db = next((tmp_path / "b").iterdir())
    csvs = sorted(p.name for p in da.glob("*.csv"))
    identical = bool(csvs) and all((da / c).read_bytes() == (db / c).read_bytes() for c in csvs)
    codes = {name: run("converge-factorized", CANNED / f"{name}.yaml", tmp_path / name)
             for name in ("pass", "science_fail", "malformed")}
    ok = identical and codes == {"pass": 0, "science_fail": 1, "malformed": 2}
    record(10, ok, f"byte-identical CSVs {identical} ({', '.join(csvs)}); exit codes {codes} "
                   "(expected pass 0, science_fail 1, malformed 2)")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
