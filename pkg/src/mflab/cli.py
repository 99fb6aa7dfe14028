"""Command-line runner: ``mflab <command> --config run.yaml --out runs/``.

Every run writes ``manifest.json``, one CSV per table and ``summary.json`` into
``<out>/<command>-<hash>``, where the hash covers the config and the seed.
Exit codes: 0 all configured assertions passed, 1 an assertion failed,
2 invalid configuration, 3 resource budget exceeded.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import (COMMANDS, SCHEMA_VERSION, Section, build_grid, build_initial, build_potential, config_hash,
                     load_config)
from .errors import BudgetError, ConfigError, DenseCapError, TruncationError

log = logging.getLogger("mflab")

EXIT_OK, EXIT_ASSERT, EXIT_CONFIG, EXIT_BUDGET = 0, 1, 2, 3


@dataclass
class RunOutput:
    tables: dict = field(default_factory=dict)  # name -> (header, rows)
    summary: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)  # (name, passed, detail)
    tolerances: dict = field(default_factory=dict)
    floor: float = 0.0
    leakage: float = 0.0
    extra_files: dict = field(default_factory=dict)  # name -> writer(path)

    def check(self, name, passed, detail):
        self.checks.append((name, bool(passed), detail))


@dataclass
class Context:
    workers: int = 1
    seed: int = 0
    dense_cap: int = 5000


def _tolerances(cfg: Section, *names) -> dict:
    t = cfg.section("tolerances")
    return {n: t.number(n, positive=True) for n in names}


def _assertions(cfg: Section) -> Section:
    return cfg.section("assertions", required=False) or Section({}, "assertions")


# -- commands ------------------------------------------------------------------

def cmd_evolve_exact(cfg: Section, ctx: Context) -> RunOutput:
    from .fock import Cutoff, FockBasis, ManyBodyHamiltonian, coherent_cutoff, coherent_state, factorized_state
    from .fock import number_moment, save_fock_vector
    from .lattice import LatticeWavefunction
    from .marginals import reduce, save_marginal
    from .propagate import dense_expm_oracle, evolve

    grid = build_grid(cfg)
    pot = build_potential(cfg, grid, ctx.seed)
    phi = build_initial(cfg, grid)
    st = cfg.section("state")
    kind = st.string("kind", choices=("factorized", "coherent"))
    n = st.integer("n", positive=True)
    times = cfg.numbers("times", nonneg=True)
    tol = _tolerances(cfg, "propagator", "leakage")
    oracle = cfg.boolean("oracle", default=False, required=False)
    if kind == "factorized":
        psi = factorized_state(phi, n)
    else:
        basis = FockBasis(grid, Cutoff(coherent_cutoff(n)))
        psi = coherent_state(LatticeWavefunction(grid, math.sqrt(n) * phi.values), basis, tol=tol["leakage"])
    H = ManyBodyHamiltonian(psi.basis, pot, n_param=n)
    dense = H.to_dense(ctx.dense_cap) if oracle else None
    norm0, num0, e0 = psi.norm(), number_moment(psi), H.expectation(psi)
    rows, out = [], RunOutput(tolerances=tol, leakage=psi.leakage, floor=tol["propagator"])
    cur, t_prev = psi, 0.0
    worst = 0.0
    for t in sorted(times):
        cur = evolve(H, cur, t - t_prev, tol=tol["propagator"])
        t_prev = t
        e = H.expectation(cur)
        row = [t, cur.norm(), number_moment(cur), e, abs(cur.norm() - norm0), abs(number_moment(cur) - num0),
               abs(e - e0) / (1.0 + abs(e0))]
        if oracle:
            ref = dense_expm_oracle(dense, psi.coeffs, t, cap=ctx.dense_cap)
            row.append(float(np.max(np.abs(ref - cur.coeffs))))
        worst = max(worst, *row[4:7])
        rows.append(row)
    header = ["t", "norm", "number", "energy", "norm_error", "number_error", "energy_error"]
    if oracle:
        header.append("oracle_error")
    out.tables["trajectory"] = (header, rows)
    final, gamma = cur, reduce(cur, 1)
    out.extra_files["final_state.npz"] = lambda p: save_fock_vector(p, final)
    out.extra_files["gamma1.txt"] = lambda p: save_marginal(p, gamma)
    out.summary = {"basis": psi.basis.describe(), "max_conservation_error": worst,
                   "max_oracle_error": max((r[-1] for r in rows), default=0.0) if oracle else None}
    a = _assertions(cfg)
    if a.boolean("conservation", default=False, required=False):
        limit = 10 * tol["propagator"]
        out.check("conservation", worst <= limit, f"max error {worst!r} vs {limit!r}")
    if oracle and a.has("max_oracle_error"):
        lim = a.number("max_oracle_error", positive=True)
        err = out.summary["max_oracle_error"]
        out.check("oracle", err <= lim, f"max amplitude error {err!r} vs {lim!r}")
    return out


def _effective_config(cfg: Section, grid, pot):
    from .hartree import EffectiveEquationConfig

    if cfg.has("coupling"):
        return EffectiveEquationConfig.cubic(grid, cfg.number("coupling"), pot.external_values)
    return EffectiveEquationConfig.from_potential(pot)


def cmd_evolve_hartree(cfg: Section, ctx: Context) -> RunOutput:
    from .hartree import effective_evolve

    grid = build_grid(cfg)
    pot = build_potential(cfg, grid, ctx.seed)
    phi = build_initial(cfg, grid)
    times = cfg.numbers("times", nonneg=True)
    dt = cfg.number("dt", positive=True)
    tol = _tolerances(cfg, "hartree")
    ecfg = _effective_config(cfg, grid, pot)
    traj = effective_evolve(ecfg, phi, max(times), dt_target=dt, sample_times=times, tol=tol["hartree"])
    e0 = float(traj.energy[0])
    inv = [[float(t), float(m), float(e), abs(float(m) - 1.0), abs(float(e) - e0) / max(1.0, abs(e0))]
           for t, m, e in zip(traj.times, traj.mass, traj.energy)]
    amps = [[float(t), x, float(v.real), float(v.imag)] for t, s in zip(traj.times, traj.states)
            for x, v in enumerate(s)]
    out = RunOutput(tolerances=tol, floor=tol["hartree"])
    out.tables["invariants"] = (["t", "mass", "energy", "mass_error", "energy_drift"], inv)
    out.tables["amplitudes"] = (["t", "site", "re", "im"], amps)
    mass_err = max(r[3] for r in inv)
    drift = max(r[4] for r in inv)
    out.summary = {"mode": ecfg.mode, "dt_used": traj.dt, "max_mass_error": mass_err, "max_energy_drift": drift}
    a = _assertions(cfg)
    if a.has("max_mass_error"):
        lim = a.number("max_mass_error", positive=True)
        out.check("mass", mass_err <= lim, f"{mass_err!r} vs {lim!r}")
    if a.has("max_energy_drift"):
        lim = a.number("max_energy_drift", positive=True)
        out.check("energy", drift <= lim, f"{drift!r} vs {lim!r}")
    return out


def _experiment(cfg: Section, ctx: Context, kind: str):
    from .experiments import DEFAULT_MAX_DIM, ConvergenceExperiment

    grid = build_grid(cfg)
    pot = build_potential(cfg, grid, ctx.seed)
    phi = build_initial(cfg, grid)
    tol = _tolerances(cfg, "propagator", "hartree", "leakage")
    budget = cfg.section("budget", required=False)
    max_dim = budget.integer("max_dim", positive=True) if budget is not None else DEFAULT_MAX_DIM
    coupling = cfg.number("coupling") if cfg.has("coupling") else None
    exp = ConvergenceExperiment(grid, pot, phi, cfg.numbers("n_list", integer=True, positive=True),
                                cfg.numbers("sample_times", nonneg=True), state_kind=kind,
                                prop_tol=tol["propagator"], hartree_tol=tol["hartree"], leak_tol=tol["leakage"],
                                hartree_dt=cfg.number("hartree_dt", default=0.01, required=False, positive=True),
                                max_dim=max_dim, coupling=coupling)
    return exp, tol


def _convergence(cfg: Section, ctx: Context, kind: str) -> RunOutput:
    from .experiments import run_coherent, run_delta_limit, run_factorized

    exp, tol = _experiment(cfg, ctx, kind)
    if kind == "coherent":
        res = run_coherent(exp, ctx.workers)
    elif exp.coupling is not None:
        res = run_delta_limit(exp, ctx.workers)
    else:
        res = run_factorized(exp, ctx.workers)
    out = RunOutput(tolerances=tol, floor=res.floor, leakage=res.max_leakage)
    header = ["N", "t", "distance", "leakage", "norm_error", "number_error", "energy_error"]
    out.tables["distances"] = (header, [[r.n, r.t, r.distance, r.leakage, r.norm_error, r.number_error,
                                          r.energy_error] for r in res.rows])
    out.tables["fits"] = (["t", "slope", "intercept", "residual", "n_points"],
                          [[t, f.slope, f.intercept, f.residual, f.n_points] for t, f in res.fits.items()])
    out.summary = {"fits": {repr(t): f.as_dict() for t, f in res.fits.items()},
                   "skipped": {str(k): v for k, v in res.skipped.items()},
                   "floor": res.floor, "max_leakage": res.max_leakage}
    if res.skipped and any("budget" in v for v in res.skipped.values()) and not res.rows:
        raise BudgetError("every particle number exceeded the budget")
    a = _assertions(cfg)
    t_check = a.number("at_time", default=max(exp.sample_times), required=False)
    dist = {r.n: r.distance for r in res.rows if abs(r.t - t_check) < 1e-12}
    fit = res.fits.get(t_check)
    if a.boolean("decreasing", default=False, required=False):
        vals = [dist[n] for n in sorted(dist)]
        ok = len(vals) >= 2 and all(b < a_ for a_, b in zip(vals, vals[1:]))
        out.check("decreasing", ok, f"distances at t={t_check!r}: {vals}")
    if a.has("max_slope"):
        lim = a.number("max_slope")
        out.check("slope", fit is not None and fit.slope <= lim,
                  f"slope {fit.slope if fit else None!r} vs {lim!r}")
    if a.has("max_residual"):
        lim = a.number("max_residual", positive=True)
        out.check("fit_residual", fit is not None and fit.residual < lim,
                  f"residual {fit.residual if fit else None!r} vs {lim!r}")
    if a.has("max_leakage"):
        lim = a.number("max_leakage", positive=True)
        ok = res.max_leakage < lim and not any("leakage" in v for v in res.skipped.values())
        out.check("leakage", ok, f"max leakage {res.max_leakage!r} vs {lim!r}")
    return out


def cmd_converge_factorized(cfg, ctx):
    return _convergence(cfg, ctx, "factorized")


def cmd_converge_coherent(cfg, ctx):
    return _convergence(cfg, ctx, "coherent")


def cmd_fluctuations(cfg: Section, ctx: Context) -> RunOutput:
    from .experiments import fluctuation_growth

    exp, tol = _experiment(cfg, ctx, "coherent")
    j_max = cfg.integer("j_max", default=2, required=False, positive=True)
    res = fluctuation_growth(exp, j_max, ctx.workers)
    rows = [[n, t, j + 1, v] for (n, t), mom in res.moments.items() for j, v in enumerate(mom)]
    out = RunOutput(tolerances=tol, floor=exp.prop_tol, leakage=max(res.leakage.values(), default=0.0))
    out.tables["moments"] = (["N", "t", "j", "moment"], rows)
    out.tables["growth_fits"] = (["N", "rate", "prefactor", "residual"],
                                 [[n, f.rate, f.prefactor, f.residual] for n, f in sorted(res.fits.items())])
    spread = {}
    for t in exp.sample_times:
        vals = [mom[0] for (n, tt), mom in res.moments.items() if tt == t]
        if t > 0 and vals and min(vals) > 0:
            spread[t] = max(vals) / min(vals)
    out.summary = {"spread": {repr(t): s for t, s in spread.items()},
                   "fits": {str(n): f.as_dict() for n, f in res.fits.items()},
                   "skipped": {str(k): v for k, v in res.skipped.items()}}
    a = _assertions(cfg)
    if a.has("max_spread"):
        lim = a.number("max_spread", positive=True)
        worst = max(spread.values(), default=math.inf)
        out.check("n_uniformity", worst < lim, f"max spread {worst!r} vs {lim!r}")
    if a.has("max_fit_residual"):
        lim = a.number("max_fit_residual", positive=True)
        worst = max((f.residual for f in res.fits.values()), default=math.inf)
        out.check("exponential_fit", worst < lim, f"max residual {worst!r} vs {lim!r}")
    if a.has("max_leakage"):
        lim = a.number("max_leakage", positive=True)
        out.check("leakage", out.leakage < lim and not res.skipped, f"{out.leakage!r} vs {lim!r}")
    return out


def cmd_hierarchy(cfg: Section, ctx: Context) -> RunOutput:
    from .hartree import effective_evolve
    from .hierarchy import DensityFamily, infinite_hierarchy_residual, picard_iterate

    grid = build_grid(cfg)
    pot = build_potential(cfg, grid, ctx.seed)
    phi = build_initial(cfg, grid)
    tol = _tolerances(cfg, "hartree")
    ecfg = _effective_config(cfg, grid, pot)
    out = RunOutput(tolerances=tol, floor=tol["hartree"])
    a = _assertions(cfg)
    rs = cfg.section("residual", required=False)
    if rs is not None:
        k = rs.integer("k", default=1, required=False, positive=True)
        t = rs.number("t", positive=True)
        dts = sorted(rs.numbers("dts", positive=True), reverse=True)
        fine = min(dts)
        samples = np.round(np.arange(0, round(t / fine) + 1) * fine, 15)
        traj = effective_evolve(ecfg, phi, t, dt_target=fine, sample_times=samples, tol=tol["hartree"])
        res = [infinite_hierarchy_residual(ecfg, traj, k, t, dt) for dt in dts]
        orders = [math.log(r0 / r1) / math.log(d0 / d1) for r0, r1, d0, d1 in zip(res, res[1:], dts, dts[1:])]
        out.tables["residual"] = (["dt", "residual"], [[d, r] for d, r in zip(dts, res)])
        out.summary["residual"] = {"k": k, "t": t, "orders": orders, "finest": res[-1]}
        if a.has("order"):
            lo, hi = a.numbers("order")
            ok = bool(orders) and lo <= orders[-1] <= hi
            out.check("residual_order", ok, f"orders {orders} vs [{lo!r}, {hi!r}]")
        if a.has("max_residual"):
            lim = a.number("max_residual", positive=True)
            out.check("residual_floor", res[-1] <= lim, f"{res[-1]!r} vs {lim!r}")
    ps = cfg.section("picard", required=False)
    if ps is not None:
        kmax = ps.integer("k_max", positive=True)
        t = ps.number("t", default=1.0 / (16.0 * pot.sup_norm), required=False, positive=True)
        dt = ps.number("dt", positive=True)
        iters = ps.integer("iterations", positive=True)
        samples = np.round(np.arange(0, round(t / dt) + 1) * dt, 15)
        traj = effective_evolve(ecfg, phi, t, dt_target=dt, sample_times=samples, tol=tol["hartree"])
        fam = DensityFamily.factorized(phi.values, grid, kmax)
        pr = picard_iterate(ecfg, fam, t, iters, dt, closure=traj)
        ratios = pr.ratios()
        out.tables["picard"] = (["iteration", "increment"], [[i + 1, v] for i, v in enumerate(pr.increments)])
        out.summary["picard"] = {"t": t, "k_max": kmax, "closure_order": pr.closure_order,
                                 "increments": pr.increments, "ratios": ratios}
        if a.has("max_picard_ratio"):
            lim = a.number("max_picard_ratio", positive=True)
            worst = max(ratios, default=0.0)
            out.check("picard_contraction", bool(ratios) and worst <= lim, f"ratios {ratios} vs {lim!r}")
    return out


def cmd_scattering(cfg: Section, ctx: Context) -> RunOutput:
    from .scattering import radial_potential, scaled_scattering_length, solve_zero_energy, square_barrier_length

    p = cfg.section("potential")
    family = p.string("family", choices=("zero", "square_barrier", "gaussian", "soft_power", "table"))
    params = p.params()
    try:
        pot = radial_potential(family, **params)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"missing or invalid parameter {exc}", "potential") from None
    tol = _tolerances(cfg, "refine")
    r_max = cfg.number("r_max", required=False, positive=True)
    res = solve_zero_energy(pot, r_max=r_max, refine_tol=tol["refine"])
    out = RunOutput(tolerances=tol)
    out.summary = res.summary()
    a = _assertions(cfg)
    if family == "square_barrier":
        exact = square_barrier_length(p.number("V0", positive=True), p.number("R", positive=True))
        rel = abs(res.a0 - exact) / exact
        out.summary.update(closed_form=exact, closed_form_error=rel)
        if a.has("closed_form_rtol"):
            lim = a.number("closed_form_rtol", positive=True)
            out.check("closed_form", rel <= lim, f"relative error {rel!r} vs {lim!r}")
    if a.has("max_identity_gap"):
        lim = a.number("max_identity_gap", positive=True)
        out.check("integral_identity", res.identity_gap <= lim, f"{res.identity_gap!r} vs {lim!r}")
    if cfg.has("scale_n"):
        n = cfg.number("scale_n", positive=True)
        a_n, _, _ = scaled_scattering_length(pot, n, base=res, rtol=math.inf)
        err = abs(a_n - res.a0 / n) / abs(res.a0 / n) if res.a0 else abs(a_n)
        out.summary.update(scaled_n=n, scaled_a0=a_n, scaled_error=err)
        if a.has("scaled_rtol"):
            lim = a.number("scaled_rtol", positive=True)
            out.check("scaling", err <= lim, f"{err!r} vs {lim!r}")
    if cfg.has("born_lambdas"):
        rows = []
        for lam in cfg.numbers("born_lambdas", positive=True):
            r = solve_zero_energy(pot.scaled(lam), refine_tol=tol["refine"])
            rows.append([lam, r.a0, 8 * math.pi * r.a0, r.b0])
        out.tables["born"] = (["lambda", "a0", "eight_pi_a0", "b0"], rows)
        if a.boolean("born_bound", default=False, required=False):
            bad = [r[0] for r in rows if r[2] > r[3] * (1 + 1e-12)]
            out.check("born_bound", not bad, f"8 pi a0 <= b0 on {len(rows)} couplings; violations at {bad}")
    out.tables["profile"] = (["r", "f"], [[float(r), float(f)] for r, f in zip(res.r, res.f_profile)])
    return out


def cmd_probes(cfg: Section, ctx: Context) -> RunOutput:
    from .probes import probe_nabla_dot, probe_poincare, probe_sobolev_L1, trial_stability

    grid = build_grid(cfg)
    pot = build_potential(cfg, grid, ctx.seed)
    trials = cfg.integer("trials", positive=True)
    band = cfg.integer("band", default=1, required=False, positive=True)
    seed = ctx.seed
    rows, drifts = [], {}
    for name, fn in (("sobolev_L1", probe_sobolev_L1), ("nabla_dot", probe_nabla_dot)):
        r = fn(pot, 2 * trials, seed, band)
        drifts[name] = trial_stability(r, trials)
        rows.append([name, "", trials, r.prefix_max(trials)])
        rows.append([name, "", 2 * trials, r.max_ratio])
    ladder = {}
    pc = cfg.section("poincare", required=False)
    if pc is not None:
        alphas = sorted(pc.numbers("alphas", positive=True), reverse=True)
        kappa = pc.number("kappa", nonneg=True)
        profile = pc.string("profile", default="bump", required=False, choices=("bump", "gaussian"))
        res = probe_poincare(grid, alphas, kappa, 2 * trials, seed, band, profile)
        worst_drift = 0.0
        for a_ in alphas:
            r = res[a_]
            rows.append(["poincare", a_, trials, r.prefix_max(trials)])
            rows.append(["poincare", a_, 2 * trials, r.max_ratio])
            worst_drift = max(worst_drift, trial_stability(r, trials))
        drifts["poincare"] = worst_drift
        ladder = {f"{a0!r}->{a1!r}": res[a1].max_ratio / res[a0].max_ratio
                  for a0, a1 in zip(alphas, alphas[1:]) if res[a0].max_ratio > 0}
    out = RunOutput(tolerances={})
    out.tables["probes"] = (["probe", "alpha", "trials", "max_ratio"], rows)
    out.summary = {"drift": drifts, "ladder_inflation": ladder, "seed": seed}
    a = _assertions(cfg)
    if a.has("max_drift"):
        lim = a.number("max_drift", positive=True)
        worst = max(drifts.values())
        finite = all(np.isfinite(r[3]) for r in rows)
        out.check("trial_stability", finite and worst < lim, f"max drift {worst!r} vs {lim!r}")
    if a.has("max_ladder_inflation"):
        lim = a.number("max_ladder_inflation", positive=True)
        worst = max(ladder.values(), default=0.0)
        out.check("ladder", worst <= lim, f"max inflation {worst!r} vs {lim!r}")
    return out


HANDLERS = {
    "evolve-exact": cmd_evolve_exact,
    "evolve-hartree": cmd_evolve_hartree,
    "converge-factorized": cmd_converge_factorized,
    "converge-coherent": cmd_converge_coherent,
    "fluctuations": cmd_fluctuations,
    "hierarchy": cmd_hierarchy,
    "scattering": cmd_scattering,
    "probes": cmd_probes,
}


# -- persistence ------------------------------------------------------------------

def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def read_csv(path: Path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, [row for row in r]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


def run(command: str, config_path, out_dir, workers=1, seed=0, dense_cap=5000, assertions=True) -> int:
    """Run one configured command; returns the process exit code."""
    from .fock import ENUMERATION_VERSION

    try:
        data = load_config(config_path)
        cfg = Section(data)
        if workers < 1:
            raise ConfigError("must be at least 1", "--workers")
        ctx = Context(workers, seed, dense_cap)
        result = HANDLERS[command](cfg, ctx)
    except ConfigError as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BudgetError, DenseCapError, MemoryError) as exc:
        print(f"error: resource budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except TruncationError as exc:
        print(f"error: truncation: {exc}", file=sys.stderr)
        return EXIT_ASSERT
    digest = config_hash({"config": data, "seed": seed, "command": command})
    run_dir = Path(out_dir) / f"{command}-{digest[:12]}"
    run_dir.mkdir(parents=True, exist_ok=True)
    files = []
    for name, (header, rows) in result.tables.items():
        write_csv(run_dir / f"{name}.csv", header, rows)
        files.append(f"{name}.csv")
    for name, writer in result.extra_files.items():
        writer(run_dir / name)
        files.append(name)
    checks = [{"name": n, "passed": p, "detail": d} for n, p, d in result.checks]
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config": data,
        "config_hash": digest,
        "seed": seed,
        "workers": workers,
        "dense_cap": dense_cap,
        "package_version": __version__,
        "enumeration_version": ENUMERATION_VERSION,
        "tolerances": result.tolerances,
        "floor": result.floor,
        "leakage": result.leakage,
        "files": sorted(files + ["summary.json"]),
    }
    write_json(run_dir / "manifest.json", manifest)
    write_json(run_dir / "summary.json", {"command": command, "results": result.summary, "checks": checks})
    print(run_dir)
    for c in checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}: {c['detail']}")
    failed = [c["name"] for c in checks if not c["passed"]]
    if failed and assertions:
        print(f"assertion failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_ASSERT
    return EXIT_OK


# -- report ---------------------------------------------------------------------

def report(run_dirs, out_dir, plot=True) -> int:
    """Merge distance tables of convergence runs, refit, and render a log-log figure."""
    from .experiments import fit_rate

    try:
        manifests = []
        for d in run_dirs:
            path = Path(d) / "manifest.json"
            if not path.exists():
                raise ConfigError(f"{d} has no manifest.json", "run_dirs")
            manifests.append((Path(d), json.loads(path.read_text())))
        versions = {m.get("schema_version") for _, m in manifests}
        if versions != {SCHEMA_VERSION}:
            raise ConfigError(f"schema versions {sorted(map(str, versions))} differ from {SCHEMA_VERSION}",
                              "schema_version")
        merged, header, origin = {}, None, {}
        for d, m in manifests:
            if not (d / "distances.csv").exists():
                raise ConfigError(f"{d} has no distances table", "run_dirs")
            h, rows = read_csv(d / "distances.csv")
            if header is not None and h != header:
                raise ConfigError(f"{d} has table columns {h}, expected {header}", "run_dirs")
            header = h
            for row in rows:
                key = (int(row[0]), float(row[1]))
                if key in merged and merged[key] != row:
                    raise ConfigError(f"conflicting rows for N={key[0]}, t={key[1]!r}: "
                                      f"{origin[key]} has distance {merged[key][2]}, {d} has {row[2]}", "run_dirs")
                merged[key] = row
                origin[key] = str(d)
    except ConfigError as exc:
        print(f"error: cannot merge runs: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    keys = sorted(merged)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "merged.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k in keys:
            w.writerow(merged[k])
    floors = {str(d): float(m.get("floor", 0.0)) for d, m in manifests}
    floor = max(floors.values(), default=0.0)
    fits, flagged = {}, set()
    for t in sorted({k[1] for k in keys}):
        pts = [(k[0], float(merged[k][2])) for k in keys if k[1] == t]
        for n, dist in pts:
            if t > 0 and dist <= 10 * floor:
                flagged.add(origin[(n, t)])
        try:
            fits[repr(t)] = fit_rate(pts, floor, t).as_dict()
        except ConfigError as exc:
            fits[repr(t)] = {"refused": str(exc)}
    summary = {"runs": [str(d) for d, _ in manifests], "floor": floor, "fits": fits,
               "floor_contaminated": sorted(flagged)}
    write_json(out / "summary.json", summary)
    if plot:
        _plot(merged, keys, out / "distances.png")
    print(out)
    for run_dir in sorted(flagged):
        print(f"warning: {run_dir} has distances at the numerical floor")
    return EXIT_OK


def _plot(merged, keys, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    for t in sorted({k[1] for k in keys}):
        pts = [(k[0], float(merged[k][2])) for k in keys if k[1] == t and float(merged[k][2]) > 0]
        if len(pts) < 2:
            continue
        ns, ds = zip(*pts)
        ax.loglog(ns, ds, "o-", label=f"t = {t:g}")
    ax.set_xlabel("N")
    ax.set_ylabel("trace distance")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)


# -- entry point -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mflab", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"mflab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=HANDLERS[name].__doc__ or name)
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--out", default="runs", help="parent directory for run outputs")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--dense-cap", type=int, default=5000)
        p.add_argument("--assert", dest="assertions", action=argparse.BooleanOptionalAction, default=True,
                       help="exit 1 when a configured assertion fails (default on)")
        p.add_argument("-v", "--verbose", action="store_true")
    p = sub.add_parser("report", help="merge convergence runs into one table and figure")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", default="report")
    p.add_argument("--no-plot", dest="plot", action="store_false")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "report":
        return report(args.run_dirs, args.out, args.plot)
    return run(args.command, args.config, args.out, args.workers, args.seed, args.dense_cap, args.assertions)


if __name__ == "__main__":
    sys.exit(main())
