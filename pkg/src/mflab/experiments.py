"""Mean-field convergence experiments: exact many-body runs against the matched one-body equation."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import BudgetError, ConfigError, TruncationError
from .fock import (
    Cutoff,
    FockBasis,
    FockVector,
    ManyBodyHamiltonian,
    _annihilate_sector,
    _create_sector,
    _sector,
    coherent_cutoff,
    coherent_state,
    factorized_state,
    number_moment,
)
from .hartree import EffectiveEquationConfig, Trajectory, effective_evolve
from .lattice import Grid, LatticeWavefunction, PotentialSpec
from .marginals import projector, reduce, trace_distance
from .propagate import evolve

__all__ = [
    "ConvergenceExperiment",
    "DistanceRow",
    "RateFit",
    "ExpFit",
    "ExperimentResult",
    "FluctuationResult",
    "fit_rate",
    "fit_exponential",
    "hartree_reference",
    "run_factorized",
    "run_coherent",
    "run_delta_limit",
    "fluctuation_growth",
    "fluctuation_moments",
    "coherent_study",
]

log = logging.getLogger(__name__)

DEFAULT_MAX_DIM = 20_000_000


@dataclass
class ConvergenceExperiment:
    """One convergence study: a potential, an initial orbital and a ladder of particle numbers.

    ``coupling`` switches the reference equation to the cubic one with
    ``sigma = coupling`` (the on-site interaction limit); otherwise the
    reference is the Hartree equation with the same pair potential.
    """

    grid: Grid
    pot: PotentialSpec
    phi0: LatticeWavefunction
    n_list: list
    sample_times: list
    state_kind: str = "factorized"
    prop_tol: float = 1e-10
    hartree_tol: float = 1e-10
    hartree_dt: float = 0.01
    leak_tol: float = 1e-8
    max_dim: int = DEFAULT_MAX_DIM
    cutoff_margin: int = 0
    coupling: float = None

    def __post_init__(self):
        n_list = [int(n) for n in self.n_list]
        if len(n_list) < 3:
            raise ConfigError("need at least three particle numbers", "n_list")
        if any(b <= a for a, b in zip(n_list, n_list[1:])) or n_list[0] < 1:
            raise ConfigError("particle numbers must be positive and strictly increasing", "n_list")
        times = [float(t) for t in self.sample_times]
        if not times or any(t < 0 for t in times) or any(b <= a for a, b in zip(times, times[1:])):
            raise ConfigError("sample times must be non-negative and strictly increasing", "sample_times")
        if self.state_kind not in ("factorized", "coherent"):
            raise ConfigError(f"unknown state kind {self.state_kind!r}", "state_kind")
        if self.pot.grid != self.grid or self.phi0.grid != self.grid:
            raise ConfigError("potential and initial state must live on the experiment grid", "grid")
        if abs(self.phi0.norm() - 1.0) > 1e-10:
            raise ConfigError("initial orbital must be normalized", "phi0")
        for name in ("prop_tol", "hartree_tol", "leak_tol"):
            if getattr(self, name) <= 0:
                raise ConfigError("tolerances must be positive", name)
        self.n_list = n_list
        self.sample_times = times

    def cutoff(self, n: int) -> int:
        return coherent_cutoff(n) + self.cutoff_margin

    def basis_dim(self, n: int) -> int:
        modes = self.grid.sites
        if self.state_kind == "factorized":
            return _sector(modes, n).dim
        return math.comb(self.cutoff(n) + modes, modes)

    def effective_config(self) -> EffectiveEquationConfig:
        if self.coupling is not None:
            return EffectiveEquationConfig.cubic(self.grid, self.coupling, self.pot.external_values)
        return EffectiveEquationConfig.from_potential(self.pot)

    @property
    def floor(self) -> float:
        return self.prop_tol


@dataclass
class DistanceRow:
    n: int
    t: float
    distance: float
    leakage: float
    norm_error: float
    number_error: float
    energy_error: float

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class RateFit:
    """Least squares of ``log D`` against ``log N``; ``residual`` is the RMS log residual."""

    time: float
    ns: list
    distances: list
    slope: float
    intercept: float
    residual: float
    floor: float = 0.0
    excluded: list = field(default_factory=list)

    @property
    def n_points(self) -> int:
        return len(self.ns)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["n_points"] = self.n_points
        return d


@dataclass
class ExpFit:
    """``y ~ C exp(K t)``; ``residual`` is ``||fit - data|| / ||data||``."""

    rate: float
    prefactor: float
    residual: float

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class ExperimentResult:
    rows: list
    fits: dict
    skipped: dict = field(default_factory=dict)
    floor: float = 0.0
    max_leakage: float = 0.0

    def distances(self, t: float) -> dict:
        return {r.n: r.distance for r in self.rows if abs(r.t - t) < 1e-12}


@dataclass
class FluctuationResult:
    """``moments[(N, t)] = [<N^1>, ..., <N^j_max>]`` of the fluctuation vector."""

    moments: dict
    fits: dict
    leakage: dict
    skipped: dict = field(default_factory=dict)

    def series(self, n: int, j: int = 1):
        keys = sorted(t for (m, t) in self.moments if m == n)
        return np.array(keys), np.array([self.moments[(n, t)][j - 1] for t in keys])


# -- fitting ----------------------------------------------------------------

def fit_rate(points, floor: float = 0.0, time: float = float("nan")) -> RateFit:
    """Ordinary least squares on ``(log N, log D)``.

    Points with ``D <= 10 * floor`` sit at the numerical floor and are dropped
    (logged); fewer than three remaining points is a refusal.
    """
    pts = sorted((int(n), float(d)) for n, d in points)
    keep = [(n, d) for n, d in pts if d > 10.0 * floor and d > 0]
    excluded = [n for n, d in pts if not (d > 10.0 * floor and d > 0)]
    if excluded:
        log.warning("fit_rate: excluding N=%s at the numerical floor %.1e", excluded, floor)
    if len(keep) < 3:
        raise ConfigError(f"rate fit needs at least 3 points above the floor, got {len(keep)}", "n_list")
    x = np.log([n for n, _ in keep])
    y = np.log([d for _, d in keep])
    a = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(a, y, rcond=None)
    resid = float(np.sqrt(np.mean((a @ [slope, intercept] - y) ** 2)))
    return RateFit(float(time), [n for n, _ in keep], [d for _, d in keep], float(slope), float(intercept),
                   resid, float(floor), excluded)


def fit_exponential(times, values) -> ExpFit:
    """Fit ``C e^{K t}`` by least squares on ``log y`` over the positive samples."""
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    ok = y > 0
    if ok.sum() < 2:
        raise ConfigError("exponential fit needs at least two positive samples")
    a = np.column_stack([t[ok], np.ones(ok.sum())])
    (k, logc), *_ = np.linalg.lstsq(a, np.log(y[ok]), rcond=None)
    fit = np.exp(logc + k * t[ok])
    resid = float(np.linalg.norm(fit - y[ok]) / np.linalg.norm(y[ok]))
    return ExpFit(float(k), float(np.exp(logc)), resid)


# -- runs -------------------------------------------------------------------

def hartree_reference(exp: ConvergenceExperiment) -> Trajectory:
    t_end = max(exp.sample_times)
    return effective_evolve(exp.effective_config(), exp.phi0, t_end, dt_target=exp.hartree_dt,
                            sample_times=exp.sample_times, tol=exp.hartree_tol)


def _initial_state(exp: ConvergenceExperiment, n: int) -> FockVector:
    if exp.state_kind == "factorized":
        return factorized_state(exp.phi0, n)
    basis = FockBasis(exp.grid, Cutoff(exp.cutoff(n)))
    f = LatticeWavefunction(exp.grid, math.sqrt(n) * exp.phi0.values)
    return coherent_state(f, basis, tol=exp.leak_tol)


def _trajectory(exp: ConvergenceExperiment, n: int):
    """Yield ``(t, psi_t, row_stats)`` along the sample times of one exact run."""
    psi = _initial_state(exp, n)
    H = ManyBodyHamiltonian(psi.basis, exp.pot, n_param=n)
    norm0 = psi.norm()
    num0 = number_moment(psi)
    e0 = H.expectation(psi)
    t_prev = 0.0
    for t in exp.sample_times:
        if t > t_prev:
            psi = evolve(H, psi, t - t_prev, tol=exp.prop_tol)
            t_prev = t
        stats = dict(norm_error=abs(psi.norm() - norm0), number_error=abs(number_moment(psi) - num0),
                     energy_error=abs(H.expectation(psi) - e0) / (1.0 + abs(e0)))
        yield t, psi, stats


def _check_budget(exp: ConvergenceExperiment, n: int):
    dim = exp.basis_dim(n)
    if dim > exp.max_dim:
        raise BudgetError(f"N={n}: basis dimension {dim} exceeds budget {exp.max_dim}")
    return dim


def _distance_rows(exp: ConvergenceExperiment, n: int, ref: Trajectory) -> list:
    rows = []
    for t, psi, stats in _trajectory(exp, n):
        gamma = reduce(psi, 1)
        d = trace_distance(gamma, projector(ref.at(t), 1))
        rows.append(DistanceRow(n, t, d, psi.leakage, **stats))
    return rows


def _map(fn, args, workers: int):
    if workers <= 1 or len(args) <= 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, *a) for a in args]
        return [f.result() for f in futures]


def _budget_filter(exp: ConvergenceExperiment):
    ok, skipped = [], {}
    for n in exp.n_list:
        try:
            _check_budget(exp, n)
            ok.append(n)
        except BudgetError as exc:
            log.warning("skipping %s", exc)
            skipped[n] = str(exc)
    return ok, skipped


def _distance_worker(exp, n, ref):
    try:
        return n, _distance_rows(exp, n, ref), None
    except TruncationError as exc:
        return n, [], f"leakage {exc.leaked:.2e} above tolerance: {exc}"


def _run_distances(exp: ConvergenceExperiment, workers: int = 1) -> ExperimentResult:
    ref = hartree_reference(exp)
    ns, skipped = _budget_filter(exp)
    rows = []
    for n, r, err in _map(_distance_worker, [(exp, n, ref) for n in ns], workers):
        if err is not None:
            log.warning("N=%d aborted: %s", n, err)
            skipped[n] = err
        rows.extend(r)
    rows.sort(key=lambda r: (r.n, r.t))
    return _distance_result(exp, rows, skipped)


def _distance_result(exp: ConvergenceExperiment, rows: list, skipped: dict) -> ExperimentResult:
    max_leak = max((r.leakage for r in rows), default=0.0)
    floor = max(exp.prop_tol, max_leak)
    fits = {}
    for t in exp.sample_times:
        pts = [(r.n, r.distance) for r in rows if r.t == t]
        try:
            fits[t] = fit_rate(pts, floor, t)
        except ConfigError as exc:
            log.info("no rate fit at t=%g: %s", t, exc)
    return ExperimentResult(rows, fits, skipped, floor, max_leak)


def run_factorized(exp: ConvergenceExperiment, workers: int = 1) -> ExperimentResult:
    """Distances ``Tr|gamma^(1)_{N,t} - |phi_t><phi_t||`` for product initial data and their rate fits."""
    if exp.state_kind != "factorized":
        raise ConfigError("run_factorized needs state_kind 'factorized'", "state_kind")
    return _run_distances(exp, workers)


def run_coherent(exp: ConvergenceExperiment, workers: int = 1) -> ExperimentResult:
    """As :func:`run_factorized` for coherent initial data ``W(sqrt(N) phi) Omega`` on a cutoff basis."""
    if exp.state_kind != "coherent":
        raise ConfigError("run_coherent needs state_kind 'coherent'", "state_kind")
    return _run_distances(exp, workers)


def run_delta_limit(exp: ConvergenceExperiment, workers: int = 1) -> ExperimentResult:
    """Factorized run with an on-site pair potential compared against the cubic equation."""
    if exp.coupling is None:
        raise ConfigError("the delta-limit run needs the on-site coupling", "coupling")
    vals = exp.pot.pair_values
    if np.any(vals[1:] != 0) or not math.isclose(vals[0], exp.coupling, rel_tol=0, abs_tol=1e-14):
        raise ConfigError("pair potential must be the coupling times the Kronecker delta", "potential")
    return run_factorized(exp, workers)


# -- fluctuations -------------------------------------------------------------

def _apply_shifted_number(vec: dict, f: np.ndarray, modes: int) -> dict:
    """``M v`` with ``M = sum_x (a*_x - conj f_x)(a_x - f_x) = N - a*(f) - a(f) + ||f||^2``.

    ``vec`` maps particle numbers to sector arrays; the result reaches one
    sector further up.
    """
    f2 = float(np.vdot(f, f).real)
    top = max(vec)
    out = {}
    for n in range(0, top + 2):
        acc = None
        if n in vec:
            acc = (n + f2) * vec[n]
        if n - 1 in vec:
            c = _create_sector(modes, n - 1, vec[n - 1], f)
            acc = -c if acc is None else acc - c
        if n + 1 in vec:
            a = _annihilate_sector(modes, n + 1, vec[n + 1], f)
            acc = -a if acc is None else acc - a
        if acc is not None:
            out[n] = acc
    return out


def _dot(u: dict, v: dict) -> complex:
    return sum(np.vdot(u[n], v[n]) for n in u if n in v)


def fluctuation_moments(psi: FockVector, f, j_max: int = 2) -> list:
    """``<Psi, N^j Psi> / ||Psi||^2`` for ``Psi = W(f)* psi`` and ``j = 1..j_max``.

    Uses ``W(f) N W(f)* = M`` (see :func:`_apply_shifted_number`), so no Weyl
    operator is ever formed: ``<Psi, N^j Psi> = <psi, M^j psi>``.  The shifted
    vectors are carried on extra sectors above the cutoff.
    """
    if j_max < 1:
        raise ConfigError("j_max must be at least 1", "j_max")
    basis = psi.basis
    f = np.asarray(getattr(f, "values", f), dtype=complex)
    vecs = [{n: psi.sector(n) for n in basis.numbers}]
    for _ in range((j_max + 1) // 2):
        vecs.append(_apply_shifted_number(vecs[-1], f, basis.modes))
    norm2 = float(_dot(vecs[0], vecs[0]).real)
    out = []
    for j in range(1, j_max + 1):
        lo, hi = j // 2, j - j // 2
        out.append(float(_dot(vecs[lo], vecs[hi]).real) / norm2)
    return out


def _coherent_worker(exp, n, ref, j_max, distances):
    rows, moments = [], {}
    try:
        for t, psi, stats in _trajectory(exp, n):
            phi_t = ref.at(t)
            if distances:
                d = trace_distance(reduce(psi, 1), projector(phi_t, 1))
                rows.append(DistanceRow(n, t, d, psi.leakage, **stats))
            if j_max:
                moments[t] = (fluctuation_moments(psi, math.sqrt(n) * phi_t.values, j_max), psi.leakage)
        return n, rows, moments, None
    except TruncationError as exc:
        return n, [], {}, f"leakage {exc.leaked:.2e} above tolerance: {exc}"


def _fluctuation_result(exp, outputs, skipped) -> FluctuationResult:
    moments, leakage, fits = {}, {}, {}
    for n, _, res, err in outputs:
        if err is not None or not res:
            continue
        leakage[n] = max(leak for _, leak in res.values())
        for t, (mom, _) in res.items():
            moments[(n, t)] = mom
        ts = [t for t in sorted(res) if t > 0]
        if len(ts) >= 2:
            try:
                fits[n] = fit_exponential(ts, [res[t][0][0] for t in ts])
            except ConfigError as exc:
                log.info("no exponential fit for N=%d: %s", n, exc)
    return FluctuationResult(dict(sorted(moments.items())), fits, leakage, dict(skipped))


def coherent_study(exp: ConvergenceExperiment, j_max: int = 2, workers: int = 1):
    """Distances and fluctuation moments from a single exact run per ``N``.

    Returns ``(ExperimentResult, FluctuationResult)``; equivalent to calling
    :func:`run_coherent` and :func:`fluctuation_growth` but evolves once.
    """
    if exp.state_kind != "coherent":
        raise ConfigError("coherent runs need state_kind 'coherent'", "state_kind")
    if j_max < 0:
        raise ConfigError("j_max must be non-negative", "j_max")
    ref = hartree_reference(exp)
    ns, skipped = _budget_filter(exp)
    outputs = _map(_coherent_worker, [(exp, n, ref, j_max, True) for n in ns], workers)
    for n, _, _, err in outputs:
        if err is not None:
            log.warning("N=%d aborted: %s", n, err)
            skipped[n] = err
    rows = sorted((r for _, rs, _, _ in outputs for r in rs), key=lambda r: (r.n, r.t))
    dist = _distance_result(exp, rows, skipped)
    fluct = _fluctuation_result(exp, outputs, skipped) if j_max else None
    return dist, fluct


def fluctuation_growth(exp: ConvergenceExperiment, j_max: int = 2, workers: int = 1) -> FluctuationResult:
    """Number moments of the fluctuation vector ``W(sqrt(N) phi_t)* e^{-iHt} W(sqrt(N) phi) Omega``.

    All moments are insensitive to the global phase of the exact state.  The
    first moment is fitted to ``C e^{K t}`` per ``N`` over the positive sample
    times.
    """
    if exp.state_kind != "coherent":
        raise ConfigError("fluctuations need state_kind 'coherent'", "state_kind")
    if j_max < 1:
        raise ConfigError("j_max must be at least 1", "j_max")
    ref = hartree_reference(exp)
    ns, skipped = _budget_filter(exp)
    outputs = _map(_coherent_worker, [(exp, n, ref, j_max, False) for n in ns], workers)
    for n, _, _, err in outputs:
        if err is not None:
            log.warning("N=%d aborted: %s", n, err)
            skipped[n] = err
    return _fluctuation_result(exp, outputs, skipped)
