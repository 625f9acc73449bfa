"""
Invariant registry behind ``jumpns verify``.

Every check is a function of its tolerance returning the measured quantity,
a pass flag and a dict of details. Checks use fixed seeds only, so a report
is a deterministic function of the code and the tolerances. Suites:
``spectral``, ``jump``, ``spde``, ``skeleton``, ``ldp``, ``cli``.
"""

from __future__ import annotations

import math
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import integrate

from .benchmarks import load_benchmark
from .config import (build_event, build_optimizer, build_probe, build_template,
                     parse_config)
from .ldp import (EventFunctional, importance_sampled_probability,
                  mc_probability, minimize_rate)
from .prm import (ControlField, MarkSpace, entropy_LT, girsanov_log_weight, sample_base_prm,
                  stream, thin)
from .skeleton import (SkeletonProblem, path_distance, skeleton_continuity_probe,
                       solve_deterministic, solve_skeleton)
from .spde import (NoiseCoefficient, SolverParams, energy_diagnostic, simulate,
                   simulate_ensemble)
from .spectral import (bilinear, inner_h, l4_norm, leray_project, make_grid,
                       norms, project, random_field, single_mode, to_physical)

SUITES = ("spectral", "jump", "spde", "skeleton", "ldp", "cli")


@dataclass(frozen=True)
class Invariant:
    name: str
    tolerance: float
    description: str
    fn: Callable[[float], tuple]

    @property
    def suite(self) -> str:
        return self.name.split(".", 1)[0]


REGISTRY: dict = {}


def invariant(name: str, tolerance: float, description: str):
    def wrap(fn):
        if name in REGISTRY:
            raise ValueError(f"duplicate invariant {name}")
        REGISTRY[name] = Invariant(name, tolerance, description, fn)
        return fn
    return wrap


def select(selectors) -> list:
    """Invariants matching any selector: ``all``, a suite name or a full name."""
    chosen = []
    for sel in selectors:
        if sel == "all":
            hits = list(REGISTRY.values())
        elif sel in SUITES:
            hits = [inv for inv in REGISTRY.values() if inv.suite == sel]
        elif sel in REGISTRY:
            hits = [REGISTRY[sel]]
        else:
            raise KeyError(f"unknown selector {sel!r}; use all, a suite ({', '.join(SUITES)}) "
                           "or an invariant name")
        chosen += [h for h in hits if h not in chosen]
    return chosen


def run(invariants, overrides: dict | None = None, echo=None) -> dict:
    overrides = overrides or {}
    checks = []
    for inv in invariants:
        tol = float(overrides.get(inv.name, inv.tolerance))
        t0 = time.perf_counter()
        try:
            value, passed, details = inv.fn(tol)
            error = None
        except Exception as exc:  # a crashing check is a failed check
            value, passed, details, error = math.nan, False, {}, f"{type(exc).__name__}: {exc}"
        elapsed = time.perf_counter() - t0
        entry = {"name": inv.name, "suite": inv.suite, "value": _plain(value), "tolerance": tol,
                 "passed": bool(passed), "details": _plain(details)}
        if error:
            entry["error"] = error
        checks.append(entry)
        if echo is not None:
            echo(f"[{'PASS' if passed else 'FAIL'}] {inv.name}: value={value:.4g} "
                 f"tol={tol:g} ({elapsed:.1f}s)" + (f" {error}" if error else ""))
    return {"passed": all(c["passed"] for c in checks), "checks": checks}


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    return x


# ---------------------------------------------------------------------------
# spectral


def _triples(n_modes=32, count=100):
    grid = make_grid(n_modes)
    for k in range(count):
        yield tuple(random_field(1000 + 3 * k + i, grid, 1.5 + 0.5 * i) for i in range(3))


@invariant("spectral.antisymmetry", 1e-10,
           "|<B(u,v),z> + <B(u,z),v>| relative to |u|_V |v|_V |z|_V, 100 triples, n=32")
def _antisymmetry(tol):
    worst = 0.0
    for u, v, z in _triples():
        val = inner_h(bilinear(u, v), z) + inner_h(bilinear(u, z), v)
        worst = max(worst, abs(val) / (norms(u).v * norms(v).v * norms(z).v))
    return worst, worst <= tol, {}


@invariant("spectral.null_form", 1e-10, "|<B(u,v),v>| relative to |u|_V |v|_V^2")
def _null_form(tol):
    worst = 0.0
    for u, v, _ in _triples():
        worst = max(worst, abs(inner_h(bilinear(u, v), v)) / (norms(u).v * norms(v).v ** 2))
    return worst, worst <= tol, {}


@invariant("spectral.leray_idempotence", 1e-15,
           "max |P(P r) - P r| / max |P r| over random raw fields (rounding level)")
def _idempotence(tol):
    grid = make_grid(32)
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(20):
        raw = np.fft.rfft2(rng.standard_normal((2, 32, 32))) / 32 ** 2 * grid.dealias_mask
        once = project(raw, grid)
        twice = project(once, grid)
        worst = max(worst, float(np.abs(twice - once).max() / np.abs(once).max()))
    return worst, worst <= tol, {}


@invariant("spectral.divergence_free", 1e-12, "max |k . c(k)| / max |c| after projection")
def _divergence(tol):
    grid = make_grid(32)
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(20):
        raw = np.fft.rfft2(rng.standard_normal((2, 32, 32))) / 32 ** 2
        u = leray_project(raw, grid)
        worst = max(worst, u.max_divergence() / float(np.abs(u.coeffs).max()))
    return worst, worst <= tol, {}


@invariant("spectral.parseval", 1e-10, "relative gap between spectral and quadrature H norms")
def _parseval(tol):
    grid = make_grid(32)
    worst = 0.0
    for k in range(20):
        u = random_field(50 + k, grid, 1.5)
        phys = to_physical(u.coeffs, grid)
        quad = math.sqrt(float((phys ** 2).sum()) * grid.area / grid.n_modes ** 2)
        worst = max(worst, abs(quad - norms(u).h) / norms(u).h)
    return worst, worst <= tol, {}


@invariant("spectral.ladyzhenskaya", 1e-6, "max of |u|_L4^4 / (2 |u|_H^2 |u|_V^2) - 1 (<= tol)")
def _ladyzhenskaya(tol):
    grid = make_grid(32)
    ratios = []
    for k in range(100):
        u = random_field(200 + k, grid, 1.1 + 0.02 * k)
        nt = norms(u)
        ratios.append(l4_norm(u) ** 4 / (2 * nt.h ** 2 * nt.v ** 2))
    worst = max(ratios) - 1.0
    return worst, worst <= tol, {"max_ratio": max(ratios)}


@invariant("spectral.linear_energy_decay_order", 0.2,
           "|log2(err(dt)/err(dt/2)) - 1| for the linear energy balance under backward Euler")
def _linear_energy_order(tol):
    grid = make_grid(16)
    u0 = random_field(9, grid, 1.5)
    errs = []
    for dt in (2e-3, 1e-3):
        p = SolverParams(dt=dt, T=0.2, nonlinear=False, scheme="imex_euler")
        d = energy_diagnostic(solve_deterministic(u0, p))
        e0, e1 = norms(u0).h ** 2, solve_deterministic(u0, p).norms[-1, 0] ** 2
        errs.append(abs(e1 - e0 + 2 * d["int_v2"]) / e0)
    order = math.log2(errs[0] / errs[1])
    return abs(order - 1.0), abs(order - 1.0) <= tol, {"errors": errs, "order": order}


# ---------------------------------------------------------------------------
# jump measure


@invariant("jump.entropy_values", 1e-12, "L_T(1), L_T(2), L_T(1/2) against quadrature")
def _entropy_values(tol):
    space = MarkSpace([1.0])
    errs = []
    for a in (1.0, 2.0, 0.5):
        oracle = integrate.quad(lambda t: a * math.log(a) - a + 1.0, 0.0, 1.0)[0]
        errs.append(abs(entropy_LT(ControlField.constant(1.0, 1, a), space) - oracle))
    exact_zero = entropy_LT(ControlField.constant(1.0, 1, 1.0), space) == 0.0
    return max(errs), max(errs) <= tol and exact_zero, {"errors": errs}


@invariant("jump.entropy_nonnegative", 0.0, "max(0, -min L_T) over 200 random controls")
def _entropy_nonneg(tol):
    rng = np.random.default_rng(1)
    space = MarkSpace([0.3, 1.2, 0.5])
    vals = []
    for _ in range(200):
        g = np.exp(rng.uniform(-math.log(20), math.log(20), (5, 3)))
        vals.append(entropy_LT(ControlField(np.linspace(0, 2.0, 6), g), space))
    violation = max(0.0, -min(vals))
    return violation, violation <= tol, {"min_entropy": min(vals)}


def _count_moments(counts):
    n = counts.size
    return counts.mean(), counts.var(ddof=1), n


@invariant("jump.thinning_law", 3.0, "max z-score of count mean/variance vs Poisson, 1e4 samples")
def _thinning_law(tol):
    space = MarkSpace([0.4, 0.6])
    a, T = 1.5, 1.0
    phi = ControlField.constant(T, 2, a)
    counts = np.array([len(thin(sample_base_prm(stream(77, i), T, space, 2.0), phi))
                       for i in range(10_000)], dtype=float)
    lam = T * a * space.total_mass
    m, v, n = _count_moments(counts)
    z_mean = (m - lam) / math.sqrt(lam / n)
    z_var = (v - lam) / math.sqrt((lam + 2 * lam * lam) / n)
    worst = max(abs(z_mean), abs(z_var))
    return worst, worst <= tol, {"mean": m, "var": v, "lambda": lam}


def _girsanov_setup():
    space = MarkSpace([0.6, 0.4])
    phi = ControlField([0.0, 0.5, 1.0], [[0.5, 2.0], [1.6, 0.7]])
    return space, phi, 0.5


@invariant("jump.girsanov_mean", 0.02, "|mean exp(log M) - 1| over 1e5 base samples")
def _girsanov_mean(tol):
    space, phi, eps = _girsanov_setup()
    r_max = phi.bound_n / eps
    w = np.array([math.exp(girsanov_log_weight(sample_base_prm(stream(2024, i), 1.0, space, r_max),
                                               phi, eps, space)) for i in range(100_000)])
    dev = abs(w.mean() - 1.0)
    return dev, dev <= tol, {"mean": w.mean(), "std_error": w.std(ddof=1) / math.sqrt(w.size)}


@invariant("jump.tilted_law", 3.0,
           "z-scores of M-reweighted count moments of N^{phi/eps} vs N^{1/eps}")
def _tilted_law(tol):
    space, phi, eps = _girsanov_setup()
    r_max = phi.bound_n / eps
    n = 20_000
    counts = np.empty(n)
    weights = np.empty(n)
    for i in range(n):
        base = sample_base_prm(stream(99, i), 1.0, space, r_max)
        counts[i] = len(thin(base, phi, 1.0 / eps))
        weights[i] = math.exp(girsanov_log_weight(base, phi, eps, space))
    lam = space.total_mass / eps
    zs = []
    for f, exact in ((counts, lam), (counts ** 2, lam + lam * lam)):
        y = weights * f
        zs.append((y.mean() - exact) / (y.std(ddof=1) / math.sqrt(n)))
    worst = max(abs(z) for z in zs)
    return worst, worst <= tol, {"z": zs}


@invariant("jump.determinism", 0.0, "repeated sampling with one seed is bitwise identical")
def _jump_determinism(tol):
    space = MarkSpace([1.0, 2.0])
    a, b = (sample_base_prm(stream(3, 5), 2.0, space, 3.0) for _ in range(2))
    same = (np.array_equal(a.times, b.times) and np.array_equal(a.marks, b.marks)
            and np.array_equal(a.r, b.r))
    value = 0.0 if same else 1.0
    return value, value <= tol, {"atoms": len(a)}


# ---------------------------------------------------------------------------
# spde


def _small_problem(n_modes=8, gain=0.3):
    grid = make_grid(n_modes)
    b = random_field(11, grid, 2.0, 1.0)
    u0 = random_field(5, grid, 2.0, 1.5)
    noise = NoiseCoefficient([1.0, -0.6], b, gain)
    return grid, u0, noise, MarkSpace([0.5, 0.5])


@invariant("spde.zero_noise_reduction", 0.0, "sigma = 0 SPDE path equals g = 1 skeleton (bitwise)")
def _zero_noise(tol):
    grid, u0, noise, space = _small_problem()
    zero = NoiseCoefficient([0.0, 0.0], noise.base_field, noise.linear_gain)
    p = SolverParams(dt=0.02, T=1.0, eps=0.2)
    a = simulate(u0, p, zero, space, seed=1)
    b = solve_skeleton(SkeletonProblem(u0, p, zero, space))
    same = np.array_equal(a.norms, b.norms) and a.final.equals(b.final)
    value = 0.0 if same else max(float(np.abs(a.norms - b.norms).max()), 1e-300)
    return value, value <= tol, {"jumps": int(a.jumps.sum())}


@invariant("spde.single_mode_decay", 1e-6, "|h(t) - exp(-|k|^2 t) h(0)| at dt=1e-4, T=1, n=32")
def _single_mode(tol):
    grid = make_grid(32)
    u0 = single_mode(grid, 1, 1, math.sqrt(2) / grid.domain_length)
    p = SolverParams(dt=1e-4, T=1.0)
    traj = solve_deterministic(u0, p)
    exact = np.exp(-2.0 * traj.times) * norms(u0).h
    err = float(np.abs(traj.norms[:, 0] - exact).max())
    return err, err <= tol, {"h0": norms(u0).h}


@invariant("spde.energy_identity", 1e-4,
           "|dE + 2 int |u|_V^2 dt| / E(0), no noise or forcing, nonlinear, T=1")
def _energy_identity(tol):
    grid = make_grid(16)
    u0 = random_field(21, grid, 2.0, 1.0)
    traj = solve_deterministic(u0, SolverParams(dt=1e-3, T=1.0))
    d = energy_diagnostic(traj)
    e0, e1 = traj.norms[0, 0] ** 2, traj.norms[-1, 0] ** 2
    err = abs(e1 - e0 + 2 * d["int_v2"]) / e0
    return err, err <= tol, {"E0": e0, "ET": e1, "int_v2": d["int_v2"]}


def apriori_means(eps_values=(0.5, 0.2, 0.1), n_paths=200, seed=31):
    """Mean and standard error of ``sup |u|_H^2 + int |u|_V^2`` per eps."""
    grid, u0, noise, space = _small_problem()
    out = []
    for eps in eps_values:
        ens = simulate_ensemble(u0, SolverParams(dt=0.02, T=1.0, eps=eps), noise, space, seed,
                                n_paths)
        y = ens.upsilon_h[:, -1]
        out.append((float(y.mean()), float(y.std(ddof=1) / math.sqrt(n_paths))))
    return out


@invariant("spde.apriori_trend", 3.0,
           "largest increase of the mean Upsilon_H as eps decreases, in standard errors")
def _apriori(tol):
    stats_ = apriori_means()
    worst = -math.inf
    for (m0, s0), (m1, s1) in zip(stats_, stats_[1:]):
        worst = max(worst, (m1 - m0) / math.hypot(s0, s1))
    finite = all(math.isfinite(m) for m, _ in stats_)
    return worst, finite and worst <= tol, {"means": [m for m, _ in stats_]}


@invariant("spde.tilted_consistency", 3.0,
           "z-score between plain and M-reweighted mean of tanh(|u(T)|_H^2)")
def _tilted_consistency(tol):
    grid, u0, noise, space = _small_problem()
    p = SolverParams(dt=0.02, T=1.0, eps=0.25)
    phi = ControlField([0.0, 0.5, 1.0], [[1.8, 0.6], [0.7, 1.5]])
    n = 4000
    plain = simulate_ensemble(u0, p, noise, space, 41, n)
    tilt = simulate_ensemble(u0, p, noise, space, 42, n, control=phi)
    f0 = np.tanh(plain.norms[:, -1, 0] ** 2)
    f1 = np.tanh(tilt.norms[:, -1, 0] ** 2) * np.exp(tilt.log_weight[:, -1])
    se = math.hypot(f0.std(ddof=1), f1.std(ddof=1)) / math.sqrt(n)
    z = (f1.mean() - f0.mean()) / se
    return abs(z), abs(z) <= tol, {"plain": f0.mean(), "tilted": f1.mean()}


@invariant("spde.cutoff_inactive", 0.0, "cutoff far above the path norm changes nothing (bitwise)")
def _cutoff(tol):
    grid, u0, noise, space = _small_problem()
    p = SolverParams(dt=0.02, T=1.0, eps=0.2)
    a = simulate(u0, p, noise, space, seed=8)
    b = simulate(u0, p.replace(cutoff_m=1e6), noise, space, seed=8)
    same = np.array_equal(a.norms, b.norms) and a.final.equals(b.final)
    value = 0.0 if same else 1.0
    return value, value <= tol, {}


@invariant("spde.upsilon_consistency", 1e-12,
           "running Upsilon columns equal recomputation from the norm series")
def _upsilon(tol):
    grid, u0, noise, space = _small_problem()
    traj = simulate(u0, SolverParams(dt=0.02, T=1.0, eps=0.3), noise, space, seed=12)
    d = energy_diagnostic(traj)
    gap_h = abs(traj.upsilon_h[-1] - (d["sup_h2"] + d["int_v2"])) / traj.upsilon_h[-1]
    gap_v = abs(traj.upsilon_v[-1] - (d["sup_v2"] + d["int_da2"])) / traj.upsilon_v[-1]
    mono = bool(np.all(np.diff(traj.upsilon_h) >= 0) and np.all(np.diff(traj.upsilon_v) >= 0))
    worst = max(gap_h, gap_v)
    return worst, mono and worst <= tol, {"jumps": int(traj.jumps.sum())}


# ---------------------------------------------------------------------------
# skeleton


@invariant("skeleton.unit_reduction", 0.0, "g = 1 skeleton equals the deterministic run (bitwise)")
def _unit_reduction(tol):
    grid, u0, noise, space = _small_problem()
    p = SolverParams(dt=0.02, T=1.0)
    g1 = ControlField.constant(1.0, 2, 1.0, n_intervals=4)
    a = solve_skeleton(SkeletonProblem(u0, p, noise, space, g1))
    b = solve_deterministic(u0, p)
    same = np.array_equal(a.norms, b.norms) and a.final.equals(b.final)
    value = 0.0 if same else 1.0
    return value, value <= tol, {"entropy": entropy_LT(g1, space)}


@invariant("skeleton.forcing_equivalence", 1e-12,
           "constant g with additive noise equals a run with the drift folded into f")
def _forcing_equivalence(tol):
    grid, u0, noise, space = _small_problem(gain=0.0)
    p = SolverParams(dt=0.02, T=1.0)
    g = ControlField.constant(1.0, 2, 1.0)
    g = ControlField(g.breakpoints, [[1.7, 0.4]])
    f = noise.base_field * float(((g.values[0] - 1.0) * space.weights * noise.sigma).sum())
    a = solve_skeleton(SkeletonProblem(u0, p, noise, space, g), store_stride=1)
    b = solve_deterministic(u0, p.replace(forcing=f), store_stride=1)
    d = path_distance(a, b)
    return d, d <= tol, {}


def uniform_bound_constant(level=1.0, count=20, seed=3):
    """Upsilon^V of skeleton paths under random controls with ``L_T <= level``."""
    grid, u0, noise, space = _small_problem()
    p = SolverParams(dt=0.02, T=1.0)
    rng = np.random.default_rng(seed)
    values, entropies = [], []
    for _ in range(count):
        x = rng.normal(0.0, 1.0, (4, 2))
        g = ControlField(np.linspace(0, 1, 5), np.exp(np.clip(x, -math.log(20), math.log(20))))
        L = entropy_LT(g, space)
        if L > level:  # shrink the deviation onto the entropy ball
            lo, hi = 0.0, 1.0
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if entropy_LT(ControlField(g.breakpoints, np.exp(mid * x)), space) <= level:
                    lo = mid
                else:
                    hi = mid
            g = ControlField(g.breakpoints, np.exp(lo * x))
        entropies.append(entropy_LT(g, space))
        traj = solve_skeleton(SkeletonProblem(u0, p, noise, space, g))
        values.append(float(traj.upsilon_v[-1]))
    return values, entropies


@invariant("skeleton.uniform_bound", 1e6,
           "max Upsilon^V over 20 random controls with L_T <= 1 (finite and below tol)")
def _uniform_bound(tol):
    values, entropies = uniform_bound_constant()
    c = max(values)
    ok = all(math.isfinite(v) for v in values) and max(entropies) <= 1.0 + 1e-12
    return c, ok and c <= tol, {"constant": c, "max_entropy": max(entropies)}


@invariant("skeleton.continuity_probe", 1e-6,
           "d_64 of the frozen probe family (d_n must also decrease strictly)")
def _continuity(tol):
    cfg = load_benchmark("continuity_probe")
    seq, limit, levels = build_probe(cfg)
    d = skeleton_continuity_probe(seq, limit, build_template(cfg))
    strict = bool(np.all(np.diff(d) < 0))
    return d[-1], strict and d[-1] <= tol, {"levels": levels, "d_n": d}


# ---------------------------------------------------------------------------
# ldp


@invariant("ldp.zero_rate", 0.0, "an event containing the g = 1 path has rate 0")
def _zero_rate(tol):
    cfg = load_benchmark("ldp_scaling")
    tm = build_template(cfg)
    e_det = solve_skeleton(tm).norms[-1, 0] ** 2
    rate = minimize_rate(EventFunctional("terminal_energy_above", 0.9 * e_det), tm)
    return rate.rate_value, rate.rate_value <= tol and rate.control.is_unit, {}


@invariant("ldp.upper_bound_soundness", 1e-12,
           "|L_T(control) - rate| for the planted benchmark (skeleton must satisfy the event)")
def _soundness(tol):
    cfg = load_benchmark("planted_rate")
    tm = build_template(cfg)
    event, planted = build_event(cfg, tm)
    rate = minimize_rate(event, tm, build_optimizer(cfg), seed=cfg.experiment.seed)
    gap = abs(entropy_LT(rate.control, tm.space) - rate.rate_value)
    margin = event.margin(solve_skeleton(tm.with_control(rate.control)))
    bound = entropy_LT(planted, tm.space)
    ok = gap <= tol and margin >= 0 and rate.rate_value <= bound + 1e-3
    return gap, ok, {"rate": rate.rate_value, "planted_entropy": bound, "margin": margin,
                     "residual": rate.constraint_residual}


@invariant("ldp.threshold_monotonicity", 1e-3,
           "rate decrease when the threshold is raised (warm-started), must be <= tol")
def _monotone(tol):
    cfg = load_benchmark("ldp_scaling")
    tm = build_template(cfg)
    event, _ = build_event(cfg, tm)
    oc = build_optimizer(cfg)
    lo = minimize_rate(event.with_threshold(0.95 * event.threshold), tm, oc)
    hi = minimize_rate(event, tm, oc, warm_start=lo.control)
    drop = lo.rate_value - hi.rate_value
    return drop, drop <= tol, {"rates": [lo.rate_value, hi.rate_value]}


@invariant("ldp.estimator_agreement", 0.0,
           "gap between plain Wilson and tilted 95% intervals on the benchmark at eps=0.1")
def _agreement(tol):
    cfg = load_benchmark("ldp_scaling")
    tm = build_template(cfg)
    event, _ = build_event(cfg, tm)
    rate = minimize_rate(event, tm, build_optimizer(cfg))
    plain = mc_probability(event, 0.1, 20_000, 5, tm)
    tilt = importance_sampled_probability(event, 0.1, rate.control, 5_000, 6, tm)
    gap = max(0.0, plain.ci_low - tilt.ci_high, tilt.ci_low - plain.ci_high)
    return gap, gap <= tol, {"plain": [plain.p_hat, plain.ci_low, plain.ci_high],
                             "tilted": [tilt.p_hat, tilt.ci_low, tilt.ci_high],
                             "ess": tilt.ess, "hits": plain.hits}


# ---------------------------------------------------------------------------
# cli


_SMALL_CONFIG = {
    "grid": {"n_modes": 8},
    "noise": {"weights": [0.5, 0.5], "sigma": [1.0, -0.6], "linear_gain": 0.3,
              "base_field": {"kind": "random", "seed": 11, "amplitude": 1.0}},
    "initial": {"kind": "random", "seed": 5, "amplitude": 1.5},
    "solver": {"dt": 0.05, "T": 1.0, "eps": 0.2},
    "experiment": {"seed": 3, "n_paths": 4},
}


def _run_cli(args):
    from click.testing import CliRunner
    from .cli import main
    return CliRunner().invoke(main, args, catch_exceptions=False)


@invariant("cli.reproducibility", 0.0, "two identical simulate runs give identical manifests")
def _cli_repro(tol):
    import json
    with tempfile.TemporaryDirectory() as tmp:
        cfg = Path(tmp) / "small.json"
        cfg.write_text(json.dumps(_SMALL_CONFIG))
        manifests = []
        for k in range(2):
            out = Path(tmp) / f"out{k}"
            res = _run_cli(["--quiet", "--config", str(cfg), "--out", str(out), "simulate"])
            if res.exit_code != 0:
                return 1.0, False, {"exit_code": res.exit_code, "output": res.output}
            (run_dir,) = out.iterdir()
            manifests.append((run_dir.name, (run_dir / "manifest.json").read_text()))
    value = 0.0 if manifests[0] == manifests[1] else 1.0
    return value, value <= tol, {"run": manifests[0][0]}


@invariant("cli.config_roundtrip", 0.0, "the echoed config re-parses to an equal structure")
def _roundtrip(tol):
    cfg = parse_config(_SMALL_CONFIG)
    echo = cfg.canonical()
    again = parse_config(echo).canonical()
    ok = echo == again
    for name in ("ldp_scaling", "planted_rate", "continuity_probe"):
        c = load_benchmark(name).canonical()
        ok = ok and parse_config(c).canonical() == c
    value = 0.0 if ok else 1.0
    return value, value <= tol, {}
