"""
Small-noise workbench: variational upper bounds on the rate of an event,
plain and Girsanov-tilted Monte Carlo estimates of its probability, and the
``-eps log p`` scaling table that ties the two together.

Events are level sets of a scalar margin computed from a trajectory; the
event holds iff ``margin >= 0``. The rate bound minimises the entropy cost of
a step control subject to its skeleton path satisfying the event, so any
returned value is an upper bound on the infimum by construction.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize, stats

from .prm import ControlField, entropy_LT
from .skeleton import SkeletonProblem, solve_skeleton
from .spde import Ensemble, Trajectory, simulate_ensemble
from .spectral import VelocityField, inner

log = logging.getLogger(__name__)

EVENT_KINDS = ("terminal_energy_above", "sup_V_norm_above", "terminal_distance_below")


class InfeasibleError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class EventFunctional:
    """``terminal_energy_above``: ``||u(T)||_H^2 >= threshold``;
    ``sup_V_norm_above``: ``sup_t ||u(t)||_V >= threshold``;
    ``terminal_distance_below``: ``||u(T) - reference||_H <= threshold``.
    """

    kind: str
    threshold: float
    reference: VelocityField | None = None

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}; expected one of {EVENT_KINDS}")
        if self.kind == "terminal_distance_below" and self.reference is None:
            raise ValueError("terminal_distance_below needs a reference field")

    def with_threshold(self, threshold: float) -> "EventFunctional":
        return EventFunctional(self.kind, threshold, self.reference)

    def _margins(self, final: np.ndarray, norms: np.ndarray, grid) -> np.ndarray:
        if self.kind == "terminal_energy_above":
            return norms[:, -1, 0] ** 2 - self.threshold
        if self.kind == "sup_V_norm_above":
            return norms[:, :, 1].max(axis=1) - self.threshold
        diff = final - self.reference.coeffs
        dist = np.sqrt(np.maximum(inner(diff, diff, grid), 0.0))
        return self.threshold - dist

    def margin(self, traj: Trajectory) -> float:
        return float(self._margins(traj.final.coeffs[None], traj.norms[None], traj.final.grid)[0])

    def margins(self, ens: Ensemble) -> np.ndarray:
        return self._margins(ens.final, ens.norms, ens.grid)

    def indicator(self, traj: Trajectory) -> bool:
        return self.margin(traj) >= 0

    def score(self, traj: Trajectory) -> float:
        """The raw functional value the threshold is compared with."""
        m = self.margin(traj)
        return m + self.threshold if self.kind != "terminal_distance_below" else self.threshold - m


@dataclass
class OptimizerConfig:
    n_intervals: int = 4
    bound_n: int = 20
    restarts: int = 1
    mu0: float = 10.0
    mu_growth: float = 10.0
    mu_max: float = 1e12
    slack: float = 1e-7
    tolerance: float = 1e-4
    max_evals: int = 600
    simplex_step: float = 0.5
    polish: bool = True
    handoff: float = 1e-2


@dataclass(eq=False)
class RateEstimate:
    control: ControlField
    rate_value: float
    constraint_residual: float
    feasible: bool
    margin: float
    optimizer_trace: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "rate_value": self.rate_value,
            "constraint_residual": self.constraint_residual,
            "feasible": self.feasible,
            "margin": self.margin,
            "control": self.control.to_dict(),
            "evaluations": sum(t.get("evals", 0) for t in self.optimizer_trace),
        }


class _RateProblem:
    def __init__(self, event, template: SkeletonProblem, cfg: OptimizerConfig):
        self.event = event
        self.template = template
        self.cfg = cfg
        self.T = template.params.T
        self.M = template.space.size
        self.shape = (cfg.n_intervals, self.M)
        self.breakpoints = np.linspace(0.0, self.T, cfg.n_intervals + 1)
        self.lim = math.log(cfg.bound_n)
        self.evals = 0
        self._cache = {}

    def control(self, x) -> ControlField:
        vals = np.exp(np.clip(np.asarray(x, dtype=float), -self.lim, self.lim)).reshape(self.shape)
        return ControlField(self.breakpoints, vals, self.cfg.bound_n)

    def evaluate(self, x):
        key = np.asarray(x, dtype=float).tobytes()
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        g = self.control(x)
        traj = solve_skeleton(self.template.with_control(g))
        self.evals += 1
        out = (entropy_LT(g, self.template.space), self.event.margin(traj))
        if len(self._cache) > 50000:
            self._cache.clear()
        self._cache[key] = out
        return out

    def penalised(self, x, mu):
        cost, margin = self.evaluate(x)
        short = max(0.0, self.cfg.slack - margin)
        return cost + mu * short * short


def _nelder_mead(prob: _RateProblem, x0, mu, cfg: OptimizerConfig):
    d = x0.size
    simplex = np.vstack([x0] + [x0 + cfg.simplex_step * np.eye(d)[i] for i in range(d)])
    res = optimize.minimize(prob.penalised, x0, args=(mu,), method="Nelder-Mead",
                            options={"initial_simplex": simplex, "maxfev": cfg.max_evals,
                                     "xatol": 1e-5, "fatol": 1e-9, "adaptive": d > 4})
    return res.x


def _polish(prob: _RateProblem, x0):
    cons = {"type": "ineq", "fun": lambda x: prob.evaluate(x)[1]}
    bounds = [(-prob.lim, prob.lim)] * x0.size
    res = optimize.minimize(lambda x: prob.evaluate(x)[0], x0, method="SLSQP",
                            constraints=[cons], bounds=bounds,
                            options={"maxiter": 200, "ftol": 1e-12})
    return np.asarray(res.x)


def _restore(prob: _RateProblem, x):
    """Scale ``log g`` outward until the event holds (bisection on the factor)."""
    cost, margin = prob.evaluate(x)
    if margin >= 0 or not np.any(x):
        return x
    hi = 1.0
    for _ in range(30):
        hi *= 1.25
        if prob.evaluate(hi * x)[1] >= 0:
            break
    else:
        return x
    lo = hi / 1.25
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if prob.evaluate(mid * x)[1] >= 0:
            hi = mid
        else:
            lo = mid
    return hi * x


def minimize_rate(event: EventFunctional, template: SkeletonProblem,
                  config: OptimizerConfig | None = None, seed: int = 0,
                  warm_start: ControlField | None = None) -> RateEstimate:
    """Upper bound on ``inf { L_T(g) : event(u^g) }`` over step controls.

    Penalty formulation ``L_T(g) + mu * max(0, slack - margin)^2`` minimised by
    Nelder-Mead in ``log g`` with ``mu`` escalated until the constraint is
    nearly active, then an SLSQP refinement with finite-difference gradients,
    repeated from a few random starts. Infeasible end points are pushed onto
    the event by scaling ``log g`` outward before comparison.
    """
    cfg = config or OptimizerConfig()
    prob = _RateProblem(event, template, cfg)
    d = int(np.prod(prob.shape))
    if d > 64:
        raise ValueError(f"{d} decision variables; derivative-free search is limited to 64")
    zero = np.zeros(d)
    cost0, margin0 = prob.evaluate(zero)
    trace = [{"stage": "unit", "rate": cost0, "margin": margin0, "evals": 1}]
    if margin0 >= 0:
        g = prob.control(zero)
        return RateEstimate(g, 0.0, 0.0, True, margin0, trace)

    rng = np.random.default_rng(seed)
    starts = [zero]
    if warm_start is not None:
        if warm_start.values.shape != prob.shape:
            raise ValueError("warm start has the wrong control shape")
        starts.insert(0, np.log(warm_start.values).ravel())
    starts += [rng.normal(0.0, 0.5, d) for _ in range(cfg.restarts)]

    # mu0 is relative: the unit control starts with penalty mu0. The penalty
    # search only has to land near the constraint surface; SLSQP then
    # enforces it, which costs far fewer solves than escalating mu to the end.
    mu_start = cfg.mu0 / max(margin0 * margin0, 1e-300)
    near = cfg.handoff * abs(margin0) if cfg.polish else 0.0
    best_x, best_cost = None, np.inf
    fallback, fallback_short = None, np.inf
    for k, x in enumerate(starts):
        mu = mu_start
        while True:
            before = prob.evals
            x = _nelder_mead(prob, x, mu, cfg)
            cost, margin = prob.evaluate(x)
            trace.append({"stage": f"nm[{k}]", "mu": mu, "rate": cost, "margin": margin,
                          "evals": prob.evals - before})
            if margin >= -near or mu >= cfg.mu_max * mu_start:
                break
            mu *= cfg.mu_growth
        candidates = [x]
        if cfg.polish:
            before = prob.evals
            xp = _polish(prob, x)
            c, m = prob.evaluate(xp)
            trace.append({"stage": f"slsqp[{k}]", "rate": c, "margin": m,
                          "evals": prob.evals - before})
            candidates.insert(0, xp)
        for cand in candidates:
            cand = _restore(prob, cand)
            c, m = prob.evaluate(cand)
            if m >= 0 and c < best_cost:
                best_x, best_cost = cand, c
            elif -m < fallback_short:
                fallback, fallback_short = cand, -m

    if best_x is None:
        best_x = fallback
    best_x = _restore(prob, best_x)
    cost, margin = prob.evaluate(best_x)
    residual = max(0.0, -margin)
    g = prob.control(best_x)
    feasible = residual <= cfg.tolerance
    trace.append({"stage": "final", "rate": cost, "margin": margin, "evals": 0})
    if not feasible:
        raise InfeasibleError(
            f"no control found for {event.kind} >= {event.threshold:g}; "
            f"best residual {residual:.3g} at rate {cost:.4g}")
    return RateEstimate(g, entropy_LT(g, template.space), residual, feasible, margin, trace)


# ---------------------------------------------------------------------------
# probability estimates


@dataclass(eq=False)
class ProbabilityEstimate:
    p_hat: float
    ci_low: float
    ci_high: float
    hits: int
    n_samples: int
    ess: float
    eps: float
    method: str
    log_weights: np.ndarray | None = field(default=None, repr=False)
    indicators: np.ndarray | None = field(default=None, repr=False)

    def summary(self) -> dict:
        return {k: v for k, v in asdict(self).items() if k not in ("log_weights", "indicators")}


def wilson_interval(hits: int, n: int, level: float = 0.95):
    if n == 0:
        return 0.0, 1.0
    ci = stats.binomtest(int(hits), int(n)).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


def _run_ensemble(event, eps, n_samples, seed, template, control, chunk):
    params = template.params.replace(eps=eps)
    ind, lw = [], []
    for lo in range(0, n_samples, chunk):
        n = min(chunk, n_samples - lo)
        ens = simulate_ensemble(template.u0, params, template.noise, template.space, seed, n,
                                control=control, first_index=lo, chunk=n)
        ind.append(event.margins(ens) >= 0)
        lw.append(ens.log_weight[:, -1])
    return np.concatenate(ind), np.concatenate(lw)


def mc_probability(event: EventFunctional, eps: float, n_samples: int, seed: int,
                   template: SkeletonProblem, chunk: int = 8192) -> ProbabilityEstimate:
    """Plain Monte Carlo under the untilted law with a Wilson 95% interval."""
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    ind, lw = _run_ensemble(event, eps, n_samples, seed, template, None, chunk)
    hits = int(ind.sum())
    lo, hi = wilson_interval(hits, n_samples)
    return ProbabilityEstimate(hits / n_samples, lo, hi, hits, n_samples, float(hits), eps,
                               "plain", lw, ind)


def importance_sampled_probability(event: EventFunctional, eps: float, tilt: ControlField,
                                   n_samples: int, seed: int, template: SkeletonProblem,
                                   chunk: int = 8192) -> ProbabilityEstimate:
    """``E[1_event * M^eps]`` with paths drawn under the tilted intensity ``tilt/eps``."""
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    ind, lw = _run_ensemble(event, eps, n_samples, seed, template, tilt, chunk)
    y = np.where(ind, np.exp(lw), 0.0)
    p = float(y.mean())
    se = float(y.std(ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else math.inf
    lo, hi = max(0.0, p - 1.96 * se), min(1.0, p + 1.96 * se)
    sq = float((y * y).sum())
    ess = float(y.sum() ** 2 / sq) if sq > 0 else 0.0
    return ProbabilityEstimate(p, lo, hi, int(ind.sum()), n_samples, ess, eps, "tilted", lw, ind)


# ---------------------------------------------------------------------------
# scaling table


@dataclass
class ScalingRow:
    eps: float
    n_samples: int
    hits: int
    p_hat: float
    ci_low: float
    ci_high: float
    neg_eps_log_p: float
    rate_value: float
    sufficient: bool
    tilted_p: float | None = None
    tilted_low: float | None = None
    tilted_high: float | None = None
    tilted_ess: float | None = None


@dataclass
class ScalingTable:
    rows: list
    rate_value: float
    band: float = 0.25
    min_hits: int = 30

    def selected(self) -> ScalingRow | None:
        ok = [r for r in self.rows if r.sufficient]
        return min(ok, key=lambda r: r.eps) if ok else None

    def band_error(self) -> float | None:
        row = self.selected()
        if row is None:
            return None
        if self.rate_value == 0:
            return abs(row.neg_eps_log_p)
        return abs(row.neg_eps_log_p - self.rate_value) / self.rate_value

    def within_band(self) -> bool:
        err = self.band_error()
        return err is not None and err <= self.band

    def intervals_overlap(self) -> bool:
        """Plain Wilson and tilted 95% intervals overlap on every sufficient row."""
        rows = [r for r in self.rows if r.sufficient and r.tilted_p is not None]
        return bool(rows) and all(r.ci_low <= r.tilted_high and r.tilted_low <= r.ci_high for r in rows)

    def monotone(self) -> bool:
        """``-eps log p`` moves in one direction along the grid, up to CI overlap."""
        rows = sorted((r for r in self.rows if r.sufficient), key=lambda r: -r.eps)
        if len(rows) < 2:
            return True

        def band(r):
            lo = -r.eps * math.log(r.ci_high) if r.ci_high > 0 else math.inf
            hi = -r.eps * math.log(r.ci_low) if r.ci_low > 0 else math.inf
            return lo, hi

        ups = downs = 0
        for a, b in zip(rows, rows[1:]):
            (alo, ahi), (blo, bhi) = band(a), band(b)
            if blo > ahi:
                ups += 1
            elif bhi < alo:
                downs += 1
        return ups == 0 or downs == 0

    def to_csv(self, path) -> Path:
        path = Path(path)
        names = list(ScalingRow.__dataclass_fields__)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for r in self.rows:
                w.writerow([repr(getattr(r, k)) if isinstance(getattr(r, k), float) else getattr(r, k)
                            for k in names])
        return path

    def summary(self) -> dict:
        sel = self.selected()
        return {
            "rate_value": self.rate_value,
            "band": self.band,
            "min_hits": self.min_hits,
            "selected_eps": None if sel is None else sel.eps,
            "band_error": self.band_error(),
            "within_band": self.within_band(),
            "intervals_overlap": self.intervals_overlap(),
            "monotone": self.monotone(),
            "rows": [asdict(r) for r in self.rows],
        }


def ldp_scaling_table(event: EventFunctional, eps_grid, budgets, rate: RateEstimate, seed: int,
                      template: SkeletonProblem, tilted: bool = True, band: float = 0.25,
                      min_hits: int = 30, chunk: int = 8192,
                      tilted_budgets=None) -> ScalingTable:
    """Rows ``(eps, p_hat, -eps log p_hat, rate)`` along a decreasing ``eps`` grid.

    Plain row ``k`` uses seed ``seed + 1000 k`` and its tilted companion
    ``seed + 1000 k + 500``. ``tilted_budgets`` defaults to ``budgets``; the
    tilted estimator usually needs far fewer samples.
    """
    eps_grid = list(eps_grid)
    if len(eps_grid) < 3:
        raise ValueError("the eps grid needs at least three values")
    if any(b >= a for a, b in zip(eps_grid, eps_grid[1:])) or eps_grid[-1] <= 0:
        raise ValueError("the eps grid must be positive and strictly decreasing")
    if np.isscalar(budgets):
        budgets = [int(budgets)] * len(eps_grid)
    if len(budgets) != len(eps_grid):
        raise ValueError("one budget per eps value")
    if tilted_budgets is None:
        tilted_budgets = budgets
    elif np.isscalar(tilted_budgets):
        tilted_budgets = [int(tilted_budgets)] * len(eps_grid)
    if len(tilted_budgets) != len(eps_grid):
        raise ValueError("one tilted budget per eps value")
    rows = []
    for k, (eps, n) in enumerate(zip(eps_grid, budgets)):
        if n <= 0:
            log.warning("eps=%g: zero budget, row skipped", eps)
            continue
        plain = mc_probability(event, eps, n, seed + 1000 * k, template, chunk)
        nlp = -eps * math.log(plain.p_hat) if plain.p_hat > 0 else math.inf
        row = ScalingRow(eps, n, plain.hits, plain.p_hat, plain.ci_low, plain.ci_high, nlp,
                         rate.rate_value, plain.hits >= min_hits)
        if not row.sufficient:
            log.info("eps=%g: %d hits (< %d), excluded from the band check", eps, plain.hits, min_hits)
        if tilted and not rate.control.is_unit and tilted_budgets[k] > 0:
            tl = importance_sampled_probability(event, eps, rate.control, int(tilted_budgets[k]),
                                                seed + 1000 * k + 500,
                                                template, chunk)
            row.tilted_p, row.tilted_low, row.tilted_high, row.tilted_ess = (
                tl.p_hat, tl.ci_low, tl.ci_high, tl.ess)
        rows.append(row)
    return ScalingTable(rows, rate.rate_value, band, min_hits)
