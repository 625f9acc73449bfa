"""
Time integration of the jump-driven Navier-Stokes equation

    du + nu A u dt + theta_m B(u) dt = f dt + eps * int_Z G(u(t-), z) (N^{phi/eps}(dz, dt) - eps^-1 nu(dz) dt)

on the spectral torus. ``phi = 1`` gives the plain small-noise equation; any
other step control gives the tilted equation used for importance sampling.

One step is: explicit drift (bilinear term with the cutoff factor, forcing,
compensator) folded into an exact treatment of the Stokes part, followed by
the jumps whose timestamps fall inside the step, applied one after another
with the left-limit state. Everything runs on ensembles of shape
``(paths, 2, n, n//2 + 1)``; a single trajectory is an ensemble of one.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Union

import numpy as np

from .prm import ControlField, MarkSpace, sample_base_prm, stream, thin
from .spectral import SpectralGrid, VelocityField, flux_bilinear, norm_squares, norms

log = logging.getLogger(__name__)

SCHEMES = ("integrating_factor", "imex_euler")
DRIFT_FORMS = ("base", "tilted")


class NumericalError(RuntimeError):
    """Non-finite state encountered; ``diagnostic`` holds the dump."""

    def __init__(self, message, diagnostic=None):
        super().__init__(message)
        self.diagnostic = diagnostic or {}


@dataclass(frozen=True, eq=False)
class NoiseCoefficient:
    """Affine jump coefficient ``G(u, z_j) = sigma_j * (b + c u)``."""

    sigma: np.ndarray
    base_field: VelocityField
    linear_gain: float = 0.0

    def __post_init__(self):
        s = np.atleast_1d(np.asarray(self.sigma, dtype=float)).copy()
        s.setflags(write=False)
        object.__setattr__(self, "sigma", s)
        object.__setattr__(self, "linear_gain", float(self.linear_gain))

    @classmethod
    def zero(cls, grid: SpectralGrid, n_marks: int) -> "NoiseCoefficient":
        return cls(np.zeros(n_marks), VelocityField.zeros(grid), 0.0)

    @property
    def grid(self) -> SpectralGrid:
        return self.base_field.grid

    @property
    def n_marks(self) -> int:
        return self.sigma.size

    def apply(self, u: VelocityField, mark: int) -> VelocityField:
        return VelocityField(u.grid, self.sigma[mark] * (self.base_field.coeffs + self.linear_gain * u.coeffs))

    def jump_raw(self, c: np.ndarray, marks: np.ndarray) -> np.ndarray:
        s = self.sigma[marks][:, None, None, None]
        return s * (self.base_field.coeffs + self.linear_gain * c)

    def weighted_sum_raw(self, c: np.ndarray, w: np.ndarray) -> np.ndarray:
        """``sum_j w_j G(u, z_j)``; affine, so a single scaled copy."""
        return float(self.sigma @ w) * (self.base_field.coeffs + self.linear_gain * c)

    def lipschitz_tables(self):
        """Per-mark ``(L1, L2, L3)``: V-Lipschitz, V-growth, H-growth constants."""
        nb = norms(self.base_field)
        a = np.abs(self.sigma)
        gain = abs(self.linear_gain)
        return a * gain, a * max(nb.v, gain), a * max(nb.h, gain)


Forcing = Union[None, VelocityField, Callable[[float], VelocityField]]


@dataclass(frozen=True, eq=False)
class SolverParams:
    dt: float
    T: float
    eps: float = 1.0
    viscosity: float = 1.0
    cutoff_m: float | None = None
    forcing: Forcing = None
    guard: float | None = None
    nonlinear: bool = True
    scheme: str = "integrating_factor"
    drift_form: str = "base"

    def __post_init__(self):
        if not self.dt > 0 or not self.T > 0:
            raise ValueError("dt and T must be positive")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not self.viscosity > 0:
            raise ValueError("viscosity must be positive")
        steps = round(self.T / self.dt)
        if steps < 1 or abs(steps * self.dt - self.T) > 1e-9 * self.T:
            raise ValueError(f"dt={self.dt} does not divide T={self.T}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.drift_form not in DRIFT_FORMS:
            raise ValueError(f"drift_form must be one of {DRIFT_FORMS}")

    @property
    def n_steps(self) -> int:
        return round(self.T / self.dt)

    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def replace(self, **changes) -> "SolverParams":
        kw = {k: getattr(self, k) for k in self.__dataclass_fields__}
        kw.update(changes)
        return SolverParams(**kw)


def theta_cutoff(s, m: float):
    """C^2 cutoff: 1 on ``[0, m]``, 0 on ``[m+1, inf)``, quintic smoothstep between."""
    x = np.clip(np.asarray(s, dtype=float) - m, 0.0, 1.0)
    return 1.0 - x ** 3 * (10.0 - 15.0 * x + 6.0 * x * x)


def _forcing_raw(forcing: Forcing, t: float):
    if forcing is None:
        return None
    if isinstance(forcing, VelocityField):
        return forcing.coeffs
    return forcing(t).coeffs


class _Integrator:
    """Continuous part of one step for an ensemble of states.

    ``mode`` selects the noise-induced drift: ``"spde"`` subtracts the
    compensator (in base or tilted form), ``"skeleton"`` adds
    ``sum_j G(u, z_j) (g(t, z_j) - 1) nu_j``, ``"deterministic"`` adds nothing.
    """

    def __init__(self, grid: SpectralGrid, params: SolverParams, noise=None, space=None,
                 control: ControlField | None = None, mode: str = "spde"):
        self.grid = grid
        self.params = params
        self.noise = noise
        self.space = space
        self.control = control
        self.mode = mode if noise is not None else "deterministic"
        lin = params.dt * params.viscosity * grid.k2
        if params.scheme == "integrating_factor":
            self.linear = np.exp(-lin)
        else:
            self.linear = 1.0 / (1.0 + lin)
        if self.mode != "deterministic" and noise.n_marks != space.size:
            raise ValueError("noise coefficient and mark space disagree on the number of marks")

    def drift_weights(self, t_mid: float):
        nu = self.space.weights
        if self.mode == "skeleton":
            return [self.control.at(t_mid) - 1.0] if self.control is not None else [np.zeros_like(nu)]
        if self.params.drift_form == "tilted" and self.control is not None:
            phi = self.control.at(t_mid)
            return [(phi - 1.0) * nu, -phi * nu]
        return [-nu]

    def explicit(self, c: np.ndarray, t: float, theta) -> np.ndarray:
        p = self.params
        if p.nonlinear:
            b = flux_bilinear(c, None, self.grid)
            if np.ndim(theta):
                b = b * theta[:, None, None, None]
            else:
                b = b * theta
            out = b
        else:
            out = np.zeros_like(c)
        f = _forcing_raw(p.forcing, t)
        if f is not None:
            out = out + f
        if self.mode == "skeleton":
            (w,) = self.drift_weights(t + 0.5 * p.dt)
            out = out + self.noise.weighted_sum_raw(c, w * self.space.weights)
        elif self.mode == "spde":
            for w in self.drift_weights(t + 0.5 * p.dt):
                out = out + self.noise.weighted_sum_raw(c, w)
        return out

    def advance(self, c: np.ndarray, t: float, theta) -> np.ndarray:
        return self.linear * (c + self.params.dt * self.explicit(c, t, theta))


@dataclass(eq=False)
class _JumpPlan:
    """Kept atoms of every path, grouped by (step, rank within step)."""

    path: np.ndarray
    step: np.ndarray
    rank: np.ndarray
    mark: np.ndarray
    starts: np.ndarray
    counts: np.ndarray
    log_weight: np.ndarray

    def groups(self, n: int):
        lo, hi = self.starts[n], self.starts[n + 1]
        if lo == hi:
            return
        ranks = self.rank[lo:hi]
        for r in range(int(ranks[-1]) + 1):
            a = lo + np.searchsorted(ranks, r, side="left")
            b = lo + np.searchsorted(ranks, r, side="right")
            yield self.path[a:b], self.mark[a:b]


def _plan_jumps(seed: int, indices, params: SolverParams, space: MarkSpace,
                control: ControlField | None) -> _JumpPlan:
    eps, dt, S = params.eps, params.dt, params.n_steps
    phi = control if control is not None else ControlField.unit(params.T, space.size)
    r_max = phi.bound_n / eps
    B = len(indices)
    parts = []
    for b, idx in enumerate(indices):
        base = sample_base_prm(stream(seed, idx), params.T, space, r_max)
        kept = thin(base, phi, 1.0 / eps)
        k = len(kept)
        if k == 0:
            continue
        steps = np.clip(np.ceil(kept.times / dt).astype(int) - 1, 0, S - 1)
        rank = np.arange(k) - np.searchsorted(steps, steps, side="left")
        lphi = -np.log(phi(kept.times, kept.marks))
        parts.append((np.full(k, b), steps, rank, kept.marks, lphi))
    counts = np.zeros((B, S + 1), dtype=np.int64)
    atom_lw = np.zeros((B, S + 1))
    if parts:
        path, step, rank, mark, lphi = (np.concatenate(x) for x in zip(*parts))
        np.add.at(counts, (path, step + 1), 1)
        np.add.at(atom_lw, (path, step + 1), lphi)
        order = np.lexsort((path, rank, step))
        path, step, rank, mark = path[order], step[order], rank[order], mark[order]
    else:
        path = step = rank = mark = np.zeros(0, dtype=np.int64)
    starts = np.searchsorted(step, np.arange(S + 1), side="left")
    comp = np.array([phi.integrate(space.weights, t, fn=lambda v: v - 1.0) for t in params.times()]) / eps
    log_weight = np.cumsum(atom_lw, axis=1) + comp[None, :]
    return _JumpPlan(path, step, rank, mark, starts, counts, log_weight)


@dataclass(eq=False)
class Ensemble:
    """Outputs of a batch of trajectories (all arrays indexed by path first)."""

    grid: SpectralGrid
    times: np.ndarray
    norms: np.ndarray          # (B, S+1, 3): h, v, da
    jumps: np.ndarray          # (B, S+1): atoms applied during the step ending at t_n
    log_weight: np.ndarray     # (B, S+1): running log M^eps
    upsilon_h: np.ndarray      # (B, S+1): sup ||u||_H^2 + int ||u||_V^2
    upsilon_v: np.ndarray      # (B, S+1): sup ||u||_V^2 + int ||u||_D(A)^2
    final: np.ndarray          # (B, 2, n, n//2+1)
    blowup_step: np.ndarray    # (B,), -1 when the guard never fired
    states: list | None = None  # single-path runs only: (t, coeffs) pairs

    @property
    def n_paths(self) -> int:
        return self.norms.shape[0]

    def trajectory(self, i: int = 0) -> "Trajectory":
        stop = int(self.blowup_step[i])
        end = self.times.size if stop < 0 else stop + 1
        states = None
        if self.states is not None:
            states = [(t, VelocityField(self.grid, c)) for t, c in self.states if t <= self.times[end - 1] + 1e-12]
        return Trajectory(
            times=self.times[:end], norms=self.norms[i, :end], jumps=self.jumps[i, :end],
            log_weight=self.log_weight[i, :end], upsilon_h=self.upsilon_h[i, :end],
            upsilon_v=self.upsilon_v[i, :end], final=VelocityField(self.grid, self.final[i]),
            status="ok" if stop < 0 else "blowup",
            blowup_time=None if stop < 0 else float(self.times[stop]), states=states)

    @staticmethod
    def concatenate(parts: list) -> "Ensemble":
        first = parts[0]
        cat = lambda name: np.concatenate([getattr(p, name) for p in parts])
        return Ensemble(first.grid, first.times, cat("norms"), cat("jumps"), cat("log_weight"),
                        cat("upsilon_h"), cat("upsilon_v"), cat("final"), cat("blowup_step"))


@dataclass(eq=False)
class Trajectory:
    times: np.ndarray
    norms: np.ndarray
    jumps: np.ndarray
    log_weight: np.ndarray
    upsilon_h: np.ndarray
    upsilon_v: np.ndarray
    final: VelocityField
    status: str = "ok"
    blowup_time: float | None = None
    states: list | None = field(default=None, repr=False)

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    def norm_triples(self):
        from .spectral import NormTriple
        return [NormTriple(*map(float, row)) for row in self.norms]

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "h", "v", "da", "jumps_this_step", "log_weight_running"])
            for t, (h, v, d), j, lw in zip(self.times, self.norms, self.jumps, self.log_weight):
                w.writerow([repr(float(t)), repr(float(h)), repr(float(v)), repr(float(d)),
                            int(j), repr(float(lw))])
        return path


def _trapezoid_step(prev, cur, dt):
    return 0.5 * dt * (prev + cur)


def integrate_paths(c0: np.ndarray, grid: SpectralGrid, params: SolverParams,
                    integ: _Integrator, plan: _JumpPlan | None = None,
                    store_stride: int | None = None) -> Ensemble:
    """Run the stepping loop for a batch of initial coefficient arrays."""
    B = c0.shape[0]
    S, dt, eps = params.n_steps, params.dt, params.eps
    times = params.times()
    out_norms = np.empty((B, S + 1, 3))
    ups_h = np.empty((B, S + 1))
    ups_v = np.empty((B, S + 1))
    blowup = np.full(B, -1, dtype=np.int64)
    dead = np.zeros(B, dtype=bool)

    c = np.array(c0, dtype=complex)
    sq = norm_squares(c, grid)
    out_norms[:, 0] = np.sqrt(sq)
    sup_h2, sup_v2 = sq[:, 0].copy(), sq[:, 1].copy()
    int_v2 = np.zeros(B)
    int_d2 = np.zeros(B)
    ups_h[:, 0] = sup_h2
    ups_v[:, 0] = sup_v2
    states = [(0.0, c[0].copy())] if store_stride else None
    noise = integ.noise

    for n in range(S):
        t = n * dt
        if params.cutoff_m is not None:
            theta = theta_cutoff(np.sqrt(sup_v2) + np.sqrt(int_d2), params.cutoff_m)
        else:
            theta = 1.0
        c_old = c
        c = integ.advance(c, t, theta)
        if plan is not None:
            for paths, marks in plan.groups(n):
                c[paths] = c[paths] + eps * noise.jump_raw(c[paths], marks)
        if dead.any():
            c[dead] = c_old[dead]
        live_bad = ~np.isfinite(c).all(axis=(1, 2, 3)) & ~dead
        if live_bad.any():
            i = int(np.flatnonzero(live_bad)[0])
            diag = {"path": i, "step": n + 1, "time": float(times[n + 1]),
                    "last_norms": out_norms[i, n].tolist(),
                    "upsilon_v": float(ups_v[i, n])}
            raise NumericalError(f"non-finite state in path {i} at t={times[n + 1]:g}", diag)
        prev = sq
        sq = norm_squares(c, grid)
        out_norms[:, n + 1] = np.sqrt(sq)
        sup_h2 = np.maximum(sup_h2, sq[:, 0])
        sup_v2 = np.maximum(sup_v2, sq[:, 1])
        int_v2 = int_v2 + _trapezoid_step(prev[:, 1], sq[:, 1], dt)
        int_d2 = int_d2 + _trapezoid_step(prev[:, 2], sq[:, 2], dt)
        ups_h[:, n + 1] = sup_h2 + int_v2
        ups_v[:, n + 1] = sup_v2 + int_d2
        if params.guard is not None:
            fired = ~dead & (np.sqrt(sup_v2) + np.sqrt(int_d2) > params.guard)
            if fired.any():
                blowup[fired] = n + 1
                dead |= fired
                log.warning("blow-up guard fired for %d path(s) at t=%g", fired.sum(), times[n + 1])
        if store_stride and (n + 1) % store_stride == 0:
            states.append((float(times[n + 1]), c[0].copy()))

    if plan is not None:
        jumps, lw = plan.counts, plan.log_weight
    else:
        jumps, lw = np.zeros((B, S + 1), dtype=np.int64), np.zeros((B, S + 1))
    return Ensemble(grid, times, out_norms, jumps, lw, ups_h, ups_v, c, blowup, states)


def g_eval(noise: NoiseCoefficient, u: VelocityField, mark: int) -> VelocityField:
    return noise.apply(u, mark)


def step(state: VelocityField, params: SolverParams, noise: NoiseCoefficient | None = None,
         space: MarkSpace | None = None, marks=(), t: float = 0.0,
         control: ControlField | None = None, theta: float = 1.0) -> VelocityField:
    """Advance one step of size ``params.dt`` from time ``t``.

    ``marks`` lists the atoms falling in ``(t, t + dt]`` in time order; each is
    applied as ``u <- u + eps * G(u-, z)`` after the continuous substep.
    """
    integ = _Integrator(state.grid, params, noise, space, control, mode="spde")
    c = integ.advance(state.coeffs[None], t, theta)
    for j in marks:
        c = c + params.eps * noise.jump_raw(c, np.array([j]))
    if not np.isfinite(c).all():
        raise NumericalError(f"non-finite state after step at t={t:g}",
                             {"time": t, "norms": norms(state).as_tuple()})
    return VelocityField(state.grid, c[0])


def simulate_ensemble(u0: VelocityField, params: SolverParams, noise: NoiseCoefficient,
                      space: MarkSpace, seed: int, n_paths: int,
                      control: ControlField | None = None, first_index: int = 0,
                      chunk: int = 4096) -> Ensemble:
    """``n_paths`` independent trajectories; path ``i`` uses stream ``(seed, first_index + i)``."""
    if control is not None and control.n_marks != space.size:
        raise ValueError("control and mark space disagree on the number of marks")
    parts = []
    for lo in range(0, n_paths, chunk):
        idx = range(first_index + lo, first_index + min(lo + chunk, n_paths))
        plan = _plan_jumps(seed, idx, params, space, control)
        integ = _Integrator(u0.grid, params, noise, space, control, mode="spde")
        c0 = np.broadcast_to(u0.coeffs, (len(idx),) + u0.coeffs.shape)
        parts.append(integrate_paths(c0, u0.grid, params, integ, plan))
    return parts[0] if len(parts) == 1 else Ensemble.concatenate(parts)


def simulate(u0: VelocityField, params: SolverParams, noise: NoiseCoefficient,
             space: MarkSpace, seed: int, control: ControlField | None = None,
             store_stride: int | None = None, index: int = 0) -> Trajectory:
    """One trajectory of the (possibly tilted) small-noise equation.

    The running Girsanov log-weight is recorded alongside; it is identically
    zero for the unit control.
    """
    plan = _plan_jumps(seed, [index], params, space, control)
    integ = _Integrator(u0.grid, params, noise, space, control, mode="spde")
    ens = integrate_paths(u0.coeffs[None], u0.grid, params, integ, plan, store_stride)
    return ens.trajectory(0)


def energy_diagnostic(traj: Trajectory) -> dict:
    """Path-space quantities recomputed from the stored norm series."""
    if traj.n_steps == 0:
        h, v, d = traj.norms[0]
        return {"sup_h2": h * h, "int_v2": 0.0, "sup_v2": v * v, "int_da2": 0.0}
    sq = traj.norms ** 2
    dt = np.diff(traj.times)
    trap = lambda y: float((0.5 * (y[1:] + y[:-1]) * dt).sum())
    return {
        "sup_h2": float(sq[:, 0].max()),
        "int_v2": trap(sq[:, 1]),
        "sup_v2": float(sq[:, 1].max()),
        "int_da2": trap(sq[:, 2]),
    }
