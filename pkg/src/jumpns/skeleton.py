"""
Controlled deterministic dynamics (the zero-noise limit under a control ``g``):

    du/dt + nu A u + B(u) = f + sum_j G(u, z_j) (g(t, z_j) - 1) nu_j

Integrated with exactly the same stepping code as the stochastic solver, so
skeleton and stochastic paths differ only through the noise terms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .prm import ControlField, MarkSpace, entropy_LT
from .spde import NoiseCoefficient, SolverParams, Trajectory, _Integrator, integrate_paths
from .spectral import VelocityField, norm_squares


@dataclass(frozen=True, eq=False)
class SkeletonProblem:
    u0: VelocityField
    params: SolverParams
    noise: NoiseCoefficient
    space: MarkSpace
    control: ControlField | None = None

    def with_control(self, g: ControlField | None) -> "SkeletonProblem":
        return SkeletonProblem(self.u0, self.params, self.noise, self.space, g)

    def entropy(self) -> float:
        if self.control is None:
            return 0.0
        return entropy_LT(self.control, self.space)


def shifted_drift(u: VelocityField, noise: NoiseCoefficient, g: ControlField, t: float,
                  space: MarkSpace) -> VelocityField:
    """``sum_j G(u, z_j) (g(t, z_j) - 1) nu(z_j)``."""
    w = (g.at(t) - 1.0) * space.weights
    return VelocityField(u.grid, noise.weighted_sum_raw(u.coeffs, w))


def solve_skeleton(problem: SkeletonProblem, store_stride: int | None = None) -> Trajectory:
    p = problem
    if p.control is not None and p.control.n_marks != p.space.size:
        raise ValueError("control and mark space disagree on the number of marks")
    integ = _Integrator(p.u0.grid, p.params, p.noise, p.space, p.control, mode="skeleton")
    ens = integrate_paths(p.u0.coeffs[None], p.u0.grid, p.params, integ, None, store_stride)
    return ens.trajectory(0)


def solve_deterministic(u0: VelocityField, params: SolverParams,
                        store_stride: int | None = None) -> Trajectory:
    """Plain forced Navier-Stokes run (no noise terms at all)."""
    integ = _Integrator(u0.grid, params, None, None, None, mode="deterministic")
    ens = integrate_paths(u0.coeffs[None], u0.grid, params, integ, None, store_stride)
    return ens.trajectory(0)


def path_distance(a: Trajectory, b: Trajectory) -> float:
    """``sup_t ||a - b||_V^2 + int ||a - b||_D(A)^2 dt`` from stored states."""
    if a.states is None or b.states is None:
        raise ValueError("path_distance needs trajectories solved with store_stride")
    if len(a.states) != len(b.states):
        raise ValueError("trajectories stored on different time grids")
    ta = np.array([t for t, _ in a.states])
    diff = np.stack([x.coeffs - y.coeffs for (_, x), (_, y) in zip(a.states, b.states)])
    sq = norm_squares(diff, a.final.grid)
    sup_v2 = float(sq[:, 1].max())
    d2 = sq[:, 2]
    integral = float((0.5 * (d2[1:] + d2[:-1]) * np.diff(ta)).sum())
    return sup_v2 + integral


def skeleton_continuity_probe(g_sequence, g_limit: ControlField, template: SkeletonProblem) -> list:
    """Distances ``d_n`` between ``u^{g_n}`` and ``u^{g_limit}`` in path space."""
    ref = solve_skeleton(template.with_control(g_limit), store_stride=1)
    return [path_distance(solve_skeleton(template.with_control(g), store_stride=1), ref)
            for g in g_sequence]
