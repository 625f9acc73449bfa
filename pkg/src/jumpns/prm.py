"""
Poisson random measures over a finite mark space.

The base measure ``N`` lives on ``(0, T] x Z x (0, r_max]`` with intensity
``dt x nu(dz) x dr``. Counting measures driven by an intensity control are
obtained by thinning: an atom ``(t, z, r)`` is kept iff ``r <= scale*phi(t, z)``.
Because ``Z`` is finite, every path has finitely many atoms and all the
stochastic integrals below are plain sums.

Random streams: trajectory ``i`` of a run seeded with ``seed`` draws from
``PCG64(SeedSequence(seed, spawn_key=(i,)))`` (see :func:`stream`), so ensembles
can be split across batches without changing any individual path.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def stream(seed: int, index: int = 0) -> np.random.Generator:
    """Independent, reproducible generator for trajectory ``index``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.PCG64(ss))


def as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return stream(seed, 0)


@dataclass(frozen=True, eq=False)
class MarkSpace:
    """Finite marks ``z_1..z_M`` with positive weights ``nu(z_j)``."""

    weights: np.ndarray
    labels: tuple = ()

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float)).copy()
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a non-empty 1-d sequence")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("mark weights must be finite and strictly positive")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        labels = tuple(self.labels) or tuple(f"z{j + 1}" for j in range(w.size))
        if len(labels) != w.size:
            raise ValueError("one label per mark required")
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return self.weights.size

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())


@dataclass(frozen=True, eq=False)
class MarkedPointSample:
    """Atoms ``(t, mark, r)`` of the base measure, sorted by time."""

    horizon: float
    r_max: float
    times: np.ndarray
    marks: np.ndarray
    r: np.ndarray

    def __len__(self):
        return self.times.size

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "mark", "r"])
            for t, j, r in zip(self.times, self.marks, self.r):
                w.writerow([repr(float(t)), int(j), repr(float(r))])
        return path


@dataclass(frozen=True, eq=False)
class CountingSample:
    """Atoms ``(t, mark)`` of a thinned measure ``N^phi``."""

    horizon: float
    times: np.ndarray
    marks: np.ndarray

    def __len__(self):
        return self.times.size


def sample_base_prm(seed, T: float, space: MarkSpace, r_max: float) -> MarkedPointSample:
    """One path of the base PRM on ``(0, T] x Z x (0, r_max]``."""
    if not T > 0:
        raise ValueError("horizon T must be positive")
    if r_max < 0:
        raise ValueError("r_max must be nonnegative")
    rng = as_generator(seed)
    count = int(rng.poisson(T * space.total_mass * r_max)) if r_max > 0 else 0
    times = T * (1.0 - rng.random(count))
    marks = rng.choice(space.size, size=count, p=space.weights / space.total_mass)
    r = r_max * (1.0 - rng.random(count))
    order = np.argsort(times, kind="stable")
    return MarkedPointSample(float(T), float(r_max), times[order], marks[order], r[order])


@dataclass(frozen=True, eq=False)
class ControlField:
    """Deterministic intensity control, piecewise constant in time.

    ``values[i, j]`` is the control on ``(t_i, t_{i+1}] x {z_j}``; all values
    lie in ``[1/bound_n, bound_n]``.
    """

    breakpoints: np.ndarray
    values: np.ndarray
    bound_n: int = field(default=None)

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float).copy()
        vals = np.atleast_2d(np.asarray(self.values, dtype=float)).copy()
        if bp.ndim != 1 or bp.size < 2 or bp[0] != 0.0 or np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must start at 0 and increase strictly")
        if vals.shape[0] != bp.size - 1:
            raise ValueError("values need one row per time interval")
        if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
            raise ValueError("control values must be finite and positive")
        bound = self.bound_n
        if bound is None:
            bound = _smallest_bound(vals)
        bound = int(bound)
        tol = 1e-12
        if bound < 1 or vals.max() > bound * (1 + tol) or vals.min() < (1 - tol) / bound:
            raise ValueError(f"control values leave [1/{bound}, {bound}]")
        bp.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "bound_n", bound)

    @classmethod
    def constant(cls, T: float, n_marks: int, value: float = 1.0, n_intervals: int = 1,
                 bound_n: int | None = None) -> "ControlField":
        bp = np.linspace(0.0, T, n_intervals + 1)
        return cls(bp, np.full((n_intervals, n_marks), float(value)), bound_n)

    @classmethod
    def unit(cls, T: float, n_marks: int) -> "ControlField":
        return cls.constant(T, n_marks, 1.0)

    @property
    def horizon(self) -> float:
        return float(self.breakpoints[-1])

    @property
    def durations(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    @property
    def n_marks(self) -> int:
        return self.values.shape[1]

    @property
    def is_unit(self) -> bool:
        return bool(np.all(self.values == 1.0))

    def interval_index(self, t) -> np.ndarray:
        idx = np.searchsorted(self.breakpoints, t, side="left") - 1
        return np.clip(idx, 0, self.values.shape[0] - 1)

    def __call__(self, t, marks) -> np.ndarray:
        return self.values[self.interval_index(t), marks]

    def at(self, t: float) -> np.ndarray:
        """Row of per-mark values at time ``t``."""
        return self.values[int(self.interval_index(t))]

    def integrate(self, weights: np.ndarray, t: float, fn=None) -> float:
        """``int_0^t sum_j fn(g(s, z_j)) weights_j ds`` (``fn`` defaults to identity)."""
        vals = self.values if fn is None else fn(self.values)
        rates = vals @ np.asarray(weights, dtype=float)
        lo = self.breakpoints[:-1]
        overlap = np.clip(np.minimum(self.breakpoints[1:], t) - lo, 0.0, None)
        return float(overlap @ rates)

    def scaled_deviation(self, factor: float, bound_n: int | None = None) -> "ControlField":
        """Control ``1 + factor * (g - 1)`` on the same breakpoints."""
        return ControlField(self.breakpoints, 1.0 + factor * (self.values - 1.0), bound_n)

    def to_dict(self) -> dict:
        return {
            "breakpoints": [float(x) for x in self.breakpoints],
            "values": [[float(x) for x in row] for row in self.values],
            "bound_n": int(self.bound_n),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ControlField":
        unknown = set(d) - {"breakpoints", "values", "bound_n"}
        if unknown:
            raise ValueError(f"unknown control keys: {sorted(unknown)}")
        return cls(d["breakpoints"], d["values"], d.get("bound_n"))

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path

    @classmethod
    def load(cls, path) -> "ControlField":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _smallest_bound(vals: np.ndarray) -> int:
    worst = max(float(vals.max()), 1.0 / float(vals.min()), 1.0)
    n = math.ceil(worst)
    # absorb representation error such as 1/(1/3) = 3.0000000000000004
    if n - worst > 1 - 1e-9:
        n -= 1
    return max(n, 1)


def _coverage(sample: MarkedPointSample, phi: ControlField, scale: float):
    need = scale * float(phi.values.max())
    if need > sample.r_max * (1 + 1e-12):
        raise ValueError(
            f"thinning window {need:g} exceeds sampled r_max {sample.r_max:g}; "
            "draw the base sample with a larger r_max")


def thin(sample: MarkedPointSample, phi: ControlField, scale: float = 1.0) -> CountingSample:
    """Keep atoms with ``r <= scale * phi(t, z)``: a sample of ``N^{scale*phi}``."""
    if scale < 0:
        raise ValueError("scale must be nonnegative")
    _coverage(sample, phi, scale)
    if len(sample) == 0 or scale == 0:
        keep = np.zeros(len(sample), dtype=bool)
    else:
        keep = sample.r <= scale * phi(sample.times, sample.marks)
    return CountingSample(sample.horizon, sample.times[keep], sample.marks[keep])


def entropy_density(g) -> np.ndarray:
    """``g log g - g + 1`` with ``0 log 0 = 0``."""
    g = np.asarray(g, dtype=float)
    glogg = np.where(g > 0, g * np.log(np.where(g > 0, g, 1.0)), 0.0)
    return glogg - g + 1.0


def entropy_LT(g: ControlField, space: MarkSpace) -> float:
    """``L_T(g) = sum_i dt_i sum_j (g_ij log g_ij - g_ij + 1) nu_j``."""
    if g.n_marks != space.size:
        raise ValueError("control and mark space disagree on the number of marks")
    dens = entropy_density(g.values)
    return float(g.durations @ (dens @ space.weights))


def check_admissible(g: ControlField, N: float, space: MarkSpace) -> bool:
    """Membership of ``g`` in ``S^N``."""
    return entropy_LT(g, space) <= N


def compensator_log_term(phi: ControlField, eps: float, space: MarkSpace, t: float | None = None) -> float:
    """``eps^-1 int_0^t sum_j (phi - 1) nu_j ds``."""
    t = phi.horizon if t is None else t
    return phi.integrate(space.weights, t, fn=lambda v: v - 1.0) / eps


def girsanov_log_weight(base: MarkedPointSample, phi: ControlField, eps: float,
                        space: MarkSpace) -> float:
    """``log M^eps_T`` for the tilt ``psi = 1/phi``.

    Sum of ``log(1/phi)`` over the atoms of ``N^{phi/eps}`` plus the
    compensator ``eps^-1 sum_i dt_i sum_j (phi_ij - 1) nu_j``. Under the base
    law ``E[exp(log M)] = 1`` and reweighting by ``M`` turns ``N^{phi/eps}``
    into ``N^{1/eps}`` in law.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    kept = thin(base, phi, 1.0 / eps)
    jumps = -np.log(phi(kept.times, kept.marks)).sum() if len(kept) else 0.0
    return float(jumps + compensator_log_term(phi, eps, space))
