"""
Run configuration: schema, loading and construction of solver objects.

Configs are TOML (or JSON carrying the same structure) with the sections
``grid``, ``noise``, ``initial``, ``solver``, ``experiment`` and ``output``.
Every section rejects unknown keys, and all validation happens before any
computation starts. A minimal TOML example::

    [grid]
    n_modes = 8

    [noise]
    weights = [0.3, 0.2]
    sigma = [-1.0, -1.0]
    base_field = {kind = "modes", modes = [{kx = 1, ky = 0, amplitude = 0.3183}]}

    [initial]
    kind = "zero"

    [solver]
    dt = 0.05
    T = 1.0
    eps = 0.1

Field specs (``base_field``, ``initial``, ``solver.forcing`` and the event
reference) take one of four kinds: ``zero``, ``modes`` (a list of
single-wavevector modes), ``random`` (seeded random field with a power-law
spectrum, ``amplitude`` is the H norm) or ``snapshot`` (a binary field file).
"""

from __future__ import annotations

import json
import math
import sys
from pathlib import Path
from typing import List, Literal, Optional

import numpy as np
from pydantic import (BaseModel, ConfigDict, Field, PrivateAttr, ValidationError,
                      field_validator, model_validator)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .ldp import EventFunctional, OptimizerConfig
from .prm import ControlField, MarkSpace
from .skeleton import SkeletonProblem, solve_skeleton
from .spde import NoiseCoefficient, SolverParams
from .spectral import (SpectralGrid, VelocityField, load_snapshot, make_grid, random_field,
                       single_mode)


class ConfigError(ValueError):
    """Raised for anything wrong with a config: syntax, schema or referenced files."""


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ModeSpec(_Section):
    kx: int
    ky: int
    amplitude: float = 1.0
    phase: float = 0.0


class FieldSpec(_Section):
    kind: Literal["zero", "modes", "random", "snapshot"] = "zero"
    modes: List[ModeSpec] = Field(default_factory=list)
    seed: int = 0
    spectrum_decay: float = Field(2.0, gt=1.0)
    amplitude: float = Field(1.0, ge=0.0)
    path: Optional[str] = None
    scale: float = 1.0

    @model_validator(mode="after")
    def _consistent(self):
        if self.kind == "modes" and not self.modes:
            raise ValueError("kind 'modes' needs a non-empty 'modes' list")
        if self.kind == "snapshot" and not self.path:
            raise ValueError("kind 'snapshot' needs 'path'")
        return self


class GridSection(_Section):
    n_modes: int = Field(..., ge=8)
    domain_length: float = Field(2 * math.pi, gt=0)
    dealias_fraction: float = Field(2.0 / 3.0, gt=0, le=1)

    @field_validator("n_modes")
    @classmethod
    def _even(cls, v):
        if v % 2:
            raise ValueError("n_modes must be even")
        return v


class NoiseSection(_Section):
    weights: List[float] = Field(..., min_length=1)
    sigma: List[float]
    labels: List[str] = Field(default_factory=list)
    base_field: FieldSpec = FieldSpec()
    linear_gain: float = 0.0

    @field_validator("weights")
    @classmethod
    def _positive(cls, v):
        if any(not (w > 0 and math.isfinite(w)) for w in v):
            raise ValueError("mark weights must be finite and positive")
        return v

    @model_validator(mode="after")
    def _sizes(self):
        if len(self.sigma) != len(self.weights):
            raise ValueError("sigma needs one entry per mark")
        if self.labels and len(self.labels) != len(self.weights):
            raise ValueError("labels need one entry per mark")
        return self


class SolverSection(_Section):
    dt: float = Field(..., gt=0)
    T: float = Field(..., gt=0)
    eps: float = Field(1.0, gt=0)
    viscosity: float = Field(1.0, gt=0)
    cutoff_m: Optional[float] = Field(None, gt=0)
    guard: Optional[float] = Field(None, gt=0)
    nonlinear: bool = True
    scheme: Literal["integrating_factor", "imex_euler"] = "integrating_factor"
    drift_form: Literal["base", "tilted"] = "base"
    forcing: Optional[FieldSpec] = None

    @model_validator(mode="after")
    def _divides(self):
        steps = round(self.T / self.dt)
        if steps < 1 or abs(steps * self.dt - self.T) > 1e-9 * self.T:
            raise ValueError(f"dt={self.dt} does not divide T={self.T}")
        return self


class ControlSpec(_Section):
    breakpoints: List[float]
    values: List[List[float]]
    bound_n: Optional[int] = Field(None, ge=1)


class EventSpec(_Section):
    """Event specification.

    ``terminal_distance_below`` needs a reference field: either ``reference``
    (a field spec) or ``planted`` (a control whose skeleton endpoint becomes
    the reference; the control is then a known feasible point).
    """

    kind: Literal["terminal_energy_above", "sup_V_norm_above", "terminal_distance_below"]
    threshold: float
    reference: Optional[FieldSpec] = None
    planted: Optional[ControlSpec] = None

    @model_validator(mode="after")
    def _reference(self):
        if self.reference is not None and self.planted is not None:
            raise ValueError("give either 'reference' or 'planted', not both")
        if (self.kind == "terminal_distance_below" and self.reference is None
                and self.planted is None):
            raise ValueError("terminal_distance_below needs 'reference' or 'planted'")
        return self


class OptimizerSection(_Section):
    n_intervals: int = Field(4, ge=1)
    bound_n: int = Field(20, ge=2)
    restarts: int = Field(1, ge=0)
    max_evals: int = Field(600, ge=10)
    tolerance: float = Field(1e-4, gt=0)
    polish: bool = True


class ProbeSection(_Section):
    """Continuity probe: ``g_n = 1 + h / n`` for ``n`` in ``levels``.

    ``h`` is a step function given by ``breakpoints`` and ``direction``
    (one row per interval, one column per mark); it may take either sign.
    """

    breakpoints: List[float]
    direction: List[List[float]]
    levels: List[int] = Field(default_factory=lambda: [1, 2, 4, 8, 16, 32, 64])

    @field_validator("levels")
    @classmethod
    def _positive(cls, v):
        if not v or any(n < 1 for n in v):
            raise ValueError("probe levels must be positive integers")
        return v


class ExperimentSection(_Section):
    seed: int = 0
    n_paths: int = Field(1, ge=1)
    control: Optional[ControlSpec] = None
    control_file: Optional[str] = None
    deterministic: bool = False
    event: Optional[EventSpec] = None
    optimizer: OptimizerSection = OptimizerSection()
    eps_grid: List[float] = Field(default_factory=list)
    budgets: List[int] = Field(default_factory=list)
    tilted_budgets: Optional[List[int]] = None
    band: float = Field(0.25, gt=0)
    min_hits: int = Field(30, ge=1)
    n_samples: int = Field(1000, ge=0)
    tilted: bool = False
    probe: Optional[ProbeSection] = None

    @model_validator(mode="after")
    def _checks(self):
        if self.control is not None and self.control_file is not None:
            raise ValueError("give either 'control' or 'control_file', not both")
        if 0 < len(self.eps_grid) < 3:
            raise ValueError("eps_grid needs at least three values")
        if any(e <= 0 for e in self.eps_grid):
            raise ValueError("eps_grid entries must be positive")
        if any(b >= a for a, b in zip(self.eps_grid, self.eps_grid[1:])):
            raise ValueError("eps_grid must be strictly decreasing")
        if any(b < 0 for b in self.budgets):
            raise ValueError("budgets must be nonnegative")
        if self.eps_grid and len(self.budgets) != len(self.eps_grid):
            raise ValueError("budgets need one entry per eps_grid value")
        if self.tilted_budgets is not None and len(self.tilted_budgets) != len(self.eps_grid):
            raise ValueError("tilted_budgets need one entry per eps_grid value")
        return self


class OutputSection(_Section):
    directory: Optional[str] = None
    snapshot_stride: int = Field(0, ge=0)
    write_paths: int = Field(16, ge=0)


class RunConfig(_Section):
    grid: GridSection
    noise: Optional[NoiseSection] = None
    initial: FieldSpec = FieldSpec()
    solver: SolverSection
    experiment: ExperimentSection = ExperimentSection()
    output: OutputSection = OutputSection()
    _base_dir: Path = PrivateAttr(default_factory=Path.cwd)

    @property
    def base_dir(self) -> Path:
        """Directory that relative file names in the config resolve against."""
        return self._base_dir

    def canonical(self) -> dict:
        """Plain-JSON form with defaults filled in; stable under re-parsing."""
        return self.model_dump(mode="json")

    def with_seed(self, seed: int) -> "RunConfig":
        exp = self.experiment.model_copy(update={"seed": int(seed)})
        out = self.model_copy(update={"experiment": exp})
        out._base_dir = self._base_dir
        return out


# ---------------------------------------------------------------------------
# loading


def parse_config(data: dict, base_dir: Path | None = None) -> RunConfig:
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
    if base_dir is not None:
        cfg._base_dir = Path(base_dir)
    return cfg


def load_config(path) -> RunConfig:
    """Read a ``.toml`` or ``.json`` config file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_bytes()
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(text)
        else:
            data = tomllib.loads(text.decode("utf-8"))
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(data, path.parent)


def _resolve(cfg: RunConfig, name: str) -> Path:
    p = Path(name)
    if not p.is_absolute():
        p = cfg.base_dir / p
    return p


# ---------------------------------------------------------------------------
# construction


def build_grid(cfg: RunConfig) -> SpectralGrid:
    g = cfg.grid
    return make_grid(g.n_modes, g.domain_length, g.dealias_fraction)


def build_field(spec: FieldSpec, grid: SpectralGrid, cfg: RunConfig | None = None) -> VelocityField:
    try:
        if spec.kind == "zero":
            u = VelocityField.zeros(grid)
        elif spec.kind == "modes":
            u = VelocityField.zeros(grid)
            for m in spec.modes:
                u = u + single_mode(grid, m.kx, m.ky, m.amplitude, m.phase)
        elif spec.kind == "random":
            u = random_field(spec.seed, grid, spec.spectrum_decay, spec.amplitude)
        else:
            path = _resolve(cfg, spec.path) if cfg is not None else Path(spec.path)
            if not path.is_file():
                raise ConfigError(f"snapshot file not found: {path}")
            u = load_snapshot(path)
            if u.grid.n_modes != grid.n_modes or u.grid.domain_length != grid.domain_length:
                raise ConfigError(f"snapshot {path} was written on a different grid")
            u = VelocityField(grid, u.coeffs)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return u * spec.scale if spec.scale != 1.0 else u


def build_space(cfg: RunConfig) -> MarkSpace:
    if cfg.noise is None:
        raise ConfigError("this command needs a [noise] section")
    return MarkSpace(cfg.noise.weights, tuple(cfg.noise.labels))


def build_noise(cfg: RunConfig, grid: SpectralGrid) -> NoiseCoefficient:
    if cfg.noise is None:
        raise ConfigError("this command needs a [noise] section")
    b = build_field(cfg.noise.base_field, grid, cfg)
    return NoiseCoefficient(cfg.noise.sigma, b, cfg.noise.linear_gain)


def build_params(cfg: RunConfig, grid: SpectralGrid) -> SolverParams:
    s = cfg.solver
    forcing = build_field(s.forcing, grid, cfg) if s.forcing is not None else None
    return SolverParams(dt=s.dt, T=s.T, eps=s.eps, viscosity=s.viscosity, cutoff_m=s.cutoff_m,
                        forcing=forcing, guard=s.guard, nonlinear=s.nonlinear, scheme=s.scheme,
                        drift_form=s.drift_form)


def build_template(cfg: RunConfig) -> SkeletonProblem:
    grid = build_grid(cfg)
    return SkeletonProblem(build_field(cfg.initial, grid, cfg), build_params(cfg, grid),
                           build_noise(cfg, grid), build_space(cfg))


def _control_from_spec(spec: ControlSpec) -> ControlField:
    try:
        return ControlField(spec.breakpoints, spec.values, spec.bound_n)
    except ValueError as exc:
        raise ConfigError(f"invalid control: {exc}") from exc


def build_control(cfg: RunConfig, required: bool = False) -> ControlField | None:
    exp = cfg.experiment
    if exp.control is not None:
        g = _control_from_spec(exp.control)
    elif exp.control_file is not None:
        path = _resolve(cfg, exp.control_file)
        if not path.is_file():
            raise ConfigError(f"control file not found: {path}")
        try:
            g = ControlField.load(path)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    elif required:
        raise ConfigError("experiment needs 'control' or 'control_file'")
    else:
        return None
    if abs(g.horizon - cfg.solver.T) > 1e-12 * cfg.solver.T:
        raise ConfigError(f"control horizon {g.horizon} differs from T={cfg.solver.T}")
    if cfg.noise is not None and g.n_marks != len(cfg.noise.weights):
        raise ConfigError("control and noise section disagree on the number of marks")
    return g


def build_event(cfg: RunConfig, template: SkeletonProblem):
    """``(event, planted_control)``; the second item is ``None`` unless planted."""
    ev = cfg.experiment.event
    if ev is None:
        raise ConfigError("experiment needs an 'event' table")
    grid = template.u0.grid
    planted = None
    ref = None
    if ev.reference is not None:
        ref = build_field(ev.reference, grid, cfg)
    elif ev.planted is not None:
        planted = _control_from_spec(ev.planted)
        if planted.n_marks != template.space.size:
            raise ConfigError("planted control and noise section disagree on the number of marks")
        ref = solve_skeleton(template.with_control(planted)).final
    try:
        return EventFunctional(ev.kind, ev.threshold, ref), planted
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_optimizer(cfg: RunConfig) -> OptimizerConfig:
    o = cfg.experiment.optimizer
    return OptimizerConfig(n_intervals=o.n_intervals, bound_n=o.bound_n, restarts=o.restarts,
                           max_evals=o.max_evals, tolerance=o.tolerance, polish=o.polish)


def build_probe(cfg: RunConfig):
    """``(g_sequence, g_limit, levels)`` for the continuity probe, or ``None``."""
    probe = cfg.experiment.probe
    if probe is None:
        return None
    h = np.asarray(probe.direction, dtype=float)
    try:
        limit = ControlField(probe.breakpoints, np.ones_like(h), 1)
        seq = [ControlField(probe.breakpoints, 1.0 + h / n) for n in probe.levels]
    except ValueError as exc:
        raise ConfigError(f"probe direction: {exc}") from exc
    return seq, limit, list(probe.levels)
