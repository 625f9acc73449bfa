"""Jump-driven stochastic Navier-Stokes on the 2-D torus.

Simulation, skeleton (zero-noise controlled) dynamics and small-noise
large-deviation checks for a Poisson-driven multiplicative noise.
"""

__version__ = "0.1.0"

from .spectral import (NormTriple, SpectralGrid, VelocityField, apply_stokes, bilinear,
                       inner_h, l4_norm, leray_project, load_snapshot, make_grid, norms,
                       random_field, save_snapshot, single_mode)
from .prm import (ControlField, CountingSample, MarkSpace, MarkedPointSample, check_admissible,
                  entropy_LT, girsanov_log_weight, sample_base_prm, stream, thin)
from .spde import (Ensemble, NoiseCoefficient, NumericalError, SolverParams, Trajectory,
                   energy_diagnostic, g_eval, simulate, simulate_ensemble, step, theta_cutoff)
from .skeleton import (SkeletonProblem, path_distance, shifted_drift, skeleton_continuity_probe,
                       solve_deterministic, solve_skeleton)
from .ldp import (EventFunctional, InfeasibleError, OptimizerConfig, ProbabilityEstimate,
                  RateEstimate, ScalingTable, importance_sampled_probability, ldp_scaling_table,
                  mc_probability, minimize_rate)

__all__ = [
    "NormTriple", "SpectralGrid", "VelocityField", "apply_stokes", "bilinear", "inner_h",
    "l4_norm", "leray_project", "load_snapshot", "make_grid", "norms", "random_field",
    "save_snapshot", "single_mode",
    "ControlField", "CountingSample", "MarkSpace", "MarkedPointSample", "check_admissible",
    "entropy_LT", "girsanov_log_weight", "sample_base_prm", "stream", "thin",
    "Ensemble", "NoiseCoefficient", "NumericalError", "SolverParams", "Trajectory",
    "energy_diagnostic", "g_eval", "simulate", "simulate_ensemble", "step", "theta_cutoff",
    "SkeletonProblem", "path_distance", "shifted_drift", "skeleton_continuity_probe",
    "solve_deterministic", "solve_skeleton",
    "EventFunctional", "InfeasibleError", "OptimizerConfig", "ProbabilityEstimate",
    "RateEstimate", "ScalingTable", "importance_sampled_probability", "ldp_scaling_table",
    "mc_probability", "minimize_rate",
]
