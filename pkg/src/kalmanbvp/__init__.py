"""Gaussian-process boundary value problem solver with linear-time inference.

The solver places an integrated-Wiener-process prior on the ODE solution,
enforces boundary conditions and the differential equation as noise-free
observations, and computes the maximum-a-posteriori solution with an
iterated extended Kalman smoother.  Adaptive mesh refinement, diffusion
calibration, and initial-distribution adaptation run around that core.
"""

from .bridge import BoundaryConditions, bridge_initial, bridge_transition
from .calibration import CalibrationState, em_update, quasi_loglik, quasi_mle_sigma
from .gaussian import AffineMap, Gaussian, Innovation, condition, logpdf, marginal, sample
from .information import BVProblem, LinearizedObservation, boundary_observations, linearize, ode_residual
from .inference import (
    Innovations,
    Posterior,
    batch_gauss_newton_oracle,
    eks_initialize,
    ieks_iterate,
    ieks_solve,
    interpolate,
)
from .meshing import ErrorEstimatorKind, IntervalErrors, bq_weights, interval_error, pointwise_error, refine
from .prior import IWPPrior, Transition, discretize, precondition_factors, projection
from .problems import RegistryEntry, get, reference_solution, registered_names
from .solver import Solution, SolverConfig, solve

__all__ = [
    "AffineMap",
    "BVProblem",
    "BoundaryConditions",
    "CalibrationState",
    "ErrorEstimatorKind",
    "Gaussian",
    "Innovation",
    "Innovations",
    "IntervalErrors",
    "IWPPrior",
    "LinearizedObservation",
    "Posterior",
    "RegistryEntry",
    "Solution",
    "SolverConfig",
    "Transition",
    "batch_gauss_newton_oracle",
    "boundary_observations",
    "bq_weights",
    "bridge_initial",
    "bridge_transition",
    "condition",
    "discretize",
    "eks_initialize",
    "em_update",
    "get",
    "ieks_iterate",
    "ieks_solve",
    "interpolate",
    "interval_error",
    "linearize",
    "logpdf",
    "marginal",
    "ode_residual",
    "pointwise_error",
    "precondition_factors",
    "projection",
    "quasi_loglik",
    "quasi_mle_sigma",
    "reference_solution",
    "refine",
    "registered_names",
    "sample",
    "solve",
]
