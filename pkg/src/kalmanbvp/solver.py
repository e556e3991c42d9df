"""Outer solve loop: smooth, calibrate, estimate errors, refine, repeat.

Each round runs the iterated smoother on the current mesh (warm-started
from the previous round's dense output), re-estimates the diffusion scale
and the initial distribution, accumulates per-interval errors, and refines
the mesh where they exceed the tolerance.  The loop stops when every
interval is below tolerance or the refinement budget is exhausted; partial
results are returned with a status rather than raised away.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .calibration import em_update
from .inference import Posterior, ieks_solve, interpolate
from .information import BVProblem
from .meshing import ErrorEstimatorKind, IntervalErrors, interval_errors, refine
from .prior import IWPPrior

__all__ = ["SolverConfig", "Solution", "RefinementRecord", "solve"]


@dataclass(frozen=True)
class SolverConfig:
    """Configuration of one adaptive solve.

    ``initial_mesh`` is either a node count (equidistant) or an explicit
    grid; ``rho`` defaults to ``order + 1/2`` when not overridden.
    """

    order: int = 4
    tol: float = 1e-6
    estimator: ErrorEstimatorKind = ErrorEstimatorKind.STD_DEV
    init_strategy: str = "bridge"
    initial_mesh: int | np.ndarray = 3
    max_refinements: int = 20
    max_ieks_iters: int = 10
    rtol_fixpoint: float = 1e-10
    em_every: Optional[int] = None
    rho_override: Optional[float] = None
    calibrate_sigma: bool = True
    adapt_initial_distribution: bool = True

    def __post_init__(self):
        if self.tol <= 0.0:
            raise ValueError("tol must be positive")
        if isinstance(self.initial_mesh, (int, np.integer)):
            if self.initial_mesh < 2:
                raise ValueError("initial mesh needs at least the two endpoints")
        else:
            grid = np.asarray(self.initial_mesh, dtype=float)
            if grid.shape[0] < 2:
                raise ValueError("initial mesh needs at least the two endpoints")
            object.__setattr__(self, "initial_mesh", grid)

    @property
    def rho(self) -> float:
        return self.rho_override if self.rho_override is not None else self.order + 0.5

    def build_mesh(self, t0: float, tmax: float) -> np.ndarray:
        if isinstance(self.initial_mesh, (int, np.integer)):
            return np.linspace(t0, tmax, int(self.initial_mesh))
        grid = np.asarray(self.initial_mesh, dtype=float)
        if grid[0] != t0 or grid[-1] != tmax:
            raise ValueError("explicit initial mesh must span the problem domain")
        return grid


@dataclass(frozen=True)
class RefinementRecord:
    """Diagnostics of one round of the outer loop."""

    n_nodes: int
    sigma_sq: float
    ieks_iterations: int
    max_interval_error: float
    wall_time_s: float
    converged_ieks: bool


@dataclass(frozen=True)
class Solution:
    """Adaptive solve result: final posterior, per-round diagnostics, status."""

    posterior: Posterior
    diagnostics: tuple[RefinementRecord, ...]
    status: str
    interval_errors: IntervalErrors = field(default=None, compare=False)

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def solve(problem: BVProblem, config: SolverConfig = SolverConfig()) -> Solution:
    """Adaptive probabilistic solve of a boundary value problem."""
    if config.order < problem.ode_order:
        raise ValueError(
            f"prior order {config.order} is below the ODE order {problem.ode_order}"
        )
    prior = IWPPrior(d=problem.d, nu=config.order)
    mesh = config.build_mesh(*problem.domain)

    posterior: Optional[Posterior] = None
    records: list[RefinementRecord] = []
    errors: Optional[IntervalErrors] = None
    status = "max_refinements_reached"

    for round_index in range(config.max_refinements + 1):
        start = time.perf_counter()
        if posterior is None:
            init_strategy, guess = config.init_strategy, None
        else:
            # Warm start: dense output of the previous round on the new mesh.
            init_strategy = "user_guess"
            guess = np.array([interpolate(posterior, t).mean for t in mesh])
        try:
            posterior = ieks_solve(
                problem,
                prior,
                mesh,
                init_strategy=init_strategy,
                max_iters=config.max_ieks_iters,
                rtol_fixpoint=config.rtol_fixpoint,
                em_every=config.em_every,
                guess=guess,
                calibrate_sigma=config.calibrate_sigma,
            )
        except FloatingPointError:
            status = "ieks_failed"
            break
        if not np.all(np.isfinite(posterior.means())):
            status = "ieks_failed"
            break
        prior = posterior.prior
        if config.adapt_initial_distribution:
            m0_new, c0_new = em_update(posterior, prior.m0, posterior.sigma_sq)
            prior = prior.with_init(m0_new, c0_new)

        errors = interval_errors(posterior, problem, prior, config.estimator)
        records.append(
            RefinementRecord(
                n_nodes=mesh.shape[0],
                sigma_sq=posterior.sigma_sq,
                ieks_iterations=posterior.iterations,
                max_interval_error=errors.max,
                wall_time_s=time.perf_counter() - start,
                converged_ieks=posterior.converged,
            )
        )
        if errors.max <= config.tol:
            status = "converged"
            break
        if round_index == config.max_refinements:
            status = "max_refinements_reached"
            break
        mesh, changed = refine(mesh, errors, config.tol, config.rho)
        if not changed:  # pragma: no cover - refine always changes above tol
            status = "max_refinements_reached"
            break

    if posterior is None:
        raise RuntimeError("solver failed before producing any posterior")
    return Solution(
        posterior=posterior,
        diagnostics=tuple(records),
        status=status,
        interval_errors=errors,
    )
