"""Problem definitions and the ODE/boundary measurement models.

A boundary value problem of order ``m`` is written as
``y^(m)(t) = f(y^(m-1), ..., y', y, t)`` together with two-point boundary
data.  The differential equation enters inference through the map whose
zero encodes it on the stacked prior state,

    residual(x, t) = P_m x - f(P_{m-1} x, ..., P_0 x, t),

and its first-order Taylor linearizations.  Higher-order equations are
handled directly on the stacked state rather than via first-order
transformation, which keeps the per-step cost low.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .bridge import BoundaryConditions, lifted_operators
from .errors import DimensionMismatchError, LinearizationError
from .gaussian import AffineMap
from .prior import IWPPrior, projection

__all__ = ["BVProblem", "LinearizedObservation", "ode_residual", "linearize", "boundary_observations"]

_FD_STEP = 1e-6


@dataclass(frozen=True)
class BVProblem:
    """Boundary value problem ``y^(m) = f(y^(m-1), ..., y, t)``.

    Attributes:
        f: Vector field taking the ``m`` derivative arguments (highest
            first) followed by the time, returning a length-``d`` array.
        bc: Two-point boundary conditions.
        ode_order: Order ``m`` of the equation (1 for first-order form).
        d: State dimension of the equation.
        jac: Optional list of the ``m`` Jacobians, ``jac[k]`` being
            ``df/dy^(k)`` with the same call signature as ``f``; missing
            Jacobians fall back to central finite differences.
        analytic_solution: Optional exact solution ``t -> R^d`` for testing.
        name: Identifier used in diagnostics.
    """

    f: Callable[..., np.ndarray]
    bc: BoundaryConditions
    ode_order: int = 1
    d: int = 1
    jac: Optional[Sequence[Callable[..., np.ndarray]]] = None
    analytic_solution: Optional[Callable[[float], np.ndarray]] = None
    name: str = field(default="", compare=False)

    def __post_init__(self):
        if self.ode_order < 1:
            raise ValueError("ode_order must be at least 1")
        if self.bc.d != self.d:
            raise DimensionMismatchError(
                f"boundary conditions act on dimension {self.bc.d}, problem has d={self.d}"
            )
        if self.jac is not None and len(self.jac) != self.ode_order:
            raise DimensionMismatchError("need one Jacobian per derivative argument")

    @property
    def domain(self) -> tuple[float, float]:
        return (self.bc.t0, self.bc.tmax)

    def rhs(self, args: Sequence[np.ndarray], t: float) -> np.ndarray:
        out = np.atleast_1d(np.asarray(self.f(*args, t), dtype=float))
        if out.shape != (self.d,):
            raise DimensionMismatchError(
                f"vector field returned shape {out.shape}, expected ({self.d},)"
            )
        return out


@dataclass(frozen=True)
class LinearizedObservation:
    """Tangent model ``residual(x, t) ~ matrix @ x + offset`` around ``point``."""

    matrix: np.ndarray
    offset: np.ndarray
    point: np.ndarray
    t: float

    def as_affine(self, label: str = "") -> AffineMap:
        return AffineMap(self.matrix, self.offset, label=label or f"ode t={self.t:g}")


def _stack_args(problem: BVProblem, prior: IWPPrior, state: np.ndarray) -> list[np.ndarray]:
    """Derivative arguments of ``f`` (highest first) read from the state."""
    return [projection(prior, k) @ state for k in range(problem.ode_order - 1, -1, -1)]


def ode_residual(problem: BVProblem, prior: IWPPrior, state: np.ndarray, t: float) -> np.ndarray:
    """Defect of the stacked state under the differential equation at ``t``."""
    if prior.nu < problem.ode_order:
        raise ValueError(f"prior order {prior.nu} below ODE order {problem.ode_order}")
    state = np.asarray(state, dtype=float)
    if state.shape != (prior.state_dim,):
        raise DimensionMismatchError(
            f"state has shape {state.shape}, expected ({prior.state_dim},)"
        )
    highest = projection(prior, problem.ode_order) @ state
    return highest - problem.rhs(_stack_args(problem, prior, state), t)


def _fd_jacobian(problem: BVProblem, args: list[np.ndarray], t: float, k: int) -> np.ndarray:
    """Central finite differences of ``f`` in its ``k``-th derivative argument."""
    pos = problem.ode_order - 1 - k
    base = args[pos]
    jac = np.zeros((problem.d, problem.d))
    for i in range(problem.d):
        step = _FD_STEP * (1.0 + abs(base[i]))
        hi = [a.copy() for a in args]
        lo = [a.copy() for a in args]
        hi[pos][i] += step
        lo[pos][i] -= step
        jac[:, i] = (problem.rhs(hi, t) - problem.rhs(lo, t)) / (2.0 * step)
    return jac


def linearize(problem: BVProblem, prior: IWPPrior, point: np.ndarray, t: float) -> LinearizedObservation:
    """First-order Taylor model of the ODE residual at ``point``."""
    point = np.asarray(point, dtype=float)
    residual = ode_residual(problem, prior, point, t)
    args = _stack_args(problem, prior, point)
    matrix = projection(prior, problem.ode_order).copy()
    for k in range(problem.ode_order):
        if problem.jac is not None:
            jac_k = np.atleast_2d(np.asarray(problem.jac[k](*args, t), dtype=float))
        else:
            jac_k = _fd_jacobian(problem, args, t, k)
        if jac_k.shape != (problem.d, problem.d):
            raise DimensionMismatchError(
                f"Jacobian {k} has shape {jac_k.shape}, expected ({problem.d}, {problem.d})"
            )
        matrix -= jac_k @ projection(prior, k)
    if not (np.all(np.isfinite(residual)) and np.all(np.isfinite(matrix))):
        raise LinearizationError(f"vector field not finite at t={t:g}", t=t)
    offset = residual - matrix @ point
    return LinearizedObservation(matrix, offset, point, float(t))


def boundary_observations(problem: BVProblem, prior: IWPPrior) -> tuple[AffineMap, AffineMap]:
    """Affine maps whose zeros enforce the two boundary conditions."""
    h_left, h_right = lifted_operators(problem.bc, prior)
    left = AffineMap(h_left, -problem.bc.y0, label="left boundary")
    right = AffineMap(h_right, -problem.bc.ymax, label="right boundary")
    return left, right
