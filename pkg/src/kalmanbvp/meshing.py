"""Error estimation and adaptive mesh refinement.

Pointwise error estimates (posterior standard deviation, ODE residual of
the posterior mean, or the moment bound on the linearized residual) are
accumulated into per-interval errors by Bayesian quadrature on the fixed
unit nodes {0, 1/3, 1/2, 2/3, 1}.  The interior nodes coincide exactly with
the points inserted by the split rules, so their posterior evaluations are
reusable after refinement.  Intervals whose accumulated error exceeds the
tolerance get one midpoint if halving is predicted to suffice (error decay
``2^-rho``) and two points at the thirds otherwise, never more.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import erf

from .errors import DomainError, SingularCovarianceError
from .inference import Posterior, interpolate
from .information import BVProblem, linearize, ode_residual
from .prior import IWPPrior, projection

__all__ = [
    "ErrorEstimatorKind",
    "IntervalErrors",
    "UNIT_NODES",
    "interval_nodes",
    "pointwise_error",
    "bq_weights",
    "bq_variance",
    "integrated_square_estimate",
    "interval_error",
    "interval_errors",
    "refine",
]

# Unit-interval quadrature nodes; the interior ones are exactly the points a
# split inserts, so evaluations can be reused in the next round.
UNIT_NODES = (0.0, 1.0 / 3.0, 0.5, 2.0 / 3.0, 1.0)


class ErrorEstimatorKind(enum.Enum):
    STD_DEV = "std-dev"
    RESIDUAL = "residual"
    PROBABILISTIC_RESIDUAL = "prob-residual"


@dataclass(frozen=True)
class IntervalErrors:
    """Accumulated error per mesh interval plus the evaluation nodes used."""

    eps: np.ndarray
    nodes_used: tuple[np.ndarray, ...]

    def __post_init__(self):
        eps = np.asarray(self.eps, dtype=float)
        object.__setattr__(self, "eps", eps)
        if np.any(eps < 0):
            raise ValueError("interval errors must be nonnegative")

    @property
    def max(self) -> float:
        return float(np.max(self.eps)) if self.eps.size else 0.0


def interval_nodes(t_lo: float, t_hi: float) -> np.ndarray:
    """Quadrature nodes of one interval; refinement inserts the same points."""
    h = t_hi - t_lo
    return np.array([t_lo + u * h for u in UNIT_NODES])


def pointwise_error(
    posterior: Posterior,
    problem: BVProblem,
    prior: IWPPrior,
    t: float,
    kind: ErrorEstimatorKind,
) -> np.ndarray:
    """Componentwise error estimate at ``t`` (length ``d``).

    ``STD_DEV`` reads the marginal standard deviation of the solution value
    off the dense output.  ``RESIDUAL`` evaluates the ODE defect of the
    posterior mean.  ``PROBABILISTIC_RESIDUAL`` pushes the dense-output
    Gaussian through the residual linearized at its mean, and distributes
    the second moment per component so the squared norm of the returned
    vector is the moment bound numerator (mean energy plus total variance).
    """
    t0, tmax = problem.domain
    if not t0 <= t <= tmax:
        raise DomainError(f"t={t:g} outside [{t0:g}, {tmax:g}]")
    belief = interpolate(posterior, t)
    if kind is ErrorEstimatorKind.STD_DEV:
        values = projection(prior, 0) @ belief.cov_sqrt
        return np.sqrt(np.sum(values**2, axis=1))
    if kind is ErrorEstimatorKind.RESIDUAL:
        return ode_residual(problem, prior, belief.mean, t)
    if kind is ErrorEstimatorKind.PROBABILISTIC_RESIDUAL:
        model = linearize(problem, prior, belief.mean, t)
        mean = model.matrix @ belief.mean + model.offset
        factor = model.matrix @ belief.cov_sqrt
        variances = np.sum(factor**2, axis=1)
        return np.sqrt(mean**2 + variances)
    raise ValueError(f"unknown estimator kind {kind!r}")


def _matern_embedding_12(c: np.ndarray) -> np.ndarray:
    return (1.0 - np.exp(-c)) + (1.0 - np.exp(-(1.0 - c)))


def _matern_half(s: np.ndarray, a: float, order: int) -> np.ndarray:
    """One-sided integral of a half-integer Matern kernel from 0 to ``s``."""
    e = np.exp(-a * s)
    if order == 1:
        return (1.0 - e) / a
    if order == 3:
        return (2.0 - (2.0 + a * s) * e) / a
    if order == 5:
        return (8.0 - (8.0 + 5.0 * a * s + (a * s) ** 2) * e) / (3.0 * a)
    raise ValueError(f"unsupported half-integer order {order}")


def _kernel_functions(kind: str):
    """Kernel, mean embedding over U[0,1], and its double integral."""
    if kind == "matern12":
        a = 1.0
        kern = lambda r: np.exp(-a * r)
        emb = lambda c: _matern_half(c, a, 1) + _matern_half(1.0 - c, a, 1)
        # 2 * int_0^1 (1-r) k(r) dr
        double = 2.0 * (_matern_half(np.array(1.0), a, 1) - (1.0 - 2.0 * math.exp(-1.0)))
        return kern, emb, float(double)
    if kind == "matern32":
        a = math.sqrt(3.0)
        kern = lambda r: (1.0 + a * r) * np.exp(-a * r)
        emb = lambda c: _matern_half(c, a, 3) + _matern_half(1.0 - c, a, 3)
        g1 = (3.0 - (3.0 + 3.0 * a + a**2) * math.exp(-a)) / a**2
        double = 2.0 * (float(_matern_half(np.array(1.0), a, 3)) - g1)
        return kern, emb, double
    if kind == "matern52":
        a = math.sqrt(5.0)
        kern = lambda r: (1.0 + a * r + (a * r) ** 2 / 3.0) * np.exp(-a * r)
        emb = lambda c: _matern_half(c, a, 5) + _matern_half(1.0 - c, a, 5)
        g1 = (5.0 - (5.0 + 5.0 * a + 2.0 * a**2 + a**3 / 3.0) * math.exp(-a)) / a**2
        double = 2.0 * (float(_matern_half(np.array(1.0), a, 5)) - g1)
        return kern, emb, double
    if kind == "gauss":
        kern = lambda r: np.exp(-(r**2) / 2.0)
        emb = lambda c: math.sqrt(math.pi / 2.0) * (erf((1.0 - c) / math.sqrt(2.0)) + erf(c / math.sqrt(2.0)))
        double = 2.0 * (math.sqrt(math.pi / 2.0) * erf(1.0 / math.sqrt(2.0)) - (1.0 - math.exp(-0.5)))
        return kern, emb, float(double)
    raise ValueError(f"unknown kernel kind '{kind}'")


def kernel_for_order(nu: int) -> str:
    """Kernel matched to the smoothness of the residual; smooth fallback above 3."""
    if nu <= 1:
        return "matern12"
    if nu == 2:
        return "matern32"
    if nu == 3:
        return "matern52"
    return "gauss"


@lru_cache(maxsize=None)
def _weights_cached(kind: str, nodes: tuple[float, ...]) -> tuple[tuple[float, ...], float]:
    kern, emb, double = _kernel_functions(kind)
    x = np.asarray(nodes, dtype=float)
    gram = kern(np.abs(x[:, None] - x[None, :]))
    embeddings = np.array([float(emb(np.array(c))) for c in x])
    jittered = False
    for attempt in range(2):
        try:
            chol = np.linalg.cholesky(gram)
            break
        except np.linalg.LinAlgError:
            if jittered:
                raise SingularCovarianceError(f"singular quadrature Gram matrix for nodes {nodes}")
            gram = gram + 1e-12 * np.eye(x.shape[0])
            jittered = True
    else:  # pragma: no cover
        raise SingularCovarianceError(f"singular quadrature Gram matrix for nodes {nodes}")
    w = np.linalg.solve(chol.T, np.linalg.solve(chol, embeddings))
    variance = double - float(embeddings @ w)
    return tuple(w), max(variance, 0.0)


@lru_cache(maxsize=None)
def _second_moment_model(kind: str, nodes: tuple[float, ...]):
    """Cached pieces of the posterior second moment of a kernel model.

    For a process with kernel ``k`` observed exactly at the nodes, the
    posterior expectation of its integrated square over [0, 1] is
    ``y^T A y + amp(y) * v`` with ``A = K^-1 Omega K^-1``,
    ``Omega_ij = int k(t, x_i) k(t, x_j) dt``, ``v`` the integrated posterior
    variance, and the kernel amplitude fitted empirically from the values.
    Modelling the signed profile (rather than its square) captures interior
    sign changes of residual bumps, which a fixed weighted sum of squared
    values cannot.
    """
    from scipy.integrate import quad

    kern, _, _ = _kernel_functions(kind)
    x = np.asarray(nodes, dtype=float)
    n = x.shape[0]
    gram = kern(np.abs(x[:, None] - x[None, :])) + 1e-12 * np.eye(n)
    omega = np.array(
        [
            [
                quad(lambda t: float(kern(abs(t - xi)) * kern(abs(t - xj))), 0.0, 1.0, epsabs=1e-13)[0]
                for xj in x
            ]
            for xi in x
        ]
    )
    kinv_omega = np.linalg.solve(gram, omega)
    quad_form = np.linalg.solve(gram, kinv_omega.T).T  # K^-1 Omega K^-1
    kern_at_zero = float(kern(np.array(0.0)))  # int k(t,t) dt over the unit interval
    var_integral = max(kern_at_zero - float(np.trace(kinv_omega)), 0.0)
    gram_inv = np.linalg.inv(gram)
    return quad_form, gram_inv, var_integral


def integrated_square_estimate(kind: str, values: np.ndarray, nodes=UNIT_NODES) -> float:
    """Estimate of ``int_0^1 f(t)^2 dt`` from exact values of ``f`` at nodes."""
    quad_form, gram_inv, var_integral = _second_moment_model(kind, tuple(float(u) for u in nodes))
    values = np.asarray(values, dtype=float)
    amplitude = float(values @ gram_inv @ values) / values.shape[0]
    return float(values @ quad_form @ values) + amplitude * var_integral


def bq_weights(kind_of_kernel: str, nodes) -> np.ndarray:
    """Bayesian quadrature weights for the uniform measure on [0, 1]."""
    nodes = tuple(float(u) for u in nodes)
    if len(set(nodes)) != len(nodes):
        raise ValueError("quadrature nodes must be distinct")
    w, _ = _weights_cached(kind_of_kernel, nodes)
    return np.asarray(w)


def bq_variance(kind_of_kernel: str, nodes) -> float:
    """Posterior variance of the quadrature estimate (for calibration tests)."""
    _, v = _weights_cached(kind_of_kernel, tuple(float(u) for u in nodes))
    return v


def interval_error(
    posterior: Posterior,
    problem: BVProblem,
    prior: IWPPrior,
    t_lo: float,
    t_hi: float,
    kind: ErrorEstimatorKind,
) -> float:
    """Accumulated error of one interval: sqrt of the integrated squared norm.

    The residual and standard-deviation profiles are integrated as the
    posterior second moment of a kernel model over the profile itself; for
    the residual the endpoint nodes are known exact zeros (the constraint is
    enforced at mesh nodes), so only the interior nodes are evaluated.  The
    moment-bound estimator is already in squared units and uses the plain
    quadrature weights on those values.
    """
    nodes = interval_nodes(t_lo, t_hi)
    kernel = kernel_for_order(prior.nu)
    h = t_hi - t_lo
    if kind is ErrorEstimatorKind.PROBABILISTIC_RESIDUAL:
        weights = bq_weights(kernel, UNIT_NODES)
        total = 0.0
        for j, t in enumerate(nodes):
            e = pointwise_error(posterior, problem, prior, float(t), kind)
            total += weights[j] * float(e @ e) * h
        return math.sqrt(max(total, 0.0))
    values = np.zeros((len(nodes), problem.d))
    skip_endpoints = kind is ErrorEstimatorKind.RESIDUAL
    for j, t in enumerate(nodes):
        if skip_endpoints and (j == 0 or j == len(nodes) - 1):
            continue
        values[j] = pointwise_error(posterior, problem, prior, float(t), kind)
    total = sum(integrated_square_estimate(kernel, values[:, c]) for c in range(problem.d))
    return math.sqrt(max(total * h, 0.0))


def interval_errors(
    posterior: Posterior,
    problem: BVProblem,
    prior: IWPPrior,
    kind: ErrorEstimatorKind,
) -> IntervalErrors:
    """``interval_error`` over every interval of the posterior's mesh."""
    mesh = posterior.mesh
    eps = np.empty(mesh.shape[0] - 1)
    nodes_used = []
    for n in range(mesh.shape[0] - 1):
        eps[n] = interval_error(posterior, problem, prior, mesh[n], mesh[n + 1], kind)
        nodes_used.append(interval_nodes(mesh[n], mesh[n + 1]))
    return IntervalErrors(eps, tuple(nodes_used))


def refine(mesh, errors: IntervalErrors, tol: float, rho: float) -> tuple[np.ndarray, bool]:
    """Split-1/split-2 refinement rule.

    Keeps intervals below ``tol``; inserts the midpoint when error decay
    ``2^-rho`` under halving suffices, and the two third-points otherwise
    (capped at two insertions per interval).
    """
    if tol <= 0.0:
        raise ValueError("tolerance must be positive")
    mesh = np.asarray(mesh, dtype=float)
    if errors.eps.shape[0] != mesh.shape[0] - 1:
        raise ValueError("one error per mesh interval required")
    new_points: list[float] = []
    for n, eps in enumerate(errors.eps):
        if eps <= tol:
            continue
        nodes = interval_nodes(mesh[n], mesh[n + 1])
        if eps * 2.0 ** (-rho) <= tol:
            new_points.append(float(nodes[2]))
        else:
            new_points.extend((float(nodes[1]), float(nodes[3])))
    if not new_points:
        return mesh.copy(), False
    return np.unique(np.concatenate([mesh, np.asarray(new_points)])), True
