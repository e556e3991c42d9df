"""Integrated-Wiener-process prior and its exact discretization.

The prior stacks a solution coordinate and its first ``nu`` derivatives per
ODE dimension (derivative-major: all derivatives of coordinate 0, then
coordinate 1, ...).  Transitions over a step ``h`` have the closed form

    Phi[i, j] = h^(j-i) / (j-i)!                          (j >= i)
    Q[i, j]   = h^(2nu+1-i-j) / ((2nu+1-i-j) (nu-i)! (nu-j)!)

per coordinate block, with process noise entering the model as
``sigma_sq * Q``.  Both are assembled through a diagonal step-size rescaling
under which the transition matrices become step-independent, which keeps
tiny steps (and tiny terminal gaps in bridge constructions) well conditioned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .errors import DimensionMismatchError

__all__ = ["IWPPrior", "Transition", "discretize", "precondition_factors", "projection"]


@dataclass(frozen=True)
class IWPPrior:
    """Prior over the stacked state of a solution and its derivatives.

    Attributes:
        d: ODE state dimension.
        nu: Number of integrations (modelled derivatives).
        sigma_sq: Diffusion scale of the driving Wiener process; process
            noise is ``sigma_sq * Q``.
        m0: Initial mean, length ``d * (nu + 1)``; defaults to zeros.
        c0_sqrt: Square-root factor of the initial covariance (the actual
            initial covariance is ``sigma_sq * c0_sqrt @ c0_sqrt.T``);
            defaults to identity.
    """

    d: int
    nu: int
    sigma_sq: float = 1.0
    m0: np.ndarray = field(default=None)
    c0_sqrt: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.d < 1 or self.nu < 1:
            raise ValueError("d and nu must be positive")
        if self.sigma_sq <= 0.0:
            raise ValueError("sigma_sq must be positive")
        k = self.state_dim
        m0 = np.zeros(k) if self.m0 is None else np.asarray(self.m0, dtype=float)
        c0 = np.eye(k) if self.c0_sqrt is None else np.asarray(self.c0_sqrt, dtype=float)
        if m0.shape != (k,):
            raise DimensionMismatchError(f"m0 must have length {k}, got {m0.shape}")
        if c0.shape[0] != k:
            raise DimensionMismatchError(f"c0_sqrt must have {k} rows, got {c0.shape}")
        object.__setattr__(self, "m0", m0)
        object.__setattr__(self, "c0_sqrt", c0)

    @property
    def state_dim(self) -> int:
        return self.d * (self.nu + 1)

    def with_sigma_sq(self, sigma_sq: float) -> "IWPPrior":
        return replace(self, sigma_sq=float(sigma_sq))

    def with_init(self, m0: np.ndarray, c0_sqrt: np.ndarray) -> "IWPPrior":
        return replace(self, m0=np.asarray(m0, float), c0_sqrt=np.asarray(c0_sqrt, float))


@dataclass(frozen=True)
class Transition:
    """Discrete-time transition ``x' ~ N(phi @ x, sigma_sq * q_sqrt @ q_sqrt.T)``.

    ``q_sqrt`` excludes the diffusion scale.
    """

    phi: np.ndarray
    q_sqrt: np.ndarray


@lru_cache(maxsize=None)
def _unit_q_cholesky(nu: int) -> np.ndarray:
    """Lower Cholesky factor of the step-free process noise matrix.

    The rescaled noise matrix ``[1 / (2nu+1-i-j)]`` is a reordered Hilbert
    matrix, so the inner products are accumulated in exact rational
    arithmetic (pivot square roots rounded to float) to dodge its notorious
    cancellation.
    """
    n = nu + 1
    q = [[Fraction(1, 2 * nu + 1 - i - j) for j in range(n)] for i in range(n)]
    chol = [[Fraction(0) for _ in range(n)] for _ in range(n)]
    for i in range(n):
        for j in range(i + 1):
            acc = q[i][j] - sum(chol[i][k] * chol[j][k] for k in range(j))
            chol[i][j] = Fraction(float(acc) ** 0.5) if i == j else acc / chol[j][j]
    return np.array([[float(chol[i][j]) for j in range(n)] for i in range(n)])


def _scaling_diag(nu: int, h: float) -> np.ndarray:
    """Diagonal of the step-size rescaling, ``h^(nu + 1/2 - j) / (nu - j)!``."""
    j = np.arange(nu + 1)
    return h ** (nu + 0.5 - j) / np.array([math.factorial(nu - jj) for jj in j])


def precondition_factors(prior: IWPPrior, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Step-size rescaling ``T`` and its exact inverse for one coordinate stack.

    ``T^-1 Phi(h) T`` and ``T^-1 Q(h) T^-T`` are independent of ``h``.
    """
    if h <= 0.0:
        raise ValueError("preconditioning requires a positive step")
    tau = _scaling_diag(prior.nu, float(h))
    full = np.tile(tau, prior.d)
    return np.diag(full), np.diag(1.0 / full)


@lru_cache(maxsize=None)
def _unit_phi(nu: int) -> np.ndarray:
    """Step-free transition matrix in rescaled coordinates."""
    n = nu + 1
    phi = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            phi[i, j] = math.factorial(nu - i) / (math.factorial(nu - j) * math.factorial(j - i))
    return phi


@lru_cache(maxsize=4096)
def _discretize_cached(d: int, nu: int, h: float) -> Transition:
    tau = _scaling_diag(nu, h)
    phi_1d = tau[:, None] * _unit_phi(nu) * (1.0 / tau)[None, :]
    q_sqrt_1d = tau[:, None] * _unit_q_cholesky(nu)
    eye = np.eye(d)
    phi = np.kron(eye, phi_1d)
    q_sqrt = np.kron(eye, q_sqrt_1d)
    phi.flags.writeable = False
    q_sqrt.flags.writeable = False
    return Transition(phi, q_sqrt)


def discretize(prior: IWPPrior, h: float) -> Transition:
    """Exact transition over a step ``h >= 0`` in square-root form.

    Cached per (dimension, order, step); uniform and refined meshes reuse a
    handful of distinct steps.  The returned arrays are read-only.
    """
    if h < 0.0:
        raise ValueError("step must be nonnegative")
    if h == 0.0:
        return Transition(np.eye(prior.state_dim), np.zeros((prior.state_dim, prior.state_dim)))
    return _discretize_cached(prior.d, prior.nu, float(h))


def projection(prior: IWPPrior, q: int) -> np.ndarray:
    """Selector of the ``q``-th derivative block from the stacked state."""
    if not 0 <= q <= prior.nu:
        raise ValueError(f"derivative index {q} outside 0..{prior.nu}")
    row = np.zeros(prior.nu + 1)
    row[q] = 1.0
    return np.kron(np.eye(prior.d), row[None, :])
