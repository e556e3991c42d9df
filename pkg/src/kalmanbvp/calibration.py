"""Hyperparameter adaptation: diffusion quasi-MLE and initial-state EM step.

Because all observations are noise-free and the prior depends on its
diffusion scale only multiplicatively, the profile likelihood of that scale
has a closed-form maximizer built from the whitened innovations of a single
filtering pass.  The initial mean and covariance get one
expectation-maximization step from the smoothing marginal at the left
endpoint whenever the outer loop restarts the smoother anyway.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import SingularCovarianceError
from .gaussian import triangularize
from .inference import Innovations, Posterior

__all__ = ["CalibrationState", "quasi_mle_sigma", "em_update", "quasi_loglik", "innovation_loglik"]

_RANK_RTOL = 1e-11


@dataclass(frozen=True)
class CalibrationState:
    """Current hyperparameters plus the profile log-likelihood at them."""

    sigma_sq: float
    m0: np.ndarray
    c0_sqrt: np.ndarray
    quasi_loglik: float

    def __post_init__(self):
        if self.sigma_sq <= 0.0:
            raise ValueError("sigma_sq must be positive")


def _whitened_stats(innovations: Innovations) -> tuple[float, int, float]:
    """Whitened residual energy, informative dimension count, and log-det.

    Exactly singular innovation directions with matching residuals carry no
    information about the diffusion scale (they are enforced constraints)
    and are excluded from all three statistics; singular directions with
    conflicting residuals raise.  The log-determinant sums over the
    scale-free innovation covariances restricted to their supports.
    """
    total = 0.0
    dims = 0
    logdet = 0.0
    for block in innovations.blocks:
        if block.dim == 0:
            continue
        factor = triangularize(block.sqrt_cov)
        diag = np.abs(np.diag(factor))
        top = diag.max(initial=0.0)
        if top == 0.0 or np.any(diag <= _RANK_RTOL * top):
            w, *_ = np.linalg.lstsq(factor, block.residual, rcond=None)
            reached = factor @ w
            scale = 1.0 + float(np.max(np.abs(block.residual), initial=0.0))
            if np.max(np.abs(reached - block.residual), initial=0.0) > 1e-8 * scale:
                raise SingularCovarianceError(
                    f"innovation block '{block.label}' has a singular covariance "
                    "with a conflicting residual"
                )
            keep = diag > _RANK_RTOL * max(top, 1e-300)
            total += float(w @ w)
            dims += int(np.sum(keep))
            logdet += float(2.0 * np.sum(np.log(diag[keep])))
        else:
            w = solve_triangular(factor, block.residual, lower=True)
            total += float(w @ w)
            dims += block.dim
            logdet += float(2.0 * np.sum(np.log(diag)))
    return total, dims, logdet


def quasi_mle_sigma(innovations: Innovations) -> float:
    """Closed-form maximizer of the diffusion profile likelihood.

    Expects innovation factors recorded without the diffusion scale; for
    full-rank blocks this is the whitened residual energy divided by the
    total number of constrained dimensions.
    """
    psi0, psi1, _ = _whitened_stats(innovations)
    if psi1 == 0:
        return 0.0
    return psi0 / psi1


def quasi_loglik(innovations: Innovations, sigma_sq: float) -> float:
    """Innovation log-likelihood as a function of the diffusion scale.

    Up to an additive constant: ``-(psi0 / sigma_sq + psi1 log sigma_sq)/2``.
    Maximized exactly at the closed-form estimate.
    """
    if sigma_sq <= 0.0:
        raise ValueError("sigma_sq must be positive")
    psi0, psi1, _ = _whitened_stats(innovations)
    return -0.5 * (psi0 / sigma_sq + psi1 * math.log(sigma_sq))


def innovation_loglik(innovations: Innovations, sigma_sq: float) -> float:
    """Full marginal log-likelihood of one pass (2-pi constant dropped).

    Unlike :func:`quasi_loglik` this keeps the log-determinants of the
    scale-free innovation covariances, which change when the initial
    distribution is re-estimated; expectation-maximization monotonicity
    only holds for this full form.  Its maximizer over ``sigma_sq`` is
    still the closed-form estimate.
    """
    if sigma_sq <= 0.0:
        raise ValueError("sigma_sq must be positive")
    psi0, psi1, logdet = _whitened_stats(innovations)
    return -0.5 * (psi0 / sigma_sq + psi1 * math.log(sigma_sq) + logdet)


def em_update(posterior: Posterior, m0_old: np.ndarray, sigma_sq: float) -> tuple[np.ndarray, np.ndarray]:
    """One M-step for the initial distribution from the smoothing marginal.

    Returns the new initial mean (the smoothed mean at the left endpoint)
    and a square-root factor of the new scale-free initial covariance,
    ``C0_new = C_map(t0) / sigma_sq + dm dm^T / sigma_sq`` with
    ``dm = m0_new - m0_old``, assembled by factor concatenation.

    The smoothing covariance is exactly singular along enforced constraints;
    a relative spectral floor (1e-10 of each coordinate's variance, plus a
    vanishing absolute term) keeps the updated prior numerically
    nondegenerate so later passes produce meaningful innovations.
    """
    if sigma_sq <= 0.0:
        raise ValueError("sigma_sq must be positive")
    m0_old = np.asarray(m0_old, dtype=float)
    at_start = posterior.node_beliefs[0]
    m0_new = at_start.mean.copy()
    dm = (m0_new - m0_old)[:, None]
    sigma = math.sqrt(sigma_sq)
    base = np.hstack([at_start.cov_sqrt / sigma, dm / sigma])
    variances = np.sum(base**2, axis=1)
    floor = np.sqrt(1e-10 * (variances + 1e-14 * variances.max(initial=0.0) + 1e-300))
    c0_sqrt = triangularize(np.hstack([base, np.diag(floor)]))
    return m0_new, c0_sqrt
