"""Shared dense-covariance oracles for the square-root implementation."""

import numpy as np

from kalmanbvp.inference import _dense_prior
from kalmanbvp.prior import IWPPrior


def dense_marginal(mean, cov, a, b):
    """Textbook pushforward of N(mean, cov) through x -> a x + b."""
    return a @ mean + b, a @ cov @ a.T


def dense_condition(mean, cov, a, b, data, noise_cov):
    """Textbook Gaussian conditioning on a x + b + eta = data."""
    s = a @ cov @ a.T + noise_cov
    gain = cov @ a.T @ np.linalg.pinv(s, rcond=1e-13)
    residual = data - (a @ mean + b)
    post_mean = mean + gain @ residual
    post_cov = cov - gain @ s @ gain.T
    return post_mean, post_cov, residual, s


def dense_joint_prior(prior: IWPPrior, mesh):
    """Joint prior over all nodes (mean vector, covariance matrix)."""
    return _dense_prior(prior, np.asarray(mesh, dtype=float))


def condition_joint(mean, cov, rows, offsets, data):
    """Condition a dense joint Gaussian on stacked exact linear observations."""
    a = np.vstack(rows)
    b = np.concatenate(offsets)
    z = np.concatenate(data)
    post_mean, post_cov, _, _ = dense_condition(mean, cov, a, b, z, np.zeros((a.shape[0],) * 2))
    return post_mean, post_cov


def random_spd_sqrt(rng, k, scale=1.0):
    """Random well-conditioned square-root factor."""
    q, _ = np.linalg.qr(rng.standard_normal((k, k)))
    diag = scale * (0.5 + rng.random(k))
    return q @ np.diag(diag)
