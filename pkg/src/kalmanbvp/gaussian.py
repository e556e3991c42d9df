"""Square-root Gaussian algebra.

Every belief in the solver is a Gaussian stored as a mean plus a square-root
covariance factor ``S`` with ``C = S @ S.T``.  All transformations
(pushforward, conditioning, prediction) go through orthogonal-triangular
decompositions so covariances stay symmetric positive semidefinite even for
exactly singular (Dirac) directions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, RankDeficiencyError, SingularCovarianceError

__all__ = [
    "Gaussian",
    "AffineMap",
    "Innovation",
    "triangularize",
    "marginal",
    "condition",
    "sample",
    "logpdf",
]

# Relative threshold below which a triangular diagonal entry counts as zero.
_RANK_RTOL = 1e-11
# Residual components this far (relative) outside the reachable subspace of a
# singular Dirac update indicate genuinely inconsistent observations.
_CONSISTENCY_RTOL = 1e-8


def _as_vector(x, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1:
        raise DimensionMismatchError(f"{name} must be a vector, got shape {arr.shape}")
    return arr


def _as_matrix(x, name: str) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(x, dtype=float))
    if arr.ndim != 2:
        raise DimensionMismatchError(f"{name} must be a matrix, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class Gaussian:
    """Gaussian with covariance in square-root form, ``C = cov_sqrt @ cov_sqrt.T``.

    Attributes:
        mean: Mean vector of length ``k``.
        cov_sqrt: ``k x r`` factor; usually square lower-triangular, but
            rectangular factors (rank-deficient directions) are allowed.
    """

    mean: np.ndarray
    cov_sqrt: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", _as_vector(self.mean, "mean"))
        object.__setattr__(self, "cov_sqrt", _as_matrix(self.cov_sqrt, "cov_sqrt"))
        if self.cov_sqrt.shape[0] != self.mean.shape[0]:
            raise DimensionMismatchError(
                f"mean has length {self.mean.shape[0]} but factor has "
                f"{self.cov_sqrt.shape[0]} rows"
            )

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def cov(self) -> np.ndarray:
        return self.cov_sqrt @ self.cov_sqrt.T

    def std(self) -> np.ndarray:
        """Componentwise marginal standard deviations."""
        return np.sqrt(np.sum(self.cov_sqrt**2, axis=1))


@dataclass(frozen=True)
class AffineMap:
    """Affine transformation ``x -> matrix @ x + offset``.

    ``label`` names the observation in error messages and is ignored for
    equality.
    """

    matrix: np.ndarray
    offset: np.ndarray
    label: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "matrix", _as_matrix(self.matrix, "matrix"))
        object.__setattr__(self, "offset", _as_vector(self.offset, "offset"))
        if self.offset.shape[0] != self.matrix.shape[0]:
            raise DimensionMismatchError(
                f"offset length {self.offset.shape[0]} does not match "
                f"{self.matrix.shape[0]} matrix rows"
            )

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x + self.offset


@dataclass(frozen=True)
class Innovation:
    """Residual of one update: ``z = data - predicted``, with sqrt covariance.

    ``sqrt_cov`` excludes any global diffusion scale when recorded by a
    filtering pass, so the quasi-likelihood machinery can profile that scale
    in closed form.
    """

    residual: np.ndarray
    sqrt_cov: np.ndarray
    label: str = field(default="", compare=False)

    @property
    def dim(self) -> int:
        return self.residual.shape[0]


def triangularize(factor: np.ndarray) -> np.ndarray:
    """Compress a ``k x r`` factor to a ``k x k`` lower-triangular one.

    Preserves ``factor @ factor.T`` exactly (up to rounding) via QR of the
    transpose.
    """
    factor = _as_matrix(factor, "factor")
    k, r = factor.shape
    if r == 0:
        return np.zeros((k, k))
    _, rt = np.linalg.qr(factor.T, mode="reduced")
    out = rt.T
    if out.shape[1] < k:
        out = np.hstack([out, np.zeros((k, k - out.shape[1]))])
    return out


def _split_triangular(top: np.ndarray, bottom: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Joint lower-triangularization of a stacked factor ``[[top], [bottom]]``.

    For a joint covariance ``J @ J.T`` with ``J = [[top], [bottom]]`` returns
    blocks ``(L11, L21, L22)`` of the lower-triangular factor, where ``L11``
    factors the top marginal, ``L21 @ L11^+`` is the regression gain of the
    bottom block on the top block, and ``L22`` factors the conditional
    covariance of the bottom block given the top block.
    """
    nz = top.shape[0]
    nx = bottom.shape[0]
    joint = np.vstack([top, bottom])
    tri = triangularize(joint)
    return tri[:nz, :nz], tri[nz:, :nz], tri[nz : nz + nx, nz : nz + nx]


def _gain_from_blocks(
    l11: np.ndarray, l21: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Solve ``K @ L11 = L21`` tolerating exactly singular directions.

    Returns ``(gain, unreachable, leftover)``: an orthonormal basis of the
    unreachable (left-null) directions of ``L11`` for data-consistency
    checks, and the columns ``L21 @ N`` over the right null space.  The
    leftover columns carry conditional variance that the triangularization
    smeared into ``L21`` (exact cross-covariance vanishes there, so they
    belong to the conditional factor, not to the explained part).
    """
    nz = l11.shape[0]
    nx = l21.shape[0]
    if nz == 0:
        return np.zeros((nx, 0)), np.zeros((0, 0)), np.zeros((nx, 0))
    diag = np.abs(np.diag(l11))
    top = diag.max(initial=0.0)
    if top > 0.0 and diag.min() > _RANK_RTOL * top:
        # Fast path: numerically nonsingular triangular factor.
        return np.linalg.solve(l11.T, l21.T).T, np.zeros((nz, 0)), np.zeros((nx, 0))
    u, s, vt = np.linalg.svd(l11)
    cutoff = _RANK_RTOL * max(s[0] if s.size else 0.0, 1e-300)
    rank = int(np.sum(s > cutoff))
    inv = vt[:rank].T @ np.diag(1.0 / s[:rank]) @ u[:, :rank].T if rank else np.zeros_like(l11.T)
    right_null = vt[rank:].T
    return l21 @ inv, u[:, rank:], l21 @ right_null


def marginal(g: Gaussian, affine: AffineMap) -> Gaussian:
    """Pushforward ``N(A m + b, A C A^T)`` in square-root form."""
    if affine.matrix.shape[1] != g.dim:
        raise DimensionMismatchError(
            f"map expects dimension {affine.matrix.shape[1]}, Gaussian has {g.dim}"
        )
    mean = affine(g.mean)
    factor = triangularize(affine.matrix @ g.cov_sqrt)
    return Gaussian(mean, factor)


def condition(
    g: Gaussian,
    obs: AffineMap,
    data,
    noise_sqrt=None,
) -> tuple[Gaussian, Innovation]:
    """Condition ``g`` on ``obs.matrix @ x + obs.offset + eta = data``.

    ``eta ~ N(0, noise_sqrt @ noise_sqrt.T)``; a zero (or ``None``) factor is
    a noise-free Dirac observation.  Singular innovation directions are
    dropped when the residual agrees with them (redundant constraints) and
    raise :class:`RankDeficiencyError` when it does not, since that signals
    inconsistent observations.

    Returns:
        Conditioned Gaussian and the :class:`Innovation` of the update.
    """
    data = _as_vector(data, "data")
    nz = obs.matrix.shape[0]
    if obs.matrix.shape[1] != g.dim:
        raise DimensionMismatchError(
            f"observation expects dimension {obs.matrix.shape[1]}, Gaussian has {g.dim}"
        )
    if data.shape[0] != nz:
        raise DimensionMismatchError(
            f"data length {data.shape[0]} does not match {nz} observation rows"
        )
    if noise_sqrt is None:
        noise_sqrt = np.zeros((nz, nz))
    noise_sqrt = _as_matrix(noise_sqrt, "noise_sqrt") if nz else np.zeros((0, 0))
    if noise_sqrt.shape[0] != nz:
        raise DimensionMismatchError(
            f"noise factor has {noise_sqrt.shape[0]} rows, expected {nz}"
        )

    obs_factor = np.hstack([obs.matrix @ g.cov_sqrt, noise_sqrt])
    state_factor = np.hstack([g.cov_sqrt, np.zeros((g.dim, noise_sqrt.shape[1]))])
    l11, l21, l22 = _split_triangular(obs_factor, state_factor)

    residual = data - obs(g.mean)
    gain, null_basis, leftover = _gain_from_blocks(l11, l21)
    if null_basis.shape[1] > 0:
        unreachable = null_basis.T @ residual
        scale = 1.0 + float(np.max(np.abs(data), initial=0.0)) + float(np.max(np.abs(obs(g.mean)), initial=0.0))
        if np.any(np.abs(unreachable) > _CONSISTENCY_RTOL * scale):
            name = obs.label or "observation"
            raise RankDeficiencyError(
                f"noise-free update '{name}' has a singular innovation covariance "
                f"with conflicting data (unreachable residual {unreachable})"
            )
    mean = g.mean + gain @ residual
    factor = l22 if leftover.shape[1] == 0 else triangularize(np.hstack([l22, leftover]))
    posterior = Gaussian(mean, factor)
    return posterior, Innovation(residual, l11, label=obs.label)


def sample(g: Gaussian, seed) -> np.ndarray:
    """Draw ``m + S u`` with ``u`` standard normal from a seeded generator."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    u = rng.standard_normal(g.cov_sqrt.shape[1])
    return g.mean + g.cov_sqrt @ u


def logpdf(g: Gaussian, x) -> float:
    """Gaussian log-density; raises on singular covariance."""
    x = _as_vector(x, "x")
    if x.shape[0] != g.dim:
        raise DimensionMismatchError(f"point has length {x.shape[0]}, Gaussian has {g.dim}")
    factor = triangularize(g.cov_sqrt)
    diag = np.abs(np.diag(factor))
    if np.any(diag <= _RANK_RTOL * max(diag.max(initial=0.0), 1e-300)):
        raise SingularCovarianceError("logpdf requires a nondegenerate covariance")
    w = np.linalg.solve(factor, x - g.mean)
    logdet = np.sum(np.log(diag))
    return float(-0.5 * w @ w - logdet - 0.5 * g.dim * math.log(2.0 * math.pi))
