"""Kalman smoothing for the boundary value measurement model.

One forward-backward pass conditions the prior on both boundary conditions
and a linearization of the ODE at every mesh node, all as noise-free
updates in square-root form.  The extended smoother linearizes on the fly
at predictive means (initialization); the iterated smoother re-linearizes
every node at the previous smoothing mean, which makes each pass an exact
Gauss-Newton step for the constrained MAP problem.  A dense O(N^3)
least-squares formulation of the same step doubles as a test oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .bridge import BoundaryConditions, bridge_initial_with_innovations, bridge_predict_with_backward
from .errors import DimensionMismatchError, DomainError
from .gaussian import (
    AffineMap,
    Gaussian,
    Innovation,
    _gain_from_blocks,
    _split_triangular,
    condition,
    triangularize,
)
from .information import BVProblem, boundary_observations, linearize, ode_residual
from .prior import IWPPrior, discretize

__all__ = [
    "Posterior",
    "Innovations",
    "BackwardModel",
    "eks_initialize",
    "ieks_iterate",
    "ieks_solve",
    "interpolate",
    "batch_gauss_newton_oracle",
]


@dataclass(frozen=True)
class BackwardModel:
    """Affine Gaussian conditional ``x_n | x_{n+1} ~ N(gain x_{n+1} + offset, cov)``."""

    gain: np.ndarray
    offset: np.ndarray
    noise_sqrt: np.ndarray

    def push(self, g: Gaussian) -> Gaussian:
        mean = self.gain @ g.mean + self.offset
        factor = np.hstack([self.gain @ g.cov_sqrt, self.noise_sqrt])
        return Gaussian(mean, triangularize(factor))

    def scaled_noise(self, ratio: float) -> "BackwardModel":
        return BackwardModel(self.gain, self.offset, ratio * self.noise_sqrt)


@dataclass(frozen=True)
class Innovations:
    """Ordered residual/covariance blocks of all noise-free updates in a pass.

    Square-root covariances exclude the diffusion scale of the pass, so the
    closed-form diffusion estimate can be read off directly.
    """

    blocks: tuple[Innovation, ...]

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def total_dim(self) -> int:
        return sum(b.dim for b in self.blocks)


@dataclass(frozen=True)
class Posterior:
    """Smoothing posterior over the stacked state on a mesh.

    ``node_beliefs`` are the smoothed marginals, ``filter_beliefs`` the
    forward filtering marginals (needed for dense output), and
    ``backward_models`` the per-interval conditionals used by the backward
    pass.  ``sigma_sq`` is the diffusion scale the covariances correspond
    to; dense output must use the same scale.
    """

    mesh: np.ndarray
    node_beliefs: tuple[Gaussian, ...]
    backward_models: tuple[BackwardModel, ...]
    filter_beliefs: tuple[Gaussian, ...]
    prior: IWPPrior
    sigma_sq: float
    objective: float
    iterations: int
    converged: bool = True
    diverged: bool = False
    # Set when the pass used boundary-conditioned transitions; dense output
    # must then predict with the same kernel.
    bridge_bc: Optional[BoundaryConditions] = None

    def __post_init__(self):
        mesh = np.asarray(self.mesh, dtype=float)
        object.__setattr__(self, "mesh", mesh)
        if len(self.node_beliefs) != mesh.shape[0]:
            raise DimensionMismatchError("one belief per mesh node required")
        if mesh.shape[0] < 2 or np.any(np.diff(mesh) <= 0):
            raise ValueError("mesh must be strictly increasing with at least two nodes")

    def means(self) -> np.ndarray:
        """Stacked smoothed means, one row per node."""
        return np.array([g.mean for g in self.node_beliefs])

    def rescale_sigma(self, sigma_sq_new: float) -> "Posterior":
        """Swap the diffusion scale; covariances scale, means are untouched."""
        ratio = math.sqrt(sigma_sq_new / self.sigma_sq)
        return replace(
            self,
            node_beliefs=tuple(Gaussian(g.mean, ratio * g.cov_sqrt) for g in self.node_beliefs),
            filter_beliefs=tuple(Gaussian(g.mean, ratio * g.cov_sqrt) for g in self.filter_beliefs),
            backward_models=tuple(b.scaled_noise(ratio) for b in self.backward_models),
            prior=self.prior.with_sigma_sq(sigma_sq_new),
            sigma_sq=float(sigma_sq_new),
        )


def _validate_mesh(problem: BVProblem, mesh) -> np.ndarray:
    mesh = np.asarray(mesh, dtype=float)
    if mesh.ndim != 1 or mesh.shape[0] < 2:
        raise ValueError("mesh must contain at least the two boundary points")
    if np.any(np.diff(mesh) <= 0):
        raise ValueError("mesh must be strictly increasing")
    t0, tmax = problem.domain
    if mesh[0] != t0 or mesh[-1] != tmax:
        raise ValueError(f"mesh must span [{t0}, {tmax}] exactly")
    return mesh


def _predict_with_backward(
    state: Gaussian, phi: np.ndarray, q_sqrt: np.ndarray, sigma: float
) -> tuple[Gaussian, BackwardModel]:
    """Standard prediction plus the exact backward conditional for smoothing."""
    k = state.dim
    pred_factor = np.hstack([phi @ state.cov_sqrt, sigma * q_sqrt])
    state_factor = np.hstack([state.cov_sqrt, np.zeros((k, q_sqrt.shape[1]))])
    l11, l21, l22 = _split_triangular(pred_factor, state_factor)
    gain, _, leftover = _gain_from_blocks(l11, l21)
    pred_mean = phi @ state.mean
    prediction = Gaussian(pred_mean, l11)
    cond_sqrt = l22 if leftover.shape[1] == 0 else np.hstack([l22, leftover])
    backward = BackwardModel(gain, state.mean - gain @ pred_mean, cond_sqrt)
    return prediction, backward


def _forward_pass(
    problem: BVProblem,
    prior: IWPPrior,
    mesh: np.ndarray,
    linearization_points: Optional[np.ndarray],
    use_bridge: bool,
) -> tuple[list[Gaussian], list[BackwardModel], list[Innovation]]:
    """One filtering sweep; EKS mode when ``linearization_points`` is None."""
    sigma = math.sqrt(prior.sigma_sq)
    left_obs, right_obs = boundary_observations(problem, prior)
    innovations: list[Innovation] = []
    filter_beliefs: list[Gaussian] = []
    backward_models: list[BackwardModel] = []

    if use_bridge:
        belief, boundary_innovations = bridge_initial_with_innovations(prior, problem.bc)
        innovations.extend(boundary_innovations)
    else:
        belief = Gaussian(prior.m0, sigma * prior.c0_sqrt)
        belief, innov = condition(belief, left_obs, np.zeros(left_obs.matrix.shape[0]))
        innovations.append(Innovation(innov.residual, innov.sqrt_cov / sigma, label=innov.label))

    n_last = mesh.shape[0] - 1
    for n, t in enumerate(mesh):
        if not use_bridge and n == n_last:
            belief, innov = condition(belief, right_obs, np.zeros(right_obs.matrix.shape[0]))
            innovations.append(Innovation(innov.residual, innov.sqrt_cov / sigma, label=innov.label))
        point = belief.mean if linearization_points is None else linearization_points[n]
        model = linearize(problem, prior, point, t)
        belief, innov = condition(
            belief, model.as_affine(), np.zeros(problem.d)
        )
        innovations.append(Innovation(innov.residual, innov.sqrt_cov / sigma, label=f"ode node {n}"))
        filter_beliefs.append(belief)
        if n < n_last:
            if use_bridge:
                belief, gain, noise = bridge_predict_with_backward(
                    prior, problem.bc, mesh[n], mesh[n + 1], belief
                )
                backward_models.append(BackwardModel(gain, noise.mean, noise.cov_sqrt))
            else:
                trans = discretize(prior, mesh[n + 1] - mesh[n])
                belief, backward = _predict_with_backward(belief, trans.phi, trans.q_sqrt, sigma)
                backward_models.append(backward)

    return filter_beliefs, backward_models, innovations


def _backward_pass(
    filter_beliefs: Sequence[Gaussian], backward_models: Sequence[BackwardModel]
) -> list[Gaussian]:
    smoothed = [filter_beliefs[-1]]
    for backward in reversed(backward_models):
        smoothed.append(backward.push(smoothed[-1]))
    smoothed.reverse()
    return smoothed


def _map_objective(prior: IWPPrior, mesh: np.ndarray, means: np.ndarray) -> float:
    """Prior Mahalanobis term of the constrained MAP objective.

    Evaluated through the Markov factorization; exactly satisfied singular
    directions contribute nothing (least-squares solve against the factor).
    """
    sigma = math.sqrt(prior.sigma_sq)

    def quad(factor: np.ndarray, residual: np.ndarray) -> float:
        w, *_ = np.linalg.lstsq(factor, residual, rcond=None)
        return float(w @ w)

    total = quad(sigma * prior.c0_sqrt, means[0] - prior.m0)
    for n in range(mesh.shape[0] - 1):
        trans = discretize(prior, mesh[n + 1] - mesh[n])
        total += quad(sigma * trans.q_sqrt, means[n + 1] - trans.phi @ means[n])
    return 0.5 * total


def _build_posterior(
    problem: BVProblem,
    prior: IWPPrior,
    mesh: np.ndarray,
    filter_beliefs: list[Gaussian],
    backward_models: list[BackwardModel],
    iterations: int,
    bridge_bc: Optional[BoundaryConditions] = None,
) -> Posterior:
    smoothed = _backward_pass(filter_beliefs, backward_models)
    means = np.array([g.mean for g in smoothed])
    return Posterior(
        mesh=mesh,
        node_beliefs=tuple(smoothed),
        backward_models=tuple(backward_models),
        filter_beliefs=tuple(filter_beliefs),
        prior=prior,
        sigma_sq=prior.sigma_sq,
        objective=_map_objective(prior, mesh, means),
        iterations=iterations,
        bridge_bc=bridge_bc,
    )


def eks_initialize(
    problem: BVProblem,
    prior: IWPPrior,
    mesh,
    strategy: str = "bridge",
    guess: Optional[np.ndarray] = None,
) -> tuple[Posterior, Innovations]:
    """Initial Gaussian approximation from a single extended smoother pass.

    Strategies:
        ``"bridge"``: boundary-conditioned prior, ODE linearized at the
            predictive means during the forward pass.
        ``"conventional"``: plain prior with boundary updates at the
            endpoint nodes, otherwise like ``"bridge"``.
        ``"user_guess"``: no extended pass; the returned means are exactly
            ``guess`` (one stacked state per node) and covariances come from
            one smoothing pass linearized at the guess.
    """
    mesh = _validate_mesh(problem, mesh)
    if prior.nu < problem.ode_order:
        raise ValueError(f"prior order {prior.nu} below ODE order {problem.ode_order}")
    if strategy == "user_guess":
        if guess is None:
            raise ValueError("user_guess strategy requires one state vector per node")
        guess = np.asarray(guess, dtype=float)
        if guess.shape != (mesh.shape[0], prior.state_dim):
            raise DimensionMismatchError(
                f"guess must have shape {(mesh.shape[0], prior.state_dim)}, got {guess.shape}"
            )
        filt, backs, innovations = _forward_pass(problem, prior, mesh, guess, use_bridge=False)
        posterior = _build_posterior(problem, prior, mesh, filt, backs, iterations=0)
        pinned = tuple(
            Gaussian(guess[n], g.cov_sqrt) for n, g in enumerate(posterior.node_beliefs)
        )
        posterior = replace(
            posterior,
            node_beliefs=pinned,
            objective=_map_objective(prior, mesh, guess),
        )
        return posterior, Innovations(tuple(innovations))
    if strategy not in ("bridge", "conventional"):
        raise ValueError(f"unknown initialization strategy '{strategy}'")
    use_bridge = strategy == "bridge"
    filt, backs, innovations = _forward_pass(problem, prior, mesh, None, use_bridge=use_bridge)
    posterior = _build_posterior(
        problem, prior, mesh, filt, backs, iterations=0,
        bridge_bc=problem.bc if use_bridge else None,
    )
    return posterior, Innovations(tuple(innovations))


def ieks_iterate(
    problem: BVProblem, prior: IWPPrior, mesh, previous: Posterior
) -> tuple[Posterior, Innovations]:
    """One Gauss-Newton step: re-linearize everything at the previous means."""
    mesh = _validate_mesh(problem, mesh)
    if previous.mesh.shape != mesh.shape or np.any(previous.mesh != mesh):
        raise ValueError("previous posterior is defined on a different mesh")
    points = previous.means()
    filt, backs, innovations = _forward_pass(problem, prior, mesh, points, use_bridge=False)
    posterior = _build_posterior(
        problem, prior, mesh, filt, backs, iterations=previous.iterations + 1
    )
    if posterior.objective > 10.0 * max(previous.objective, 1e-30):
        posterior = replace(posterior, diverged=True)
    return posterior, Innovations(tuple(innovations))


def ieks_solve(
    problem: BVProblem,
    prior: IWPPrior,
    mesh,
    init_strategy: str = "bridge",
    max_iters: int = 10,
    rtol_fixpoint: float = 1e-10,
    em_every: Optional[int] = None,
    guess: Optional[np.ndarray] = None,
    calibrate_sigma: bool = True,
) -> Posterior:
    """Iterate the smoother to a fixed point of the MAP problem.

    After every pass the diffusion scale is re-estimated in closed form
    (posterior means are invariant under it, so this is free); if
    ``em_every`` is set, the initial distribution is re-estimated from the
    current posterior every that many iterations.  Stops when the sup-norm
    mean change drops below ``rtol_fixpoint * (1 + sup |mean|)`` or after
    ``max_iters`` passes, whichever comes first; non-convergence is flagged
    on the returned posterior, not raised.
    """
    from .calibration import em_update, quasi_mle_sigma

    if max_iters < 1:
        raise ValueError("max_iters must be at least 1")
    mesh = _validate_mesh(problem, mesh)
    # Posterior means are invariant under the diffusion scale, so calibrated
    # passes run at a fixed unit scale (keeping the iteration bit-stable) and
    # only the returned covariances are rescaled to the fresh estimate.
    pass_prior = prior.with_sigma_sq(1.0) if calibrate_sigma else prior
    posterior, innovations = eks_initialize(
        problem, pass_prior, mesh, strategy=init_strategy, guess=guess
    )
    if calibrate_sigma:
        sigma_sq = max(quasi_mle_sigma(innovations), 1e-14)
        posterior = posterior.rescale_sigma(sigma_sq)

    converged = False
    for iteration in range(1, max_iters + 1):
        previous_means = posterior.means()
        posterior, innovations = ieks_iterate(problem, pass_prior, mesh, posterior)
        if calibrate_sigma:
            sigma_sq = max(quasi_mle_sigma(innovations), 1e-14)
            posterior = posterior.rescale_sigma(sigma_sq)
        change = float(np.max(np.abs(posterior.means() - previous_means)))
        scale = 1.0 + float(np.max(np.abs(posterior.means())))
        if change < rtol_fixpoint * scale:
            converged = True
            break
        if em_every is not None and iteration % em_every == 0 and iteration < max_iters:
            m0_new, c0_new = em_update(posterior, pass_prior.m0, posterior.sigma_sq)
            pass_prior = pass_prior.with_init(m0_new, c0_new)

    return replace(posterior, converged=converged)


def interpolate(posterior: Posterior, t: float) -> Gaussian:
    """Dense output: the smoothing marginal of the final linear model at ``t``.

    At a mesh node the stored belief is returned as-is; between nodes the
    filtering belief of the left node is predicted to ``t`` and combined
    with the smoothed belief of the right node through the exact two-step
    backward conditional.  No re-linearization happens here.
    """
    mesh = posterior.mesh
    t = float(t)
    if t < mesh[0] or t > mesh[-1]:
        raise DomainError(f"t={t:g} outside [{mesh[0]:g}, {mesh[-1]:g}]")
    idx = int(np.searchsorted(mesh, t))
    if idx < mesh.shape[0] and mesh[idx] == t:
        return posterior.node_beliefs[idx]
    left = idx - 1
    prior = posterior.prior
    if posterior.bridge_bc is not None:
        # The stored filtering beliefs condition on the right boundary, so
        # dense output must extend them with the same transition kernel.
        bc = posterior.bridge_bc
        predicted, _, _ = bridge_predict_with_backward(
            prior, bc, mesh[left], t, posterior.filter_beliefs[left]
        )
        _, gain, noise = bridge_predict_with_backward(prior, bc, t, mesh[left + 1], predicted)
        backward = BackwardModel(gain, noise.mean, noise.cov_sqrt)
        return backward.push(posterior.node_beliefs[left + 1])
    sigma = math.sqrt(posterior.sigma_sq)
    step_in = discretize(prior, t - mesh[left])
    step_out = discretize(prior, mesh[left + 1] - t)
    predicted, _ = _predict_with_backward(
        posterior.filter_beliefs[left], step_in.phi, step_in.q_sqrt, sigma
    )
    _, backward = _predict_with_backward(predicted, step_out.phi, step_out.q_sqrt, sigma)
    return backward.push(posterior.node_beliefs[left + 1])


def batch_gauss_newton_oracle(
    problem: BVProblem,
    prior: IWPPrior,
    mesh,
    points: np.ndarray,
) -> np.ndarray:
    """Dense Gauss-Newton step used as a test oracle (O(N^3), small N only).

    Assembles the joint prior over all mesh nodes, the block observation
    matrix of both boundary conditions and all ODE linearizations at
    ``points``, and returns the stacked means of the exactly conditioned
    joint Gaussian (the noise-free limit of the regularized least-squares
    problem).
    """
    mesh = _validate_mesh(problem, mesh)
    points = np.asarray(points, dtype=float)
    k = prior.state_dim
    n_nodes = mesh.shape[0]
    if points.shape != (n_nodes, k):
        raise DimensionMismatchError(f"points must have shape {(n_nodes, k)}")

    mean, cov = _dense_prior(prior, mesh)
    rows: list[np.ndarray] = []
    data: list[np.ndarray] = []
    left_obs, right_obs = boundary_observations(problem, prior)
    for obs, node in ((left_obs, 0), (right_obs, n_nodes - 1)):
        block = np.zeros((obs.matrix.shape[0], n_nodes * k))
        block[:, node * k : (node + 1) * k] = obs.matrix
        rows.append(block)
        data.append(-obs.offset)
    for n in range(n_nodes):
        model = linearize(problem, prior, points[n], mesh[n])
        block = np.zeros((problem.d, n_nodes * k))
        block[:, n * k : (n + 1) * k] = model.matrix
        rows.append(block)
        data.append(-model.offset)
    big_f = np.vstack(rows)
    big_z = np.concatenate(data)

    gram = big_f @ cov @ big_f.T
    gain = cov @ big_f.T @ np.linalg.pinv(gram, rcond=1e-12)
    solution = mean + gain @ (big_z - big_f @ mean)
    return solution.reshape(n_nodes, k)


def _dense_prior(prior: IWPPrior, mesh: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Joint mean and covariance of the prior over all mesh nodes."""
    k = prior.state_dim
    n_nodes = mesh.shape[0]
    mean = np.zeros(n_nodes * k)
    cov = np.zeros((n_nodes * k, n_nodes * k))
    mean[:k] = prior.m0
    marg = prior.sigma_sq * (prior.c0_sqrt @ prior.c0_sqrt.T)
    cov[:k, :k] = marg
    for n in range(1, n_nodes):
        trans = discretize(prior, mesh[n] - mesh[n - 1])
        mean[n * k : (n + 1) * k] = trans.phi @ mean[(n - 1) * k : n * k]
        marg_new = trans.phi @ marg @ trans.phi.T + prior.sigma_sq * (trans.q_sqrt @ trans.q_sqrt.T)
        # Cross-covariances: Cov(x_i, x_n) = Cov(x_i, x_{n-1}) Phi^T.
        for i in range(n):
            cov[i * k : (i + 1) * k, n * k : (n + 1) * k] = (
                cov[i * k : (i + 1) * k, (n - 1) * k : n * k] @ trans.phi.T
            )
            cov[n * k : (n + 1) * k, i * k : (i + 1) * k] = cov[
                i * k : (i + 1) * k, n * k : (n + 1) * k
            ].T
        cov[n * k : (n + 1) * k, n * k : (n + 1) * k] = marg_new
        marg = marg_new
    return mean, cov
