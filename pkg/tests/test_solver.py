"""Outer adaptive loop: statuses, warm starts, determinism."""

import numpy as np
import pytest

from kalmanbvp.information import boundary_observations
from kalmanbvp.meshing import ErrorEstimatorKind
from kalmanbvp.prior import IWPPrior
from kalmanbvp.problems import get
from kalmanbvp.solver import SolverConfig, solve


class TestSolve:
    def test_bratu_converges_with_bounded_error(self):
        entry = get("bratu")
        solution = solve(entry.problem, SolverConfig(tol=1e-4, order=4))
        assert solution.status == "converged"
        assert solution.interval_errors.max <= 1e-4
        grid = np.linspace(0.0, 1.0, 129)
        from kalmanbvp.cli import metric_rmse

        rmse = metric_rmse(solution, entry.problem.analytic_solution, grid)
        assert rmse <= 1e-3  # within 10x of the tolerance

    def test_fine_initial_mesh_converges_in_one_round(self):
        entry = get("bratu")
        solution = solve(
            entry.problem, SolverConfig(tol=1e-2, order=4, initial_mesh=17)
        )
        assert solution.status == "converged"
        assert len(solution.diagnostics) == 1
        assert solution.posterior.mesh.shape[0] == 17

    def test_zero_refinement_budget(self):
        entry = get("mazzia7")
        solution = solve(
            entry.problem, SolverConfig(tol=1e-8, order=4, max_refinements=0)
        )
        assert solution.status == "max_refinements_reached"
        assert len(solution.diagnostics) == 1

    def test_mesh_cardinality_nondecreasing(self):
        entry = get("mazzia7")
        solution = solve(entry.problem, SolverConfig(tol=1e-3, order=4))
        sizes = [r.n_nodes for r in solution.diagnostics]
        assert all(b >= a for a, b in zip(sizes, sizes[1:]))

    def test_warm_start_preserves_boundaries(self):
        entry = get("mazzia20")
        solution = solve(entry.problem, SolverConfig(tol=1e-3, order=4))
        prior = solution.posterior.prior
        left, right = boundary_observations(entry.problem, prior)
        assert np.max(np.abs(left(solution.posterior.node_beliefs[0].mean))) <= 1e-8
        assert np.max(np.abs(right(solution.posterior.node_beliefs[-1].mean))) <= 1e-8

    def test_order_below_ode_order_rejected(self):
        entry = get("mazzia32")
        with pytest.raises(ValueError):
            solve(entry.problem, SolverConfig(tol=1e-3, order=2))

    def test_recorded_sigma_matches_profile_argmax(self):
        # The per-round sigma is the closed-form estimate; cross-check the
        # final one against a grid scan of the profile likelihood.
        entry = get("bratu")
        prior = IWPPrior(d=1, nu=4)
        from kalmanbvp.calibration import quasi_loglik, quasi_mle_sigma
        from kalmanbvp.inference import eks_initialize, ieks_iterate

        mesh = np.linspace(0.0, 1.0, 9)
        posterior, _ = eks_initialize(entry.problem, prior, mesh)
        for _ in range(5):
            posterior, innovations = ieks_iterate(entry.problem, prior, mesh, posterior)
        estimate = quasi_mle_sigma(innovations)
        grid = np.geomspace(estimate / 3, estimate * 3, 30001)
        values = np.array([quasi_loglik(innovations, s) for s in grid])
        argmax = float(grid[int(np.argmax(values))])
        assert abs(argmax - estimate) / estimate <= 1e-3

    def test_deterministic_diagnostics(self):
        entry = get("bratu")
        config = SolverConfig(tol=1e-4, order=4)
        a = solve(entry.problem, config)
        b = solve(entry.problem, config)
        assert len(a.diagnostics) == len(b.diagnostics)
        for ra, rb in zip(a.diagnostics, b.diagnostics):
            assert ra.n_nodes == rb.n_nodes
            assert ra.sigma_sq == rb.sigma_sq
            assert ra.ieks_iterations == rb.ieks_iterations
            assert ra.max_interval_error == rb.max_interval_error
        np.testing.assert_array_equal(a.posterior.means(), b.posterior.means())

    @pytest.mark.parametrize(
        "estimator",
        [ErrorEstimatorKind.STD_DEV, ErrorEstimatorKind.RESIDUAL, ErrorEstimatorKind.PROBABILISTIC_RESIDUAL],
    )
    def test_every_estimator_drives_convergence(self, estimator):
        entry = get("bratu")
        solution = solve(entry.problem, SolverConfig(tol=1e-4, order=4, estimator=estimator))
        assert solution.status == "converged"


class TestSolverConfig:
    def test_rho_defaults_to_order_plus_half(self):
        assert SolverConfig(order=4).rho == 4.5
        assert SolverConfig(order=4, rho_override=3.0).rho == 3.0

    def test_tolerance_validation(self):
        with pytest.raises(ValueError):
            SolverConfig(tol=0.0)

    def test_initial_mesh_validation(self):
        with pytest.raises(ValueError):
            SolverConfig(initial_mesh=1)
        config = SolverConfig(initial_mesh=np.array([0.0, 0.3, 1.0]))
        np.testing.assert_array_equal(config.build_mesh(0.0, 1.0), [0.0, 0.3, 1.0])
        with pytest.raises(ValueError):
            config.build_mesh(0.0, 2.0)
