"""Registry definitions, references, and the disk cache."""

import numpy as np
import pytest

from kalmanbvp.errors import UnknownProblemError
from kalmanbvp.prior import IWPPrior
from kalmanbvp.problems import get, reference_solution, registered_names
from kalmanbvp.solver import SolverConfig, solve


class TestRegistry:
    def test_linear_poly_reference(self):
        entry = get("linear_poly")
        assert reference_solution(entry, 0.5)[0] == pytest.approx(0.5)
        assert reference_solution(entry, 0.25)[0] == pytest.approx(0.25)

    def test_pendulum_is_second_order(self):
        assert get("pendulum").problem.ode_order == 2

    def test_mazzia7_default_parameter(self):
        assert get("mazzia7").params["eps"] == 1e-3
        assert get("mazzia7", eps=1e-2).params["eps"] == 1e-2

    def test_mazzia32_is_fourth_order(self):
        entry = get("mazzia32")
        assert entry.problem.ode_order == 4

    def test_unknown_name_lists_available(self):
        with pytest.raises(UnknownProblemError, match="bratu"):
            get("nosuch")

    def test_all_entries_carry_notes(self):
        for name in registered_names():
            assert get(name).notes

    def test_boundary_values_consistent_with_analytic_solutions(self):
        for name in ("linear_poly", "bratu", "mazzia7", "mazzia20"):
            entry = get(name)
            bc = entry.problem.bc
            y = entry.problem.analytic_solution
            np.testing.assert_allclose(bc.left @ y(bc.t0), bc.y0, atol=1e-12)
            np.testing.assert_allclose(bc.right @ y(bc.tmax), bc.ymax, atol=1e-12)

    @pytest.mark.slow
    def test_every_problem_converges_at_desk_scale(self):
        import time

        for name in registered_names():
            entry = get(name)
            config = SolverConfig(tol=1e-3, order=max(4, entry.problem.ode_order))
            start = time.monotonic()
            solution = solve(entry.problem, config)
            elapsed = time.monotonic() - start
            assert solution.status == "converged", name
            assert elapsed < 60.0, (name, elapsed)


class TestReferences:
    @pytest.fixture()
    def small_reference(self, monkeypatch):
        # Shrink the reference resolution so cache-behaviour tests stay fast;
        # the key hashes the resolution, so these never collide with real
        # caches.
        from kalmanbvp import problems as problems_module

        monkeypatch.setattr(problems_module, "_REFERENCE_N", 64)
        problems_module._REFERENCE_MEMO.clear()
        yield problems_module
        problems_module._REFERENCE_MEMO.clear()

    def test_fine_mesh_cache_roundtrip(self, tmp_path, small_reference):
        entry = get("pendulum")
        ts = np.linspace(0.0, 0.8, 7)
        first = np.asarray([reference_solution(entry, t, cache_dir=tmp_path) for t in ts])
        # Second call must hit the disk cache (clear the in-process memo).
        small_reference._REFERENCE_MEMO.clear()
        files = list(tmp_path.glob("*.ref.txt"))
        assert len(files) == 1
        second = np.asarray([reference_solution(entry, t, cache_dir=tmp_path) for t in ts])
        np.testing.assert_array_equal(first, second)

    def test_corrupt_cache_recomputed(self, tmp_path, small_reference):
        entry = get("pendulum")
        reference_solution(entry, 0.4, cache_dir=tmp_path)
        path = next(tmp_path.glob("*.ref.txt"))
        path.write_text("# garbage\nnot a table\n")
        small_reference._REFERENCE_MEMO.clear()
        value = reference_solution(entry, 0.4, cache_dir=tmp_path)
        assert np.all(np.isfinite(value))

    def test_bratu_fine_mesh_matches_closed_form(self, tmp_path):
        entry = get("bratu")
        exact = entry.problem.analytic_solution
        ts = np.linspace(0.0, 1.0, 33)
        refs = np.asarray([reference_solution(entry, t, cache_dir=tmp_path) for t in ts])
        exact_vals = np.asarray([exact(t) for t in ts])
        assert np.max(np.abs(refs - exact_vals)) <= 1e-9

    @pytest.mark.slow
    def test_two_resolution_self_consistency(self, tmp_path):
        # N=4096 vs N=8192 fixed-mesh references agree to 1e-9 on bratu.
        from kalmanbvp.inference import ieks_solve, interpolate
        from kalmanbvp.prior import projection

        entry = get("bratu")
        ts = np.linspace(0.0, 1.0, 257)
        coarse = np.asarray([reference_solution(entry, t, cache_dir=tmp_path) for t in ts])
        prior = IWPPrior(d=1, nu=4)
        posterior = ieks_solve(
            entry.problem, prior, np.linspace(0.0, 1.0, 8193), max_iters=20, rtol_fixpoint=1e-10
        )
        p0 = projection(posterior.prior, 0)
        fine = np.asarray([p0 @ interpolate(posterior, float(t)).mean for t in ts])
        rmse = float(np.sqrt(np.mean((coarse - fine) ** 2)))
        assert rmse <= 1e-9

    def test_mazzia7_layer_concentrates_curvature_change(self):
        # The third derivative of the reference concentrates at the layer:
        # the jump in the first derivative sharpens as eps -> 0.
        entry = get("mazzia7")
        stack = entry.analytic_derivatives
        third = lambda t: (stack(t + 5e-4)[2, 0] - stack(t - 5e-4)[2, 0]) / 1e-3
        layer = max(abs(third(t)) for t in np.linspace(-0.05, 0.05, 101))
        domain = np.linspace(-0.995, 0.995, 399)
        average = float(np.mean([abs(third(t)) for t in domain]))
        assert layer >= 10.0 * average

    def test_out_of_domain_rejected(self):
        entry = get("bratu")
        with pytest.raises(ValueError):
            reference_solution(entry, 2.0)
