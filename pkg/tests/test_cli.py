"""Command-line surfaces: JSON solutions, CSV sweeps, metrics."""

import csv
import json

import numpy as np
import pytest
from scipy.stats import spearmanr

from kalmanbvp.cli import (
    CSV_COLUMNS,
    anees_values,
    cmd_benchmark,
    cmd_solve,
    main,
    metric_anees,
    metric_rmse,
    metrics_from_document,
    rmse_values,
    _parse_tols,
)
from kalmanbvp.problems import get
from kalmanbvp.solver import SolverConfig, solve


class TestCmdSolve:
    def test_linear_poly_json_document(self, tmp_path):
        out = tmp_path / "solution.json"
        code = cmd_solve(
            ["--problem", "linear_poly", "--tol", "1e-6", "--order", "2", "--output", str(out)]
        )
        assert code == 0
        document = json.loads(out.read_text())
        assert document["status"] == "converged"
        assert document["mesh"][0] == 0.0 and document["mesh"][-1] == 1.0
        assert len(document["mean"]) == len(document["mesh"])
        assert len(document["std"]) == len(document["mesh"])

    def test_unknown_problem_exits_one_and_names_options(self, capsys):
        code = cmd_solve(["--problem", "nosuch"])
        assert code == 1
        assert "bratu" in capsys.readouterr().err

    def test_bratu_end_to_end(self, tmp_path):
        out = tmp_path / "bratu.json"
        code = cmd_solve(
            ["--problem", "bratu", "--tol", "1e-4", "--order", "4", "--output", str(out)]
        )
        assert code == 0
        document = json.loads(out.read_text())
        assert document["status"] == "converged"

    def test_bad_flags_exit_usage(self):
        with pytest.raises(SystemExit) as excinfo:
            cmd_solve(["--tol", "oops"])
        assert excinfo.value.code == 64

    def test_nonconvergence_exits_two(self, tmp_path):
        out = tmp_path / "partial.json"
        code = cmd_solve(
            [
                "--problem", "mazzia7",
                "--tol", "1e-8",
                "--order", "4",
                "--max-refinements", "0",
                "--output", str(out),
            ]
        )
        assert code == 2
        assert json.loads(out.read_text())["status"] == "max_refinements_reached"

    def test_json_roundtrip_reproduces_metrics(self, tmp_path):
        out = tmp_path / "solution.json"
        assert cmd_solve(["--problem", "bratu", "--tol", "1e-4", "--output", str(out)]) == 0
        document = json.loads(out.read_text())
        entry = get("bratu")
        rmse_doc, anees_doc = metrics_from_document(document, entry)
        solution = solve(entry.problem, SolverConfig(tol=1e-4, order=4))
        grid = np.asarray(document["eval"]["grid"])
        assert metric_rmse(solution, entry, grid) == rmse_doc
        assert metric_anees(solution, entry, grid) == anees_doc


class TestMetrics:
    def test_perfect_mean_gives_zero(self):
        means = np.linspace(0, 1, 11)[:, None]
        covs = np.tile(np.eye(1) * 0.5, (11, 1, 1))
        assert rmse_values(means, means) == 0.0
        assert anees_values(means, covs, means) == 0.0

    def test_synthetic_chi_square_concentration(self):
        rng = np.random.default_rng(0)
        n = 255
        stds = 0.3 + rng.random(n)
        means = rng.standard_normal(n)[:, None]
        covs = np.array([[[s**2]] for s in stds])
        samples = means[:, 0] + stds * rng.standard_normal(n)
        anees = anees_values(means, covs, samples[:, None])
        assert 0.8 <= anees <= 1.2

    def test_std_inflation_scales_anees(self):
        rng = np.random.default_rng(1)
        n = 100
        means = rng.standard_normal(n)[:, None]
        covs = np.tile(np.eye(1), (n, 1, 1))
        refs = means + 0.7
        base = anees_values(means, covs, refs)
        inflated = anees_values(means, 100.0 * covs, refs)
        assert inflated == pytest.approx(base / 100.0)

    def test_all_singular_rejected(self):
        means = np.zeros((5, 1))
        covs = np.zeros((5, 1, 1))
        with pytest.raises(ValueError):
            anees_values(means, covs, means)


class TestParseTols:
    def test_log_sweep(self):
        np.testing.assert_allclose(_parse_tols("1e-1:1e-3"), [1e-1, 1e-2, 1e-3])

    def test_comma_list(self):
        np.testing.assert_allclose(_parse_tols("0.5,0.25"), [0.5, 0.25])


class TestCmdBenchmark:
    @pytest.mark.slow
    def test_sweep_row_count_and_reproducibility(self, tmp_path):
        csv_path = tmp_path / "bench.csv"
        argv = [
            "--problems", "linear_poly,bratu",
            "--tols", "1e-2,1e-4",
            "--orders", "3,4",
            "--csv", str(csv_path),
        ]
        assert cmd_benchmark(argv) == 0
        with csv_path.open() as handle:
            rows = list(csv.DictReader(handle))
        assert len(rows) == 2 * 2 * 2
        assert list(rows[0].keys()) == CSV_COLUMNS
        # Re-run appends identical numeric columns except runtime.
        assert cmd_benchmark(argv) == 0
        with csv_path.open() as handle:
            rows2 = list(csv.DictReader(handle))
        assert len(rows2) == 16
        for first, second in zip(rows2[:8], rows2[8:]):
            for column in CSV_COLUMNS:
                if column == "runtime_s":
                    continue
                assert first[column] == second[column], column

    @pytest.mark.slow
    def test_linear_poly_rmse_small(self, tmp_path):
        csv_path = tmp_path / "linear.csv"
        assert (
            cmd_benchmark(
                ["--problems", "linear_poly", "--tols", "1e-2,1e-4,1e-6", "--orders", "4", "--csv", str(csv_path)]
            )
            == 0
        )
        with csv_path.open() as handle:
            rows = list(csv.DictReader(handle))
        # Every solve meets its tolerance; once refinement (and with it the
        # initial-distribution adaptation) actually triggers, the posterior
        # contracts to the exact straight line.
        for row in rows:
            assert float(row["rmse"]) <= float(row["tol"])
            if int(row["refinements"]) >= 1:
                assert float(row["rmse"]) <= 1e-8

    @pytest.mark.slow
    def test_runtime_tracks_mesh_size(self, tmp_path):
        csv_path = tmp_path / "scaling.csv"
        assert (
            cmd_benchmark(
                ["--problems", "mazzia7", "--tols", "1e-1:1e-5", "--orders", "4", "--csv", str(csv_path)]
            )
            == 0
        )
        with csv_path.open() as handle:
            rows = list(csv.DictReader(handle))
        n_final = [int(r["n_final"]) for r in rows]
        runtime = [float(r["runtime_s"]) for r in rows]
        rho, _ = spearmanr(n_final, runtime)
        assert rho >= 0.8

    def test_unknown_problem_exits_one(self, tmp_path):
        code = cmd_benchmark(
            ["--problems", "nosuch", "--tols", "1e-2", "--orders", "4", "--csv", str(tmp_path / "x.csv")]
        )
        assert code == 1


class TestMain:
    def test_dispatch_and_usage(self, tmp_path):
        assert main([]) == 64
        assert main(["frobnicate"]) == 64
        out = tmp_path / "s.json"
        assert main(["solve", "--problem", "linear_poly", "--tol", "1e-4", "--order", "2", "--output", str(out)]) == 0
