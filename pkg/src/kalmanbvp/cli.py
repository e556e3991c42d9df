"""Command-line entry points: single solves and work-precision benchmarks.

``solve`` writes one JSON solution document; ``benchmark`` sweeps the
cartesian product of problems, tolerances, and orders, scoring each cell
against the registry reference on a fixed 257-point uniform grid and
appending one CSV row per cell.  Exit codes: 0 success, 1 error, 2 solver
did not converge, 64 bad usage.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import UnknownProblemError
from .inference import interpolate
from .meshing import ErrorEstimatorKind
from .prior import projection
from .problems import RegistryEntry, get, reference_solution, registered_names
from .solver import Solution, SolverConfig, solve

__all__ = [
    "main",
    "cmd_solve",
    "cmd_benchmark",
    "metric_rmse",
    "metric_anees",
    "BenchmarkRecord",
    "CSV_COLUMNS",
    "EVAL_GRID_SIZE",
]

EVAL_GRID_SIZE = 257


@dataclass(frozen=True)
class BenchmarkRecord:
    """One CSV row of a work-precision sweep (one solved cell)."""

    problem: str
    order: int
    estimator: str
    tol: float
    n_final: int
    rmse: float
    anees: float
    runtime_s: float
    refinements: int
    ieks_iters_total: int
    sigma_sq: float
    status: str

    def as_row(self) -> list:
        return [_format_cell(getattr(self, column)) for column in CSV_COLUMNS]


CSV_COLUMNS = [field.name for field in dataclasses.fields(BenchmarkRecord)]

_ESTIMATORS = {kind.value: kind for kind in ErrorEstimatorKind}


class _Parser(argparse.ArgumentParser):
    """Argument parser that exits with the conventional usage code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(64)


def _evaluation_grid(entry: RegistryEntry) -> np.ndarray:
    t0, tmax = entry.problem.domain
    return np.linspace(t0, tmax, EVAL_GRID_SIZE)


def _dense_values(solution: Solution, grid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and covariance of the solution value on a grid."""
    posterior = solution.posterior
    p0 = projection(posterior.prior, 0)
    means = np.empty((grid.shape[0], p0.shape[0]))
    covs = np.empty((grid.shape[0], p0.shape[0], p0.shape[0]))
    for i, t in enumerate(grid):
        belief = interpolate(posterior, float(t))
        factor = p0 @ belief.cov_sqrt
        means[i] = p0 @ belief.mean
        covs[i] = factor @ factor.T
    return means, covs


def rmse_values(mean_values: np.ndarray, reference_values: np.ndarray) -> float:
    """Root-mean-square error over grid points and components."""
    diff = np.asarray(mean_values) - np.asarray(reference_values)
    return float(np.sqrt(np.mean(diff**2)))


def anees_values(
    mean_values: np.ndarray,
    cov_values: np.ndarray,
    reference_values: np.ndarray,
) -> float:
    """Average normalized estimation error squared (calibration target 1).

    Grid points with singular solution-value covariance (e.g. the exactly
    constrained boundaries) are skipped; errors if no point is usable.
    """
    mean_values = np.asarray(mean_values)
    cov_values = np.asarray(cov_values)
    reference_values = np.asarray(reference_values)
    d = mean_values.shape[1]
    diags = np.array([np.diag(c) for c in cov_values])
    top = float(np.max(diags, initial=0.0))
    if top <= 0.0:
        raise ValueError("all evaluation points have singular covariance")
    floor = 1e-13 * top
    scores = []
    for mean, cov, ref, diag in zip(mean_values, cov_values, reference_values, diags):
        if np.min(diag) <= floor:
            continue
        try:
            factor = cho_factor(cov, lower=True)
        except np.linalg.LinAlgError:
            continue
        diff = ref - mean
        scores.append(float(diff @ cho_solve(factor, diff)) / d)
    if not scores:
        raise ValueError("all evaluation points have singular covariance")
    return float(np.mean(scores))


def _reference_values(reference, grid: np.ndarray) -> np.ndarray:
    if isinstance(reference, RegistryEntry):
        return np.asarray(reference_solution(reference, grid))
    return np.asarray([np.atleast_1d(reference(t)) for t in grid])


def metric_rmse(solution: Solution, reference, grid) -> float:
    """RMSE of the posterior solution-value mean against a reference."""
    grid = np.asarray(grid, dtype=float)
    means, _ = _dense_values(solution, grid)
    return rmse_values(means, _reference_values(reference, grid))


def metric_anees(solution: Solution, reference, grid) -> float:
    """Calibration statistic of the posterior against a reference."""
    grid = np.asarray(grid, dtype=float)
    means, covs = _dense_values(solution, grid)
    return anees_values(means, covs, _reference_values(reference, grid))


def metrics_from_document(document: dict, reference) -> tuple[float, float]:
    """Recompute (rmse, anees) from a written solution file's dense read-out."""
    grid = np.asarray(document["eval"]["grid"])
    means = np.asarray(document["eval"]["mean0"])
    covs = np.asarray(document["eval"]["cov0"])
    refs = _reference_values(reference, grid)
    return rmse_values(means, refs), anees_values(means, covs, refs)


def _score_solution(entry: RegistryEntry, solution: Solution) -> tuple[float, float]:
    grid = _evaluation_grid(entry)
    means, covs = _dense_values(solution, grid)
    reference = np.asarray(reference_solution(entry, grid))
    rmse = rmse_values(means, reference)
    anees = anees_values(means, covs, reference)
    return rmse, anees


def _config_from_args(args) -> SolverConfig:
    return SolverConfig(
        order=args.order,
        tol=args.tol,
        estimator=_ESTIMATORS[args.estimator],
        initial_mesh=args.initial_mesh,
        em_every=args.em_every,
        max_refinements=args.max_refinements,
    )


def _solution_document(entry: RegistryEntry, config: SolverConfig, solution: Solution) -> dict:
    posterior = solution.posterior
    grid = _evaluation_grid(entry)
    means, covs = _dense_values(solution, grid)
    return {
        "problem": entry.name,
        "config": {
            "order": config.order,
            "tol": config.tol,
            "estimator": config.estimator.value,
            "initial_mesh": int(config.initial_mesh)
            if isinstance(config.initial_mesh, (int, np.integer))
            else list(map(float, config.initial_mesh)),
            "em_every": config.em_every,
        },
        "mesh": posterior.mesh.tolist(),
        "mean": [g.mean.tolist() for g in posterior.node_beliefs],
        "std": [g.std().tolist() for g in posterior.node_beliefs],
        "sigma_sq": posterior.sigma_sq,
        "diagnostics": [
            {
                "n_nodes": r.n_nodes,
                "sigma_sq": r.sigma_sq,
                "ieks_iterations": r.ieks_iterations,
                "max_interval_error": r.max_interval_error,
                "wall_time_s": r.wall_time_s,
            }
            for r in solution.diagnostics
        ],
        "status": solution.status,
        # Dense read-out used by the metrics; lets a reloaded file reproduce
        # them without re-running the solver.
        "eval": {
            "grid": grid.tolist(),
            "mean0": means.tolist(),
            "cov0": covs.tolist(),
        },
    }


def cmd_solve(argv: Sequence[str]) -> int:
    parser = _Parser(prog="kalmanbvp solve", description="Solve one registry problem.")
    parser.add_argument("--problem", required=True)
    parser.add_argument("--tol", type=float, default=1e-6)
    parser.add_argument("--order", type=int, default=4)
    parser.add_argument("--estimator", choices=sorted(_ESTIMATORS), default="std-dev")
    parser.add_argument("--initial-mesh", type=int, default=3, dest="initial_mesh")
    parser.add_argument("--em-every", type=int, default=None, dest="em_every")
    parser.add_argument("--max-refinements", type=int, default=20, dest="max_refinements")
    parser.add_argument("--output", type=Path, default=None)
    parser.add_argument("--seed", type=int, default=0, help="seed for any sampling extras")
    args = parser.parse_args(argv)

    try:
        entry = get(args.problem)
    except UnknownProblemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    config = _config_from_args(args)
    try:
        solution = solve(entry.problem, config)
    except Exception as exc:  # surface solver failures as exit 1
        print(f"error: {exc}", file=sys.stderr)
        return 1
    document = _solution_document(entry, config, solution)
    payload = json.dumps(document, indent=2)
    if args.output:
        args.output.write_text(payload)
    else:
        print(payload)
    return 0 if solution.converged else 2


def _parse_tols(spec: str) -> list[float]:
    """Comma list or ``a:b`` decade sweep (inclusive, factors of ten)."""
    if ":" in spec:
        lo_s, hi_s = spec.split(":", 1)
        lo, hi = float(lo_s), float(hi_s)
        start, stop = np.log10(lo), np.log10(hi)
        count = int(round(abs(stop - start))) + 1
        return [float(10.0**e) for e in np.linspace(start, stop, count)]
    return [float(x) for x in spec.split(",") if x]


def benchmark_cell(
    entry: RegistryEntry, order: int, estimator: ErrorEstimatorKind, tol: float
) -> BenchmarkRecord:
    """Solve one benchmark cell and score it against the registry reference."""
    config = SolverConfig(order=order, tol=tol, estimator=estimator)
    start = time.perf_counter()
    try:
        solution = solve(entry.problem, config)
        runtime = time.perf_counter() - start
        rmse, anees = _score_solution(entry, solution)
        posterior = solution.posterior
        return BenchmarkRecord(
            problem=entry.name,
            order=order,
            estimator=estimator.value,
            tol=tol,
            n_final=posterior.mesh.shape[0],
            rmse=rmse,
            anees=anees,
            runtime_s=runtime,
            refinements=len(solution.diagnostics) - 1,
            ieks_iters_total=sum(r.ieks_iterations for r in solution.diagnostics),
            sigma_sq=posterior.sigma_sq,
            status=solution.status,
        )
    except Exception as exc:
        return BenchmarkRecord(
            problem=entry.name,
            order=order,
            estimator=estimator.value,
            tol=tol,
            n_final=0,
            rmse=float("nan"),
            anees=float("nan"),
            runtime_s=time.perf_counter() - start,
            refinements=0,
            ieks_iters_total=0,
            sigma_sq=float("nan"),
            status=f"error:{type(exc).__name__}",
        )


def _format_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def cmd_benchmark(argv: Sequence[str]) -> int:
    parser = _Parser(prog="kalmanbvp benchmark", description="Work-precision sweep.")
    parser.add_argument("--problems", required=True, help="comma-separated registry names")
    parser.add_argument("--tols", required=True, help="comma list or log sweep lo:hi")
    parser.add_argument("--orders", required=True, help="comma-separated prior orders")
    parser.add_argument("--estimator", choices=sorted(_ESTIMATORS), default="std-dev")
    parser.add_argument("--csv", type=Path, required=True)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    try:
        entries = [get(name) for name in args.problems.split(",") if name]
    except UnknownProblemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    tols = _parse_tols(args.tols)
    orders = [int(x) for x in args.orders.split(",") if x]
    estimator = _ESTIMATORS[args.estimator]

    args.csv.parent.mkdir(parents=True, exist_ok=True)
    fresh = not args.csv.exists()
    with args.csv.open("a", newline="") as handle:
        writer = csv.writer(handle)
        if fresh:
            writer.writerow(CSV_COLUMNS)
        for entry in entries:
            for order in orders:
                for tol in tols:
                    record = benchmark_cell(entry, order, estimator, tol)
                    writer.writerow(record.as_row())
                    handle.flush()
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _Parser(prog="kalmanbvp")
    parser.add_argument("command", choices=["solve", "benchmark"])
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 64
    command, rest = argv[0], argv[1:]
    if command == "solve":
        return cmd_solve(rest)
    if command == "benchmark":
        return cmd_benchmark(rest)
    parser.print_usage(sys.stderr)
    print(f"error: unknown command '{command}'", file=sys.stderr)
    return 64


if __name__ == "__main__":
    raise SystemExit(main())
