"""Figure rendering against synthetic benchmark logs."""

import csv
import math
from pathlib import Path

import pytest

from bvpfigures import CSV_COLUMNS, FigureSpec, SchemaError, load_rows, render


def write_rows(path: Path, rows):
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([row[c] for c in CSV_COLUMNS])


def synthetic_row(problem="bratu", order=4, tol=1e-3, n_final=17, rmse=1e-4, runtime=0.5):
    return {
        "problem": problem,
        "order": order,
        "estimator": "std-dev",
        "tol": tol,
        "n_final": n_final,
        "rmse": rmse,
        "anees": 0.9,
        "runtime_s": runtime,
        "refinements": 2,
        "ieks_iters_total": 12,
        "sigma_sq": 0.3,
        "status": "converged",
    }


def synthetic_sweep(path: Path):
    rows = []
    for order in (2, 4):
        for i, tol in enumerate((1e-2, 1e-4, 1e-6)):
            rows.append(
                synthetic_row(
                    order=order,
                    tol=tol,
                    n_final=9 * 2**i,
                    rmse=tol * 0.2 * (1.0 if order == 4 else 3.0),
                    runtime=0.05 * 2**i,
                )
            )
    write_rows(path, rows)
    return rows


class TestLoadRows:
    def test_missing_columns_rejected(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("problem,tol\nbratu,1e-3\n")
        with pytest.raises(SchemaError, match="rmse"):
            load_rows(bad)

    def test_empty_log_rejected(self, tmp_path):
        empty = tmp_path / "empty.csv"
        write_rows(empty, [])
        with pytest.raises(ValueError, match="no benchmark rows"):
            load_rows(empty)

    def test_filters(self, tmp_path):
        path = tmp_path / "log.csv"
        write_rows(path, [synthetic_row(order=2), synthetic_row(order=4)])
        rows = load_rows(path, {"order": "4"})
        assert len(rows) == 1 and rows[0]["order"] == 4

    def test_unknown_filter_column_rejected(self, tmp_path):
        path = tmp_path / "log.csv"
        write_rows(path, [synthetic_row()])
        with pytest.raises(SchemaError):
            FigureSpec(csv_path=path, kind="calibration", out_path=path.with_suffix(".png"),
                       filters={"nope": "1"})


class TestRender:
    def test_empty_csv_errors_without_output(self, tmp_path):
        path = tmp_path / "empty.csv"
        write_rows(path, [])
        out = tmp_path / "fig.png"
        with pytest.raises(ValueError):
            render(FigureSpec(csv_path=path, kind="work-precision", out_path=out))
        assert not out.exists()

    def test_single_row_renders_marker(self, tmp_path):
        path = tmp_path / "one.csv"
        write_rows(path, [synthetic_row()])
        out = tmp_path / "one.png"
        data = render(FigureSpec(csv_path=path, kind="work-precision", out_path=out))
        assert out.exists() and out.stat().st_size > 0
        (series,) = data["rmse_vs_n"].values()
        assert series["x"] == [17] and series["y"] == [1e-4]

    @pytest.mark.parametrize("kind", ["work-precision", "calibration", "mesh-history"])
    def test_all_kinds_render(self, tmp_path, kind):
        path = tmp_path / "sweep.csv"
        synthetic_sweep(path)
        out = tmp_path / f"{kind}.png"
        data = render(FigureSpec(csv_path=path, kind=kind, out_path=out))
        assert out.exists() and out.stat().st_size > 0
        assert data

    def test_sweep_has_monotone_decreasing_rmse_per_order(self, tmp_path):
        path = tmp_path / "sweep.csv"
        synthetic_sweep(path)
        out = tmp_path / "wp.png"
        data = render(FigureSpec(csv_path=path, kind="work-precision", out_path=out))
        for series in data["rmse_vs_n"].values():
            ordered = sorted(zip(series["x"], series["y"]))
            values = [y for _, y in ordered]
            assert all(b < a for a, b in zip(values, values[1:]))

    def test_rendering_does_not_mutate_csv_and_is_deterministic(self, tmp_path):
        path = tmp_path / "sweep.csv"
        synthetic_sweep(path)
        before = path.read_bytes()
        out1 = tmp_path / "a.png"
        out2 = tmp_path / "b.png"
        data1 = render(FigureSpec(csv_path=path, kind="calibration", out_path=out1))
        data2 = render(FigureSpec(csv_path=path, kind="calibration", out_path=out2))
        assert path.read_bytes() == before
        assert data1 == data2

    def test_calibration_band_contains_unit_line(self, tmp_path):
        path = tmp_path / "sweep.csv"
        synthetic_sweep(path)
        out = tmp_path / "cal.png"
        data = render(FigureSpec(csv_path=path, kind="calibration", out_path=out), dof=255)
        assert data["dof"] == 255
        for series in data["anees_vs_tol"].values():
            assert all(math.isfinite(v) for v in series["y"])


class TestCommandLine:
    def test_cli_renders(self, tmp_path):
        from bvpfigures.render import main

        path = tmp_path / "sweep.csv"
        synthetic_sweep(path)
        out = tmp_path / "fig.png"
        code = main(["--csv", str(path), "--kind", "work-precision", "--out", str(out)])
        assert code == 0
        assert out.exists()

    def test_cli_schema_error_exit_code(self, tmp_path):
        from bvpfigures.render import main

        bad = tmp_path / "bad.csv"
        bad.write_text("problem\nx\n")
        code = main(["--csv", str(bad), "--kind", "calibration", "--out", str(tmp_path / "f.png")])
        assert code == 1

    def test_cli_filter(self, tmp_path):
        from bvpfigures.render import main

        path = tmp_path / "sweep.csv"
        synthetic_sweep(path)
        out = tmp_path / "fig.png"
        code = main(
            ["--csv", str(path), "--kind", "mesh-history", "--out", str(out), "--filter", "order=4"]
        )
        assert code == 0
