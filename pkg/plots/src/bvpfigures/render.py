"""Render work-precision and calibration figures from benchmark CSV logs.

The CSV contract is the solver benchmark schema (one row per solved cell):

    problem,order,estimator,tol,n_final,rmse,anees,runtime_s,
    refinements,ieks_iters_total,sigma_sq,status

Three figure kinds are supported: ``work-precision`` (log-log error against
grid size and against runtime), ``calibration`` (calibration statistic
against tolerance with shaded chi-square confidence bands around 1), and
``mesh-history`` (final grid size against tolerance).  Rendering is
deterministic: the same CSV yields the same plotted arrays and the same
file bytes apart from library metadata.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
from scipy.stats import chi2

CSV_COLUMNS = [
    "problem",
    "order",
    "estimator",
    "tol",
    "n_final",
    "rmse",
    "anees",
    "runtime_s",
    "refinements",
    "ieks_iters_total",
    "sigma_sq",
    "status",
]

KINDS = ("work-precision", "calibration", "mesh-history")


class SchemaError(ValueError):
    """The CSV does not carry the expected benchmark columns."""


@dataclass(frozen=True)
class FigureSpec:
    """What to render: input log, figure kind, output path, row filters."""

    csv_path: Path
    kind: str
    out_path: Path
    filters: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown figure kind '{self.kind}'; expected one of {KINDS}")
        object.__setattr__(self, "csv_path", Path(self.csv_path))
        object.__setattr__(self, "out_path", Path(self.out_path))
        unknown = set(self.filters) - set(CSV_COLUMNS)
        if unknown:
            raise SchemaError(f"filter references unknown columns: {sorted(unknown)}")


def load_rows(csv_path: Path, filters: dict | None = None) -> list[dict]:
    """Parse the benchmark CSV, validating the schema and applying filters."""
    with Path(csv_path).open(newline="") as handle:
        reader = csv.DictReader(handle)
        header = reader.fieldnames or []
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise SchemaError(
                f"CSV is missing required columns {missing}; expected {CSV_COLUMNS}"
            )
        rows = []
        for raw in reader:
            row = {
                "problem": raw["problem"],
                "order": int(raw["order"]),
                "estimator": raw["estimator"],
                "tol": float(raw["tol"]),
                "n_final": int(raw["n_final"]),
                "rmse": float(raw["rmse"]),
                "anees": float(raw["anees"]),
                "runtime_s": float(raw["runtime_s"]),
                "refinements": int(raw["refinements"]),
                "ieks_iters_total": int(raw["ieks_iters_total"]),
                "sigma_sq": float(raw["sigma_sq"]),
                "status": raw["status"],
            }
            if filters and any(str(row[k]) != str(v) for k, v in filters.items()):
                continue
            rows.append(row)
    if not rows:
        raise ValueError(f"no benchmark rows to plot in {csv_path}")
    return rows


def _series(rows: list[dict], x_key: str, y_key: str) -> dict:
    """Group rows into plottable series keyed by (problem, order, estimator)."""
    grouped: dict[tuple, list] = {}
    for row in rows:
        grouped.setdefault((row["problem"], row["order"], row["estimator"]), []).append(row)
    series = {}
    for key, members in sorted(grouped.items()):
        members = sorted(members, key=lambda r: (r["tol"], r[x_key]))
        series[key] = {
            "x": [m[x_key] for m in members],
            "y": [m[y_key] for m in members],
            "tol": [m["tol"] for m in members],
        }
    return series


def _label(key: tuple) -> str:
    problem, order, estimator = key
    return f"{problem} (order {order}, {estimator})"


def _render_work_precision(rows: list[dict], out_path: Path) -> dict:
    by_n = _series(rows, "n_final", "rmse")
    by_time = _series(rows, "runtime_s", "rmse")
    fig, (ax_n, ax_t) = plt.subplots(1, 2, figsize=(9.0, 3.6), sharey=True)
    for key, data in by_n.items():
        ax_n.loglog(data["x"], data["y"], marker="v", label=_label(key))
    for key, data in by_time.items():
        ax_t.loglog(data["x"], data["y"], marker="v")
    ax_n.set_xlabel("final grid points")
    ax_n.set_ylabel("RMSE")
    ax_t.set_xlabel("runtime [s]")
    ax_n.grid(True, which="both", alpha=0.3)
    ax_t.grid(True, which="both", alpha=0.3)
    ax_n.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return {"rmse_vs_n": by_n, "rmse_vs_runtime": by_time}


def _render_calibration(rows: list[dict], out_path: Path, dof: int) -> dict:
    series = _series(rows, "tol", "anees")
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    tols = sorted({row["tol"] for row in rows})
    span = (min(tols) / 3.0, max(tols) * 3.0)
    for level, shade in ((0.99, 0.15), (0.95, 0.25)):
        lo = chi2.ppf((1.0 - level) / 2.0, dof) / dof
        hi = chi2.ppf(1.0 - (1.0 - level) / 2.0, dof) / dof
        ax.fill_between(span, [lo, lo], [hi, hi], color="gray", alpha=shade, linewidth=0)
    ax.axhline(1.0, color="black", linewidth=1.0)
    for key, data in series.items():
        ax.loglog(data["x"], data["y"], marker="o", label=_label(key))
    ax.set_xlabel("tolerance")
    ax.set_ylabel("ANEES")
    ax.set_xlim(*span)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return {"anees_vs_tol": series, "dof": dof}


def _render_mesh_history(rows: list[dict], out_path: Path) -> dict:
    series = _series(rows, "tol", "n_final")
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    for key, data in series.items():
        ax.loglog(data["x"], data["y"], marker="s", label=_label(key))
    ax.set_xlabel("tolerance")
    ax.set_ylabel("final grid points")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return {"n_final_vs_tol": series}


def render(spec: FigureSpec, dof: int = 255) -> dict:
    """Render one figure; returns the plotted data arrays for verification.

    The input CSV is only read; nothing is written on failure (rows are
    validated before the figure file is opened).
    """
    rows = load_rows(spec.csv_path, spec.filters)
    spec.out_path.parent.mkdir(parents=True, exist_ok=True)
    if spec.kind == "work-precision":
        return _render_work_precision(rows, spec.out_path)
    if spec.kind == "calibration":
        return _render_calibration(rows, spec.out_path, dof)
    return _render_mesh_history(rows, spec.out_path)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="bvp-figures", description="Render figures from benchmark CSV logs."
    )
    parser.add_argument("--csv", type=Path, required=True)
    parser.add_argument("--kind", choices=KINDS, required=True)
    parser.add_argument("--out", type=Path, required=True)
    parser.add_argument(
        "--filter",
        action="append",
        default=[],
        metavar="COL=VALUE",
        help="keep only rows whose column equals the value (repeatable)",
    )
    parser.add_argument("--dof", type=int, default=255, help="chi-square band degrees of freedom")
    args = parser.parse_args(argv)
    filters = {}
    for item in args.filter:
        if "=" not in item:
            parser.error(f"bad filter '{item}', expected COL=VALUE")
        key, value = item.split("=", 1)
        filters[key] = value
    try:
        spec = FigureSpec(csv_path=args.csv, kind=args.kind, out_path=args.out, filters=filters)
        render(spec, dof=args.dof)
    except (SchemaError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
