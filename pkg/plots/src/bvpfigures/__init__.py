"""Figure rendering for BVP solver benchmark logs."""

from .render import CSV_COLUMNS, FigureSpec, SchemaError, load_rows, render

__all__ = ["CSV_COLUMNS", "FigureSpec", "SchemaError", "load_rows", "render"]
