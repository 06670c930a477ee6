"""Figures and summary pages from bifluid CSV artifacts."""

from .render import ALL_FIGURES, ReportSpec, render
from .schema import SchemaError

__all__ = ["ALL_FIGURES", "ReportSpec", "SchemaError", "render"]
