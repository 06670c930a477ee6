"""Figure builders over the documented CSV columns.

Everything here is a pure function of the loaded tables: figures are
built object-style (no pyplot state) and written with fixed style,
fixed dpi, and encoder metadata stripped, so identical CSV bytes yield
identical image bytes.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib as mpl
import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.backends.backend_svg import FigureCanvasSVG
from matplotlib.figure import Figure

from .schema import RunTable, SweepTable

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
           "#8c564b", "#17becf", "#7f7f7f"]
_DRIFT_FLOOR = 1e-17     # keeps exact-zero drift visible on a log axis


def _color(i: int) -> str:
    return _COLORS[i % len(_COLORS)]


def _axes(fig: Figure, rows: int, idx: int, title: str, xlabel: str, ylabel: str):
    ax = fig.add_subplot(rows, 1, idx)
    ax.set_title(title, fontsize=10)
    ax.set_xlabel(xlabel, fontsize=9)
    ax.set_ylabel(ylabel, fontsize=9)
    ax.tick_params(labelsize=8)
    ax.grid(True, alpha=0.3, linewidth=0.5)
    return ax


def _legend(ax, max_entries: int = 10):
    handles, labels = ax.get_legend_handles_labels()
    if 0 < len(labels) <= max_entries:
        ax.legend(fontsize=7, loc="best")


def save_figure(fig: Figure, path: Path, image_format: str) -> None:
    if image_format == "png":
        FigureCanvasAgg(fig)
        fig.savefig(path, format="png", dpi=110, metadata={"Software": None})
    else:
        FigureCanvasSVG(fig)
        with mpl.rc_context({"svg.hashsalt": "bifluid-report"}):
            fig.savefig(path, format="svg", metadata={"Date": None})


def energy_figure(runs: list) -> Figure:
    """Total and truncated energy per run over time."""
    fig = Figure(figsize=(7.0, 4.2), constrained_layout=True)
    ax = _axes(fig, 1, 1, "energy decay", "time", "energy")
    for i, run in enumerate(runs):
        d = run.diagnostics
        ax.plot(d["time"], d["energy"], color=_color(i), linewidth=1.2,
                label=run.label)
        ax.plot(d["time"], d["energy_k"], color=_color(i), linewidth=1.0,
                linestyle="--")
    _legend(ax)
    return fig


def mass_figure(runs: list) -> Figure:
    fig = Figure(figsize=(7.0, 4.2), constrained_layout=True)
    ax = _axes(fig, 1, 1, "relative mass drift (solid R, dashed Q)",
               "time", "|m(t)/m(0) - 1|")
    ax.set_yscale("log")
    for i, run in enumerate(runs):
        d = run.diagnostics
        for col, style in (("mass_R", "-"), ("mass_Q", "--")):
            m = d[col]
            drift = np.maximum(np.abs(m / m[0] - 1.0), _DRIFT_FLOOR)
            ax.plot(d["time"], drift, style, color=_color(i), linewidth=1.0,
                    label=run.label if style == "-" else None)
    ax.axhline(1e-12, color="black", linewidth=0.8, linestyle=":")
    _legend(ax)
    return fig


def oscillation_figure(runs: list) -> Figure:
    """Oscillation functional normalized by the kernel ladder norm.

    The kernel norm column grows affinely in |log h0|, so it doubles as
    the h0 axis: when the inputs span several ladder depths the second
    panel scatters the final normalized value against it.
    """
    norms = sorted({float(run.diagnostics["log_h0_norm"][0]) for run in runs})
    two = len(norms) > 1
    fig = Figure(figsize=(7.0, 7.2 if two else 4.2), constrained_layout=True)
    rows = 2 if two else 1
    ax = _axes(fig, rows, 1, "oscillation functional (solid weighted, dashed not)",
               "time", "S_h0 / ||K_h0||_1")
    for i, run in enumerate(runs):
        d = run.diagnostics
        norm = d["log_h0_norm"]
        ax.plot(d["time"], d["S_h0_weighted"] / norm, "-", color=_color(i),
                linewidth=1.2, label=run.label)
        ax.plot(d["time"], d["S_h0_unweighted"] / norm, "--", color=_color(i),
                linewidth=1.0)
    _legend(ax)
    if two:
        ax2 = _axes(fig, rows, 2, "final weighted value vs ladder depth",
                    "||K_h0||_1  (affine in |log h0|)", "S_h0 / ||K_h0||_1")
        for i, run in enumerate(runs):
            d = run.diagnostics
            ax2.plot([d["log_h0_norm"][-1]],
                     [d["S_h0_weighted"][-1] / d["log_h0_norm"][-1]],
                     "o", color=_color(i), markersize=5, label=run.label)
        _legend(ax2)
    return fig


def picard_figure(runs: list) -> Figure:
    fig = Figure(figsize=(7.0, 7.2), constrained_layout=True)
    ax = _axes(fig, 2, 1, "velocity fixed-point iterations", "time", "iterations")
    for i, run in enumerate(runs):
        d = run.diagnostics
        ax.plot(d["time"], d["picard_iters"], color=_color(i), linewidth=1.2,
                drawstyle="steps-post", label=run.label)
    _legend(ax)
    ax2 = _axes(fig, 2, 2, "window contraction ratio (running max)",
                "time", "ratio")
    for i, run in enumerate(runs):
        d = run.diagnostics
        ax2.plot(d["time"], d["contraction_ratio"], color=_color(i),
                 linewidth=1.2, drawstyle="steps-post")
    ax2.axhline(0.9, color="black", linewidth=0.8, linestyle=":")
    return fig


def plateaus_figure(sweep: SweepTable) -> Figure:
    """Uniformity of the key norms along the swept axis.

    Each series is scaled by its own mean so four quantities with very
    different magnitudes share an axis; a flat line at 1 is the ideal.
    """
    x = np.asarray(sweep.summary[sweep.axis], dtype=np.float64)
    order = np.argsort(x)
    fig = Figure(figsize=(7.0, 4.6), constrained_layout=True)
    ax = _axes(fig, 1, 1, f"norm plateaus across {sweep.axis}",
               sweep.axis, "value / mean")
    if np.min(x) > 0 and np.max(x) / np.min(x) >= 4.0:
        ax.set_xscale("log", base=2)
    cols = ["sup_lp_TkZ_gp", "sup_lp_R_gp", "sup_lp_Q_gm", "int_dissipation"]
    for i, col in enumerate(cols):
        y = np.asarray(sweep.summary[col], dtype=np.float64)[order]
        spread = (y.max() - y.min()) / y.min() if y.min() > 0 else math.inf
        ax.plot(x[order], y / np.mean(y), "o-", color=_color(i), linewidth=1.2,
                markersize=4, label=f"{col} (spread {spread:.2%})")
    ax.axhline(1.0, color="black", linewidth=0.8, linestyle=":")
    _legend(ax)
    return fig


def sweep_scatter_figure(sweep: SweepTable) -> Figure:
    """Endpoint diagnostics against the swept axis, one panel each."""
    x = np.asarray(sweep.summary[sweep.axis], dtype=np.float64)
    name = "delta-stability" if sweep.axis == "delta" else f"{sweep.axis}-stability"
    fig = Figure(figsize=(7.0, 8.4), constrained_layout=True)
    panels = [("final_energy_k", "final truncated energy"),
              ("int_dissipation", "integrated dissipation"),
              ("sup_sigma_max", "sup |div u|")]
    for i, (col, label) in enumerate(panels):
        ax = _axes(fig, 3, i + 1, f"{name}: {label}", sweep.axis, label)
        if np.min(x) > 0 and np.max(x) / np.min(x) >= 4.0:
            ax.set_xscale("log", base=2)
        ax.plot(x, np.asarray(sweep.summary[col], dtype=np.float64), "o",
                color=_color(i), markersize=5)
    return fig
