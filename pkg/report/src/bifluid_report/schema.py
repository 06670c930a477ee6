"""Strict readers for the simulator's CSV artifacts.

The simulator documents three tables: per-run `diagnostics.csv`, the
optional `equivalence.csv` written in mode = "both", and the per-sweep
`sweep_summary.csv`. This module accepts exactly those schemas and
nothing else; any deviation is reported with the offending column
named, so a renamed or missing field fails loudly instead of producing
an empty plot.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DIAGNOSTICS_COLUMNS = [
    "time", "mass_R", "mass_Q", "energy", "energy_k", "dissipation",
    "lp_Z_gp", "lp_R_gp", "lp_Q_gm", "lp_TkZ_gp", "sigma_max",
    "S_h0_weighted", "S_h0_unweighted", "log_h0_norm", "logw_budget",
    "picard_iters", "contraction_ratio", "mean_defect",
]

EQUIVALENCE_COLUMNS = [
    "time", "sup_R_gap", "l1_R_gap", "sup_Q_gap", "l1_Q_gap",
    "sup_Z_gap", "l1_Z_gap", "sup_u_gap",
]

SWEEP_SUMMARY_COLUMNS = [
    "point", "k", "delta", "n", "dt", "theta",
    "sup_lp_TkZ_gp", "sup_lp_R_gp", "sup_lp_Q_gm", "sup_sigma_max",
    "int_dissipation", "final_mass_R", "final_mass_Q", "final_energy_k",
    "final_S_h0_weighted", "final_logw_budget", "picard_iters",
]

SWEEP_AXES = ["k", "delta", "n", "dt", "theta"]

_STRING_COLUMNS = {"point"}


class SchemaError(ValueError):
    """A CSV artifact does not match the documented schema."""


def read_table(path: Path, expected: list) -> dict:
    """Read one CSV against its schema; returns {column: array or list}."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise SchemaError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise SchemaError(f"{path} is empty")
    header, data = rows[0], rows[1:]
    for col in expected:
        if col not in header:
            raise SchemaError(f"{path} is missing column '{col}'")
    for col in header:
        if col not in expected:
            raise SchemaError(f"{path} has unexpected column '{col}'")
    if header != expected:
        raise SchemaError(
            f"{path} columns are out of order, starting at "
            f"'{next(a for a, b in zip(header, expected) if a != b)}'"
        )
    if not data:
        raise SchemaError(f"{path} has a header but no data rows")
    out = {}
    for i, name in enumerate(expected):
        vals = []
        for j, row in enumerate(data):
            if len(row) != len(expected):
                raise SchemaError(f"{path} row {j + 2} has {len(row)} fields, "
                                  f"expected {len(expected)}")
            vals.append(row[i])
        if name in _STRING_COLUMNS:
            out[name] = vals
        else:
            try:
                out[name] = np.array([float(v) for v in vals])
            except ValueError as exc:
                raise SchemaError(
                    f"{path} column '{name}' is not numeric: {exc}"
                ) from exc
    return out


@dataclass(frozen=True)
class RunTable:
    """One run directory's tables, keyed by the documented column names."""

    path: Path
    label: str
    diagnostics: dict
    equivalence: dict | None = None


@dataclass(frozen=True)
class SweepTable:
    path: Path
    label: str
    summary: dict
    axis: str
    runs: tuple = field(default_factory=tuple)


def load_run_dir(path: Path, label: str | None = None) -> RunTable:
    diag = path / "diagnostics.csv"
    if not diag.is_file():
        raise SchemaError(f"{path} is not a run directory: no diagnostics.csv")
    equiv_path = path / "equivalence.csv"
    equivalence = (read_table(equiv_path, EQUIVALENCE_COLUMNS)
                   if equiv_path.is_file() else None)
    return RunTable(path=path, label=label or path.name,
                    diagnostics=read_table(diag, DIAGNOSTICS_COLUMNS),
                    equivalence=equivalence)


def _detect_axis(summary: dict) -> str:
    # The summary does not record which axis was swept; take the axis
    # column with the most distinct values, in the documented axis order.
    best, count = SWEEP_AXES[0], 0
    for axis in SWEEP_AXES:
        distinct = len(set(np.asarray(summary[axis]).tolist()))
        if distinct > count:
            best, count = axis, distinct
    return best


def load_sweep_dir(path: Path) -> SweepTable:
    summary_path = path / "sweep_summary.csv"
    if not summary_path.is_file():
        raise SchemaError(f"{path} is not a sweep directory: no sweep_summary.csv")
    summary = read_table(summary_path, SWEEP_SUMMARY_COLUMNS)
    runs = []
    for name in summary["point"]:
        sub = path / name
        if sub.is_dir():
            runs.append(load_run_dir(sub, label=name))
    return SweepTable(path=path, label=path.name, summary=summary,
                      axis=_detect_axis(summary), runs=tuple(runs))


def load_inputs(paths) -> tuple:
    """Sort input directories into runs and sweeps; errors name the path."""
    runs, sweeps = [], []
    for raw in paths:
        path = Path(raw)
        if (path / "sweep_summary.csv").is_file():
            sweeps.append(load_sweep_dir(path))
        elif (path / "diagnostics.csv").is_file():
            runs.append(load_run_dir(path))
        else:
            raise SchemaError(
                f"{path} has neither diagnostics.csv nor sweep_summary.csv"
            )
    return runs, sweeps
