"""One-page plain-text summary of the checks measurable from the CSVs.

Each line states the measured number and the threshold it was held to;
checks whose threshold needs information outside the CSV schema (the
truncation level, the viscosity) are reported as measurements only.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .schema import RunTable, SweepTable

MASS_TOL = 1e-12
CONTRACTION_LIMIT = 0.9
ENERGY_SLACK_PER_SPACING = 1e-4
BUDGET_RATE_LIMIT = 2.0
SPREAD_LIMIT = 0.10

_UNIFORMITY_COLUMNS = ["sup_lp_TkZ_gp", "sup_lp_R_gp", "sup_lp_Q_gm",
                       "int_dissipation"]


def _verdict(ok: bool) -> str:
    return "PASS" if ok else "FAIL"


def _run_lines(run: RunTable) -> list:
    d = run.diagnostics
    t = d["time"]
    lines = [f"## run {run.label}", ""]
    lines.append(f"- rows: {len(t)}, time span [{t[0]:.6g}, {t[-1]:.6g}]")

    for col in ("mass_R", "mass_Q"):
        m = d[col]
        drift = float(np.max(np.abs(m / m[0] - 1.0)))
        lines.append(f"- {col} relative drift {drift:.6g} <= {MASS_TOL:g}: "
                     f"{_verdict(drift <= MASS_TOL)}")

    ek = d["energy_k"]
    if len(ek) > 1:
        uptick = max(float(np.max(np.diff(ek))), 0.0)
        spacing = float(np.max(np.diff(t)))
        tol = ENERGY_SLACK_PER_SPACING * spacing
        lines.append(f"- energy_k max uptick {uptick:.6g} <= {tol:.6g} "
                     f"(1e-4 x row spacing): {_verdict(uptick <= tol)}")
    else:
        lines.append("- energy_k monotonicity: n/a (single row)")

    ratio = float(d["contraction_ratio"][-1])
    if ratio > 0.0:
        lines.append(f"- contraction ratio {ratio:.6g} < {CONTRACTION_LIMIT}: "
                     f"{_verdict(ratio < CONTRACTION_LIMIT)}")
    else:
        lines.append("- contraction ratio: n/a (no marker windows recorded)")

    live = t >= 0.1
    if np.any(live) and float(d["logw_budget"][live][0]) > 0.0:
        j0 = int(np.argmax(live))
        rate0 = float(d["logw_budget"][j0] / t[j0])
        later = t >= t[j0]
        ratio_max = float(np.max(d["logw_budget"][later] / t[later]) / rate0)
        lines.append(f"- log-weight budget rate ratio {ratio_max:.6g} <= "
                     f"{BUDGET_RATE_LIMIT:g}: "
                     f"{_verdict(ratio_max <= BUDGET_RATE_LIMIT)}")
    else:
        lines.append("- log-weight budget rate: n/a (horizon below 0.1)")

    lines.append(f"- sup |div u| over run: {float(np.max(d['sigma_max'])):.6g}")
    s_final = float(d["S_h0_weighted"][-1] / d["log_h0_norm"][-1])
    lines.append(f"- final weighted oscillation / |log h0|: {s_final:.6g}")

    if run.equivalence is not None:
        gap = float(run.equivalence["l1_Z_gap"][-1])
        lines.append(f"- final L1 gap, closure Z vs evolved Z: {gap:.6g}")
    lines.append("")
    return lines


def _sweep_lines(sweep: SweepTable) -> list:
    s = sweep.summary
    vals = np.asarray(s[sweep.axis], dtype=np.float64)
    lines = [f"## sweep {sweep.label}", ""]
    lines.append(f"- axis {sweep.axis}: "
                 + ", ".join(f"{v:g}" for v in vals))
    for col in _UNIFORMITY_COLUMNS:
        y = np.asarray(s[col], dtype=np.float64)
        if y.min() > 0:
            spread = float((y.max() - y.min()) / y.min())
            lines.append(f"- {col} spread {spread:.2%} < {SPREAD_LIMIT:.0%}: "
                         f"{_verdict(spread < SPREAD_LIMIT)}")
        else:
            lines.append(f"- {col} spread: n/a (non-positive values)")
    worst = float(np.max(np.abs(
        np.asarray(s["final_mass_R"]) / np.asarray(s["final_mass_R"])[0] - 1.0)))
    lines.append(f"- final mass_R spread across points: {worst:.6g}")
    lines.append("")
    return lines


def write_summary(path: Path, runs: list, sweeps: list) -> None:
    lines = ["# simulation report", ""]
    for run in runs:
        lines.extend(_run_lines(run))
    for sweep in sweeps:
        lines.extend(_sweep_lines(sweep))
        for run in sweep.runs:
            lines.extend(_run_lines(run))
    path.write_text("\n".join(lines) + "\n")
