"""Report orchestration: which figures apply to which inputs."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from . import figures, summary
from .schema import SchemaError, load_inputs

ALL_FIGURES = ("energy", "mass", "oscillation", "picard", "plateaus", "sweep")

_RUN_FIGURES = {
    "energy": figures.energy_figure,
    "mass": figures.mass_figure,
    "oscillation": figures.oscillation_figure,
    "picard": figures.picard_figure,
}
_SWEEP_FIGURES = {
    "plateaus": figures.plateaus_figure,
    "sweep": figures.sweep_scatter_figure,
}
_FILENAMES = {
    "energy": "energy_decay",
    "mass": "mass_drift",
    "oscillation": "oscillation_scaling",
    "picard": "picard_history",
    "plateaus": "norm_plateaus",
    "sweep": "sweep_scatter",
}


@dataclass(frozen=True)
class ReportSpec:
    """What to render, from where, to where."""

    inputs: tuple
    output_dir: Path
    plots: tuple = field(default_factory=lambda: ALL_FIGURES)
    image_format: str = "png"

    def __post_init__(self):
        if not self.inputs:
            raise SchemaError("no input directories given")
        for name in self.plots:
            if name not in ALL_FIGURES:
                raise SchemaError(
                    f"unknown plot '{name}'; choose from {', '.join(ALL_FIGURES)}"
                )
        if self.image_format not in ("png", "svg"):
            raise SchemaError(f"unsupported image format '{self.image_format}'")


def render(spec: ReportSpec) -> list:
    """Write the applicable figures plus summary.md; returns written paths."""
    runs, sweeps = load_inputs(spec.inputs)
    all_runs = runs + [run for sweep in sweeps for run in sweep.runs]
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    written = []
    for name in ALL_FIGURES:
        if name not in spec.plots:
            continue
        if name in _RUN_FIGURES and all_runs:
            fig = _RUN_FIGURES[name](all_runs)
            path = out / f"{_FILENAMES[name]}.{spec.image_format}"
            figures.save_figure(fig, path, spec.image_format)
            written.append(path)
        elif name in _SWEEP_FIGURES and sweeps:
            for i, sweep in enumerate(sweeps):
                tag = "" if len(sweeps) == 1 else f"_{i}"
                fig = _SWEEP_FIGURES[name](sweep)
                path = out / f"{_FILENAMES[name]}{tag}.{spec.image_format}"
                figures.save_figure(fig, path, spec.image_format)
                written.append(path)
    summary_path = out / "summary.md"
    summary.write_summary(summary_path, runs, sweeps)
    written.append(summary_path)
    return written
