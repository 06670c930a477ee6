"""Run configuration, initial data, and simulation orchestration.

A run is described by a TOML file with fixed sections; unknown sections
or keys are rejected by name so typos fail loudly instead of silently
falling back to defaults.  Configurations round-trip: parse(serialize(c))
reproduces c exactly, floats included.

Orchestration writes a self-describing output directory:

    diagnostics.csv     one row per output time, fixed column order
    run_manifest.json   config echo, package version, wall times, status
    snapshots/          optional field dumps at output times
    equivalence.csv     marker-vs-grid gaps, mode = "both" only

Floats in CSV output are rendered with %.17g, which is lossless for
doubles, so reruns of the same configuration are byte-identical.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import time as time_mod
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from . import closure, diagnostics, eulerian, grid as gridmod, lagrangian
from .closure import ModelParams
from .diagnostics import KernelConfig
from .errors import BifluidError, ConfigError
from .grid import GridSpec

__all__ = [
    "RunConfig",
    "parse_config",
    "load_config",
    "serialize_config",
    "make_initial_data",
    "run_simulation",
    "run_sweep",
    "CSV_COLUMNS",
    "EQUIV_COLUMNS",
    "SWEEP_AXES",
]

CSV_COLUMNS = [
    "time", "mass_R", "mass_Q", "energy", "energy_k", "dissipation",
    "lp_Z_gp", "lp_R_gp", "lp_Q_gm", "lp_TkZ_gp", "sigma_max",
    "S_h0_weighted", "S_h0_unweighted", "log_h0_norm", "logw_budget",
    "picard_iters", "contraction_ratio", "mean_defect",
]

EQUIV_COLUMNS = [
    "time", "sup_R_gap", "l1_R_gap", "sup_Q_gap", "l1_Q_gap",
    "sup_Z_gap", "l1_Z_gap", "sup_u_gap",
]

SWEEP_AXES = ["k", "delta", "n", "dt", "theta"]

_trapz = getattr(np, "trapezoid", None) or np.trapz


# ---------------------------------------------------------------------------
# configuration schema


@dataclass(frozen=True)
class ModelCfg:
    gamma_plus: float = 1.5
    gamma_minus: float = 3.0
    a_plus: float = 1.0
    a_minus: float = 1.0
    nu: float = 1.0
    k: float = math.inf


@dataclass(frozen=True)
class GridCfg:
    d: int = 2
    n: int = 64


@dataclass(frozen=True)
class TimeCfg:
    t_final: float = 0.5
    dt: float = 1e-3
    m_sub: int = 8
    output_every: int = 50


@dataclass(frozen=True)
class SolverCfg:
    delta: float = 0.05
    theta: float = 10.0
    fp_tol: float = 1e-10
    pic_tol: float = 1e-8
    contraction_target: float = 0.9
    max_window_iter: int = 50
    max_picard_iter: int = 40


@dataclass(frozen=True)
class KernelCfg:
    a: float = 0.0          # 0 means "default to d + 1"
    J: int = 8


@dataclass(frozen=True)
class InitialCfg:
    kind: str = "uniform"
    c_r: float = 1.0
    c_q: float = 1.0
    base_r: float = 0.8
    amp_r: float = 0.1
    base_q: float = 0.5
    amp_q: float = 0.05
    modes: tuple = (1,)
    cutoff_mode: int = 2
    min_val: float = 0.2
    seed: int = 0


@dataclass(frozen=True)
class OutputCfg:
    dir: str = "bifluid_run"
    mode: str = "lagrangian"
    snapshots: bool = False


@dataclass(frozen=True)
class RunConfig:
    model: ModelCfg = field(default_factory=ModelCfg)
    grid: GridCfg = field(default_factory=GridCfg)
    time: TimeCfg = field(default_factory=TimeCfg)
    solver: SolverCfg = field(default_factory=SolverCfg)
    kernel: KernelCfg = field(default_factory=KernelCfg)
    initial: InitialCfg = field(default_factory=InitialCfg)
    output: OutputCfg = field(default_factory=OutputCfg)
    sweep: dict = field(default_factory=dict)

    def model_params(self) -> ModelParams:
        m = self.model
        return ModelParams(gamma_plus=m.gamma_plus, gamma_minus=m.gamma_minus,
                           a_plus=m.a_plus, a_minus=m.a_minus, nu=m.nu, k=m.k)

    def grid_spec(self) -> GridSpec:
        return GridSpec(self.grid.d, self.grid.n)

    def kernel_config(self) -> KernelConfig:
        a = None if self.kernel.a == 0.0 else self.kernel.a
        return KernelConfig(a=a, J=self.kernel.J)


_SECTIONS = {
    "model": ModelCfg,
    "grid": GridCfg,
    "time": TimeCfg,
    "solver": SolverCfg,
    "kernel": KernelCfg,
    "initial": InitialCfg,
    "output": OutputCfg,
}

# Keys admitted per initial-data kind; anything else in [initial] is a typo.
_INITIAL_KEYS = {
    "uniform": {"kind", "c_r", "c_q"},
    "cosine_bumps": {"kind", "base_r", "amp_r", "base_q", "amp_q", "modes"},
    "random_smooth": {"kind", "cutoff_mode", "min_val", "seed"},
}

_INT_KEYS = {"d", "n", "m_sub", "output_every", "J", "cutoff_mode", "seed",
             "max_window_iter", "max_picard_iter"}


def _coerce(section: str, key: str, value, target_type):
    if target_type is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"[{section}] {key} must be a number, got {value!r}")
        return float(value)
    if target_type is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"[{section}] {key} must be an integer, got {value!r}")
        return int(value)
    if target_type is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"[{section}] {key} must be a boolean, got {value!r}")
        return value
    if target_type is str:
        if not isinstance(value, str):
            raise ConfigError(f"[{section}] {key} must be a string, got {value!r}")
        return value
    if target_type is tuple:
        if not isinstance(value, list) or not all(
                isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"[{section}] {key} must be a list of integers, got {value!r}")
        return tuple(value)
    raise AssertionError(f"unhandled config type {target_type}")


def _parse_section(name: str, cls, data: dict):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    out = {}
    for key, value in data.items():
        if key not in fields:
            raise ConfigError(f"unknown key '{key}' in section [{name}]")
        ftype = {"kind": str, "dir": str, "mode": str, "snapshots": bool,
                 "modes": tuple}.get(key, int if key in _INT_KEYS else float)
        out[key] = _coerce(name, key, value, ftype)
    return cls(**out)


def parse_config(text: str) -> RunConfig:
    """Parse and validate a TOML run configuration."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"TOML syntax error: {exc}") from exc
    sections = {}
    for name, data in raw.items():
        if name == "sweep":
            sections["sweep"] = _parse_sweep(data)
            continue
        if name not in _SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
        if not isinstance(data, dict):
            raise ConfigError(f"[{name}] must be a table")
        if name == "initial":
            kind = data.get("kind", InitialCfg().kind)
            allowed = _INITIAL_KEYS.get(kind)
            if allowed is not None:
                stray = sorted(set(data) - allowed)
                if stray:
                    raise ConfigError(
                        f"keys {', '.join(stray)} do not apply to initial "
                        f"data kind '{kind}'"
                    )
        sections[name] = _parse_section(name, _SECTIONS[name], data)
    cfg = RunConfig(**sections)
    _validate(cfg)
    return cfg


def _parse_sweep(data) -> dict:
    if not isinstance(data, dict):
        raise ConfigError("[sweep] must be a table")
    out = {}
    for key, values in data.items():
        if key not in SWEEP_AXES:
            raise ConfigError(
                f"unknown sweep axis '{key}'; valid axes: {', '.join(SWEEP_AXES)}"
            )
        if not isinstance(values, list) or not values:
            raise ConfigError(f"sweep axis '{key}' must be a non-empty list")
        if key == "n":
            out[key] = [_coerce("sweep", key, v, int) for v in values]
        else:
            out[key] = [_coerce("sweep", key, v, float) for v in values]
    return out


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config(text)


def _validate(cfg: RunConfig):
    cfg.model_params()       # exponent/constant checks live in ModelParams
    cfg.grid_spec()
    t = cfg.time
    if t.t_final < 0.0:
        raise ConfigError(f"t_final must be >= 0, got {t.t_final}")
    if t.dt <= 0.0:
        raise ConfigError(f"dt must be > 0, got {t.dt}")
    if t.m_sub < 1:
        raise ConfigError(f"m_sub must be >= 1, got {t.m_sub}")
    if t.output_every < 1:
        raise ConfigError(f"output_every must be >= 1, got {t.output_every}")
    s = cfg.solver
    if s.delta < 0.0:
        raise ConfigError(f"delta must be >= 0, got {s.delta}")
    if s.theta <= 0.0:
        raise ConfigError(f"theta must be > 0, got {s.theta}")
    if not 0.0 < s.contraction_target <= 1.0:
        raise ConfigError(f"contraction_target must be in (0, 1], got {s.contraction_target}")
    if cfg.kernel.a != 0.0 and cfg.kernel.a <= cfg.grid.d:
        raise ConfigError(
            f"kernel exponent a must exceed the dimension {cfg.grid.d}, got {cfg.kernel.a}"
        )
    if cfg.kernel.J < 1:
        raise ConfigError(f"kernel ladder depth J must be >= 1, got {cfg.kernel.J}")
    ini = cfg.initial
    if ini.kind not in _INITIAL_KEYS:
        raise ConfigError(
            f"unknown initial data kind '{ini.kind}'; "
            f"valid kinds: {', '.join(sorted(_INITIAL_KEYS))}"
        )
    if ini.kind == "uniform":
        if ini.c_r <= 0.0 or ini.c_q < 0.0:
            raise ConfigError(f"uniform initial data needs c_r > 0 and c_q >= 0, "
                              f"got c_r={ini.c_r}, c_q={ini.c_q}")
    elif ini.kind == "cosine_bumps":
        if not 0.0 <= ini.amp_r < ini.base_r:
            raise ConfigError(f"need 0 <= amp_r < base_r, got amp_r={ini.amp_r}, "
                              f"base_r={ini.base_r}")
        if not 0.0 <= ini.amp_q <= ini.base_q:
            raise ConfigError(f"need 0 <= amp_q <= base_q, got amp_q={ini.amp_q}, "
                              f"base_q={ini.base_q}")
        if not ini.modes or any(m < 1 for m in ini.modes):
            raise ConfigError(f"modes must be positive integers, got {ini.modes}")
    elif ini.kind == "random_smooth":
        if ini.cutoff_mode < 1:
            raise ConfigError(f"cutoff_mode must be >= 1, got {ini.cutoff_mode}")
        if ini.min_val < 0.0:
            raise ConfigError(f"min_val must be >= 0, got {ini.min_val}")
    if cfg.output.mode not in ("lagrangian", "eulerian", "both"):
        raise ConfigError(
            f"output mode must be lagrangian, eulerian, or both, got '{cfg.output.mode}'"
        )


def _fmt_toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        r = repr(v)
        # TOML floats need a decimal point or exponent marker.
        return r if ("." in r or "e" in r or "E" in r) else r + ".0"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (tuple, list)):
        return "[" + ", ".join(_fmt_toml_value(x) for x in v) + "]"
    raise AssertionError(f"unserializable config value {v!r}")


def serialize_config(cfg: RunConfig) -> str:
    """Emit the configuration as TOML; parse_config inverts this exactly."""
    lines = []
    for name, cls in _SECTIONS.items():
        section = getattr(cfg, name)
        lines.append(f"[{name}]")
        for f in dataclasses.fields(cls):
            if name == "initial" and f.name not in _INITIAL_KEYS[cfg.initial.kind]:
                continue
            lines.append(f"{f.name} = {_fmt_toml_value(getattr(section, f.name))}")
        lines.append("")
    if cfg.sweep:
        lines.append("[sweep]")
        for axis in SWEEP_AXES:
            if axis in cfg.sweep:
                lines.append(f"{axis} = {_fmt_toml_value(cfg.sweep[axis])}")
        lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# initial data


def make_initial_data(cfg: RunConfig):
    """Initial partial densities (R0, Q0) as grid fields."""
    grid = cfg.grid_spec()
    ini = cfg.initial
    if ini.kind == "uniform":
        return np.full(grid.shape, ini.c_r), np.full(grid.shape, ini.c_q)
    if ini.kind == "cosine_bumps":
        return (_cosine_field(grid, ini.base_r, ini.amp_r, ini.modes, 0.3),
                _cosine_field(grid, ini.base_q, ini.amp_q, ini.modes, 1.1))
    if ini.kind == "random_smooth":
        return (_random_smooth_field(grid, ini.cutoff_mode, ini.min_val, ini.seed),
                _random_smooth_field(grid, ini.cutoff_mode, ini.min_val, ini.seed + 1))
    raise ConfigError(f"unknown initial data kind '{ini.kind}'")


def _cosine_field(grid: GridSpec, base: float, amp: float, modes, phase: float):
    x = grid.lattice().reshape(grid.shape + (grid.d,))
    bump = np.zeros(grid.shape)
    for i, m in enumerate(modes):
        term = np.cos(2 * np.pi * m * x[..., 0] + phase * (i + 1))
        if grid.d == 2:
            term = term * np.cos(2 * np.pi * m * x[..., 1] + phase * (i + 2))
        bump += term
    return base + amp / len(modes) * bump


def _random_smooth_field(grid: GridSpec, cutoff: int, min_val: float, seed: int):
    """Low-pass random field rescaled to [min_val, min_val + 1]."""
    rng = np.random.Generator(np.random.Philox(seed))
    spec = np.fft.rfftn(rng.standard_normal(grid.shape))
    freqs = [np.fft.fftfreq(grid.n, d=1.0 / grid.n)] * (grid.d - 1)
    freqs.append(np.fft.rfftfreq(grid.n, d=1.0 / grid.n))
    mesh = np.meshgrid(*freqs, indexing="ij")
    keep = np.ones(spec.shape, dtype=bool)
    for f in mesh:
        keep &= np.abs(f) <= cutoff
    spec[~keep] = 0.0
    f = np.fft.irfftn(spec, s=grid.shape, axes=tuple(range(grid.d)))
    span = float(np.max(f) - np.min(f))
    if span == 0.0:
        return np.full(grid.shape, min_val + 0.5)
    return min_val + (f - float(np.min(f))) / span


# ---------------------------------------------------------------------------
# output writers


def _fmt(v) -> str:
    return v if isinstance(v, str) else format(float(v), ".17g")


def _write_csv(path: Path, columns, rows):
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[c]) for c in columns) + "\n")


def _output_indices(n_times: int, every: int):
    idx = list(range(0, n_times, every))
    if idx[-1] != n_times - 1:
        idx.append(n_times - 1)
    return idx


# ---------------------------------------------------------------------------
# run orchestration


def run_simulation(cfg: RunConfig, out_dir=None) -> Path:
    """Execute one configured run and write its output directory.

    On a solver error the manifest is still written, with status
    "failed" and the error recorded, before the exception propagates.
    """
    out = Path(out_dir) if out_dir is not None else Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "package": "bifluid",
        "version": _package_version(),
        "status": "running",
        "mode": cfg.output.mode,
        "config": _config_dict(cfg),
        "wall_times": {},
    }
    try:
        _run_inner(cfg, out, manifest)
        manifest["status"] = "ok"
    except BifluidError as exc:
        manifest["status"] = "failed"
        manifest["error"] = {"type": type(exc).__name__, "message": str(exc)}
        _write_manifest(out, manifest)
        raise
    _write_manifest(out, manifest)
    return out


def _package_version() -> str:
    try:
        from importlib.metadata import version
        return version("bifluid")
    except Exception:
        return "unknown"


def _config_dict(cfg: RunConfig) -> dict:
    d = dataclasses.asdict(cfg)
    for name, section in d.items():
        if not isinstance(section, dict):
            continue
        for key, val in section.items():
            if isinstance(val, float) and math.isinf(val):
                section[key] = "inf"
            elif isinstance(val, tuple):
                section[key] = list(val)
    return d


def _write_manifest(out: Path, manifest: dict):
    with open(out / "run_manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _run_inner(cfg: RunConfig, out: Path, manifest: dict):
    grid = cfg.grid_spec()
    params = cfg.model_params()
    R0, Q0 = make_initial_data(cfg)
    kernel_cfg = cfg.kernel_config()
    K_h0, k_norm = diagnostics.build_K_h0(grid, kernel_cfg)
    mode = cfg.output.mode

    lag_fields = None
    if mode in ("lagrangian", "both"):
        t0 = time_mod.perf_counter()
        lag_rows, lag_fields = _lagrangian_pipeline(
            cfg, grid, params, R0, Q0, K_h0, k_norm, kernel_cfg, out)
        manifest["wall_times"]["lagrangian"] = time_mod.perf_counter() - t0
        _write_csv(out / "diagnostics.csv", CSV_COLUMNS, lag_rows)
    if mode in ("eulerian", "both"):
        t0 = time_mod.perf_counter()
        eul_rows, eul_fields = _eulerian_pipeline(
            cfg, grid, params, R0, Q0, K_h0, k_norm, kernel_cfg, out,
            snapshots=(mode == "eulerian"))
        manifest["wall_times"]["eulerian"] = time_mod.perf_counter() - t0
        name = "diagnostics.csv" if mode == "eulerian" else "diagnostics_eulerian.csv"
        _write_csv(out / name, CSV_COLUMNS, eul_rows)
    if mode == "both":
        # Match rows by time rather than order: adaptive window halving
        # can densify the marker ladder relative to the fixed-dt one.
        equiv = []
        for t, Rl, Ql, Zl, ul in lag_fields:
            match = [f for f in eul_fields if abs(f[0] - t) < 1e-9 * max(1.0, t)]
            if not match:
                continue
            _, Re, Qe, Ze, ue = match[0]
            equiv.append({
                "time": t,
                "sup_R_gap": float(np.max(np.abs(Rl - Re))),
                "l1_R_gap": float(np.mean(np.abs(Rl - Re))),
                "sup_Q_gap": float(np.max(np.abs(Ql - Qe))),
                "l1_Q_gap": float(np.mean(np.abs(Ql - Qe))),
                "sup_Z_gap": float(np.max(np.abs(Zl - Ze))),
                "l1_Z_gap": float(np.mean(np.abs(Zl - Ze))),
                "sup_u_gap": float(np.max(np.abs(ul - ue))),
            })
        _write_csv(out / "equivalence.csv", EQUIV_COLUMNS, equiv)


def _build_trajectory(cfg: RunConfig, params: ModelParams, r0, q0):
    t = cfg.time
    if t.t_final == 0.0:
        sigma0, _, _ = lagrangian.sigma_of(r0, q0, np.zeros_like(r0), params)
        return lagrangian.LagrangianTrajectory(
            times=np.array([0.0]), sigma=sigma0[None, :],
            cum_sigma=np.zeros((1, len(r0))), r0=r0, q0=q0, params=params)
    win = lagrangian.WindowConfig(
        tau=t.m_sub * t.dt, m_sub=t.m_sub,
        fp_tol=cfg.solver.fp_tol, max_iter=cfg.solver.max_window_iter,
        contraction_target=cfg.solver.contraction_target)
    return lagrangian.run(r0, q0, params, win, t.t_final)


def _lagrangian_pipeline(cfg, grid, params, R0, Q0, K_h0, k_norm, kernel_cfg, out):
    traj = _build_trajectory(cfg, params, R0.ravel(), Q0.ravel())
    pcfg = eulerian.PicardConfig(delta=cfg.solver.delta, pic_tol=cfg.solver.pic_tol,
                                 max_iter=cfg.solver.max_picard_iter)
    hist, flow, pstats = eulerian.picard_solve(traj, grid, pcfg)
    labels = flow.positions
    nt = len(traj.times)

    out_idx = _output_indices(nt, cfg.time.output_every)
    out_set = set(out_idx)
    D_hist = np.empty((nt,) + grid.shape)
    fields_at = {}
    for j in range(nt):
        R, Q, Z = eulerian.pushforward_fields(traj, j, labels[j], grid, params)
        D_hist[j] = diagnostics.damping_D(grid, hist.u[j], Z, params)
        if j in out_set:
            fields_at[j] = (R, Q, Z)
    fwd = eulerian.integrate_forward(hist, grid.lattice(), 0.0, float(traj.times[-1]))
    W = diagnostics.path_damping_integral(grid, traj.times, fwd.positions, D_hist)

    # A window's measured contraction ratio becomes visible once the
    # window has been accepted; report the running maximum.
    ratio_at = np.zeros(nt)
    running = 0.0
    ends = [(ws.t0 + ws.tau, ws.contraction_ratio) for ws in traj.window_stats]
    ei = 0
    for j in range(nt):
        while ei < len(ends) and ends[ei][0] <= traj.times[j] + 1e-12:
            running = max(running, ends[ei][1])
            ei += 1
        ratio_at[j] = running

    snap_dir = out / "snapshots"
    if cfg.output.snapshots:
        snap_dir.mkdir(exist_ok=True)
    rows = []
    fields_list = []
    theta = cfg.solver.theta
    for j in out_idx:
        R, Q, Z = fields_at[j]
        w = diagnostics.solve_weights(grid, W[j], labels[j], theta)
        s_w, s_u = diagnostics.oscillation_functional(grid, R, Z, w, K_h0, cfg=kernel_cfg)
        t_j = float(traj.times[j])
        rows.append({
            "time": t_j,
            "mass_R": lagrangian.weighted_mean(traj.r_at(j), traj.cum_sigma[j]),
            "mass_Q": lagrangian.weighted_mean(traj.q_at(j), traj.cum_sigma[j]),
            "energy": diagnostics.energy_markers(traj, j),
            "energy_k": diagnostics.energy_k_markers(traj, j),
            "dissipation": diagnostics.dissipation_markers(traj, j),
            "lp_Z_gp": diagnostics.lp_norm_markers(traj, j, traj.z_at(j), params.gamma_plus),
            "lp_R_gp": diagnostics.lp_norm_markers(traj, j, traj.r_at(j), params.gamma_plus),
            "lp_Q_gm": diagnostics.lp_norm_markers(traj, j, traj.q_at(j), params.gamma_minus),
            "lp_TkZ_gp": diagnostics.lp_norm_markers(
                traj, j, closure.truncate(traj.z_at(j), params), params.gamma_plus),
            "sigma_max": float(np.max(np.abs(traj.sigma[j]))),
            "S_h0_weighted": s_w,
            "S_h0_unweighted": s_u,
            "log_h0_norm": k_norm,
            "logw_budget": diagnostics.log_weight_budget(R, Z, w),
            "picard_iters": pstats.iterations,
            "contraction_ratio": ratio_at[j],
            "mean_defect": float(pstats.mean_defects[j]),
        })
        fields_list.append((t_j, R, Q, Z, hist.u[j]))
        if cfg.output.snapshots:
            _write_snapshots(snap_dir, grid, j, t_j, R, Q, Z, w, hist.u[j])
    return rows, fields_list


def _write_snapshots(snap_dir: Path, grid, j, t, R, Q, Z, w, u):
    named = {"R": R, "Q": Q, "Z": Z, "w": w}
    for ax in range(grid.d):
        named[f"u{ax}"] = u[ax]
    for name, values in named.items():
        path = snap_dir / gridmod.field_filename(name, j)
        gridmod.write_field(str(path), name, t, grid, values)


def _eulerian_pipeline(cfg, grid, params, R0, Q0, K_h0, k_norm, kernel_cfg, out,
                       snapshots: bool):
    t_cfg = cfg.time
    n_steps = 0 if t_cfg.t_final == 0.0 else int(math.ceil(
        t_cfg.t_final / t_cfg.dt - 1e-12))
    times = [min(i * t_cfg.dt, t_cfg.t_final) for i in range(n_steps + 1)]
    out_idx = set(_output_indices(n_steps + 1, t_cfg.output_every))

    R = R0.copy()
    Q = Q0.copy()
    Z = closure.solve_Z(R.ravel(), Q.ravel(), params).reshape(grid.shape)
    W = np.zeros(grid.shape)
    theta = cfg.solver.theta
    snap_dir = out / "snapshots"
    if snapshots and cfg.output.snapshots:
        snap_dir.mkdir(exist_ok=True)

    rows = []
    fields_list = []
    for j, t in enumerate(times):
        p = closure.pressure(closure.truncate(Z, params), params)
        sigma = (p - float(np.mean(p))) / params.nu
        u = gridmod.grad(grid, gridmod.poisson_solve(grid, sigma))
        if j in out_idx:
            w = np.minimum(np.exp(-theta * W), 1.0)
            s_w, s_u = diagnostics.oscillation_functional(grid, R, Z, w, K_h0,
                                                          cfg=kernel_cfg)
            rows.append({
                "time": t,
                "mass_R": float(np.mean(R)),
                "mass_Q": float(np.mean(Q)),
                "energy": diagnostics.energy(R, Q, Z, params),
                "energy_k": diagnostics.truncated_energy(R, Q, Z, params),
                "dissipation": diagnostics.dissipation(grid, u),
                "lp_Z_gp": diagnostics.lp_norm(Z, params.gamma_plus),
                "lp_R_gp": diagnostics.lp_norm(R, params.gamma_plus),
                "lp_Q_gm": diagnostics.lp_norm(Q, params.gamma_minus),
                "lp_TkZ_gp": diagnostics.lp_norm(closure.truncate(Z, params),
                                                 params.gamma_plus),
                "sigma_max": float(np.max(np.abs(sigma))),
                "S_h0_weighted": s_w,
                "S_h0_unweighted": s_u,
                "log_h0_norm": k_norm,
                "logw_budget": diagnostics.log_weight_budget(R, Z, w),
                "picard_iters": 0.0,
                "contraction_ratio": 0.0,
                "mean_defect": abs(float(np.mean(sigma))),
            })
            fields_list.append((t, R.copy(), Q.copy(), Z.copy(), u.copy()))
            if snapshots and cfg.output.snapshots:
                _write_snapshots(snap_dir, grid, j, t, R, Q, Z, w, u)
        if j == n_steps:
            break
        dt = times[j + 1] - t
        D = diagnostics.damping_D(grid, u, Z, params)
        W = _advance_path_integral(grid, W, D, u, dt)
        R, Q, Z = eulerian.eulerian_transport_step(grid, R, Q, u, dt, params)
    return rows, fields_list


def _advance_path_integral(grid, W, D, u, dt):
    """Semi-Lagrangian update of W(t,x) = int D along the characteristic."""
    lattice = grid.lattice()
    xb, _ = eulerian._rk4_step(grid=grid, x=lattice, h=-dt, u_a=u, u_m=u, u_b=u)
    W_dep = gridmod.interpolate(grid, W, xb, "bicubic")
    D_dep = gridmod.interpolate(grid, D, xb, "bicubic")
    out = W_dep + 0.5 * dt * (D_dep + D.ravel())
    return np.maximum(out, 0.0).reshape(grid.shape)


# ---------------------------------------------------------------------------
# sweeps


def _point_config(cfg: RunConfig, assignment: dict) -> RunConfig:
    model = cfg.model
    grid = cfg.grid
    time_cfg = cfg.time
    solver = cfg.solver
    if "k" in assignment:
        model = dataclasses.replace(model, k=assignment["k"])
    if "n" in assignment:
        grid = dataclasses.replace(grid, n=assignment["n"])
    if "dt" in assignment:
        time_cfg = dataclasses.replace(time_cfg, dt=assignment["dt"])
    if "delta" in assignment:
        solver = dataclasses.replace(solver, delta=assignment["delta"])
    if "theta" in assignment:
        solver = dataclasses.replace(solver, theta=assignment["theta"])
    return dataclasses.replace(cfg, model=model, grid=grid, time=time_cfg,
                               solver=solver, sweep={})


def _point_dirname(index: int, assignment: dict) -> str:
    tags = [f"{axis}{assignment[axis]:g}" for axis in SWEEP_AXES if axis in assignment]
    return f"point_{index:03d}_" + "_".join(tags)


def _run_point(args):
    cfg, out_dir = args
    run_simulation(cfg, out_dir)
    return str(out_dir)


def _read_csv(path: Path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [dict(zip(header, (float(v) for v in line.split(","))))
                for line in fh if line.strip()]
    return rows


SWEEP_SUMMARY_COLUMNS = [
    "point", "k", "delta", "n", "dt", "theta",
    "sup_lp_TkZ_gp", "sup_lp_R_gp", "sup_lp_Q_gm", "sup_sigma_max",
    "int_dissipation", "final_mass_R", "final_mass_Q", "final_energy_k",
    "final_S_h0_weighted", "final_logw_budget", "picard_iters",
]


def run_sweep(cfg: RunConfig, out_dir=None) -> Path:
    """Run the cartesian product of the [sweep] axes.

    Points run in separate processes when BIFLUID_THREADS > 1; each
    point owns a disjoint subdirectory, so the summary (assembled in
    point order after all points finish) does not depend on scheduling.
    """
    if not cfg.sweep:
        raise ConfigError("config has no [sweep] section")
    base = Path(out_dir) if out_dir is not None else Path(cfg.output.dir)
    base.mkdir(parents=True, exist_ok=True)
    axes = [(axis, cfg.sweep[axis]) for axis in SWEEP_AXES if axis in cfg.sweep]
    assignments = [{}]
    for axis, values in axes:
        assignments = [dict(a, **{axis: v}) for a in assignments for v in values]

    jobs = []
    for i, assignment in enumerate(assignments):
        pcfg = _point_config(cfg, assignment)
        jobs.append((pcfg, base / _point_dirname(i, assignment)))

    threads = int(os.environ.get("BIFLUID_THREADS", "1"))
    if threads < 1:
        raise ConfigError(f"BIFLUID_THREADS must be >= 1, got {threads}")
    if threads == 1 or len(jobs) == 1:
        for job in jobs:
            _run_point(job)
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            list(pool.map(_run_point, jobs))

    summary = []
    for pcfg, pdir in jobs:
        rows = _read_csv(pdir / "diagnostics.csv")
        t = [r["time"] for r in rows]
        summary.append({
            "point": pdir.name,
            "k": pcfg.model.k,
            "delta": pcfg.solver.delta,
            "n": float(pcfg.grid.n),
            "dt": pcfg.time.dt,
            "theta": pcfg.solver.theta,
            "sup_lp_TkZ_gp": max(r["lp_TkZ_gp"] for r in rows),
            "sup_lp_R_gp": max(r["lp_R_gp"] for r in rows),
            "sup_lp_Q_gm": max(r["lp_Q_gm"] for r in rows),
            "sup_sigma_max": max(r["sigma_max"] for r in rows),
            "int_dissipation": float(_trapz([r["dissipation"] for r in rows], t)),
            "final_mass_R": rows[-1]["mass_R"],
            "final_mass_Q": rows[-1]["mass_Q"],
            "final_energy_k": rows[-1]["energy_k"],
            "final_S_h0_weighted": rows[-1]["S_h0_weighted"],
            "final_logw_budget": rows[-1]["logw_budget"],
            "picard_iters": rows[-1]["picard_iters"],
        })
    _write_csv(base / "sweep_summary.csv", SWEEP_SUMMARY_COLUMNS, summary)
    return base
