"""Run configuration, initial data, output artifacts, and sweeps.

Config checks pin the TOML surface: unknown sections and keys are
rejected by name, types are strict (no bool-as-int), and parse then
serialize is the identity on the normal form.  Run checks use tiny 1-D
scenarios so the whole file stays fast; the reference-scale behavior
lives in test_acceptance.py.
"""

import json
import math
import os
from pathlib import Path

import numpy as np
import pytest

from bifluid import grid as gridmod, scenario
from bifluid.errors import ConfigError, NonConvergenceError
from bifluid.scenario import (
    CSV_COLUMNS,
    EQUIV_COLUMNS,
    SWEEP_SUMMARY_COLUMNS,
    InitialCfg,
    KernelCfg,
    ModelCfg,
    OutputCfg,
    RunConfig,
    SolverCfg,
    TimeCfg,
    GridCfg,
    load_config,
    make_initial_data,
    parse_config,
    run_simulation,
    run_sweep,
    serialize_config,
)


def _cell(v):
    try:
        return float(v)
    except ValueError:
        return v


def read_rows(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        return header, [dict(zip(header, map(_cell, line.strip().split(","))))
                        for line in fh if line.strip()]


def tiny_config(tmp_path, **over):
    """1-D scenario small enough to run in well under a second."""
    fields = {
        "grid": GridCfg(d=1, n=16),
        "time": TimeCfg(t_final=0.02, dt=0.01, m_sub=2, output_every=1),
        "initial": InitialCfg(kind="cosine_bumps", base_r=0.8, amp_r=0.1,
                              base_q=0.5, amp_q=0.05, modes=(1,)),
        "output": OutputCfg(dir=str(tmp_path / "out")),
    }
    fields.update(over)
    return RunConfig(**fields)


class TestConfigParse:
    def test_empty_text_gives_defaults(self):
        assert parse_config("") == RunConfig()

    def test_round_trip_is_identity(self):
        cfg = RunConfig(
            model=ModelCfg(gamma_plus=1.2, gamma_minus=2.5, a_plus=2.0,
                           a_minus=0.5, nu=0.25, k=4.0),
            grid=GridCfg(d=1, n=32),
            time=TimeCfg(t_final=0.1, dt=0.002, m_sub=4, output_every=5),
            solver=SolverCfg(delta=0.1, theta=3.0, fp_tol=1e-9, pic_tol=1e-7,
                             contraction_target=0.8, max_window_iter=30,
                             max_picard_iter=20),
            kernel=KernelCfg(a=2.5, J=6),
            initial=InitialCfg(kind="random_smooth", cutoff_mode=3,
                               min_val=0.3, seed=7),
            output=OutputCfg(dir="somewhere", mode="both", snapshots=True),
            sweep={"k": [2.0, 4.0], "n": [16, 32]},
        )
        assert parse_config(serialize_config(cfg)) == cfg

    def test_infinite_k_round_trips(self):
        cfg = RunConfig(model=ModelCfg(k=math.inf))
        text = serialize_config(cfg)
        assert "inf" in text
        assert parse_config(text).model.k == math.inf

    def test_serialize_emits_only_kind_relevant_initial_keys(self):
        text = serialize_config(RunConfig(initial=InitialCfg(kind="uniform")))
        assert "c_r" in text
        assert "base_r" not in text and "seed" not in text

    def test_unknown_section_rejected_by_name(self):
        with pytest.raises(ConfigError, match="turbulence"):
            parse_config("[turbulence]\nmach = 3.0\n")

    def test_unknown_key_rejected_by_name(self):
        with pytest.raises(ConfigError, match="gamma"):
            parse_config("[model]\ngamma = 1.5\n")

    def test_key_from_wrong_kind_rejected(self):
        text = '[initial]\nkind = "uniform"\nbase_r = 0.8\n'
        with pytest.raises(ConfigError, match="base_r"):
            parse_config(text)

    def test_toml_syntax_error_is_config_error(self):
        with pytest.raises(ConfigError, match="syntax"):
            parse_config("[model\n")

    def test_type_strictness(self):
        with pytest.raises(ConfigError, match="integer"):
            parse_config('[grid]\nn = "64"\n')
        with pytest.raises(ConfigError, match="boolean"):
            parse_config("[output]\nsnapshots = 1\n")
        with pytest.raises(ConfigError, match="number"):
            parse_config('[model]\nnu = "thick"\n')
        with pytest.raises(ConfigError, match="integers"):
            parse_config('[initial]\nkind = "cosine_bumps"\nmodes = [1.5]\n')

    def test_exponent_order_error_names_the_field(self):
        with pytest.raises(ConfigError, match="gamma_plus"):
            parse_config("[model]\ngamma_plus = 0.9\n")

    def test_swapped_exponents_accepted(self):
        cfg = parse_config("[model]\ngamma_plus = 3.0\ngamma_minus = 1.5\n")
        p = cfg.model_params()
        assert p.phases_swapped
        assert p.gamma <= 1.0

    def test_validation_bounds(self):
        bad = [
            "[time]\nt_final = -1.0\n",
            "[time]\ndt = 0.0\n",
            "[time]\nm_sub = 0\n",
            "[time]\noutput_every = 0\n",
            "[solver]\ndelta = -0.1\n",
            "[solver]\ntheta = 0.0\n",
            "[solver]\ncontraction_target = 1.5\n",
            "[kernel]\nJ = 0\n",
            "[kernel]\na = 1.5\n",          # default grid is d=2
            '[output]\nmode = "sideways"\n',
            '[initial]\nkind = "square_wave"\n',
            '[initial]\nkind = "cosine_bumps"\namp_r = 0.9\n',
            '[initial]\nkind = "cosine_bumps"\nmodes = [0]\n',
            "[grid]\nn = 24\n",
        ]
        for text in bad:
            with pytest.raises(ConfigError):
                parse_config(text)

    def test_sweep_axes_validated(self):
        assert parse_config("[sweep]\nk = [2, 4]\n").sweep == {"k": [2.0, 4.0]}
        with pytest.raises(ConfigError, match="viscosity"):
            parse_config("[sweep]\nviscosity = [1.0]\n")
        with pytest.raises(ConfigError, match="non-empty"):
            parse_config("[sweep]\nk = []\n")

    def test_load_config_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "nope.toml")


class TestInitialData:
    def test_uniform(self):
        cfg = RunConfig(grid=GridCfg(d=2, n=8),
                        initial=InitialCfg(kind="uniform", c_r=1.5, c_q=0.25))
        R, Q = make_initial_data(cfg)
        assert R.shape == (8, 8) and Q.shape == (8, 8)
        assert np.all(R == 1.5) and np.all(Q == 0.25)

    def test_cosine_bumps_mean_and_range(self):
        # Integer modes on a uniform lattice have exactly zero mean.
        cfg = tiny_config(Path("."), grid=GridCfg(d=2, n=16))
        R, Q = make_initial_data(cfg)
        assert abs(np.mean(R) - 0.8) < 1e-14
        assert abs(np.mean(Q) - 0.5) < 1e-14
        assert np.min(R) >= 0.8 - 0.1 - 1e-12
        assert np.max(R) <= 0.8 + 0.1 + 1e-12

    def test_cosine_bumps_1d_shape(self):
        R, Q = make_initial_data(tiny_config(Path(".")))
        assert R.shape == (16,) and Q.shape == (16,)

    def test_random_smooth_deterministic_and_bounded(self):
        cfg = RunConfig(grid=GridCfg(d=2, n=16),
                        initial=InitialCfg(kind="random_smooth", cutoff_mode=2,
                                           min_val=0.3, seed=11))
        R1, Q1 = make_initial_data(cfg)
        R2, Q2 = make_initial_data(cfg)
        assert np.array_equal(R1, R2) and np.array_equal(Q1, Q2)
        assert np.min(R1) >= 0.3 - 1e-12 and np.max(R1) <= 1.3 + 1e-12
        # R and Q draw from different streams, and seeds matter.
        assert not np.array_equal(R1, Q1)
        cfg2 = RunConfig(grid=GridCfg(d=2, n=16),
                         initial=InitialCfg(kind="random_smooth", cutoff_mode=2,
                                            min_val=0.3, seed=12))
        R3, _ = make_initial_data(cfg2)
        assert not np.array_equal(R1, R3)


class TestRunArtifacts:
    def test_csv_schema_and_manifest(self, tmp_path):
        out = run_simulation(tiny_config(tmp_path))
        header, rows = read_rows(out / "diagnostics.csv")
        assert header == CSV_COLUMNS
        assert rows[0]["time"] == 0.0
        assert abs(rows[-1]["time"] - 0.02) < 1e-15
        assert all(math.isfinite(v) for r in rows for v in r.values())
        manifest = json.loads((out / "run_manifest.json").read_text())
        assert manifest["status"] == "ok"
        assert manifest["config"]["grid"]["n"] == 16
        assert "lagrangian" in manifest["wall_times"]

    def test_seventeen_digit_floats(self, tmp_path):
        out = run_simulation(tiny_config(tmp_path))
        line = (out / "diagnostics.csv").read_text().splitlines()[1]
        # mass_R = 0.8 must be written exactly, not rounded short.
        assert line.split(",")[1] == "0.80000000000000004"

    def test_t_final_zero_single_row(self, tmp_path):
        cfg = tiny_config(tmp_path, time=TimeCfg(t_final=0.0, dt=0.01))
        _, rows = read_rows(run_simulation(cfg) / "diagnostics.csv")
        assert len(rows) == 1 and rows[0]["time"] == 0.0

    def test_both_mode_writes_equivalence(self, tmp_path):
        cfg = tiny_config(tmp_path,
                          output=OutputCfg(dir=str(tmp_path / "b"), mode="both"))
        out = run_simulation(cfg)
        assert (out / "diagnostics.csv").exists()
        assert (out / "diagnostics_eulerian.csv").exists()
        header, rows = read_rows(out / "equivalence.csv")
        assert header == EQUIV_COLUMNS
        assert rows[0]["sup_R_gap"] < 1e-12      # identical initial data
        assert all(r["sup_Z_gap"] < 0.1 for r in rows)

    def test_snapshots_written_and_readable(self, tmp_path):
        cfg = tiny_config(tmp_path,
                          output=OutputCfg(dir=str(tmp_path / "s"),
                                           snapshots=True))
        out = run_simulation(cfg)
        path = out / "snapshots" / gridmod.field_filename("R", 0)
        assert path.exists()
        meta, values = gridmod.read_field(str(path))
        assert meta["time"] == 0.0
        assert values.shape == (16,)
        assert abs(float(np.mean(values)) - 0.8) < 1e-14

    def test_failed_run_leaves_failed_manifest(self, tmp_path):
        # theta this large drives w to exactly 0 on cells carrying mass,
        # which the budget rejects as a solver-settings failure.
        cfg = tiny_config(tmp_path, solver=SolverCfg(theta=1e9))
        with pytest.raises(NonConvergenceError):
            run_simulation(cfg)
        manifest = json.loads(
            (tmp_path / "out" / "run_manifest.json").read_text())
        assert manifest["status"] == "failed"
        assert manifest["error"]["type"] == "NonConvergenceError"

    def test_output_dir_override(self, tmp_path):
        cfg = tiny_config(tmp_path)
        out = run_simulation(cfg, out_dir=tmp_path / "elsewhere")
        assert out == tmp_path / "elsewhere"
        assert (out / "diagnostics.csv").exists()


class TestSweep:
    def sweep_config(self, tmp_path, **over):
        return tiny_config(tmp_path, sweep={"k": [2.0, 8.0], "theta": [5.0]},
                           **over)

    def test_point_dirs_and_summary(self, tmp_path):
        base = run_sweep(self.sweep_config(tmp_path))
        assert (base / "point_000_k2_theta5" / "diagnostics.csv").exists()
        assert (base / "point_001_k8_theta5" / "diagnostics.csv").exists()
        header, rows = read_rows(base / "sweep_summary.csv")
        assert header == SWEEP_SUMMARY_COLUMNS
        assert [r["point"] for r in rows] == ["point_000_k2_theta5",
                                              "point_001_k8_theta5"]
        assert [r["k"] for r in rows] == [2.0, 8.0]
        assert all(r["theta"] == 5.0 for r in rows)

    def test_sweep_without_section_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="sweep"):
            run_sweep(tiny_config(tmp_path))

    def test_parallel_bytes_match_serial(self, tmp_path, monkeypatch):
        cfg1 = self.sweep_config(tmp_path, output=OutputCfg(dir=str(tmp_path / "s1")))
        cfg2 = self.sweep_config(tmp_path, output=OutputCfg(dir=str(tmp_path / "s2")))
        monkeypatch.setenv("BIFLUID_THREADS", "1")
        b1 = run_sweep(cfg1)
        monkeypatch.setenv("BIFLUID_THREADS", "2")
        b2 = run_sweep(cfg2)
        for rel in ["sweep_summary.csv",
                    "point_000_k2_theta5/diagnostics.csv",
                    "point_001_k8_theta5/diagnostics.csv"]:
            assert (b1 / rel).read_bytes() == (b2 / rel).read_bytes()
