"""Command line entry points.

Exit codes: 0 success, 2 configuration error, 3 solver non-convergence,
4 runtime invariant violation.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import sys

import numpy as np

from . import lagrangian, scenario
from .closure import ModelParams, pressure, recover_Q, solve_Z
from .errors import ConfigError, InvariantViolation, NonConvergenceError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bifluid",
        description="Two-fluid compressible Stokes simulator with algebraic closure",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one configured run")
    p_run.add_argument("config", help="TOML configuration file")
    p_run.add_argument("--output-dir", default=None,
                       help="override [output] dir from the config")

    p_sweep = sub.add_parser("sweep", help="run the cartesian product of [sweep] axes")
    p_sweep.add_argument("config", help="TOML configuration file with a [sweep] section")
    p_sweep.add_argument("--output-dir", default=None,
                         help="override [output] dir from the config")
    p_sweep.add_argument("--axis", default=None, choices=scenario.SWEEP_AXES,
                         help="sweep this axis, replacing any [sweep] section")
    p_sweep.add_argument("--values", default=None,
                         help="comma-separated values for --axis")

    p_val = sub.add_parser("validate", help="parse a config and echo its normal form")
    p_val.add_argument("config", help="TOML configuration file")

    p_oracle = sub.add_parser("oracle", help="built-in reference computations")
    p_oracle.add_argument("which", choices=["closure", "twomarker"],
                          help="closure: closed-form roots; twomarker: two-marker relaxation")
    return parser


def _cmd_run(args) -> int:
    cfg = scenario.load_config(args.config)
    out = scenario.run_simulation(cfg, args.output_dir)
    print(f"run complete: {out}")
    return 0


def _cmd_sweep(args) -> int:
    cfg = scenario.load_config(args.config)
    if (args.axis is None) != (args.values is None):
        raise ConfigError("--axis and --values must be given together")
    if args.axis is not None:
        try:
            raw = [int(v) if args.axis == "n" else float(v)
                   for v in args.values.split(",") if v.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad --values for axis '{args.axis}': {exc}") from exc
        cfg = dataclasses.replace(cfg, sweep=scenario._parse_sweep({args.axis: raw}))
    out = scenario.run_sweep(cfg, args.output_dir)
    print(f"sweep complete: {out}")
    return 0


def _cmd_validate(args) -> int:
    cfg = scenario.load_config(args.config)
    sys.stdout.write(scenario.serialize_config(cfg))
    return 0


def _oracle_closure() -> int:
    """Check solve_Z against closed forms printable by hand."""
    checks = []
    p = ModelParams(gamma_plus=1.5, gamma_minus=3.0)
    # gamma = 1/2: Z - R = sqrt(Z) Q' / sqrt(Z) ... reduces to a quadratic
    # in sqrt(Z); for R = Q = 1 the root is the squared golden ratio.
    phi = (1.0 + math.sqrt(5.0)) / 2.0
    checks.append(("golden ratio root", solve_Z(1.0, 1.0, p), phi**2, 1e-12))
    checks.append(("vacuum Q=0", solve_Z(0.7, 0.0, p), 0.7, 0.0))
    checks.append(("pure minus phase", solve_Z(0.0, 2.0, p), 4.0, 1e-12))
    affine = ModelParams(gamma_plus=2.0, gamma_minus=2.0, test_only=True)
    checks.append(("affine gamma=1", solve_Z(0.3, 0.4, affine), 0.7, 0.0))
    q_back = recover_Q(0.8, solve_Z(0.8, 0.5, p), p)
    checks.append(("Q round trip", q_back, 0.5, 1e-12))
    checks.append(("pressure", pressure(4.0, p), 8.0, 1e-12))

    ok = True
    for name, got, want, tol in checks:
        good = abs(got - want) <= tol
        ok &= good
        print(f"{'PASS' if good else 'FAIL'} {name}: got {got:.17g}, want {want:.17g}")
    return 0 if ok else 1


def _oracle_twomarker() -> int:
    """Two markers relaxing toward pressure equilibrium; prints endpoints."""
    params = ModelParams(gamma_plus=1.5, gamma_minus=3.0, k=8.0)
    r0 = np.array([0.8, 1.2])
    q0 = np.array([0.5, 0.3])
    win = lagrangian.WindowConfig(tau=0.01, m_sub=8)
    traj = lagrangian.run(r0, q0, params, win, t_end=0.1)
    j = traj.index_of(0.1)
    r, q = traj.r_at(j), traj.q_at(j)
    mass0 = lagrangian.weighted_mean(r0, traj.cum_sigma[0])
    mass1 = lagrangian.weighted_mean(r, traj.cum_sigma[j])
    print(f"t=0.1 r = ({r[0]:.17g}, {r[1]:.17g})")
    print(f"t=0.1 q = ({q[0]:.17g}, {q[1]:.17g})")
    print(f"mass drift = {mass1 - mass0:.3e}")
    spread0 = abs(float(traj.sigma[0][0] - traj.sigma[0][1]))
    spread1 = abs(float(traj.sigma[j][0] - traj.sigma[j][1]))
    good = spread1 < spread0 and abs(mass1 - mass0) < 1e-12
    print(f"{'PASS' if good else 'FAIL'} pressure spread {spread0:.3e} -> {spread1:.3e}")
    return 0 if good else 1


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "validate":
            return _cmd_validate(args)
        if args.command == "oracle":
            return _oracle_closure() if args.which == "closure" else _oracle_twomarker()
        raise AssertionError(f"unhandled command {args.command}")
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NonConvergenceError as exc:
        print(f"solver did not converge: {exc}", file=sys.stderr)
        return 3
    except InvariantViolation as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
