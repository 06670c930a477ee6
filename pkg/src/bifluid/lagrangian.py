"""Marker dynamics in Lagrangian coordinates.

Markers carry (r, q) sampled on the initial uniform lattice.  Along a
trajectory both densities obey d/dt f = -f * sigma, where the expansion
rate sigma is slaved to the marker ensemble through the truncated
pressure and its Jacobian-weighted average:

    nu * sigma_i = a_plus * T_k(z_i)^{gamma_plus} - {a_plus T_k(z)^{gamma_plus}}_L,
    {g}_L = (1/N) sum_i g_i exp(cum_sigma_i),

with z_i the closure root of (r_i, q_i) and cum_sigma_i the running
integral of sigma_i, whose exponential is exactly the flow Jacobian.
Updates use the exact exponential r = r(t0) * exp(-int sigma), so the
pushforward mass (1/N) sum r_i exp(cum_sigma_i) is conserved to
rounding by construction.

A window of length tau is solved by plain fixed-point iteration over
the sub-node trajectory; the measured contraction ratio controls
adaptive halving of tau.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import closure
from .closure import ModelParams
from .errors import InvariantViolation, NonConvergenceError

__all__ = [
    "WindowConfig",
    "LagrangianState",
    "WindowStats",
    "LagrangianTrajectory",
    "weighted_mean",
    "sigma_of",
    "step_window",
    "run",
]

# Relative slack for runtime bound assertions; the bounds hold exactly
# in real arithmetic, this absorbs rounding of exp/pow chains.
BOUND_SLACK = 1e-9


@dataclass(frozen=True)
class WindowConfig:
    tau: float = 0.01
    m_sub: int = 8
    fp_tol: float = 1e-10
    max_iter: int = 50
    contraction_target: float = 0.9
    tau_min: float = 1e-5


@dataclass
class LagrangianState:
    t: float
    r: np.ndarray
    q: np.ndarray
    cum_sigma: np.ndarray

    @classmethod
    def initial(cls, r0: np.ndarray, q0: np.ndarray) -> "LagrangianState":
        r0 = np.asarray(r0, dtype=np.float64).ravel()
        q0 = np.asarray(q0, dtype=np.float64).ravel()
        return cls(t=0.0, r=r0.copy(), q=q0.copy(), cum_sigma=np.zeros_like(r0))


@dataclass
class WindowStats:
    t0: float
    tau: float
    iters: int
    contraction_ratio: float
    halvings: int
    sigma_max: float
    mean_defect: float


def weighted_mean(f: np.ndarray, cum_sigma: np.ndarray) -> float:
    """Jacobian-weighted lattice average (1/N) sum f_i exp(cum_sigma_i)."""
    return float(np.mean(f * np.exp(cum_sigma)))


def sigma_of(r, q, cum_sigma, params: ModelParams):
    """Expansion rate for one time level of markers.

    Returns (sigma, z, defect) where defect is the weighted mean of
    nu*sigma, zero in exact arithmetic up to the deviation of the mean
    Jacobian from 1.
    """
    z = closure.solve_Z(r, q, params)
    p = closure.pressure(closure.truncate(z, params), params)
    w = np.exp(cum_sigma)
    p_mean = float(np.mean(p * w))
    sigma = (p - p_mean) / params.nu
    defect = float(np.mean(sigma * w)) * params.nu
    return sigma, z, defect


def _check_sigma_bound(sigma: np.ndarray, params: ModelParams):
    if not math.isfinite(params.k):
        return
    bound = params.a_plus * params.k**params.gamma_plus / params.nu
    worst = float(np.max(np.abs(sigma)))
    if worst > bound * (1.0 + BOUND_SLACK):
        raise InvariantViolation(
            f"sigma bound violated: max |sigma| = {worst} > a_plus k^gamma_plus / nu = {bound}"
        )


def _check_growth_bound(r, q, r_init, q_init, t, params: ModelParams):
    if not math.isfinite(params.k) or t <= 0.0:
        return
    growth = math.exp(params.a_plus * params.k**params.gamma_plus * t / params.nu)
    slack = 1.0 + BOUND_SLACK
    for name, f, f0 in (("r", r, r_init), ("q", q, q_init)):
        hi0 = float(np.max(f0))
        if float(np.max(f)) > hi0 * growth * slack:
            raise InvariantViolation(
                f"growth bound violated for {name}: max {float(np.max(f))} > {hi0 * growth}"
            )
        lo0 = float(np.min(f0))
        if lo0 > 0.0 and float(np.min(f)) < lo0 / growth / slack:
            raise InvariantViolation(
                f"growth bound violated for 1/{name}: min {float(np.min(f))} < {lo0 / growth}"
            )


def step_window(state: LagrangianState, params: ModelParams, win: WindowConfig,
                r_init=None, q_init=None, tau: float | None = None):
    """Advance one window of length tau by fixed-point iteration.

    Returns (new_state, node_times, sigma_nodes, cum_nodes, stats).
    The sub-node trajectory (m_sub+1 levels including both endpoints)
    is exposed so callers can stitch a uniform time ladder.

    r_init/q_init are the t=0 marker fields used by the growth-bound
    assertion; they default to the window's starting fields.
    """
    if r_init is None:
        r_init = state.r
    if q_init is None:
        q_init = state.q
    tau = win.tau if tau is None else tau
    halvings = 0
    while True:
        try:
            result = _iterate_window(state, params, win, tau)
            break
        except _ContractionFailure:
            if tau / 2.0 < win.tau_min:
                raise NonConvergenceError(
                    f"window at t={state.t} would need tau < tau_min={win.tau_min}"
                )
            tau /= 2.0
            halvings += 1
    times, sig, cum, rr, qq, iters, ratio = result
    for m in range(len(times)):
        _check_sigma_bound(sig[m], params)
        _check_growth_bound(rr[m], qq[m], r_init, q_init, times[m], params)
    _, _, defect = sigma_of(rr[-1], qq[-1], cum[-1], params)
    stats = WindowStats(
        t0=state.t, tau=tau, iters=iters, contraction_ratio=ratio,
        halvings=halvings, sigma_max=float(np.max(np.abs(sig))),
        mean_defect=abs(defect),
    )
    new_state = LagrangianState(t=times[-1], r=rr[-1], q=qq[-1], cum_sigma=cum[-1])
    return new_state, times, sig, cum, stats


class _ContractionFailure(Exception):
    pass


def _iterate_window(state, params, win, tau):
    M = win.m_sub
    N = state.r.size
    dtau = tau / M
    times = state.t + dtau * np.arange(M + 1)
    times[-1] = state.t + tau
    r = np.broadcast_to(state.r, (M + 1, N)).copy()
    q = np.broadcast_to(state.q, (M + 1, N)).copy()
    cum = np.broadcast_to(state.cum_sigma, (M + 1, N)).copy()

    prev_diff = None
    ratio_max = 0.0
    for it in range(1, win.max_iter + 1):
        z = closure.solve_Z(r.ravel(), q.ravel(), params).reshape(M + 1, N)
        p = closure.pressure(closure.truncate(z, params), params)
        p_mean = np.mean(p * np.exp(cum), axis=1)
        sigma = (p - p_mean[:, None]) / params.nu
        incr = np.zeros((M + 1, N))
        np.cumsum(0.5 * dtau * (sigma[:-1] + sigma[1:]), axis=0, out=incr[1:])
        decay = np.exp(-incr)
        r_new = state.r[None, :] * decay
        q_new = state.q[None, :] * decay
        diff = max(float(np.max(np.abs(r_new - r))), float(np.max(np.abs(q_new - q))))
        r, q = r_new, q_new
        cum = state.cum_sigma[None, :] + incr
        if diff < win.fp_tol:
            z = closure.solve_Z(r.ravel(), q.ravel(), params).reshape(M + 1, N)
            p = closure.pressure(closure.truncate(z, params), params)
            p_mean = np.mean(p * np.exp(cum), axis=1)
            sigma = (p - p_mean[:, None]) / params.nu
            return times, sigma, cum, r, q, it, ratio_max
        if prev_diff is not None and prev_diff > 0.0:
            ratio = diff / prev_diff
            ratio_max = max(ratio_max, ratio)
            if ratio >= win.contraction_target:
                raise _ContractionFailure
        prev_diff = diff
    raise NonConvergenceError(
        f"window fixed point at t={state.t} did not reach {win.fp_tol} "
        f"in {win.max_iter} iterations (last diff {diff})"
    )


@dataclass
class LagrangianTrajectory:
    """Marker history on a uniform time ladder.

    sigma and cum_sigma have shape (n_times, N); r/q/z at any stored
    level are reconstructed from the initial fields and cum_sigma.
    """

    times: np.ndarray
    sigma: np.ndarray
    cum_sigma: np.ndarray
    r0: np.ndarray
    q0: np.ndarray
    params: ModelParams
    window_stats: list = dc_field(default_factory=list)

    @property
    def n_times(self) -> int:
        return len(self.times)

    def jacobian(self, j: int) -> np.ndarray:
        return np.exp(self.cum_sigma[j])

    def r_at(self, j: int) -> np.ndarray:
        return self.r0 * np.exp(-self.cum_sigma[j])

    def q_at(self, j: int) -> np.ndarray:
        return self.q0 * np.exp(-self.cum_sigma[j])

    def z_at(self, j: int) -> np.ndarray:
        return closure.solve_Z(self.r_at(j), self.q_at(j), self.params)

    def index_of(self, t: float) -> int:
        j = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[j] - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"time {t} not on the stored ladder")
        return j


def run(r0, q0, params: ModelParams, win: WindowConfig, t_end: float) -> LagrangianTrajectory:
    """Chain windows from t=0 to t_end and collect the node trajectory."""
    state = LagrangianState.initial(r0, q0)
    r_init, q_init = state.r.copy(), state.q.copy()

    all_times = [np.array([0.0])]
    sigma0, _, _ = sigma_of(state.r, state.q, state.cum_sigma, params)
    all_sigma = [sigma0[None, :]]
    all_cum = [state.cum_sigma[None, :].copy()]
    stats = []
    # Accepted windows can be shorter than win.tau (adaptive halving), so
    # the chain length is not known in advance; walk until t_end.
    while t_end - state.t > 1e-14 * max(1.0, t_end):
        tau = min(win.tau, t_end - state.t)
        state, times, sig, cum, st = step_window(
            state, params, win, r_init=r_init, q_init=q_init, tau=tau
        )
        stats.append(st)
        all_times.append(times[1:])
        all_sigma.append(sig[1:])
        all_cum.append(cum[1:])
    traj = LagrangianTrajectory(
        times=np.concatenate(all_times),
        sigma=np.concatenate(all_sigma, axis=0),
        cum_sigma=np.concatenate(all_cum, axis=0),
        r0=r_init,
        q0=q_init,
        params=params,
        window_stats=stats,
    )
    return traj
