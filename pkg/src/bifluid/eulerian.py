"""Velocity recovery and characteristics on the torus.

The marker solver delivers the divergence rate sigma as a function of
the label y.  The Eulerian side reads it back through the flow: find
the potential phi with laplacian(phi)(t,x) = sigma_delta(t, y(t,x)),
set u = grad(phi), and close the loop because y(t,x) itself is defined
by the characteristics of u.  picard_solve runs this loop to a fixed
point over the whole stored time ladder, with damping halved whenever
an update fails to shrink.

Backward label fields are built incrementally: the labels at t_j are
the labels at t_{j-1} evaluated at the one-step departure points, so
one sweep over the ladder costs O(n_times) interpolations instead of
O(n_times^2) full characteristic integrations.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import closure, grid as gridmod
from .closure import ModelParams
from .errors import ConfigError, InvariantViolation, NonConvergenceError
from .grid import GridSpec

__all__ = [
    "VelocityHistory",
    "FlowMap",
    "PicardConfig",
    "PicardStats",
    "integrate_forward",
    "integrate_backward",
    "recover_velocity",
    "picard_solve",
    "pushforward_fields",
    "eulerian_transport_step",
    "momentum_residual",
]

# Slack on the Jacobian bracket exp(-int ||div u||_inf) <= J <= exp(+...):
# the two sides use different quadratures of the same integral.
J_BRACKET_SLACK = 0.05


@dataclass
class VelocityHistory:
    """Velocity and potential snapshots on an increasing time ladder."""

    grid: GridSpec
    times: np.ndarray          # (n_times,)
    u: np.ndarray              # (n_times, d, n, ...) gradient fields
    phi: np.ndarray            # (n_times, n, ...)
    _divu: np.ndarray | None = dc_field(default=None, repr=False)

    @property
    def n_times(self) -> int:
        return len(self.times)

    def divu(self) -> np.ndarray:
        if self._divu is None:
            self._divu = np.stack(
                [gridmod.div(self.grid, self.u[j]) for j in range(self.n_times)]
            )
        return self._divu

    def _bracket(self, t: float) -> tuple[int, int, float]:
        times = self.times
        if t < times[0] - 1e-12 or t > times[-1] + 1e-12:
            raise ValueError(f"time {t} outside stored range [{times[0]}, {times[-1]}]")
        j = int(np.searchsorted(times, t)) - 1
        j = min(max(j, 0), len(times) - 2)
        w = (t - times[j]) / (times[j + 1] - times[j])
        return j, j + 1, float(min(max(w, 0.0), 1.0))

    def u_at(self, t: float) -> np.ndarray:
        j0, j1, w = self._bracket(t)
        if w == 0.0:
            return self.u[j0]
        if w == 1.0:
            return self.u[j1]
        return (1.0 - w) * self.u[j0] + w * self.u[j1]

    def divu_at(self, t: float) -> np.ndarray:
        d = self.divu()
        j0, j1, w = self._bracket(t)
        if w == 0.0:
            return d[j0]
        if w == 1.0:
            return d[j1]
        return (1.0 - w) * d[j0] + w * d[j1]

    def index_of(self, t: float) -> int:
        j = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[j] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} not on the stored ladder")
        return j

    @classmethod
    def zero(cls, grid: GridSpec, times: np.ndarray) -> "VelocityHistory":
        nt = len(times)
        return cls(
            grid=grid,
            times=np.asarray(times, dtype=np.float64),
            u=np.zeros((nt, grid.d) + grid.shape),
            phi=np.zeros((nt,) + grid.shape),
        )


@dataclass
class FlowMap:
    """Characteristic positions per marker per stored time."""

    grid: GridSpec
    times: np.ndarray       # (n_steps+1,)
    positions: np.ndarray   # (n_steps+1, n_pts, d), torus coordinates
    log_j: np.ndarray       # (n_steps+1, n_pts)
    direction: str          # "forward" or "backward"

    @property
    def jacobian(self) -> np.ndarray:
        return np.exp(self.log_j)


@dataclass(frozen=True)
class PicardConfig:
    delta: float = 0.05
    pic_tol: float = 1e-8
    max_iter: int = 40
    damping: float = 1.0

    def __post_init__(self):
        if self.delta < 0.0:
            raise ConfigError(f"delta must be >= 0, got {self.delta}")
        if not 0.0 < self.damping <= 1.0:
            raise ConfigError(f"damping must be in (0, 1], got {self.damping}")


@dataclass
class PicardStats:
    iterations: int
    update_norms: list
    damping_final: float
    mean_defects: np.ndarray   # (n_times,)
    contraction_ratio: float


def _rk4_step(grid: GridSpec, x, h, u_a, u_m, u_b, interp="bicubic",
              div_a=None, div_m=None, div_b=None, log_j=None):
    """One RK4 step of dx/dt = u from stage fields at start/mid/end.

    h may be negative.  With the div_* fields given, also advances
    log_j along d(log J)/dt = div u at the same stage positions.
    """

    def vel(fld, pts):
        return gridmod.interpolate_vector(grid, fld, pts, interp)

    k1 = vel(u_a, x)
    x2 = x + 0.5 * h * k1
    k2 = vel(u_m, x2)
    x3 = x + 0.5 * h * k2
    k3 = vel(u_m, x3)
    x4 = x + h * k3
    k4 = vel(u_b, x4)
    x_new = np.mod(x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4), 1.0)
    if log_j is None:
        return x_new, None
    d1 = gridmod.interpolate(grid, div_a, x, interp)
    d2 = gridmod.interpolate(grid, div_m, x2, interp)
    d3 = gridmod.interpolate(grid, div_m, x3, interp)
    d4 = gridmod.interpolate(grid, div_b, x4, interp)
    return x_new, log_j + (h / 6.0) * (d1 + 2.0 * d2 + 2.0 * d3 + d4)


def _stage_fields(hist: VelocityHistory, t0: float, t1: float):
    tm = 0.5 * (t0 + t1)
    return (hist.u_at(t0), hist.u_at(tm), hist.u_at(t1),
            hist.divu_at(t0), hist.divu_at(tm), hist.divu_at(t1))


def integrate_forward(hist: VelocityHistory, y0: np.ndarray, t0: float, t1: float,
                      interp: str = "bicubic") -> FlowMap:
    """Forward characteristics x(t, y) with the log-Jacobian alongside."""
    j0, j1 = hist.index_of(t0), hist.index_of(t1)
    if j1 < j0:
        raise ValueError("t1 must be >= t0")
    y0 = np.asarray(y0, dtype=np.float64)
    n_steps = j1 - j0
    pos = np.empty((n_steps + 1,) + y0.shape)
    lj = np.zeros((n_steps + 1, y0.shape[0]))
    pos[0] = np.mod(y0, 1.0)
    sup_div = 0.0
    divu = hist.divu()
    for s in range(n_steps):
        ta, tb = hist.times[j0 + s], hist.times[j0 + s + 1]
        u_a, u_m, u_b, d_a, d_m, d_b = _stage_fields(hist, ta, tb)
        pos[s + 1], lj[s + 1] = _rk4_step(
            grid=hist.grid, x=pos[s], h=tb - ta, u_a=u_a, u_m=u_m, u_b=u_b,
            interp=interp, div_a=d_a, div_m=d_m, div_b=d_b, log_j=lj[s],
        )
        sup_div += 0.5 * (tb - ta) * (
            float(np.max(np.abs(divu[j0 + s]))) + float(np.max(np.abs(divu[j0 + s + 1])))
        )
        worst = float(np.max(np.abs(lj[s + 1])))
        if worst > sup_div * (1.0 + J_BRACKET_SLACK) + 1e-12:
            raise InvariantViolation(
                f"Jacobian bracket violated at t={hist.times[j0 + s + 1]}: "
                f"|log J| = {worst} > int ||div u||_inf = {sup_div}"
            )
    return FlowMap(grid=hist.grid, times=hist.times[j0:j1 + 1].copy(),
                   positions=pos, log_j=lj, direction="forward")


def integrate_backward(hist: VelocityHistory, t: float, x_pts: np.ndarray,
                       t_end: float = 0.0, interp: str = "bicubic",
                       keep_path: bool = False):
    """Backward characteristics from (t, x) down to t_end (default 0).

    Returns the label positions, or the whole FlowMap when keep_path is
    set (positions indexed from time t down to t_end).
    """
    j_hi, j_lo = hist.index_of(t), hist.index_of(t_end)
    if j_hi < j_lo:
        raise ValueError("t must be >= t_end")
    x_pts = np.asarray(x_pts, dtype=np.float64)
    n_steps = j_hi - j_lo
    pos = np.empty((n_steps + 1,) + x_pts.shape)
    lj = np.zeros((n_steps + 1, x_pts.shape[0]))
    pos[0] = np.mod(x_pts, 1.0)
    for s in range(n_steps):
        ta = hist.times[j_hi - s]
        tb = hist.times[j_hi - s - 1]
        u_a, u_m, u_b, d_a, d_m, d_b = _stage_fields(hist, ta, tb)
        pos[s + 1], lj[s + 1] = _rk4_step(
            grid=hist.grid, x=pos[s], h=tb - ta, u_a=u_a, u_m=u_m, u_b=u_b,
            interp=interp, div_a=d_a, div_m=d_m, div_b=d_b, log_j=lj[s],
        )
    if keep_path:
        times = hist.times[j_lo:j_hi + 1][::-1].copy()
        return FlowMap(grid=hist.grid, times=times, positions=pos,
                       log_j=lj, direction="backward")
    return pos[-1]


def recover_velocity(grid: GridSpec, sigma_markers: np.ndarray, y_of_x: np.ndarray,
                     delta: float):
    """One elliptic solve: u = grad(phi), laplacian(phi) = sigma_delta(y(t,x)).

    sigma_markers lives on the label lattice; y_of_x gives the label of
    each grid node.  The composed right-hand side has nonzero grid mean
    in general; it is removed before the solve and reported.
    """
    sig = np.asarray(sigma_markers, dtype=np.float64).reshape(grid.shape)
    sig_d = gridmod.mollify(grid, sig, delta)
    composed = gridmod.interpolate(grid, sig_d, y_of_x, "bicubic").reshape(grid.shape)
    mean_defect = abs(float(np.mean(composed)))
    # Composition through interpolation reintroduces Nyquist content,
    # which no discrete gradient can carry; project it out so the
    # elliptic solve inverts exactly what the operator can represent.
    composed = gridmod.remove_nyquist(grid, composed)
    phi = gridmod.poisson_solve(grid, composed)
    u = gridmod.grad(grid, phi)
    return u, phi, mean_defect


def _labels_history(grid: GridSpec, hist: VelocityHistory) -> np.ndarray:
    """Backward label field y(t_j, x) for every ladder time, incrementally.

    labels[j] at a node x is labels[j-1] evaluated at the one-step
    departure point, via bicubic interpolation of the displacement
    field y(t,x) - x.  Displacements must stay well inside a half
    period for the periodic fold to be unambiguous.
    """
    lattice = grid.lattice()
    nt = hist.n_times
    labels = np.empty((nt,) + lattice.shape)
    labels[0] = lattice
    disp_grid = np.zeros((grid.d,) + grid.shape)
    for j in range(1, nt):
        ta, tb = hist.times[j], hist.times[j - 1]
        u_a, u_m, u_b, *_ = _stage_fields(hist, ta, tb)
        xb, _ = _rk4_step(grid=grid, x=lattice, h=tb - ta,
                          u_a=u_a, u_m=u_m, u_b=u_b)
        dd = gridmod.interpolate_vector(grid, disp_grid, xb, "bicubic")
        labels[j] = np.mod(xb + dd, 1.0)
        disp = gridmod.fold_displacement(labels[j] - lattice)
        worst = float(np.max(np.abs(disp)))
        if worst > 0.4:
            raise InvariantViolation(
                f"label displacement {worst} too large for periodic composition "
                f"at t={hist.times[j]}"
            )
        disp_grid = np.stack([disp[:, ax].reshape(grid.shape) for ax in range(grid.d)])
    return labels


def picard_solve(traj, grid: GridSpec, cfg: PicardConfig, delta: float | None = None):
    """Global fixed point for the velocity history over the whole ladder.

    Starts from u = 0, alternates label recovery and elliptic solves,
    and damps the update whenever the sup-norm residual fails to
    decrease.  Returns (VelocityHistory, backward FlowMap, PicardStats).
    """
    if delta is None:
        delta = cfg.delta
    times = np.asarray(traj.times, dtype=np.float64)
    nt = len(times)
    if traj.sigma.shape[1] != grid.size:
        raise ConfigError(
            f"trajectory has {traj.sigma.shape[1]} markers, grid has {grid.size} nodes"
        )
    sig_moll = np.empty((nt,) + grid.shape)
    for j in range(nt):
        sig_moll[j] = gridmod.mollify(grid, traj.sigma[j].reshape(grid.shape), delta)

    hist = VelocityHistory.zero(grid, times)
    damping = cfg.damping
    norms: list[float] = []
    defects = np.zeros(nt)
    labels = None
    for it in range(1, cfg.max_iter + 1):
        labels = _labels_history(grid, hist)
        u_new = np.empty_like(hist.u)
        phi_new = np.empty_like(hist.phi)
        for j in range(nt):
            composed = gridmod.interpolate(
                grid, sig_moll[j], labels[j], "bicubic"
            ).reshape(grid.shape)
            defects[j] = abs(float(np.mean(composed)))
            composed = gridmod.remove_nyquist(grid, composed)
            phi_new[j] = gridmod.poisson_solve(grid, composed)
            u_new[j] = gridmod.grad(grid, phi_new[j])
        diff = float(np.max(np.abs(u_new - hist.u)))
        if diff < cfg.pic_tol:
            hist = VelocityHistory(grid=grid, times=times, u=u_new, phi=phi_new)
            norms.append(diff)
            ratio = norms[-1] / norms[-2] if len(norms) >= 2 and norms[-2] > 0 else 0.0
            labels = _labels_history(grid, hist)
            flow = FlowMap(grid=grid, times=times.copy(), positions=labels,
                           log_j=_compose_log_j(grid, traj, labels),
                           direction="backward")
            return hist, flow, PicardStats(
                iterations=it, update_norms=norms, damping_final=damping,
                mean_defects=defects.copy(), contraction_ratio=ratio,
            )
        if norms and diff > norms[-1]:
            damping *= 0.5
        norms.append(diff)
        hist = VelocityHistory(
            grid=grid, times=times,
            u=hist.u + damping * (u_new - hist.u),
            phi=hist.phi + damping * (phi_new - hist.phi),
        )
    raise NonConvergenceError(
        f"velocity fixed point not below {cfg.pic_tol} after {cfg.max_iter} "
        f"iterations; residual history {norms}"
    )


def _compose_log_j(grid: GridSpec, traj, labels: np.ndarray) -> np.ndarray:
    lj = np.empty((labels.shape[0], labels.shape[1]))
    for j in range(labels.shape[0]):
        lj[j] = gridmod.interpolate(
            grid, traj.cum_sigma[j].reshape(grid.shape), labels[j], "bicubic"
        )
    return lj


def pushforward_fields(traj, j: int, labels_j: np.ndarray, grid: GridSpec,
                       params: ModelParams):
    """Eulerian (R, Q, Z) at ladder index j from marker fields and labels.

    R and Q are interpolated at the label of each grid node; Z is
    recomputed from them through the closure so the constraint R <= Z
    and the implicit relation hold exactly on the grid.
    """
    r_grid = traj.r_at(j).reshape(grid.shape)
    q_grid = traj.q_at(j).reshape(grid.shape)
    R = gridmod.interpolate(grid, r_grid, labels_j, "bicubic").reshape(grid.shape)
    Q = gridmod.interpolate(grid, q_grid, labels_j, "bicubic").reshape(grid.shape)
    R = _clamp_nonneg(R, "R")
    Q = _clamp_nonneg(Q, "Q")
    Z = closure.solve_Z(R.ravel(), Q.ravel(), params).reshape(grid.shape)
    return R, Q, Z


def _clamp_nonneg(f: np.ndarray, name: str, floor: float = -1e-12) -> np.ndarray:
    lo = float(np.min(f))
    if lo < floor:
        raise InvariantViolation(f"{name} dipped to {lo} during transport")
    return np.maximum(f, 0.0)


def eulerian_transport_step(grid: GridSpec, R: np.ndarray, Q: np.ndarray,
                            u: np.ndarray, dt: float, params: ModelParams,
                            mode: str = "continuity", Z: np.ndarray | None = None,
                            interp: str = "bicubic"):
    """One semi-Lagrangian step with the frozen velocity field u.

    mode="continuity": R, Q transported with the exact-exponential
    divergence factor, Z from the closure of the result.
    mode="z_equation": additionally requires the independently evolved
    Z field and advances it along characteristics with its own
    integrating factor, whose extra friction part c/Z encodes the
    non-conservative term; (R, Q) still step by continuity so the two
    descriptions can be compared.
    """
    lattice = grid.lattice()
    xb, _ = _rk4_step(grid=grid, x=lattice, h=-dt, u_a=u, u_m=u, u_b=u, interp=interp)
    divu = gridmod.div(grid, u)
    div_dep = gridmod.interpolate(grid, divu, xb, interp)
    incr = 0.5 * dt * (divu.ravel() + div_dep)

    R_dep = gridmod.interpolate(grid, R, xb, interp)
    Q_dep = gridmod.interpolate(grid, Q, xb, interp)
    decay = np.exp(-incr)
    R_new = _clamp_nonneg((R_dep * decay).reshape(grid.shape), "R")
    Q_new = _clamp_nonneg((Q_dep * decay).reshape(grid.shape), "Q")
    if mode == "continuity":
        Z_new = closure.solve_Z(R_new.ravel(), Q_new.ravel(), params).reshape(grid.shape)
        return R_new, Q_new, Z_new
    if mode != "z_equation":
        raise ConfigError(f"unknown transport mode {mode!r}")
    if Z is None:
        raise ConfigError("mode='z_equation' requires the evolved Z field")
    Z_dep = gridmod.interpolate(grid, Z, xb, interp)
    Z_dep = _clamp_nonneg(Z_dep, "Z")
    R_fric = np.maximum(np.minimum(R_dep, Z_dep), 0.0)
    c = closure.friction_coeff(R_fric, Z_dep, params)
    g = np.where(Z_dep > 0.0, 1.0 + c / np.where(Z_dep > 0.0, Z_dep, 1.0), 1.0)
    Z_new = (Z_dep * np.exp(-g * incr)).reshape(grid.shape)
    return R_new, Q_new, Z_new


def momentum_residual(grid: GridSpec, u: np.ndarray, Z: np.ndarray,
                      params: ModelParams) -> float:
    """Sup-norm defect of nu div u = p_k(Z) - mean p_k(Z) on the grid."""
    p = closure.pressure(closure.truncate(Z, params), params)
    rhs = p - float(np.mean(p))
    return float(np.max(np.abs(params.nu * gridmod.div(grid, u) - rhs)))
