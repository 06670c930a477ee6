"""Algebraic pressure closure between the two phase densities.

Unknowns follow the convention used throughout the package: ``R`` is the
partial density of the plus phase, ``Q`` the partial density of the minus
phase, and ``Z`` the plus-phase specific density.  Pressure equilibrium
ties them together through

    s * Q = (1 - R/Z) * Z**gamma,        gamma = gamma_plus / gamma_minus,

where ``s = (a_minus/a_plus)**(1/gamma_minus)`` absorbs the two pressure
constants.  The scale ``s`` is folded into Q once at this module's
boundary; every formula below lives in the rescaled world where the
closure reads ``Q' = (1 - R/Z) Z**gamma``.

All operations accept scalars or numpy arrays of matching shape and
broadcast like ufuncs.  The common pressure is ``a_plus * Z**gamma_plus``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ClosureDomainError, ConfigError, NonConvergenceError

__all__ = [
    "ModelParams",
    "solve_Z",
    "pressure",
    "partials",
    "friction_coeff",
    "recover_Q",
    "truncate",
    "alpha_of",
]

# Residual tolerance is relative to max(Q', 1); see solve_Z.
RTOL = 1e-12
MAX_NEWTON_ITER = 50


@dataclass(frozen=True)
class ModelParams:
    """Model constants with the phase ordering normalized at construction.

    The solver requires gamma = gamma_plus/gamma_minus <= 1.  When the
    caller hands in gamma_plus > gamma_minus the constructor swaps the
    two phases (exponents and pressure constants together) and records
    ``phases_swapped``; callers that constructed fields for the original
    ordering must swap (R, Q) accordingly.  Equal exponents make the
    closure affine and are only admitted for tests (``test_only``).

    ``k`` is the density truncation level and may be ``math.inf`` to
    disable truncation.
    """

    gamma_plus: float = 1.5
    gamma_minus: float = 3.0
    a_plus: float = 1.0
    a_minus: float = 1.0
    nu: float = 1.0
    k: float = math.inf
    test_only: bool = False
    gamma: float = field(init=False)
    q_scale: float = field(init=False)
    phases_swapped: bool = field(init=False)

    def __post_init__(self):
        gp, gm = float(self.gamma_plus), float(self.gamma_minus)
        ap, am = float(self.a_plus), float(self.a_minus)
        if not (gp > 1.0 and gm > 1.0):
            raise ConfigError(
                f"adiabatic exponents must exceed 1, got gamma_plus={gp}, gamma_minus={gm}"
            )
        if not (ap > 0.0 and am > 0.0):
            raise ConfigError(f"pressure constants must be positive, got a_plus={ap}, a_minus={am}")
        if not self.nu > 0.0:
            raise ConfigError(f"viscosity nu must be positive, got {self.nu}")
        if not self.k > 0.0:
            raise ConfigError(f"truncation level k must be positive, got {self.k}")
        swapped = gp > gm
        if swapped:
            gp, gm = gm, gp
            ap, am = am, ap
        if gp == gm and not self.test_only:
            raise ConfigError(
                "gamma_plus == gamma_minus makes the closure degenerate; "
                "set test_only=True if this is intentional"
            )
        object.__setattr__(self, "gamma_plus", gp)
        object.__setattr__(self, "gamma_minus", gm)
        object.__setattr__(self, "a_plus", ap)
        object.__setattr__(self, "a_minus", am)
        object.__setattr__(self, "nu", float(self.nu))
        object.__setattr__(self, "k", float(self.k))
        object.__setattr__(self, "phases_swapped", bool(swapped))
        object.__setattr__(self, "gamma", gp / gm)
        object.__setattr__(self, "q_scale", (am / ap) ** (1.0 / gm))


def _validate_nonneg(name: str, x: np.ndarray):
    if not np.all(np.isfinite(x)):
        raise ClosureDomainError(f"{name} must be finite", bad=_first_bad(x, ~np.isfinite(x)))
    if np.any(x < 0.0):
        raise ClosureDomainError(f"{name} must be nonnegative", bad=_first_bad(x, x < 0.0))


def _first_bad(x: np.ndarray, mask: np.ndarray) -> float:
    return float(np.asarray(x)[mask].flat[0])


def _residual(Z, R, Qs, gamma):
    # Factored form Z^(g-1) * (Z - R) - Q' avoids the cancellation of
    # Z^g - R*Z^(g-1) when Z is close to R.
    return np.power(Z, gamma - 1.0) * (Z - R) - Qs


def solve_Z(R, Q, params: ModelParams):
    """Solve the closure for Z given partial densities (R, Q).

    Returns the unique root >= R of Z^gamma - R Z^(gamma-1) = Q' with
    Q' = q_scale * Q.  The root function is increasing on [R, inf) and
    negative at Z = R, so a bracket [R, U] with f(U) >= 0 pins the root;
    Newton steps are clipped into the bracket and fall back to bisection.
    Terminates when |f(Z)| <= RTOL * max(Q', 1) elementwise.

    Vacuum convention: Q = 0 gives Z = R exactly (including R = 0).
    """
    scalar = np.isscalar(R) and np.isscalar(Q)
    R = np.asarray(R, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    _validate_nonneg("R", R)
    _validate_nonneg("Q", Q)
    R, Q = np.atleast_1d(*np.broadcast_arrays(R, Q))
    gamma = params.gamma
    Qs = params.q_scale * Q

    if gamma == 1.0:
        Z = R + Qs
        return float(Z[0]) if scalar else Z

    Z = np.array(R, dtype=np.float64, copy=True)
    tol = RTOL * np.maximum(Qs, 1.0)
    # Closed forms: Q'=0 -> Z=R; R=0 -> Z=Q'^(1/gamma).
    pure = (Qs > 0.0) & (R == 0.0)
    if np.any(pure):
        Z[pure] = np.power(Qs[pure], 1.0 / gamma)
    # |f(R)| = Q' already meets the tolerance; the root sits within
    # Q' * R**(1-gamma) of R, so returning R loses nothing downstream.
    open_mask = (Qs > RTOL) & (R > 0.0)
    if np.any(open_mask):
        Z[open_mask] = _newton_bisection(
            R[open_mask].copy(), Qs[open_mask], gamma, tol[open_mask]
        )
    return float(Z[0]) if scalar else Z


def _newton_bisection(R, Qs, gamma, tol):
    lo = R.copy()
    hi = np.maximum(np.maximum(R, 1.0), np.power(Qs, 1.0 / gamma))
    f_hi = _residual(hi, R, Qs, gamma)
    for _ in range(64):
        need = f_hi < 0.0
        if not np.any(need):
            break
        hi[need] *= 2.0
        f_hi[need] = _residual(hi[need], R[need], Qs[need], gamma)
    else:
        raise NonConvergenceError(
            f"closure bracket expansion failed, worst residual {float(f_hi.min())}"
        )

    # Geometric midpoints: the root can sit many decades below hi (tiny
    # R with small Q'), where arithmetic bisection needs one step per
    # binary digit but log-space bisection needs one per halving of the
    # exponent range.  lo = R > 0 here, so the geometric mean is defined.
    Z = np.sqrt(lo) * np.sqrt(hi)
    f = _residual(Z, R, Qs, gamma)
    done = np.abs(f) <= tol
    for _ in range(MAX_NEWTON_ITER):
        if np.all(done):
            break
        below = (f < 0.0) & ~done
        above = (f > 0.0) & ~done
        lo[below] = Z[below]
        hi[above] = Z[above]
        fp = np.power(Z, gamma - 2.0) * (gamma * Z - (gamma - 1.0) * R)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(done, 0.0, f / fp)
        Znew = Z - step
        bad = ~np.isfinite(Znew) | (Znew <= lo) | (Znew >= hi)
        Znew = np.where(bad & ~done, np.sqrt(lo) * np.sqrt(hi), Znew)
        Z = np.where(done, Z, Znew)
        f = np.where(done, f, _residual(Z, R, Qs, gamma))
        done = np.abs(f) <= tol
    if not np.all(done):
        worst = float(np.max(np.abs(f[~done])))
        raise NonConvergenceError(
            f"closure Newton exhausted {MAX_NEWTON_ITER} iterations, worst residual {worst}"
        )
    # Two polishing steps: the residual stop alone leaves |Z - root| of
    # order tol/f', and f' < 1 for large roots.
    for _ in range(2):
        fp = np.power(Z, gamma - 2.0) * (gamma * Z - (gamma - 1.0) * R)
        with np.errstate(divide="ignore", invalid="ignore"):
            Znew = Z - f / fp
        keep = np.isfinite(Znew) & (Znew >= lo) & (Znew <= hi)
        Z = np.where(keep, Znew, Z)
        f = _residual(Z, R, Qs, gamma)
    return Z


def pressure(Z, params: ModelParams):
    """Common pressure a_plus * Z**gamma_plus."""
    Z = np.asarray(Z, dtype=np.float64)
    out = params.a_plus * np.power(Z, params.gamma_plus)
    return float(out) if out.ndim == 0 else out


def partials(R, Q, Z, params: ModelParams):
    """Derivatives (dZ/dR, dZ/dQ) of the closure root at (R, Q, Z).

    Implicit differentiation of the root function gives, in the
    rescaled variables,

        dZ/dR = Z / (gamma Z - (gamma-1) R),
        dZ/dQ' = Z^(2-gamma) / (gamma Z - (gamma-1) R),

    and dZ/dQ for the caller's raw Q carries the extra q_scale factor.
    Bounds |dZ/dR| <= 1/gamma and |dZ/dQ'| <= Z^(1-gamma)/gamma hold
    whenever Z >= R.  Z = 0 is outside the domain.
    """
    scalar = np.isscalar(Z)
    R = np.asarray(R, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    if np.any(Z <= 0.0):
        raise ClosureDomainError("partials need Z > 0", bad=_first_bad(Z, Z <= 0.0))
    gamma = params.gamma
    denom = gamma * Z - (gamma - 1.0) * R
    dZ_dR = Z / denom
    dZ_dQ = params.q_scale * np.power(Z, 2.0 - gamma) / denom
    if scalar:
        return float(dZ_dR), float(dZ_dQ)
    return dZ_dR, dZ_dQ


def friction_coeff(R, Z, params: ModelParams):
    """Coefficient c(R, Z) multiplying div u in the Z evolution equation.

    c = (1-gamma)(Z-R)Z / (gamma(Z-R) + R), with c = 0 at vacuum
    (R = Z = 0) by convention.  Satisfies 0 <= c <= (1-gamma)(Z-R)/gamma.
    """
    scalar = np.isscalar(R) and np.isscalar(Z)
    R = np.asarray(R, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    gamma = params.gamma
    denom = gamma * (Z - R) + R
    with np.errstate(divide="ignore", invalid="ignore"):
        c = (1.0 - gamma) * (Z - R) * Z / denom
    c = np.where(denom > 0.0, c, 0.0)
    return float(c) if scalar else c


def recover_Q(R, Z, params: ModelParams):
    """Invert the closure: the Q consistent with (R, Z).

    Q = (a_plus/a_minus)**(1/gamma_minus) * (1 - R/Z) * Z**gamma for
    Z > 0, and 0 at Z = 0.  Round-trips with solve_Z.
    """
    scalar = np.isscalar(R) and np.isscalar(Z)
    R = np.asarray(R, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    gamma = params.gamma
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.power(Z, gamma - 1.0) * (Z - R) / params.q_scale
    q = np.where(Z > 0.0, q, 0.0)
    return float(q) if scalar else q


def truncate(Z, params: ModelParams):
    """Density truncation T_k(Z) = min(Z, k)."""
    scalar = np.isscalar(Z)
    out = np.minimum(np.asarray(Z, dtype=np.float64), params.k)
    return float(out) if scalar else out


def alpha_of(R, Z):
    """Volume fraction of the plus phase: R/Z where Z > 0, else 1/2."""
    scalar = np.isscalar(R) and np.isscalar(Z)
    R = np.asarray(R, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = R / Z
    a = np.where(Z > 0.0, a, 0.5)
    return float(a) if scalar else a
