"""Uniform periodic grids on the unit torus and the calculus on them.

The domain is always [0,1)^d with d in {1, 2} and volume 1, sampled on a
uniform lattice of n points per axis (n a power of two).  Derivatives,
the Poisson solve, and the Gaussian mollifier are exact Fourier
multipliers; first-derivative multipliers are zeroed on the Nyquist row
of each axis so that div(grad f) and the Laplacian are the same
operator bit for bit.

Scalar fields are arrays of shape (n,)*d, vector fields (d,) + (n,)*d,
both C-ordered with axis i of the array along coordinate x_i.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

__all__ = [
    "GridSpec",
    "mean",
    "grad",
    "div",
    "laplacian",
    "poisson_solve",
    "mollify",
    "interpolate",
    "interpolate_vector",
    "maximal",
    "write_field",
    "read_field",
    "field_filename",
]


@dataclass(frozen=True)
class GridSpec:
    d: int
    n: int

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ConfigError(f"grid dimension must be 1 or 2, got {self.d}")
        n = self.n
        if n < 8 or (n & (n - 1)) != 0:
            raise ConfigError(f"grid size must be a power of two >= 8, got {n}")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.d

    @property
    def size(self) -> int:
        return self.n**self.d

    def axes(self) -> np.ndarray:
        return np.arange(self.n) / self.n

    def lattice(self) -> np.ndarray:
        """Node coordinates, shape (n**d, d), C-order over axes."""
        ax = self.axes()
        if self.d == 1:
            return ax[:, None].copy()
        X, Y = np.meshgrid(ax, ax, indexing="ij")
        return np.stack([X.ravel(), Y.ravel()], axis=1)


def _irfftn(grid: GridSpec, spec: np.ndarray) -> np.ndarray:
    return np.fft.irfftn(spec, s=grid.shape, axes=tuple(range(grid.d)))


def mean(f: np.ndarray) -> float:
    return float(np.mean(f))


_mult_cache: dict = {}


def _deriv_mults(grid: GridSpec):
    """Per-axis first-derivative multipliers on the rfftn layout."""
    key = ("deriv", grid.d, grid.n)
    out = _mult_cache.get(key)
    if out is None:
        n = grid.n
        k_full = np.fft.fftfreq(n, d=1.0 / n)
        k_half = np.arange(n // 2 + 1, dtype=np.float64)
        m_full = 2j * np.pi * k_full
        m_half = 2j * np.pi * k_half
        m_full[n // 2] = 0.0
        m_half[n // 2] = 0.0
        if grid.d == 1:
            out = (m_half.copy(),)
        else:
            out = (m_full[:, None] + 0.0 * m_half[None, :],
                   0.0 * m_full[:, None] + m_half[None, :])
        _mult_cache[key] = out
    return out


def _lap_mult(grid: GridSpec):
    key = ("lap", grid.d, grid.n)
    out = _mult_cache.get(key)
    if out is None:
        out = sum(m * m for m in _deriv_mults(grid)).real
        _mult_cache[key] = out
    return out


def _gauss_mult(grid: GridSpec, delta: float):
    n = grid.n
    k_full = np.fft.fftfreq(n, d=1.0 / n)
    k_half = np.arange(n // 2 + 1, dtype=np.float64)
    if grid.d == 1:
        ksq = k_half**2
    else:
        ksq = k_full[:, None] ** 2 + k_half[None, :] ** 2
    return np.exp(-0.5 * delta * delta * (2.0 * np.pi) ** 2 * ksq)


def grad(grid: GridSpec, f: np.ndarray) -> np.ndarray:
    fh = np.fft.rfftn(f)
    mults = _deriv_mults(grid)
    out = np.empty((grid.d,) + grid.shape)
    for ax in range(grid.d):
        out[ax] = _irfftn(grid, fh * mults[ax])
    return out


def div(grid: GridSpec, v: np.ndarray) -> np.ndarray:
    mults = _deriv_mults(grid)
    acc = None
    for ax in range(grid.d):
        term = np.fft.rfftn(v[ax]) * mults[ax]
        acc = term if acc is None else acc + term
    return _irfftn(grid, acc)


def laplacian(grid: GridSpec, f: np.ndarray) -> np.ndarray:
    return _irfftn(grid, np.fft.rfftn(f) * _lap_mult(grid))


def poisson_solve(grid: GridSpec, f: np.ndarray) -> np.ndarray:
    """Solve laplacian(phi) = f - mean(f) with gauge mean(phi) = 0.

    The right-hand side is mean-removed before inversion, so any field
    is admissible; modes outside the invertible spectrum (the zero mode
    and Nyquist rows, where the derivative multiplier vanishes) are set
    to zero in phi.
    """
    fh = np.fft.rfftn(f)
    lap = _lap_mult(grid)
    with np.errstate(divide="ignore", invalid="ignore"):
        ph = np.where(lap != 0.0, fh / lap, 0.0)
    return _irfftn(grid, ph)


def mollify(grid: GridSpec, f: np.ndarray, delta: float) -> np.ndarray:
    """Gaussian mollification with width delta; delta = 0 is the identity."""
    if delta == 0.0:
        return f.copy()
    return _irfftn(grid, np.fft.rfftn(f) * _gauss_mult(grid, delta))


def remove_nyquist(grid: GridSpec, f: np.ndarray) -> np.ndarray:
    """Project out the Nyquist modes, where derivative multipliers vanish.

    The range of the discrete laplacian excludes these modes; removing
    them from a right-hand side makes poisson_solve an exact inverse on
    what remains.
    """
    fh = np.fft.rfftn(f)
    half = grid.n // 2
    if grid.d == 1:
        fh[half] = 0.0
    else:
        fh[half, :] = 0.0
        fh[:, half] = 0.0
    return _irfftn(grid, fh)


def _wrap_indices(grid: GridSpec, pts: np.ndarray):
    n = grid.n
    x = np.mod(pts, 1.0) * n
    i0 = np.floor(x).astype(np.int64)
    t = x - i0
    i0 = np.mod(i0, n)
    return i0, t


def interpolate(grid: GridSpec, f: np.ndarray, pts: np.ndarray, method: str = "bilinear") -> np.ndarray:
    """Periodic interpolation of a scalar field at points of shape (..., d).

    "bilinear" is exact on grid nodes and second order; "bicubic" is the
    Catmull-Rom tensor kernel, also exact on nodes.
    """
    pts = np.asarray(pts, dtype=np.float64)
    if pts.shape[-1] != grid.d:
        raise ConfigError(f"points have {pts.shape[-1]} components, grid is {grid.d}-dimensional")
    i0, t = _wrap_indices(grid, pts)
    if method == "bilinear":
        offs, wfun = ((0, 1), _linear_weights)
    elif method == "bicubic":
        offs, wfun = ((-1, 0, 1, 2), _catmull_rom_weights)
    else:
        raise ConfigError(f"unknown interpolation method {method!r}")
    n = grid.n
    if grid.d == 1:
        w = wfun(t[..., 0])
        out = 0.0
        for a, da in enumerate(offs):
            out = out + w[a] * f[np.mod(i0[..., 0] + da, n)]
        return out
    wx = wfun(t[..., 0])
    wy = wfun(t[..., 1])
    out = 0.0
    for a, da in enumerate(offs):
        row = np.mod(i0[..., 0] + da, n)
        for b, db in enumerate(offs):
            col = np.mod(i0[..., 1] + db, n)
            out = out + wx[a] * wy[b] * f[row, col]
    return out


def _linear_weights(t):
    return (1.0 - t, t)


def _catmull_rom_weights(t):
    t2 = t * t
    t3 = t2 * t
    return (
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    )


def interpolate_vector(grid: GridSpec, v: np.ndarray, pts: np.ndarray, method: str = "bilinear") -> np.ndarray:
    out = np.empty(pts.shape[:-1] + (grid.d,))
    for ax in range(grid.d):
        out[..., ax] = interpolate(grid, v[ax], pts, method)
    return out


def _ball_kernels(grid: GridSpec):
    """Normalized ball-indicator spectra for the dyadic radius ladder.

    Radii are h * 2**j capped at 1/2; membership is decided in integer
    arithmetic (|offset|^2 <= 4**j grid cells), so the ladder is exact.
    """
    key = ("balls", grid.d, grid.n)
    out = _mult_cache.get(key)
    if out is None:
        n = grid.n
        off = np.minimum(np.arange(n), n - np.arange(n))
        if grid.d == 1:
            dist2 = off.astype(np.int64) ** 2
        else:
            dist2 = off[:, None].astype(np.int64) ** 2 + off[None, :].astype(np.int64) ** 2
        out = []
        j = 0
        while (1 << j) <= n // 2:
            ind = (dist2 <= (1 << (2 * j))).astype(np.float64)
            count = ind.sum()
            out.append(np.fft.rfftn(ind) / count)
            j += 1
        _mult_cache[key] = out
    return out


def maximal(grid: GridSpec, f: np.ndarray) -> np.ndarray:
    """Discrete Hardy-Littlewood maximal function over dyadic balls.

    Takes the pointwise sup of averages over balls of radius h * 2**j
    (j >= 0, radius <= 1/2) together with the degenerate single-node
    ball, so maximal(f) >= f always holds.
    """
    out = f.astype(np.float64).copy()
    fh = np.fft.rfftn(f)
    for kern in _ball_kernels(grid):
        avg = _irfftn(grid, fh * kern)
        np.maximum(out, avg, out=out)
    return out


def field_filename(name: str, index: int) -> str:
    return f"{name}_t{index}.fld"


def write_field(path: str, name: str, time: float, grid: GridSpec, values: np.ndarray) -> None:
    header = json.dumps({"d": grid.d, "n": grid.n, "name": name, "time": time})
    buf = np.ascontiguousarray(values, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii") + b"\n")
        fh.write(buf.tobytes())


def read_field(path: str):
    """Read a snapshot; returns (meta dict, values array)."""
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii")
        meta = json.loads(header)
        raw = fh.read()
    shape = (meta["n"],) * meta["d"]
    values = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return meta, values


def fold_displacement(x: np.ndarray) -> np.ndarray:
    """Map coordinates or coordinate differences into [-1/2, 1/2)."""
    return x - np.round(x)


__all__.append("fold_displacement")
