"""Spectral calculus, interpolation, maximal function, and snapshots."""

import math
import os

import numpy as np
import pytest

from bifluid import grid as tg
from bifluid.errors import ConfigError

G1 = tg.GridSpec(d=1, n=64)
G2 = tg.GridSpec(d=2, n=32)


def random_band_limited(g: tg.GridSpec, seed: int) -> np.ndarray:
    """Random real field with the top half of the spectrum removed."""
    rng = np.random.default_rng(seed)
    f = rng.standard_normal(g.shape)
    fh = np.fft.rfftn(f)
    n = g.n
    keep_full = np.abs(np.fft.fftfreq(n, d=1.0 / n)) < n // 4
    keep_half = np.arange(n // 2 + 1) < n // 4
    if g.d == 1:
        fh *= keep_half
    else:
        fh *= keep_full[:, None] * keep_half[None, :]
    return np.fft.irfftn(fh, s=g.shape, axes=tuple(range(g.d)))


class TestGridSpec:
    def test_rejects_bad_sizes(self):
        with pytest.raises(ConfigError):
            tg.GridSpec(d=2, n=48)
        with pytest.raises(ConfigError):
            tg.GridSpec(d=2, n=4)
        with pytest.raises(ConfigError):
            tg.GridSpec(d=3, n=16)

    def test_lattice_row_major(self):
        g = tg.GridSpec(d=2, n=8)
        pts = g.lattice()
        assert pts.shape == (64, 2)
        # second point advances the last axis
        assert pts[1, 0] == 0.0 and pts[1, 1] == pytest.approx(1.0 / 8)
        assert pts[8, 0] == pytest.approx(1.0 / 8) and pts[8, 1] == 0.0


class TestMean:
    def test_matches_compensated_sum(self):
        rng = np.random.default_rng(0)
        f = rng.standard_normal(G2.shape) * 1e6
        oracle = math.fsum(f.ravel()) / f.size
        assert tg.mean(f) == pytest.approx(oracle, rel=1e-14, abs=1e-14)


class TestDerivatives:
    def test_grad_single_mode_1d(self):
        x = G1.axes()
        f = np.sin(2 * np.pi * x)
        df = tg.grad(G1, f)
        assert np.max(np.abs(df[0] - 2 * np.pi * np.cos(2 * np.pi * x))) < 1e-12

    def test_grad_mixed_mode_2d(self):
        x = G2.axes()
        X, Y = np.meshgrid(x, x, indexing="ij")
        f = np.sin(2 * np.pi * X) * np.cos(4 * np.pi * Y)
        df = tg.grad(G2, f)
        ex0 = 2 * np.pi * np.cos(2 * np.pi * X) * np.cos(4 * np.pi * Y)
        ex1 = -4 * np.pi * np.sin(2 * np.pi * X) * np.sin(4 * np.pi * Y)
        assert np.max(np.abs(df[0] - ex0)) < 1e-11
        assert np.max(np.abs(df[1] - ex1)) < 1e-11

    def test_div_grad_equals_laplacian(self):
        for g, seed in ((G1, 1), (G2, 2)):
            f = random_band_limited(g, seed)
            lhs = tg.div(g, tg.grad(g, f))
            rhs = tg.laplacian(g, f)
            assert np.max(np.abs(lhs - rhs)) < 1e-12 * max(1.0, np.max(np.abs(rhs)))


class TestPoisson:
    def test_single_mode_inverse(self):
        x = G1.axes()
        f = np.sin(2 * np.pi * x)
        phi = tg.poisson_solve(G1, f)
        expected = -f / (4 * np.pi**2)
        assert np.max(np.abs(phi - expected)) < 1e-12

    def test_residual_and_gauge(self):
        for g, seed in ((G1, 3), (G2, 4)):
            f = random_band_limited(g, seed)
            phi = tg.poisson_solve(g, f)
            res = tg.laplacian(g, phi) - (f - tg.mean(f))
            assert np.max(np.abs(res)) < 1e-10
            assert abs(tg.mean(phi)) < 1e-13

    def test_gradient_field_mean_and_curl(self):
        f = random_band_limited(G2, 5)
        u = tg.grad(G2, tg.poisson_solve(G2, f))
        assert abs(tg.mean(u[0])) < 1e-12 and abs(tg.mean(u[1])) < 1e-12
        curl = tg.grad(G2, u[1])[0] - tg.grad(G2, u[0])[1]
        assert np.max(np.abs(curl)) < 1e-12 * max(1.0, np.max(np.abs(u)))


class TestMollify:
    def test_zero_width_identity(self):
        f = random_band_limited(G2, 6)
        assert np.array_equal(tg.mollify(G2, f, 0.0), f)

    def test_single_mode_factor(self):
        # One Fourier mode just scales by exp(-delta^2 |2 pi|^2 / 2).
        x = G1.axes()
        f = np.sin(2 * np.pi * x)
        delta = 0.1
        factor = math.exp(-0.5 * delta**2 * (2 * math.pi) ** 2)
        out = tg.mollify(G1, f, delta)
        assert factor == pytest.approx(0.8208687174155399, abs=1e-15)
        assert np.max(np.abs(out - factor * f)) < 1e-14

    def test_mean_preserved_and_max_principle(self):
        rng = np.random.default_rng(7)
        f = rng.uniform(1.0, 3.0, G2.shape)
        out = tg.mollify(G2, f, 0.07)
        assert tg.mean(out) == pytest.approx(tg.mean(f), abs=1e-14)
        assert out.min() >= f.min() - 1e-12
        assert out.max() <= f.max() + 1e-12


class TestInterpolate:
    @pytest.mark.parametrize("method", ["bilinear", "bicubic"])
    def test_exact_on_nodes(self, method):
        rng = np.random.default_rng(8)
        f = rng.standard_normal(G2.shape)
        pts = G2.lattice()
        vals = tg.interpolate(G2, f, pts, method)
        assert np.max(np.abs(vals - f.ravel())) < 1e-13

    def test_bilinear_cell_center_average(self):
        rng = np.random.default_rng(9)
        f = rng.standard_normal(G2.shape)
        h = G2.h
        pts = np.array([[0.5 * h, 0.5 * h], [1.0 - 0.5 * h, 1.0 - 0.5 * h]])
        vals = tg.interpolate(G2, f, pts)
        c0 = 0.25 * (f[0, 0] + f[0, 1] + f[1, 0] + f[1, 1])
        c1 = 0.25 * (f[-1, -1] + f[-1, 0] + f[0, -1] + f[0, 0])
        assert vals[0] == pytest.approx(c0, rel=1e-13, abs=1e-13)
        assert vals[1] == pytest.approx(c1, rel=1e-13, abs=1e-13)

    def test_refinement_orders(self):
        # Error against a smooth function must drop ~4x (bilinear) and
        # >~8x (bicubic) per grid doubling.
        def exact(p):
            return np.sin(2 * np.pi * p[:, 0]) * np.cos(2 * np.pi * p[:, 1])

        rng = np.random.default_rng(10)
        pts = rng.uniform(0.0, 1.0, (500, 2))
        errs = {}
        for n in (32, 64):
            g = tg.GridSpec(d=2, n=n)
            x = g.axes()
            X, Y = np.meshgrid(x, x, indexing="ij")
            f = np.sin(2 * np.pi * X) * np.cos(2 * np.pi * Y)
            for method in ("bilinear", "bicubic"):
                e = np.max(np.abs(tg.interpolate(g, f, pts, method) - exact(pts)))
                errs[(method, n)] = e
        assert errs[("bilinear", 32)] / errs[("bilinear", 64)] > 3.3
        assert errs[("bicubic", 32)] / errs[("bicubic", 64)] > 7.0
        assert errs[("bicubic", 64)] < errs[("bilinear", 64)]


def brute_force_maximal(g: tg.GridSpec, f: np.ndarray) -> np.ndarray:
    """Direct sup over the dyadic ladder by explicit node enumeration."""
    n = g.n
    off = np.minimum(np.arange(n), n - np.arange(n))
    if g.d == 1:
        dist2 = off.astype(np.int64) ** 2
    else:
        dist2 = off[:, None].astype(np.int64) ** 2 + off[None, :].astype(np.int64) ** 2
    out = f.copy()
    j = 0
    while 2**j <= n // 2:
        members = np.argwhere(dist2 <= 4**j)
        acc = np.zeros_like(f)
        for m in members:
            acc += np.roll(f, shift=tuple(m), axis=tuple(range(g.d)))
        np.maximum(out, acc / len(members), out=out)
        j += 1
    return out


class TestMaximal:
    def test_spike_against_brute_force(self):
        g = tg.GridSpec(d=1, n=32)
        f = np.zeros(32)
        f[5] = 1.0
        got = tg.maximal(g, f)
        want = brute_force_maximal(g, f)
        assert np.max(np.abs(got - want)) < 1e-12

    def test_random_2d_against_brute_force(self):
        g = tg.GridSpec(d=2, n=16)
        rng = np.random.default_rng(11)
        f = rng.uniform(0.0, 2.0, g.shape)
        got = tg.maximal(g, f)
        want = brute_force_maximal(g, f)
        assert np.max(np.abs(got - want)) < 1e-12

    def test_dominates_input_and_fixes_constants(self):
        rng = np.random.default_rng(12)
        f = rng.uniform(0.0, 5.0, G2.shape)
        M = tg.maximal(G2, f)
        assert np.all(M >= f * (1.0 - 1e-12))
        c = np.full(G2.shape, 3.7)
        assert np.max(np.abs(tg.maximal(G2, c) - 3.7)) < 1e-12


class TestSnapshots:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(13)
        f = rng.standard_normal(G2.shape)
        path = tmp_path / tg.field_filename("R", 3)
        assert path.name == "R_t3.fld"
        tg.write_field(str(path), "R", 0.125, G2, f)
        meta, back = tg.read_field(str(path))
        assert meta == {"d": 2, "n": 32, "name": "R", "time": 0.125}
        assert np.array_equal(back, f)

    def test_header_is_single_json_line(self, tmp_path):
        f = np.zeros(G1.shape)
        path = str(tmp_path / "Z_t0.fld")
        tg.write_field(path, "Z", 0.0, G1, f)
        with open(path, "rb") as fh:
            first = fh.readline()
        assert first.startswith(b"{") and first.endswith(b"}\n")
