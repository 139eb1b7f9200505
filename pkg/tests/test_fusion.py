import math
import warnings

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from psdm_ct import build_geometry, clinical_fan_geometry, fbp, forward_project
from psdm_ct.errors import NonNegligibleImaginary, ShapeMismatch
from psdm_ct.fusion import (FanWedgeApproximation, build_missing_wedge_mask, centered_dft2,
                            fourier_fuse, frequency_orientation, inverse_centered_dft2)


def mirrored(m):
    """m[-u, -v]: centred index c maps to (2 * (n // 2) - c) mod n."""
    ny, nx = m.shape
    out = np.empty_like(m)
    for i in range(ny):
        for j in range(nx):
            out[i, j] = m[(2 * (ny // 2) - i) % ny, (2 * (nx // 2) - j) % nx]
    return out


def wedge(arc, n=256, start=0.0):
    return build_geometry("parallel", start, start + arc, max(1, int(round(arc / np.pi * 180))),
                          2 * n, 1.0, fov_radius=n)


class TestDft:
    def test_round_trip(self, rng):
        x = rng.standard_normal((17, 24))
        assert np.sqrt(np.mean((inverse_centered_dft2(centered_dft2(x)) - x) ** 2)) <= 1e-10

    def test_constant_dc(self):
        g = centered_dft2(np.full((8, 8), 0.5))
        assert abs(g[4, 4]) == pytest.approx(0.5 * 8)
        g[4, 4] = 0
        assert np.abs(g).max() < 1e-12

    def test_parseval(self, rng):
        x = rng.standard_normal((16, 9))
        assert np.linalg.norm(centered_dft2(x)) == pytest.approx(np.linalg.norm(x), rel=1e-10)

    def test_rejects_imaginary(self):
        g = np.zeros((4, 4), complex)
        g[1, 1] = 1.0
        with pytest.raises(NonNegligibleImaginary):
            inverse_centered_dft2(g)

    def test_orientation_of_plane_wave(self):
        # a wave varying along physical direction (kx, ky), with y pointing up
        n = 32
        x = np.arange(n) - (n - 1) / 2
        X, Y = np.meshgrid(x, -x)
        for kx, ky in ((4, 0), (4, 4), (0, 4), (-4, 4), (6, 2)):
            img = np.cos(2 * math.pi * (kx * X + ky * Y) / n)
            spec = np.abs(centered_dft2(img))
            spec[n // 2, n // 2] = 0
            i, j = np.unravel_index(np.argmax(spec), spec.shape)
            expected = math.atan2(ky, kx) % math.pi
            assert frequency_orientation((n, n))[i, j] == pytest.approx(expected, abs=1e-12)


class TestMask:
    def test_full_coverage_is_empty(self):
        assert not build_missing_wedge_mask(wedge(np.pi), (64, 64)).any()

    def test_symmetry_and_binary(self):
        for shape in ((64, 64), (33, 40), (31, 31)):
            m = build_missing_wedge_mask(wedge(2 * np.pi / 3, start=0.4), shape)
            assert set(np.unique(m)) <= {0.0, 1.0}
            np.testing.assert_array_equal(m, mirrored(m))
            assert m[shape[0] // 2, shape[1] // 2] == 0

    def test_fraction_120_degrees(self):
        n = 256
        m = build_missing_wedge_mask(wedge(2 * np.pi / 3), (n, n))
        u = np.arange(n) - n // 2
        U, V = np.meshgrid(u, u)
        disk = (U**2 + V**2 <= (n // 2) ** 2) & ((U != 0) | (V != 0))
        assert m[disk].mean() == pytest.approx(60 / 180, abs=0.01)
        # on the whole square grid the diagonal corners tilt the count
        square = (0.5 + (1 - math.tan(math.pi / 6)) / 2) / 2
        assert m.sum() / (n * n - 1) == pytest.approx(square, abs=0.01)

    def test_missing_orientations(self):
        m = build_missing_wedge_mask(wedge(2 * np.pi / 3), (64, 64))
        phi = frequency_orientation((64, 64))
        # skip DC and the Nyquist row/column, whose negation aliases onto itself
        off_dc = np.ones((64, 64), bool)
        off_dc[32, 32] = False
        off_dc[0, :] = off_dc[:, 0] = False
        inside = (phi > math.radians(32)) & (phi < math.radians(88)) & off_dc
        outside = ((phi < math.radians(28)) | (phi > math.radians(92))) & off_dc
        assert m[inside].all()
        assert not m[outside].any()

    def test_fbp_energy_outside_wedge(self):
        # smooth compactly supported random phantom so that pixelisation
        # leaks little energy across orientations
        n, arc = 256, 2 * np.pi / 3
        rng = np.random.default_rng(7)
        x = np.arange(n) - (n - 1) / 2
        X, Y = np.meshgrid(x, x)
        img = gaussian_filter(rng.standard_normal((n, n)), 2) * np.exp(-(X**2 + Y**2) / 800)
        g = build_geometry("parallel", 0.0, arc, 240, 364, 1.0, fov_radius=182)
        rec = fbp(forward_project(img, g), g, "ramlak", (n, n))
        m = build_missing_wedge_mask(g, (n, n))
        power = np.abs(centered_dft2(rec)) ** 2
        assert power[m == 0].sum() >= 100 * power[m == 1].sum()

    def test_fan_warns(self):
        with pytest.warns(FanWedgeApproximation):
            m = build_missing_wedge_mask(clinical_fan_geometry(), (32, 32))
        assert m.any()

    def test_parallel_does_not_warn(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            build_missing_wedge_mask(wedge(np.pi / 2), (16, 16))


class TestFuse:
    def test_all_ones_mask(self, rng):
        x = rng.random((16, 16))
        out = fourier_fuse(x, np.zeros_like(x), np.ones_like(x))
        assert np.sqrt(np.mean((out - x) ** 2)) <= 1e-10

    def test_all_zeros_mask(self, rng):
        a, b = rng.random((2, 16, 16))
        out = fourier_fuse(a, b, np.zeros_like(a))
        assert np.sqrt(np.mean((out - b) ** 2)) <= 1e-10

    def test_spectrum_exact(self, rng):
        a, b = rng.random((2, 64, 64))
        m = build_missing_wedge_mask(wedge(2 * np.pi / 3), (64, 64))
        out = fourier_fuse(a, b, m)
        np.testing.assert_allclose(centered_dft2(out), m * centered_dft2(a) + centered_dft2(b),
                                   atol=1e-12)

    def test_complement(self, rng):
        a, b = rng.random((2, 32, 32))
        m = build_missing_wedge_mask(wedge(np.pi / 2), (32, 32))
        out = fourier_fuse(a, b, m, complement_lact=True)
        np.testing.assert_allclose(centered_dft2(out),
                                   m * centered_dft2(a) + (1 - m) * centered_dft2(b), atol=1e-12)

    def test_agreement_recovers_wedge(self, rng):
        a = rng.random((32, 32))
        m = build_missing_wedge_mask(wedge(np.pi / 2), (32, 32))
        lact = inverse_centered_dft2((1 - m) * centered_dft2(a))
        np.testing.assert_allclose(fourier_fuse(a, lact, m), a, atol=1e-12)

    def test_asymmetric_mask_rejected(self, rng):
        a = rng.random((8, 8))
        m = np.zeros((8, 8))
        m[1, 2] = 1.0
        with pytest.raises(NonNegligibleImaginary):
            fourier_fuse(a, a, m)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            fourier_fuse(np.zeros((4, 4)), np.zeros((4, 5)), np.zeros((4, 4)))
