"""Fourier analysis: transform identities, masks, and the low-pass projection."""

import numpy as np
import pytest

from lffs.autodiff import Tensor, tsum
from lffs.gradcheck import finite_diff_check
from lffs.precision import precision
from lffs.spectral import (
    apply_mask,
    dft2d,
    high_pass,
    idft2d,
    low_pass,
    low_pass_array,
    radial_mask,
)


@pytest.fixture(autouse=True)
def _f64():
    with precision(64):
        yield


class TestTransform:
    def test_constant_image_is_dc_only(self):
        spec = dft2d(np.full((1, 4, 4), 0.7))
        z = spec.coeffs[0]
        assert abs(z[2, 2] - 0.7 * 16) < 1e-12
        z = z.copy()
        z[2, 2] = 0
        assert np.abs(z).max() < 1e-12

    def test_round_trip(self):
        rng = np.random.default_rng(0)
        x = rng.random((3, 32, 32))
        assert np.abs(idft2d(dft2d(x)) - x).max() < 1e-6

    def test_parseval(self):
        rng = np.random.default_rng(1)
        x = rng.random((3, 32, 32))
        z = dft2d(x).coeffs
        assert abs((x**2).sum() - (np.abs(z) ** 2).sum() / 32**2) < 1e-6

    def test_conjugate_symmetry(self):
        rng = np.random.default_rng(2)
        z = dft2d(rng.random((1, 8, 8))).coeffs[0]
        d = 8
        idx = (d - np.arange(d)) % d
        reflected = np.conj(z[idx][:, idx])
        assert np.abs(z - reflected).max() < 1e-9

    def test_fast_path_matches_direct(self):
        rng = np.random.default_rng(3)
        x = rng.random((2, 16, 16))
        zf = dft2d(x, method="fft").coeffs
        zd = dft2d(x, method="direct").coeffs
        assert np.abs(zf - zd).max() < 1e-9
        back_f = idft2d(dft2d(x, "fft"), "fft")
        back_d = idft2d(dft2d(x, "direct"), "direct")
        assert np.abs(back_f - back_d).max() < 1e-9

    def test_non_power_of_two_uses_direct_and_round_trips(self):
        rng = np.random.default_rng(4)
        x = rng.random((2, 12, 12))
        assert np.abs(idft2d(dft2d(x)) - x).max() < 1e-9

    def test_rejects_non_square_and_odd(self):
        with pytest.raises(ValueError, match="square"):
            dft2d(np.zeros((1, 4, 6)))
        with pytest.raises(ValueError, match="even"):
            dft2d(np.zeros((1, 5, 5)))


class TestMask:
    def test_radius_one_keeps_only_center(self):
        m = radial_mask(4, 1, "low").values
        expect = np.zeros((4, 4))
        expect[2, 2] = 1
        assert np.array_equal(m, expect)

    def test_radius_zero_all_zeros(self):
        assert radial_mask(4, 0, "low").values.sum() == 0

    def test_radius_beyond_extent_all_ones(self):
        # max distance on a 4-grid is sqrt(8) < 4
        assert radial_mask(4, 4, "low").values.sum() == 16

    def test_high_is_complement(self):
        for r in (0, 1, 3, 5):
            low = radial_mask(8, r, "low").values
            high = radial_mask(8, r, "high").values
            assert np.array_equal(low + high, np.ones((8, 8)))

    def test_monotone_nesting(self):
        prev = radial_mask(32, 0, "low").values
        for r in range(1, 24):
            cur = radial_mask(32, r, "low").values
            assert np.all(prev <= cur)
            prev = cur

    def test_strict_inequality_at_integer_radius(self):
        # distance exactly r is excluded: entry at (d/2 + r, d/2) stays 0
        m = radial_mask(16, 3, "low").values
        assert m[8 + 3, 8] == 0.0
        assert m[8 + 2, 8] == 1.0


class TestLowPass:
    def test_identity_when_mask_covers_grid(self):
        rng = np.random.default_rng(5)
        x = Tensor(rng.random((2, 3, 16, 16)))
        out = low_pass(x, 100)
        assert np.abs(out.data - x.data).max() < 1e-9

    def test_radius_one_gives_channel_mean(self):
        rng = np.random.default_rng(6)
        x = Tensor(rng.random((2, 3, 16, 16)))
        out = low_pass(x, 1).data
        means = x.data.mean(axis=(2, 3), keepdims=True)
        assert np.abs(out - means).max() < 1e-9

    def test_low_plus_high_reconstructs(self):
        rng = np.random.default_rng(7)
        x = Tensor(rng.random((2, 3, 16, 16)))
        total = low_pass(x, 5).data + high_pass(x, 5).data
        assert np.abs(total - x.data).max() < 1e-9

    def test_idempotence(self):
        rng = np.random.default_rng(8)
        x = Tensor(rng.random((1, 2, 16, 16)))
        once = low_pass(x, 5).data
        twice = low_pass(low_pass(x, 5), 5).data
        assert np.abs(once - twice).max() < 1e-9

    def test_linearity(self):
        rng = np.random.default_rng(9)
        x = rng.random((1, 2, 16, 16))
        y = rng.random((1, 2, 16, 16))
        lhs = low_pass(Tensor(2.0 * x + 3.0 * y), 4).data
        rhs = 2.0 * low_pass(Tensor(x), 4).data + 3.0 * low_pass(Tensor(y), 4).data
        assert np.abs(lhs - rhs).max() < 1e-9

    def test_gradient(self):
        rng = np.random.default_rng(10)
        x = Tensor(rng.standard_normal((1, 2, 8, 8)), requires_grad=True)
        assert finite_diff_check(lambda t: tsum(low_pass(t, 3)), x) < 1e-5

    def test_imaginary_residue_before_real_extraction(self):
        rng = np.random.default_rng(11)
        x = rng.random((3, 32, 32))
        masked = apply_mask(dft2d(x), radial_mask(32, 6, "low"))
        resid = np.fft.ifft2(
            np.fft.ifftshift(masked.coeffs, axes=(-2, -1))
        ).imag
        assert np.abs(resid).max() < 1e-9

    def test_array_variant_matches_graph_op(self):
        rng = np.random.default_rng(12)
        x = rng.random((2, 3, 16, 16))
        assert np.array_equal(low_pass_array(x, 4), low_pass(Tensor(x), 4).data)

    def test_mask_mismatch_error(self):
        with pytest.raises(ValueError, match="side"):
            apply_mask(dft2d(np.zeros((1, 8, 8))), radial_mask(16, 2))
