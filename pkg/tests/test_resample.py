import numpy as np
import pytest

from vidprecode import resample as R
from vidprecode import tensor as T
from vidprecode.errors import InvalidArgument, InvalidShape
from vidprecode.gradcheck import check_gradients
from vidprecode.resample import ScalePlan
from vidprecode.tensor import Tensor


def dense_resize_oracle(img, out_h, out_w, kernel):
    """Direct per-output-pixel, per-tap resampling loop (no matrices)."""
    kfun, radius = {"bicubic": (R.bicubic_kernel, 2.0), "lanczos": (R.lanczos_kernel, 3.0)}[kernel]
    in_h, in_w = img.shape
    out = np.zeros((out_h, out_w))
    for oy in range(out_h):
        cy = (oy + 0.5) * in_h / out_h - 0.5
        wy = max(in_h / out_h, 1.0)
        ty = np.arange(int(np.ceil(cy - radius * wy)), int(np.floor(cy + radius * wy)) + 1)
        ky = kfun((ty - cy) / wy)
        ky = ky / ky.sum()
        for ox in range(out_w):
            cx = (ox + 0.5) * in_w / out_w - 0.5
            wx = max(in_w / out_w, 1.0)
            tx = np.arange(int(np.ceil(cx - radius * wx)), int(np.floor(cx + radius * wx)) + 1)
            kx = kfun((tx - cx) / wx)
            kx = kx / kx.sum()
            acc = 0.0
            for j, wyj in zip(ty, ky):
                jj = min(max(j, 0), in_h - 1)
                for i, wxi in zip(tx, kx):
                    ii = min(max(i, 0), in_w - 1)
                    acc += wyj * wxi * img[jj, ii]
            out[oy, ox] = acc
    return out


class TestCoordinates:
    def test_normalize_direct_values(self):
        assert R.normalize_coord(0, 2) == -0.5
        assert R.normalize_coord(3, 4) == 0.75

    def test_symmetry(self):
        assert R.normalize_coord(1, 4) == -R.normalize_coord(2, 4) == -0.25
        for h in (3, 5, 9):
            for r in range(h):
                assert R.normalize_coord(r, h) == pytest.approx(-R.normalize_coord(h - 1 - r, h))

    def test_denormalize_direct_values(self):
        assert R.denormalize_coord(-0.5, 2) == 0.0
        assert R.denormalize_coord(0.75, 4) == 3.0

    def test_round_trip_exact_up_to_64(self):
        for h in range(1, 65):
            idx = np.arange(h, dtype=np.float64)
            back = R.denormalize_coord(R._normalize_arr(idx, h), h)
            np.testing.assert_array_equal(back, idx)

    def test_out_of_range_index_rejected(self):
        with pytest.raises(InvalidArgument):
            R.normalize_coord(4, 4)
        with pytest.raises(InvalidArgument):
            R.normalize_coord(-1, 4)


class TestSamplingError:
    def test_unit_scale_is_zero(self):
        plan = ScalePlan(8, 8, 8, 8)
        assert all(R.sampling_error(i, plan) == 0.0 for i in range(8))

    def test_two_to_one_phase(self):
        plan = ScalePlan(4, 4, 2, 2)
        assert abs(R.sampling_error(0, plan)) == pytest.approx(0.25)

    def test_matches_brute_force_nearest_center(self):
        plan = ScalePlan(3, 3, 2, 2)
        for idx in range(2):
            r = R.normalize_coord(idx, 2)
            centers = np.array([R.normalize_coord(i, 3) for i in range(3)])
            nearest = centers[np.argmin(np.abs(centers - r))]
            assert R.sampling_error(idx, plan) == pytest.approx(r - nearest, abs=1e-12)

    def test_error_bounds(self):
        for in_h, out_h in [(17, 5), (9, 7), (31, 12)]:
            plan = ScalePlan(in_h, in_h, out_h, out_h)
            for idx in range(out_h):
                assert abs(R.sampling_error(idx, plan)) <= 1.0 / in_h + 1e-12

    def test_out_of_range_rejected(self):
        with pytest.raises(InvalidArgument):
            R.sampling_error(5, ScalePlan(8, 8, 4, 4))


class TestResize:
    def test_identity_scale(self, f64):
        rng = np.random.default_rng(0)
        img = Tensor(rng.random((1, 2, 8, 8)))
        for op in (R.bicubic_resize, R.lanczos_resize):
            out = op(img, ScalePlan(8, 8, 8, 8))
            np.testing.assert_allclose(out.data, img.data, atol=1e-6)

    def test_constant_fixed_point(self, f64):
        img = Tensor(np.full((1, 1, 9, 7), 0.43))
        for op in (R.bicubic_resize, R.lanczos_resize):
            out = op(img, ScalePlan(9, 7, 4, 12))
            np.testing.assert_allclose(out.data, 0.43, atol=1e-9)

    @pytest.mark.parametrize("kernel,op", [("bicubic", R.bicubic_resize),
                                           ("lanczos", R.lanczos_resize)])
    def test_matches_dense_oracle(self, kernel, op, f64):
        rng = np.random.default_rng(1)
        img = rng.random((8, 8))
        out = op(Tensor(img[None, None]), ScalePlan(8, 8, 5, 3)).data[0, 0]
        expect = dense_resize_oracle(img, 5, 3, kernel)
        np.testing.assert_allclose(out, expect, atol=1e-5)

    def test_band_limited_down_up(self, f64):
        # constant and gentle linear ramp survive a 2x round trip within 1e-3
        # interior to a 2-pixel border (edge-clamp bias decays with distance
        # and scales with slope; 0.2 amplitude over 16 px is the probe)
        const = np.full((1, 1, 16, 16), 0.5)
        back = R.bicubic_resize(R.bicubic_resize(Tensor(const), ScalePlan(16, 16, 8, 8)),
                                ScalePlan(8, 8, 16, 16))
        np.testing.assert_allclose(back.data, 0.5, atol=1e-9)
        yy, xx = np.mgrid[0:16, 0:16] / 16.0
        ramp = (0.3 + 0.2 * (xx + yy) / 2.0)[None, None]
        down = R.bicubic_resize(Tensor(ramp), ScalePlan(16, 16, 8, 8))
        up = R.bicubic_resize(down, ScalePlan(8, 8, 16, 16))
        np.testing.assert_allclose(up.data[..., 2:-2, 2:-2], ramp[..., 2:-2, 2:-2], atol=1e-3)

    def test_plan_mismatch_rejected(self, f64):
        with pytest.raises(InvalidShape):
            R.bicubic_resize(Tensor(np.zeros((1, 1, 4, 4))), ScalePlan(8, 8, 2, 2))


class TestGridSample:
    def test_reproduces_nodes(self, f64):
        rng = np.random.default_rng(2)
        img = Tensor(rng.random((1, 3, 8, 8)))
        grid = R.build_sample_grid(ScalePlan(8, 8, 8, 8))
        out = R.grid_sample_bicubic(img, grid.coords)
        np.testing.assert_allclose(out.data, img.data, atol=1e-6)

    def test_constant_image_any_coords(self, f64):
        img = Tensor(np.full((1, 1, 8, 8), 0.6))
        coords = np.stack([np.full((3, 3), -0.11), np.full((3, 3), 0.37)])
        out = R.grid_sample_bicubic(img, coords)
        np.testing.assert_allclose(out.data, 0.6, atol=1e-9)

    def test_coordinate_gradient_finite_differences(self, f64):
        rng = np.random.default_rng(3)
        img = Tensor(rng.random((1, 2, 8, 8)), requires_grad=True)
        coords = Tensor(np.stack([np.full((2, 2), -0.305), np.full((2, 2), 0.285)])[None],
                        requires_grad=True)
        err = check_gradients(
            lambda: T.reduce_sum(T.mul(R.grid_sample_bicubic(img, coords),
                                       R.grid_sample_bicubic(img, coords))),
            {"img": img, "coords": coords}, h=1e-4)
        assert err < 1e-5


class TestDeformable:
    def _setup(self, k=2):
        rng = np.random.default_rng(4)
        feat = Tensor(rng.random((1, 3, 8, 8)))
        base = np.stack([np.full((3, 3), -0.2), np.full((3, 3), 0.15)])[None]
        offs = Tensor(rng.uniform(-0.05, 0.05, (1, k, 2, 3, 3)))
        wgt = Tensor(rng.uniform(-0.4, 0.4, (1, k, 3, 3, 3)))
        return feat, base, offs, wgt

    def test_zero_weights_equal_plain_sample(self, f64):
        feat, base, offs, _ = self._setup()
        zero_w = Tensor(np.zeros((1, 2, 3, 3, 3)))
        out = R.deformable_compensated_sample(feat, base, offs, zero_w)
        plain = R.grid_sample_bicubic(feat, base)
        np.testing.assert_array_equal(out.data, plain.data)

    def test_zero_offsets_uniform_weights_double(self, f64):
        feat, base, _, _ = self._setup()
        k = 4
        offs = Tensor(np.zeros((1, k, 2, 3, 3)))
        wgt = Tensor(np.full((1, k, 3, 3, 3), 1.0 / k))
        out = R.deformable_compensated_sample(feat, base, offs, wgt)
        plain = R.grid_sample_bicubic(feat, base)
        np.testing.assert_allclose(out.data, 2.0 * plain.data, atol=1e-12)

    def test_matches_hand_rolled_composition(self, f64):
        feat, base, offs, wgt = self._setup(k=2)
        out = R.deformable_compensated_sample(feat, base, offs, wgt)
        expect = R.grid_sample_bicubic(feat, base).data.copy()
        for j in range(2):
            moved = base + offs.data[:, j]
            expect += wgt.data[:, j] * R.grid_sample_bicubic(feat, moved).data
        np.testing.assert_allclose(out.data, expect, atol=1e-6)

    def test_tap_count_mismatch_rejected(self, f64):
        feat, base, offs, _ = self._setup(k=2)
        bad_w = Tensor(np.zeros((1, 3, 3, 3, 3)))
        with pytest.raises(InvalidShape):
            R.deformable_compensated_sample(feat, base, offs, bad_w)
