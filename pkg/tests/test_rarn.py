import math

import numpy as np
import pytest

from vidprecode import rarn as RN
from vidprecode import tensor as T
from vidprecode.errors import ConfigError, InvalidShape
from vidprecode.gradcheck import check_gradients
from vidprecode.resample import ScalePlan, grid_sample_bicubic, build_sample_grid
from vidprecode.tensor import Tensor


SMALL = RN.RarnConfig(feature_channels=8, num_resblocks=1, compensation_taps=2,
                      rate_latent_channels=4, mlp_hidden=16, mlp_hidden_layers=1)


def _image(seed=0, size=16):
    rng = np.random.default_rng(seed)
    return Tensor(rng.uniform(0.2, 0.8, (1, 3, size, size)))


class TestRateFeatures:
    def test_zero_latent_closed_form(self, f64):
        params = RN.init_params(SMALL, seed=0)
        for k in ("rate.enc1.w", "rate.enc1.b", "rate.enc2.w", "rate.enc2.b"):
            params.tensors[k] = Tensor(np.zeros_like(params.tensors[k].data), requires_grad=True)
        x = _image()
        rate_map, r_f = RN.estimate_rate_features(x, params, "eval")
        # logistic CDF difference at 0 with unit scale
        per_element = -math.log2(1 / (1 + math.exp(-0.5)) - 1 / (1 + math.exp(0.5)))
        expect = (16 // 4) * (16 // 4) * SMALL.rate_latent_channels * per_element
        assert r_f.item() == pytest.approx(expect, rel=1e-9)
        assert rate_map.shape == (1, 4, 4, 4)

    def test_pmf_sums_toward_one(self):
        # mass inside +-N approaches 1; at N=50 scales up to 5 clear 0.999,
        # scale 10 needs a wider window (tail mass 2*sigma(-5.05) ~ 1.3%)
        n50 = np.arange(-50, 51)
        for scale in (0.1, 0.5, 1.0, 5.0):
            assert RN.logistic_pmf(n50, scale).sum() >= 0.999
        assert RN.logistic_pmf(np.arange(-500, 501), 10.0).sum() >= 0.999
        sums = [RN.logistic_pmf(np.arange(-n, n + 1), 10.0).sum() for n in (50, 100, 200, 400)]
        assert all(b > a for a, b in zip(sums, sums[1:]))
        assert all(RN.logistic_pmf(n50, s).min() >= 0 for s in (0.1, 1.0, 10.0))

    def test_rate_nonnegative_and_modes(self, f64):
        params = RN.init_params(SMALL, seed=1)
        x = _image(1)
        _, r_train = RN.estimate_rate_features(x, params, "train", rng=np.random.default_rng(0))
        _, r_eval = RN.estimate_rate_features(x, params, "eval")
        assert r_train.item() >= 0 and r_eval.item() >= 0

    def test_train_mode_gradient_fixed_noise(self, f64):
        params = RN.init_params(SMALL, seed=2)
        x = _image(2)
        noise = np.random.default_rng(7).uniform(-0.45, 0.45, (1, 4, 4, 4))
        sel = {k: params.tensors[k] for k in ("rate.enc1.w", "rate.enc2.w", "rate.log_scale")}
        err = check_gradients(
            lambda: RN.estimate_rate_features(x, params, "train", noise=noise)[1],
            sel, h=1e-4, probes_per_tensor=6)
        assert err < 1e-6


class TestPrecode:
    def test_identity_at_unit_scale(self, f64):
        params = RN.init_params(SMALL, seed=3)
        x = _image(3)
        y, _ = RN.precode(x, ScalePlan(16, 16, 16, 16), params)
        np.testing.assert_allclose(y.data, x.data, atol=1e-4)

    def test_zero_heads_equal_enhanced_grid_sample(self, f64):
        # randomize the synthesis/fusion convs (trained-like state), keep the
        # MLP heads zero: output must equal the bicubic grid sample of the
        # attention-enhanced features
        params = RN.init_params(SMALL, seed=4)
        rng = np.random.default_rng(11)
        for k in ("synth.w", "synth.b", "fuse.w", "fuse.b", "res0.c2.w"):
            params.tensors[k] = Tensor(rng.standard_normal(params.tensors[k].shape) * 0.05,
                                       requires_grad=True)
        x = _image(4)
        plan = ScalePlan.from_scale(16, 16, 1.7)
        y, _ = RN.precode(x, plan, params)
        enhanced, _, _ = RN.attention_enhanced_image(x, params)
        grid = build_sample_grid(plan)
        expect = np.clip(grid_sample_bicubic(enhanced, grid.coords[None]).data, 0.0, 1.0)
        np.testing.assert_allclose(y.data, expect, atol=1e-12)

    def test_arbitrary_ratio_single_parameter_set(self, f64):
        params = RN.init_params(SMALL, seed=5)
        x = _image(5)
        for scale in (2.0, 2.5, 1.5, 1.7):
            plan = ScalePlan.from_scale(16, 16, scale)
            y, _ = RN.precode(x, plan, params)
            assert y.shape == (1, 3, plan.out_h, plan.out_w)

    def test_output_bounded(self, f64):
        params = RN.init_params(SMALL, seed=6)
        rng = np.random.default_rng(6)
        for k in ("mlp.wgt.w", "mlp.off.w", "synth.w"):
            params.tensors[k] = Tensor(rng.standard_normal(params.tensors[k].shape) * 0.5,
                                       requires_grad=True)
        x = _image(6)
        y, _ = RN.precode(x, ScalePlan.from_scale(16, 16, 2.0), params)
        assert y.data.min() >= 0.0 and y.data.max() <= 1.0

    def test_eval_deterministic(self, f64):
        params = RN.init_params(SMALL, seed=7)
        x = _image(7)
        plan = ScalePlan.from_scale(16, 16, 2.0)
        y1, r1 = RN.precode(x, plan, params)
        y2, r2 = RN.precode(x, plan, params)
        np.testing.assert_array_equal(y1.data, y2.data)
        assert r1.item() == r2.item()

    def test_plan_mismatch_rejected(self, f64):
        params = RN.init_params(SMALL, seed=8)
        with pytest.raises(InvalidShape):
            RN.precode(_image(8), ScalePlan(8, 8, 4, 4), params)

    def test_round_query_variant(self, f64):
        import dataclasses
        cfg = dataclasses.replace(SMALL, round_query=True)
        params = RN.init_params(cfg, seed=9)
        x = _image(9)
        y, _ = RN.precode(x, ScalePlan(16, 16, 16, 16), params)
        np.testing.assert_allclose(y.data, x.data, atol=1e-4)


class TestInitParams:
    def test_deterministic_for_seed(self, f64):
        a = RN.init_params(SMALL, seed=42)
        b = RN.init_params(SMALL, seed=42)
        for k in a.tensors:
            assert a.tensors[k].data.tobytes() == b.tensors[k].data.tobytes()
        c = RN.init_params(SMALL, seed=43)
        assert any(a.tensors[k].data.tobytes() != c.tensors[k].data.tobytes() for k in a.tensors)

    def test_heads_zero_initialized(self, f64):
        params = RN.init_params(SMALL, seed=0)
        for k in ("mlp.off.w", "mlp.off.b", "mlp.wgt.w", "mlp.wgt.b"):
            assert np.all(params.tensors[k].data == 0.0)

    def test_param_count_bracket(self):
        full = RN.init_params(RN.RarnConfig(), seed=0)
        light = RN.init_params(RN.RarnConfig(lightweight=True), seed=0)
        assert 1_000_000 <= full.param_count() <= 12_000_000
        assert light.param_count() < full.param_count()

    def test_checkpoint_round_trip(self, tmp_path, f64):
        params = RN.init_params(SMALL, seed=10)
        path = tmp_path / "r.ckpt"
        params.save(str(path))
        loaded = RN.RarnParams.load(str(path), SMALL)
        for k in params.tensors:
            assert loaded.tensors[k].data.tobytes() == params.tensors[k].data.tobytes()

    def test_checkpoint_config_mismatch_rejected(self, tmp_path, f64):
        params = RN.init_params(SMALL, seed=11)
        path = tmp_path / "r.ckpt"
        params.save(str(path))
        import dataclasses
        other = dataclasses.replace(SMALL, lightweight=True)
        with pytest.raises(ConfigError):
            RN.RarnParams.load(str(path), other)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            RN.RarnConfig(compensation_taps=0)
        with pytest.raises(ConfigError):
            RN.RarnConfig(feature_channels=2)
