"""Registered finite-difference suites covering every differentiable op.

All suites run in float64 at operating points away from clamp saturation and
activation kinks; each returns the worst relative error between tape gradients
and central differences.
"""

from __future__ import annotations

import numpy as np

from . import attention as A
from . import rarn as RN
from . import resample as R
from . import tensor as T
from . import training as TR
from . import tvc as V
from .gradcheck import check_gradients, register_suite
from .resample import ScalePlan
from .tensor import Tensor


def _rng(seed=0):
    return np.random.default_rng(seed)


@register_suite("elementwise")
def _suite_elementwise() -> float:
    worst = 0.0
    for seed, shape in enumerate([(3,), (2, 4), (2, 3, 2)]):
        rng = _rng(seed)
        a = Tensor(rng.uniform(0.2, 0.9, shape), requires_grad=True)
        b = Tensor(rng.uniform(0.2, 0.9, shape), requires_grad=True)
        cases = {
            "add": lambda: T.reduce_sum(T.mul(T.add(a, b), T.add(a, b))),
            "sub": lambda: T.reduce_sum(T.mul(T.sub(a, b), T.sub(a, b))),
            "mul": lambda: T.reduce_sum(T.mul(a, b)),
            "exp": lambda: T.reduce_sum(T.exp(a)),
            "log": lambda: T.reduce_sum(T.log(a)),
            "tanh": lambda: T.reduce_sum(T.tanh(a)),
            "sigmoid": lambda: T.reduce_sum(T.sigmoid(a)),
            "leaky_relu": lambda: T.reduce_sum(T.leaky_relu(T.sub(a, 0.5), 0.1)),
            "softmax": lambda: T.reduce_sum(T.mul(T.softmax(a, axis=-1), b)),
            "mean": lambda: T.mul(T.reduce_mean(T.mul(a, a)), 3.0),
            "clamp_min": lambda: T.reduce_sum(T.clamp_min(a, 0.25)),
            "scale": lambda: T.reduce_sum(T.scale_by_scalar(a, s)),
        }
        s = Tensor(np.array([0.7]), requires_grad=True)
        for fn in cases.values():
            worst = max(worst, check_gradients(fn, {"a": a, "b": b, "s": s}, h=1e-5))
    return worst


@register_suite("linear-matmul")
def _suite_linear() -> float:
    worst = 0.0
    for seed in range(3):
        rng = _rng(seed)
        x = Tensor(rng.standard_normal((3, 4)) * 0.5, requires_grad=True)
        w = Tensor(rng.standard_normal((4, 5)) * 0.5, requires_grad=True)
        b = Tensor(rng.standard_normal(5) * 0.1, requires_grad=True)
        worst = max(worst, check_gradients(
            lambda: T.reduce_sum(T.mul(T.linear(x, w, b), T.linear(x, w, b))),
            {"x": x, "w": w, "b": b}, h=1e-5))
        a2 = Tensor(rng.standard_normal((2, 2, 3, 4)) * 0.4, requires_grad=True)
        b2 = Tensor(rng.standard_normal((2, 2, 4, 3)) * 0.4, requires_grad=True)
        worst = max(worst, check_gradients(
            lambda: T.reduce_sum(T.mul(T.matmul(a2, b2), T.matmul(a2, b2))),
            {"a": a2, "b": b2}, h=1e-5))
    return worst


@register_suite("conv2d")
def _suite_conv() -> float:
    worst = 0.0
    for seed, (shape, wshape, stride, pad) in enumerate([
        ((1, 1, 4, 4), (2, 1, 3, 3), 1, 1),
        ((2, 3, 6, 5), (4, 3, 3, 3), 1, 1),
        ((1, 2, 8, 8), (3, 2, 3, 3), 2, 1),
    ]):
        rng = _rng(seed)
        x = Tensor(rng.standard_normal(shape) * 0.5, requires_grad=True)
        w = Tensor(rng.standard_normal(wshape) * 0.3, requires_grad=True)
        b = Tensor(rng.standard_normal(wshape[0]) * 0.1, requires_grad=True)
        worst = max(worst, check_gradients(
            lambda: T.reduce_sum(T.mul(T.conv2d(x, w, b, stride, pad),
                                       T.conv2d(x, w, b, stride, pad))),
            {"x": x, "w": w, "b": b}, h=1e-3))
    return worst


@register_suite("pixel-shuffle")
def _suite_pixel_shuffle() -> float:
    worst = 0.0
    for seed in range(3):
        rng = _rng(seed)
        x = Tensor(rng.standard_normal((1, 2, 4, 4)) * 0.5, requires_grad=True)
        y = Tensor(rng.standard_normal((1, 8, 2, 2)) * 0.5, requires_grad=True)
        worst = max(worst, check_gradients(
            lambda: T.reduce_sum(T.mul(T.pixel_unshuffle(x, 2), T.pixel_unshuffle(x, 2))),
            {"x": x}, h=1e-5))
        worst = max(worst, check_gradients(
            lambda: T.reduce_sum(T.mul(T.pixel_shuffle(y, 2), T.pixel_shuffle(y, 2))),
            {"y": y}, h=1e-5))
    return worst


@register_suite("windowed-attention")
def _suite_attention() -> float:
    worst = 0.0
    for seed, shift in ((0, 0), (1, 2), (2, 2)):
        rng = _rng(seed)
        params = A.init_attention_params(4, 4, 2, rng)
        x = Tensor(rng.standard_normal((1, 4, 8, 8)) * 0.4, requires_grad=True)
        sel = {"x": x, **params.named("a")}
        worst = max(worst, check_gradients(
            lambda: T.reduce_sum(T.mul(A.windowed_attention(x, 4, shift, params),
                                       A.windowed_attention(x, 4, shift, params))),
            sel, h=1e-4, probes_per_tensor=4, rng=_rng(99)))
    fparams = A.init_attention_params(4, None, 2, _rng(7))
    xf = Tensor(_rng(8).standard_normal((1, 4, 3, 5)) * 0.4, requires_grad=True)
    worst = max(worst, check_gradients(
        lambda: T.reduce_sum(T.mul(A.full_attention(xf, fparams), A.full_attention(xf, fparams))),
        {"x": xf, **fparams.named("f")}, h=1e-4, probes_per_tensor=4, rng=_rng(99)))
    return worst


@register_suite("resize")
def _suite_resize() -> float:
    worst = 0.0
    for seed, (plan, op) in enumerate([
        (ScalePlan(8, 8, 5, 3), R.bicubic_resize),
        (ScalePlan(6, 7, 9, 11), R.bicubic_resize),
        (ScalePlan(9, 8, 4, 5), R.lanczos_resize),
    ]):
        rng = _rng(seed)
        x = Tensor(rng.standard_normal((1, 2, plan.in_h, plan.in_w)) * 0.4, requires_grad=True)
        worst = max(worst, check_gradients(
            lambda: T.reduce_sum(T.mul(op(x, plan), op(x, plan))), {"x": x}, h=1e-4))
    return worst


def _safe_coords(rng, n, h, w, in_h=8, in_w=8) -> np.ndarray:
    """Normalized coords whose pixel positions keep fractional parts in
    [0.35, 0.65]: central differences stay clear of the kernel's C1 knots."""
    cell_y = rng.integers(2, in_h - 2, (n, h, w))
    cell_x = rng.integers(2, in_w - 2, (n, h, w))
    py = cell_y + rng.uniform(0.35, 0.65, (n, h, w))
    px = cell_x + rng.uniform(0.35, 0.65, (n, h, w))
    r = (2.0 * py + 1.0) / in_h - 1.0
    c = (2.0 * px + 1.0) / in_w - 1.0
    return np.stack([r, c], axis=1)


@register_suite("grid-sample")
def _suite_grid_sample() -> float:
    worst = 0.0
    for seed in range(3):
        rng = _rng(seed)
        feat = Tensor(rng.standard_normal((1, 2, 8, 8)) * 0.4, requires_grad=True)
        coords = Tensor(_safe_coords(rng, 1, 3, 3), requires_grad=True)
        worst = max(worst, check_gradients(
            lambda: T.reduce_sum(T.mul(R.grid_sample_bicubic(feat, coords),
                                       R.grid_sample_bicubic(feat, coords))),
            {"f": feat, "c": coords}, h=1e-4))
    return worst


@register_suite("deformable-sample")
def _suite_deformable() -> float:
    worst = 0.0
    for seed in range(3):
        rng = _rng(seed)
        feat = Tensor(rng.standard_normal((1, 2, 8, 8)) * 0.4, requires_grad=True)
        base = Tensor(_safe_coords(rng, 1, 3, 3), requires_grad=True)
        offs = Tensor(rng.uniform(-0.03, 0.03, (1, 2, 2, 3, 3)), requires_grad=True)
        wgt = Tensor(rng.uniform(-0.3, 0.3, (1, 2, 2, 3, 3)), requires_grad=True)
        worst = max(worst, check_gradients(
            lambda: T.reduce_sum(T.mul(R.deformable_compensated_sample(feat, base, offs, wgt),
                                       R.deformable_compensated_sample(feat, base, offs, wgt))),
            {"f": feat, "b": base, "o": offs, "w": wgt}, h=1e-4))
    return worst


@register_suite("rate-estimator")
def _suite_rate() -> float:
    cfg = RN.RarnConfig(feature_channels=8, num_resblocks=1, compensation_taps=2,
                        rate_latent_channels=4, mlp_hidden=16, mlp_hidden_layers=1)
    worst = 0.0
    for seed in range(3):
        params = RN.init_params(cfg, seed=seed)
        rng = _rng(seed + 10)
        x = Tensor(rng.uniform(0.25, 0.75, (1, 3, 8, 8)))
        noise = rng.uniform(-0.45, 0.45, (1, 4, 2, 2))
        sel = {k: params.tensors[k] for k in
               ("rate.enc1.w", "rate.enc2.w", "rate.enc2.b", "rate.log_scale")}
        worst = max(worst, check_gradients(
            lambda: RN.estimate_rate_features(x, params, "train", noise=noise)[1],
            sel, h=1e-4, probes_per_tensor=5, rng=_rng(99)))
    return worst


@register_suite("coupling-blocks")
def _suite_coupling() -> float:
    cfg = V.TvcConfig(latent_channels=8, num_coupling_blocks=2, num_pre_attention_blocks=1,
                      intra_init_noise=0.02)
    worst = 0.0
    for seed in range(3):
        params = V.init_params(cfg, seed=seed)
        rng = _rng(seed + 20)
        # small perturbation keeps the output inside (0,1): no clamp saturation
        for k in ("cpl0.conv.w", "cpl1.conv.w"):
            params.tensors[k] = Tensor(
                params.tensors[k].data + rng.standard_normal(params.tensors[k].shape) * 0.05,
                requires_grad=True)
        y = Tensor(rng.uniform(0.3, 0.7, (1, 3, 8, 8)))
        noise = rng.uniform(-0.45, 0.45, (1, 8, 8, 8))

        def loss():
            dec, rate = V.intra_code(y, params, "train", noise=noise)
            err = T.sub(dec, y)
            return T.add(T.reduce_mean(T.mul(err, err)), T.mul(rate, 1e-5))

        sel = {k: params.tensors[k] for k in
               ("cpl0.conv.w", "cpl1.conv.w", "cpl0.attn.wq", "log_step", "prior.log_scale")}
        worst = max(worst, check_gradients(loss, sel, h=1e-4, probes_per_tensor=4, rng=_rng(99)))
    return worst


@register_suite("warp")
def _suite_warp() -> float:
    worst = 0.0
    for seed in range(3):
        rng = _rng(seed)
        feat = Tensor(rng.standard_normal((1, 2, 6, 6)) * 0.4, requires_grad=True)
        field = V.MotionField(rng.uniform(-1.4, 1.4, (6, 6)), rng.uniform(-1.4, 1.4, (6, 6)))
        worst = max(worst, check_gradients(
            lambda: T.reduce_sum(T.mul(V.warp_bilinear(feat, field), V.warp_bilinear(feat, field))),
            {"f": feat}, h=1e-4))
    return worst


@register_suite("rd-loss-end-to-end")
def _suite_rd_loss() -> float:
    rarn_cfg = RN.RarnConfig(feature_channels=8, num_resblocks=1, compensation_taps=2,
                             rate_latent_channels=4, mlp_hidden=16, mlp_hidden_layers=1)
    tvc_cfg = V.TvcConfig(latent_channels=8, num_coupling_blocks=2, num_pre_attention_blocks=1,
                          intra_init_noise=0.02)
    tcfg = TR.TrainConfig(steps=1, lam=0.01, lambda_d=0.5, crop_size=16)
    worst = 0.0
    for seed in range(3):
        rarn_params = RN.init_params(rarn_cfg, seed=seed)
        tvc_params = V.init_params(tvc_cfg, seed=seed + 1)
        rng = _rng(seed + 30)
        x = Tensor(rng.uniform(0.3, 0.7, (1, 3, 16, 16)))
        plan = ScalePlan(16, 16, 8, 8)
        rate_noise = rng.uniform(-0.45, 0.45, (1, 4, 4, 4))
        tvc_noise = rng.uniform(-0.45, 0.45, (1, 8, 8, 8))

        def loss():
            y, r_f = RN.precode(x, plan, rarn_params, "train", noise=rate_noise)
            y_dec, r_tvc = V.intra_code(y, tvc_params, "train", noise=tvc_noise)
            total, _, _ = TR.rd_loss(x, y, y_dec, r_tvc, r_f, plan, tcfg)
            return total

        sel = {k: rarn_params.tensors[k] for k in ("stem.w", "synth.w", "mlp.off.w")}
        worst = max(worst, check_gradients(loss, sel, h=1e-4, probes_per_tensor=3, rng=_rng(99)))
    return worst
