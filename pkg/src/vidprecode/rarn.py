"""Rate-guided arbitrary rescaling network (RARN).

One parameter set serves any output resolution: trunk features from resblocks,
a small rate-estimation branch whose decoded latent conditions windowed
self-attention (channel concatenation), and a double-headed per-pixel MLP that
drives the offset-compensated bicubic sampler. Output-side projections
(synthesis conv, offset/weight heads, residual branches) are zero-initialized,
so a fresh network is exactly a bicubic point sampler; training moves it away
from that.

The sampled carrier is a 3-channel image-space representation
(x + synthesis(attended trunk)), which keeps the zero-compensation path equal
to a plain bicubic grid sample of the attention-enhanced features.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from . import attention as A
from . import tensor as T
from .checkpoint import load_params, save_params
from .errors import ConfigError, InvalidArgument, InvalidShape
from .resample import (
    ScalePlan,
    bicubic_resize,
    build_sample_grid,
    deformable_compensated_sample,
    grid_sample_bicubic,
    snap_coords_to_centers,
)
from .tensor import Tensor

LOG2E = 1.0 / math.log(2.0)
LIKELIHOOD_FLOOR = 1e-12


@dataclass
class RarnConfig:
    feature_channels: int = 32
    num_resblocks: int = 3
    compensation_taps: int = 4
    rate_latent_channels: int = 8
    attention_window: int = 8
    attention_heads: int = 2
    mlp_hidden: int = 640
    mlp_hidden_layers: int = 3
    offset_bound_px: float = 2.0
    lightweight: bool = False
    round_query: bool = False

    def __post_init__(self):
        if self.compensation_taps < 1:
            raise ConfigError("compensation_taps must be >= 1")
        if self.feature_channels < 4:
            raise ConfigError("feature_channels must be >= 4")
        if (self.feature_channels + self.rate_latent_channels) % self.attention_heads:
            raise ConfigError("attention channels must divide evenly into heads")


class RarnParams:
    """Named parameter tensors plus the config that shaped them."""

    def __init__(self, config: RarnConfig, tensors: Dict[str, Tensor]):
        self.config = config
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def param_count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def save(self, path: str) -> None:
        save_params(self.tensors, path)

    @classmethod
    def load(cls, path: str, config: RarnConfig) -> "RarnParams":
        tensors = load_params(path)
        expected = set(init_params(config, seed=0).tensors)
        if set(tensors) != expected:
            missing = expected - set(tensors)
            extra = set(tensors) - expected
            raise ConfigError(
                f"checkpoint does not match config (missing {sorted(missing)[:4]}, "
                f"unexpected {sorted(extra)[:4]})"
            )
        return cls(config, tensors)


def _conv_init(rng, out_c, in_c, k, zero=False) -> Tuple[Tensor, Tensor]:
    if zero:
        w = np.zeros((out_c, in_c, k, k))
    else:
        w = rng.standard_normal((out_c, in_c, k, k)) * math.sqrt(2.0 / (in_c * k * k))
    return (
        Tensor(w, requires_grad=True),
        Tensor(np.zeros(out_c), requires_grad=True),
    )


def _linear_init(rng, in_f, out_f, zero=False) -> Tuple[Tensor, Tensor]:
    if zero:
        w = np.zeros((in_f, out_f))
    else:
        w = rng.standard_normal((in_f, out_f)) * math.sqrt(2.0 / in_f)
    return (
        Tensor(w, requires_grad=True),
        Tensor(np.zeros(out_f), requires_grad=True),
    )


def init_params(config: RarnConfig, seed: int) -> RarnParams:
    """Deterministic initialization; offset/weight heads and output-side
    projections are exactly zero."""
    rng = np.random.default_rng(seed)
    c = config.feature_channels
    lat = config.rate_latent_channels
    p: Dict[str, Tensor] = {}

    p["stem.w"], p["stem.b"] = _conv_init(rng, c, 3, 3)
    for i in range(config.num_resblocks):
        p[f"res{i}.c1.w"], p[f"res{i}.c1.b"] = _conv_init(rng, c, c, 3)
        p[f"res{i}.c2.w"], p[f"res{i}.c2.b"] = _conv_init(rng, c, c, 3, zero=True)

    p["rate.enc1.w"], p["rate.enc1.b"] = _conv_init(rng, 16, 3, 3)
    p["rate.enc2.w"], p["rate.enc2.b"] = _conv_init(rng, lat, 16, 3)
    p["rate.log_scale"] = Tensor(np.zeros(lat), requires_grad=True)
    p["rate.dec1.w"], p["rate.dec1.b"] = _conv_init(rng, 16, lat, 3)
    p["rate.dec2.w"], p["rate.dec2.b"] = _conv_init(rng, lat, 16, 3)

    attn = A.init_attention_params(c + lat, config.attention_window, config.attention_heads, rng)
    p.update(attn.named("attn"))
    p["fuse.w"], p["fuse.b"] = _conv_init(rng, c, c + lat, 1)
    p["synth.w"], p["synth.b"] = _conv_init(rng, 3, c, 3, zero=True)

    if not config.lightweight:
        k = config.compensation_taps
        p["mlp.l0.w"], p["mlp.l0.b"] = _linear_init(rng, c + 4, config.mlp_hidden)
        for i in range(1, config.mlp_hidden_layers + 1):
            p[f"mlp.l{i}.w"], p[f"mlp.l{i}.b"] = _linear_init(rng, config.mlp_hidden, config.mlp_hidden)
        p["mlp.off.w"], p["mlp.off.b"] = _linear_init(rng, config.mlp_hidden, 2 * k, zero=True)
        p["mlp.wgt.w"], p["mlp.wgt.b"] = _linear_init(rng, config.mlp_hidden, 3 * k, zero=True)
    return RarnParams(config, p)


def _attn_params(params: RarnParams) -> A.AttentionParams:
    t = params.tensors
    return A.AttentionParams(
        t["attn.wq"], t["attn.wk"], t["attn.wv"], t["attn.wo"],
        t["attn.bq"], t["attn.bk"], t["attn.bv"], t["attn.bo"],
        t["attn.rel_bias"], params.config.attention_heads,
    )


def trunk_features(x: Tensor, params: RarnParams) -> Tensor:
    """Stem conv plus residual blocks (residual branches start at zero)."""
    t = params.tensors
    h = T.conv2d(x, t["stem.w"], t["stem.b"], pad=1)
    for i in range(params.config.num_resblocks):
        r = T.leaky_relu(T.conv2d(h, t[f"res{i}.c1.w"], t[f"res{i}.c1.b"], pad=1), 0.1)
        r = T.conv2d(r, t[f"res{i}.c2.w"], t[f"res{i}.c2.b"], pad=1)
        h = T.add(h, r)
    return h


def estimate_rate_features(
    x: Tensor,
    params: RarnParams,
    mode: str = "eval",
    noise: Optional[np.ndarray] = None,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[Tensor, Tensor]:
    """Latent rate features and the estimated bit count of the raw frame.

    The latent is additively noised in training mode (U(-0.5, 0.5), drawn from
    ``rng`` unless ``noise`` is given) and rounded in eval mode; the bit count
    is the code length under a per-channel logistic prior with learned scale.
    """
    t = params.tensors
    z = T.leaky_relu(T.conv2d(x, t["rate.enc1.w"], t["rate.enc1.b"], stride=2, pad=1), 0.1)
    z = T.conv2d(z, t["rate.enc2.w"], t["rate.enc2.b"], stride=2, pad=1)

    if mode == "train":
        if noise is None:
            gen = rng if rng is not None else np.random.default_rng(0)
            noise = gen.uniform(-0.5, 0.5, size=z.shape)
        z_hat = T.add_const(z, np.asarray(noise, dtype=z.dtype))
    elif mode == "eval":
        z_hat = T.add_const(z, np.round(z.data) - z.data)  # straight-through rounding
    else:
        raise InvalidArgument(f"mode must be train|eval, got {mode!r}")

    r_f = prior_code_length(z_hat, t["rate.log_scale"])
    m = T.leaky_relu(T.conv2d(z_hat, t["rate.dec1.w"], t["rate.dec1.b"], pad=1), 0.1)
    rate_map = T.conv2d(m, t["rate.dec2.w"], t["rate.dec2.b"], pad=1)
    return rate_map, r_f


def prior_code_length(values: Tensor, log_scale: Tensor) -> Tensor:
    """Total bits of ``values`` under per-channel logistic priors:
    -sum log2(CDF(v + 0.5) - CDF(v - 0.5)), floored at 1e-12 per element."""
    inv_s = T.exp(T.mul(log_scale, -1.0))
    hi = T.sigmoid(T.mul_channel(T.add(values, 0.5), inv_s))
    lo = T.sigmoid(T.mul_channel(T.add(values, -0.5), inv_s))
    p = T.clamp_min(T.sub(hi, lo), LIKELIHOOD_FLOOR)
    return T.mul(T.reduce_sum(T.log(p)), -LOG2E)


def logistic_pmf(n: np.ndarray, scale: float) -> np.ndarray:
    """Reference pmf of the integer symbols under a logistic prior."""
    def cdf(x):
        return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64) / scale))
    return cdf(n + 0.5) - cdf(n - 0.5)


def _pad_to_window(x: Tensor, k: int) -> Tuple[Tensor, int, int]:
    h, w = x.shape[2], x.shape[3]
    pb, pr = (-h) % k, (-w) % k
    if pb or pr:
        x = T.pad2d(x, 0, pb, 0, pr, mode="edge")
    return x, h, w


def attention_enhanced_image(
    x: Tensor,
    params: RarnParams,
    mode: str = "eval",
    noise: Optional[np.ndarray] = None,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[Tensor, Tensor, Tensor]:
    """(enhanced 3-channel image, enhanced trunk features, rate bits).

    The rate feature map is upsampled to input resolution and concatenated to
    the trunk before windowed attention; the synthesis conv adds the attended
    correction back onto the raw image.
    """
    t = params.tensors
    cfg = params.config
    feat = trunk_features(x, params)
    rate_map, r_f = estimate_rate_features(x, params, mode=mode, noise=noise, rng=rng)
    up_plan = ScalePlan(rate_map.shape[2], rate_map.shape[3], x.shape[2], x.shape[3])
    rate_up = bicubic_resize(rate_map, up_plan)
    cat = T.concat([feat, rate_up], axis=1)
    padded, h, w = _pad_to_window(cat, cfg.attention_window)
    attended = A.windowed_attention(padded, cfg.attention_window, 0, _attn_params(params))
    attended = T.narrow(T.narrow(attended, 2, 0, h), 3, 0, w)
    trunk = T.add(feat, T.conv2d(attended, t["fuse.w"], t["fuse.b"]))
    enhanced = T.add(x, T.conv2d(trunk, t["synth.w"], t["synth.b"], pad=1))
    return enhanced, trunk, r_f


def precode(
    x: Tensor,
    plan: ScalePlan,
    params: RarnParams,
    mode: str = "eval",
    noise: Optional[np.ndarray] = None,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[Tensor, Tensor]:
    """Rescale [1,3,in_h,in_w] to the plan's output extents; returns (y, rate bits).

    Output is clamped to [0,1] (straight-through). The same parameter set
    serves every plan; nothing here is specialized to one scale factor.
    """
    if x.ndim != 4 or x.shape[0] != 1 or x.shape[1] != 3:
        raise InvalidShape(f"precode expects [1,3,H,W], got {x.shape}")
    if (x.shape[2], x.shape[3]) != (plan.in_h, plan.in_w):
        raise InvalidShape(f"input {x.shape} does not match plan {plan}")
    cfg = params.config
    t = params.tensors

    enhanced, trunk, r_f = attention_enhanced_image(x, params, mode=mode, noise=noise, rng=rng)

    grid = build_sample_grid(plan)
    base = grid.coords[None]  # [1,2,H,W]
    if cfg.round_query:
        base = snap_coords_to_centers(base, plan.in_h, plan.in_w)

    if cfg.lightweight:
        y = T.clamp01_ste(grid_sample_bicubic(enhanced, base))
        return y, r_f

    k = cfg.compensation_taps
    ho, wo = plan.out_h, plan.out_w
    queried = grid_sample_bicubic(trunk, base)                       # [1,C,H,W]
    side = Tensor(np.concatenate([grid.error, grid.scale])[None].astype(x.dtype))
    mlp_in = T.concat([queried, side], axis=1)                       # [1,C+4,H,W]
    h = T.reshape(T.transpose(mlp_in, (0, 2, 3, 1)), (ho * wo, cfg.feature_channels + 4))
    h = T.leaky_relu(T.linear(h, t["mlp.l0.w"], t["mlp.l0.b"]), 0.1)
    for i in range(1, cfg.mlp_hidden_layers + 1):
        h = T.leaky_relu(T.linear(h, t[f"mlp.l{i}.w"], t[f"mlp.l{i}.b"]), 0.1)

    off = T.tanh(T.linear(h, t["mlp.off.w"], t["mlp.off.b"]))        # [H*W, 2K] in (-1,1)
    off = T.transpose(T.reshape(off, (1, ho, wo, k, 2)), (0, 3, 4, 1, 2))
    bound = np.empty((1, k, 2, ho, wo), dtype=x.dtype)
    bound[:, :, 0] = cfg.offset_bound_px * 2.0 / plan.in_h
    bound[:, :, 1] = cfg.offset_bound_px * 2.0 / plan.in_w
    offsets = T.mul(off, Tensor(bound))

    wgt = T.linear(h, t["mlp.wgt.w"], t["mlp.wgt.b"])                # [H*W, 3K]
    weights = T.transpose(T.reshape(wgt, (1, ho, wo, k, 3)), (0, 3, 4, 1, 2))

    y = deformable_compensated_sample(enhanced, base, offsets, weights)
    return T.clamp01_ste(y), r_f
