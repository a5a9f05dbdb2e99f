"""Transformer-based virtual codec (TVC): a differentiable stand-in for a real
encoder+decoder.

Intra path: lift conv, non-local attention blocks (full attention at 4x
downsampled resolution), a stack of invertible coupling blocks whose subnets
are shifted-window attention + conv, uniform quantization at a learned step,
inverse stack, synthesis. Inter path (3-frame groups, one B frame): block
matching motion as data, feature-domain warping of both references, fused
prediction, a conditional residual coded through the same invertible
machinery.

Structured initialization makes a fresh TVC a transparent quantizer: selector
lifts, identity couplings (zero subnets), selector synthesis. Fitting then
moves it toward the target codec's degradation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from . import attention as A
from . import tensor as T
from .checkpoint import load_params, save_params
from .errors import ConfigError, InvalidArgument, InvalidShape
from .rarn import LOG2E, prior_code_length
from .resample import ScalePlan, bicubic_resize
from .tensor import Tensor, _emit
from .video_io import Frame, tensor_to_frame


@dataclass
class TvcConfig:
    window: int = 8                       # smallest-coding-unit-sized attention window
    num_coupling_blocks: int = 4          # alternating shift 0 / window//2
    num_pre_attention_blocks: int = 3
    gop: int = 3
    quant_step_init: float = 1.0 / 16.0
    latent_channels: int = 16
    attention_heads: int = 2
    prior_scale_init: float = 3.0
    intra_init_noise: float = 0.05        # perturbation of the intra transform at init
    motion_search_range: int = 4
    motion_block: int = 8

    def __post_init__(self):
        if self.gop != 3:
            raise ConfigError("GOP is fixed at 3 (two intra references, one B frame)")
        if self.latent_channels % 2:
            raise ConfigError("latent_channels must be even (coupling split)")
        if (self.latent_channels // 2) % self.attention_heads:
            raise ConfigError("half latent channels must divide into heads")
        if self.quant_step_init <= 0:
            raise ConfigError("quant_step_init must be positive")


class TvcParams:
    def __init__(self, config: TvcConfig, tensors: Dict[str, Tensor]):
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
    def load(cls, path: str, config: TvcConfig) -> "TvcParams":
        tensors = load_params(path)
        expected = set(init_params(config, seed=0).tensors)
        if set(tensors) != expected:
            raise ConfigError("checkpoint does not match TVC config")
        return cls(config, tensors)


@dataclass
class MotionField:
    """Per-pixel displacement in pixels (backward warp: out(p) = ref(p + m))."""

    dy: np.ndarray
    dx: np.ndarray

    def __post_init__(self):
        if self.dy.shape != self.dx.shape:
            raise InvalidShape("motion components differ in shape")
        if not (np.all(np.isfinite(self.dy)) and np.all(np.isfinite(self.dx))):
            raise InvalidArgument("motion field must be finite")


# ---------------------------------------------------------------------------
# Initialization helpers


def _selector_conv(rng, out_c: int, in_c: int, k: int, copies: int, noise: float = 0.02):
    """Center-tap selector for the first ``copies`` channels, small noise elsewhere."""
    w = rng.standard_normal((out_c, in_c, k, k)) * noise
    mid = k // 2
    for j in range(min(copies, out_c)):
        w[j, :, :, :] *= 0.0
        w[j, j % in_c, mid, mid] = 1.0
    return Tensor(w, requires_grad=True), Tensor(np.zeros(out_c), requires_grad=True)


def _identity_conv(out_c: int, k: int):
    w = np.zeros((out_c, out_c, k, k))
    mid = k // 2
    for j in range(out_c):
        w[j, j, mid, mid] = 1.0
    return Tensor(w, requires_grad=True), Tensor(np.zeros(out_c), requires_grad=True)


def _zero_conv(out_c: int, in_c: int, k: int):
    return (
        Tensor(np.zeros((out_c, in_c, k, k)), requires_grad=True),
        Tensor(np.zeros(out_c), requires_grad=True),
    )


def _averaging_fuse_conv(m: int, k: int):
    """conv [M, 2M, k, k] initialized to average channel j and M+j center taps."""
    w = np.zeros((m, 2 * m, k, k))
    mid = k // 2
    for j in range(m):
        w[j, j, mid, mid] = 0.5
        w[j, m + j, mid, mid] = 0.5
    return Tensor(w, requires_grad=True), Tensor(np.zeros(m), requires_grad=True)


def init_params(config: TvcConfig, seed: int) -> TvcParams:
    """Structured start: the inter path is an exact pass-through and coupling
    subnets are zero (identity INN); the intra transform convs carry
    ``intra_init_noise`` perturbation so fitting starts visibly off target."""
    rng = np.random.default_rng(seed)
    m = config.latent_channels
    half = m // 2
    nz = config.intra_init_noise
    p: Dict[str, Tensor] = {}

    p["lift.w"], p["lift.b"] = _selector_conv(rng, m, 3, 3, copies=3, noise=nz)
    for i in range(config.num_pre_attention_blocks):
        p.update(A.init_attention_params(m, None, config.attention_heads, rng).named(f"pre{i}.attn"))
        p[f"pre{i}.proj.w"], p[f"pre{i}.proj.b"] = _zero_conv(m, m, 1)
    for i in range(config.num_coupling_blocks):
        p.update(
            A.init_attention_params(half, config.window, config.attention_heads, rng).named(f"cpl{i}.attn")
        )
        p[f"cpl{i}.conv.w"], p[f"cpl{i}.conv.b"] = _zero_conv(m, half, 3)
    p["prior.log_scale"] = Tensor(np.full(m, math.log(config.prior_scale_init)), requires_grad=True)
    p["log_step"] = Tensor(np.array([math.log(config.quant_step_init)]), requires_grad=True)
    s1w, p["synth1.b"] = _identity_conv(m, 3)
    p["synth1.w"] = Tensor(s1w.data + rng.standard_normal(s1w.shape) * nz, requires_grad=True)
    s2w, p["synth2.b"] = _selector_conv(rng, 3, m, 3, copies=3, noise=0.0)
    p["synth2.w"] = Tensor(s2w.data + rng.standard_normal(s2w.shape) * nz, requires_grad=True)

    p["fea1.w"], p["fea1.b"] = _selector_conv(rng, m, 3, 3, copies=3)
    p["fea2.w"], p["fea2.b"] = _identity_conv(m, 3)
    p["fuse.w"], p["fuse.b"] = _averaging_fuse_conv(m, 3)
    p["resid.w"], p["resid.b"] = _zero_conv(m, 2 * m, 3)
    p["isynth1.w"], p["isynth1.b"] = _identity_conv(m, 3)
    p["isynth2.w"], p["isynth2.b"] = _selector_conv(rng, 3, m, 3, copies=3, noise=0.0)
    return TvcParams(config, p)


def _attn_of(params: TvcParams, prefix: str, heads: int) -> A.AttentionParams:
    t = params.tensors
    return A.AttentionParams(
        t[f"{prefix}.wq"], t[f"{prefix}.wk"], t[f"{prefix}.wv"], t[f"{prefix}.wo"],
        t[f"{prefix}.bq"], t[f"{prefix}.bk"], t[f"{prefix}.bv"], t[f"{prefix}.bo"],
        t.get(f"{prefix}.rel_bias"), heads,
    )


# ---------------------------------------------------------------------------
# Invertible coupling stack


def coupling_forward(h: Tensor, params: TvcParams, block: int, shift: int,
                     flip: bool = False) -> Tensor:
    """One affine coupling: the passive half drives scale/translation of the
    active half through a shifted-window-attention subnet; exactly invertible."""
    if h.shape[1] % 2:
        raise InvalidShape(f"coupling needs even channels, got {h.shape[1]}")
    half = h.shape[1] // 2
    first = T.narrow(h, 1, 0, half)
    second = T.narrow(h, 1, half, half)
    passive, active = (second, first) if flip else (first, second)
    s, t = _coupling_subnet(passive, params, block, shift)
    transformed = T.add(T.mul(active, T.exp(s)), t)
    out = (transformed, passive) if flip else (passive, transformed)
    return T.concat(list(out), axis=1)


def coupling_inverse(h: Tensor, params: TvcParams, block: int, shift: int,
                     flip: bool = False) -> Tensor:
    if h.shape[1] % 2:
        raise InvalidShape(f"coupling needs even channels, got {h.shape[1]}")
    half = h.shape[1] // 2
    first = T.narrow(h, 1, 0, half)
    second = T.narrow(h, 1, half, half)
    passive, transformed = (second, first) if flip else (first, second)
    s, t = _coupling_subnet(passive, params, block, shift)
    active = T.mul(T.sub(transformed, t), T.exp(T.mul(s, -1.0)))
    out = (active, passive) if flip else (passive, active)
    return T.concat(list(out), axis=1)


def _coupling_subnet(passive: Tensor, params: TvcParams, block: int, shift: int):
    cfg = params.config
    half = cfg.latent_channels // 2
    attn = A.windowed_attention(passive, cfg.window, shift,
                                _attn_of(params, f"cpl{block}.attn", cfg.attention_heads))
    st = T.conv2d(attn, params[f"cpl{block}.conv.w"], params[f"cpl{block}.conv.b"], pad=1)
    s_raw = T.narrow(st, 1, 0, half)
    t = T.narrow(st, 1, half, half)
    s = T.mul(T.tanh(T.mul(s_raw, 0.5)), 2.0)   # smooth clamp of log-scale to +-2
    return s, t


def coupling_log_det(h: Tensor, params: TvcParams, block: int, shift: int,
                     flip: bool = False) -> Tensor:
    """log |det J| of one coupling = sum of its effective log-scales."""
    half = h.shape[1] // 2
    first = T.narrow(h, 1, 0, half)
    second = T.narrow(h, 1, half, half)
    passive = second if flip else first
    s, _ = _coupling_subnet(passive, params, block, shift)
    return T.reduce_sum(s)


def _block_shift(config: TvcConfig, i: int) -> int:
    return 0 if i % 2 == 0 else config.window // 2


def inn_forward(h: Tensor, params: TvcParams) -> Tensor:
    cfg = params.config
    for i in range(cfg.num_coupling_blocks):
        h = coupling_forward(h, params, i, _block_shift(cfg, i), flip=i % 2 == 1)
    return h


def inn_inverse(h: Tensor, params: TvcParams) -> Tensor:
    cfg = params.config
    for i in reversed(range(cfg.num_coupling_blocks)):
        h = coupling_inverse(h, params, i, _block_shift(cfg, i), flip=i % 2 == 1)
    return h


# ---------------------------------------------------------------------------
# Intra path


def _pad_to_window(x: Tensor, k: int) -> Tuple[Tensor, int, int]:
    h, w = x.shape[2], x.shape[3]
    pb, pr = (-h) % k, (-w) % k
    if pb or pr:
        x = T.pad2d(x, 0, pb, 0, pr, mode="edge")
    return x, h, w


def _pre_attention(h: Tensor, params: TvcParams) -> Tensor:
    """Non-local enhancement: full attention at 4x reduced resolution, residual."""
    cfg = params.config
    hh, ww = h.shape[2], h.shape[3]
    small = ScalePlan(hh, ww, max(1, math.ceil(hh / 4)), max(1, math.ceil(ww / 4)))
    back = ScalePlan(small.out_h, small.out_w, hh, ww)
    for i in range(cfg.num_pre_attention_blocks):
        low = bicubic_resize(h, small)
        att = A.full_attention(low, _attn_of(params, f"pre{i}.attn", cfg.attention_heads))
        up = bicubic_resize(att, back)
        h = T.add(h, T.conv2d(up, params[f"pre{i}.proj.w"], params[f"pre{i}.proj.b"]))
    return h


def _quant_step(params: TvcParams, quant_step: Optional[float]):
    if quant_step is not None:
        if quant_step <= 0:
            raise InvalidArgument("quant_step must be positive")
        step = Tensor(np.array([quant_step]))
        inv = Tensor(np.array([1.0 / quant_step]))
        return step, inv
    step = T.exp(params["log_step"])
    inv = T.exp(T.mul(params["log_step"], -1.0))
    return step, inv


def _quantize_latent(z: Tensor, params: TvcParams, mode: str,
                     quant_step: Optional[float], noise: Optional[np.ndarray],
                     rng: Optional[np.random.Generator]):
    """(dequantized latent, rate bits): symbols = z/step (+noise | rounded)."""
    step, inv = _quant_step(params, quant_step)
    scaled = T.scale_by_scalar(z, inv)
    if mode == "train":
        if noise is None:
            gen = rng if rng is not None else np.random.default_rng(0)
            noise = gen.uniform(-0.5, 0.5, size=z.shape)
        symbols = T.add_const(scaled, np.asarray(noise, dtype=z.dtype))
    elif mode == "eval":
        symbols = T.add_const(scaled, np.round(scaled.data) - scaled.data)
    else:
        raise InvalidArgument(f"mode must be train|eval, got {mode!r}")
    rate = prior_code_length(symbols, params["prior.log_scale"])
    return T.scale_by_scalar(symbols, step), rate


def intra_code(
    y: Tensor,
    params: TvcParams,
    mode: str = "eval",
    quant_step: Optional[float] = None,
    noise: Optional[np.ndarray] = None,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[Tensor, Tensor]:
    """Code one frame through lift -> non-local blocks -> INN -> quantize ->
    INN inverse -> synthesis. Returns (decoded in [0,1], rate bits)."""
    if y.ndim != 4 or y.shape[1] != 3:
        raise InvalidShape(f"intra_code expects [N,3,H,W], got {y.shape}")
    yp, h0, w0 = _pad_to_window(y, params.config.window)
    h = T.conv2d(yp, params["lift.w"], params["lift.b"], pad=1)
    h = _pre_attention(h, params)
    z = inn_forward(h, params)
    z_hat, rate = _quantize_latent(z, params, mode, quant_step, noise, rng)
    dec = inn_inverse(z_hat, params)
    out = T.leaky_relu(T.conv2d(dec, params["synth1.w"], params["synth1.b"], pad=1), 0.1)
    out = T.conv2d(out, params["synth2.w"], params["synth2.b"], pad=1)
    out = T.narrow(T.narrow(out, 2, 0, h0), 3, 0, w0)
    return T.clamp01_ste(out), rate


# ---------------------------------------------------------------------------
# Motion estimation (block matching, non-differentiable data)

_SAD_INVALID = np.int64(1) << 40


def estimate_motion(ref: Frame, cur: Frame, search_range: int = 4, block: int = 8) -> MotionField:
    """Exhaustive SAD block matching on luma, integer displacements.

    Ties break deterministically: smallest |dy|, then |dx|, then negative dy,
    then negative dx. Candidate windows must lie fully inside the reference.
    """
    if (ref.width, ref.height) != (cur.width, cur.height):
        raise InvalidShape("motion estimation needs equal frame dimensions")
    h, w = cur.height, cur.width
    refy = ref.y.astype(np.int64)
    cury = cur.y.astype(np.int64)
    nby, nbx = math.ceil(h / block), math.ceil(w / block)
    ph, pw = nby * block, nbx * block

    candidates = sorted(
        ((dy, dx) for dy in range(-search_range, search_range + 1)
         for dx in range(-search_range, search_range + 1)),
        key=lambda c: (abs(c[0]), abs(c[1]), c[0] >= 0, c[1] >= 0),
    )
    best_sad = np.full((nby, nbx), np.iinfo(np.int64).max, dtype=np.int64)
    best_dy = np.zeros((nby, nbx), dtype=np.int64)
    best_dx = np.zeros((nby, nbx), dtype=np.int64)
    for dy, dx in candidates:
        canvas = np.full((h, w), _SAD_INVALID, dtype=np.int64)
        ys, ye = max(0, -dy), min(h, h - dy)
        xs, xe = max(0, -dx), min(w, w - dx)
        if ye > ys and xe > xs:
            canvas[ys:ye, xs:xe] = np.abs(
                cury[ys:ye, xs:xe] - refy[ys + dy:ye + dy, xs + dx:xe + dx]
            )
        padded = np.zeros((ph, pw), dtype=np.int64)
        padded[:h, :w] = canvas
        sad = padded.reshape(nby, block, nbx, block).sum(axis=(1, 3))
        better = sad < best_sad
        best_sad[better] = sad[better]
        best_dy[better] = dy
        best_dx[better] = dx

    dy_full = np.repeat(np.repeat(best_dy, block, axis=0), block, axis=1)[:h, :w]
    dx_full = np.repeat(np.repeat(best_dx, block, axis=0), block, axis=1)[:h, :w]
    return MotionField(dy_full.astype(np.float64), dx_full.astype(np.float64))


def warp_bilinear(features: Tensor, field: MotionField) -> Tensor:
    """Backward warp with bilinear taps and edge clamp; differentiable w.r.t.
    features only (motion is data)."""
    n, c, h, w = features.shape
    if field.dy.shape != (h, w):
        raise InvalidShape(f"motion {field.dy.shape} vs features {features.shape}")
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    py = np.clip(yy + field.dy, 0, h - 1)
    px = np.clip(xx + field.dx, 0, w - 1)
    y0 = np.floor(py).astype(np.int64)
    x0 = np.floor(px).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (py - y0)[None, None]
    fx = (px - x0)[None, None]
    f = features.data
    out = (
        f[:, :, y0, x0] * (1 - fy) * (1 - fx)
        + f[:, :, y0, x1] * (1 - fy) * fx
        + f[:, :, y1, x0] * fy * (1 - fx)
        + f[:, :, y1, x1] * fy * fx
    )

    def bwd(g):
        acc = np.zeros((n, c, h, w), dtype=np.float64)
        np.add.at(acc, (slice(None), slice(None), y0, x0), g * (1 - fy) * (1 - fx))
        np.add.at(acc, (slice(None), slice(None), y0, x1), g * (1 - fy) * fx)
        np.add.at(acc, (slice(None), slice(None), y1, x0), g * fy * (1 - fx))
        np.add.at(acc, (slice(None), slice(None), y1, x1), g * fy * fx)
        return (acc.astype(f.dtype),)

    return _emit("warp_bilinear", [features], out.astype(f.dtype), bwd)


# ---------------------------------------------------------------------------
# Inter path and GOP


def _features(x: Tensor, params: TvcParams) -> Tensor:
    h = T.leaky_relu(T.conv2d(x, params["fea1.w"], params["fea1.b"], pad=1), 0.1)
    return T.conv2d(h, params["fea2.w"], params["fea2.b"], pad=1)


def inter_code(
    x_prev_dec: Tensor,
    x_next_dec: Tensor,
    x_t: Tensor,
    params: TvcParams,
    mode: str = "eval",
    quant_step: Optional[float] = None,
    use_residual: bool = True,
    noise: Optional[np.ndarray] = None,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[Tensor, Tensor]:
    """B-frame coding: warp both decoded references in feature space toward t,
    fuse, extract a conditional residual, code it through the shared invertible
    machinery. ``use_residual=False`` ablates the coded residual entirely."""
    shapes = {x_prev_dec.shape, x_next_dec.shape, x_t.shape}
    if len(shapes) != 1:
        raise InvalidShape(f"inter_code frames differ: {shapes}")
    cfg = params.config
    xp, h0, w0 = _pad_to_window(x_prev_dec, cfg.window)
    xn, _, _ = _pad_to_window(x_next_dec, cfg.window)
    xt, _, _ = _pad_to_window(x_t, cfg.window)

    cur_frame = tensor_to_frame(xt.detach())
    m_prev = estimate_motion(tensor_to_frame(xp.detach()), cur_frame,
                             cfg.motion_search_range, cfg.motion_block)
    m_next = estimate_motion(tensor_to_frame(xn.detach()), cur_frame,
                             cfg.motion_search_range, cfg.motion_block)

    warped_prev = warp_bilinear(_features(xp, params), m_prev)
    warped_next = warp_bilinear(_features(xn, params), m_next)
    pred = T.conv2d(T.concat([warped_prev, warped_next], axis=1),
                    params["fuse.w"], params["fuse.b"], pad=1)

    if use_residual:
        cond = T.concat([_features(xt, params), pred], axis=1)
        r = T.conv2d(cond, params["resid.w"], params["resid.b"], pad=1)
        z = inn_forward(r, params)
        z_hat, rate = _quantize_latent(z, params, mode, quant_step, noise, rng)
        r_hat = inn_inverse(z_hat, params)
        merged = T.add(pred, r_hat)
    else:
        rate = Tensor(np.zeros(()))
        merged = pred

    out = T.leaky_relu(T.conv2d(merged, params["isynth1.w"], params["isynth1.b"], pad=1), 0.1)
    out = T.conv2d(out, params["isynth2.w"], params["isynth2.b"], pad=1)
    out = T.narrow(T.narrow(out, 2, 0, h0), 3, 0, w0)
    return T.clamp01_ste(out), rate


def code_gop(
    frames: list,
    params: TvcParams,
    mode: str = "eval",
    quant_step: Optional[float] = None,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[list, Tensor]:
    """Three frames: 0 and 2 intra-coded, 1 inter-coded from their decodes.
    Returns ([decoded x3], total rate bits)."""
    if len(frames) != 3:
        raise InvalidArgument(f"GOP is fixed at 3 frames, got {len(frames)}")
    d0, r0 = intra_code(frames[0], params, mode, quant_step, rng=rng)
    d2, r2 = intra_code(frames[2], params, mode, quant_step, rng=rng)
    d1, r1 = inter_code(d0, d2, frames[1], params, mode, quant_step, rng=rng)
    total = T.add(T.add(r0, r2), r1)
    return [d0, d1, d2], total
