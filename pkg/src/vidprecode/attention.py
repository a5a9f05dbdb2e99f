"""Windowed self-attention with cyclic shift, plus full-map attention.

The windowed form computes scaled dot-product attention independently inside
each k x k window. With a nonzero shift the map is cyclically rolled first and
an additive mask keeps positions that wrapped around the border from attending
to non-adjacent content; the inverse roll restores geometry afterwards.
A learned additive relative-position bias table (one per layer) biases the
scores; scale is 1/sqrt(head_dim).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import InvalidArgument, InvalidShape
from .tensor import Tensor

MASK_NEG = -1.0e4


@dataclass
class AttentionParams:
    """Projection weights for one attention layer.

    ``rel_bias`` is a ((2k-1)^2, heads) table indexed by in-window relative
    position; None for full-map attention where token count varies.
    """

    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    bq: Tensor
    bk: Tensor
    bv: Tensor
    bo: Tensor
    rel_bias: Optional[Tensor]
    heads: int

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = {
            f"{prefix}.wq": self.wq, f"{prefix}.wk": self.wk,
            f"{prefix}.wv": self.wv, f"{prefix}.wo": self.wo,
            f"{prefix}.bq": self.bq, f"{prefix}.bk": self.bk,
            f"{prefix}.bv": self.bv, f"{prefix}.bo": self.bo,
        }
        if self.rel_bias is not None:
            out[f"{prefix}.rel_bias"] = self.rel_bias
        return out


def init_attention_params(
    channels: int,
    window: Optional[int],
    heads: int,
    rng: np.random.Generator,
    identity: bool = False,
) -> AttentionParams:
    """Fresh attention parameters; ``identity=True`` makes the layer an exact
    softmax-average (identity q/k/v/o projections, zero bias table)."""
    if channels % heads:
        raise InvalidArgument(f"channels {channels} not divisible by heads {heads}")

    def w():
        if identity:
            return Tensor(np.eye(channels), requires_grad=True)
        return Tensor(rng.standard_normal((channels, channels)) / np.sqrt(channels), requires_grad=True)

    def b():
        return Tensor(np.zeros(channels), requires_grad=True)

    rel = None
    if window is not None:
        rel = Tensor(np.zeros(((2 * window - 1) ** 2, heads)), requires_grad=True)
    return AttentionParams(w(), w(), w(), w(), b(), b(), b(), b(), rel, heads)


def relative_position_index(k: int) -> np.ndarray:
    """[k*k, k*k] indices into the (2k-1)^2 relative-position bias table."""
    coords = np.stack(np.meshgrid(np.arange(k), np.arange(k), indexing="ij"), axis=-1).reshape(-1, 2)
    rel = coords[:, None, :] - coords[None, :, :] + (k - 1)
    return rel[:, :, 0] * (2 * k - 1) + rel[:, :, 1]


def shift_attention_mask(h: int, w: int, k: int, shift: int) -> np.ndarray:
    """Additive mask [num_windows, k*k, k*k] for a cyclically shifted map.

    Region labels follow the three-band construction: within the rolled map,
    bands of original content are contiguous, and cross-band pairs inside one
    window receive MASK_NEG.
    """
    img = np.zeros((h, w))
    cnt = 0
    for hs in (slice(0, h - k), slice(h - k, h - shift), slice(h - shift, None)):
        for ws in (slice(0, w - k), slice(w - k, w - shift), slice(w - shift, None)):
            img[hs, ws] = cnt
            cnt += 1
    wins = img.reshape(h // k, k, w // k, k).transpose(0, 2, 1, 3).reshape(-1, k * k)
    diff = wins[:, None, :] - wins[:, :, None]
    return np.where(diff != 0, MASK_NEG, 0.0)


def window_membership(h: int, w: int, k: int, shift: int) -> np.ndarray:
    """Label [h, w]: pixels sharing a label attend together in this layer."""
    pos = np.arange(h * w).reshape(h, w)
    rolled = np.roll(pos, (-shift, -shift), axis=(0, 1))
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    win_of_slot = (yy // k) * (w // k) + xx // k
    labels = np.empty(h * w, dtype=np.int64)
    labels[rolled.ravel()] = win_of_slot.ravel()
    return labels.reshape(h, w)


def _attend(tokens: Tensor, params: AttentionParams, bias: Optional[Tensor],
            mask: Optional[np.ndarray]) -> Tensor:
    """Scaled dot-product attention over [B, T, C] token groups."""
    bsz, t, c = tokens.shape
    heads = params.heads
    d = c // heads

    def split_heads(x):
        x = T.reshape(x, (bsz, t, heads, d))
        return T.transpose(x, (0, 2, 1, 3))

    q = split_heads(T.linear(tokens, params.wq, params.bq))
    k_ = split_heads(T.linear(tokens, params.wk, params.bk))
    v = split_heads(T.linear(tokens, params.wv, params.bv))

    scores = T.matmul(q, T.transpose(k_, (0, 1, 3, 2)))
    scores = T.mul(scores, 1.0 / np.sqrt(d))
    if bias is not None:
        scores = T.add(scores, bias)
    if mask is not None:
        scores = T.add_const(scores, mask)
    attn = T.softmax(scores, axis=-1)
    out = T.matmul(attn, v)
    out = T.reshape(T.transpose(out, (0, 2, 1, 3)), (bsz, t, c))
    return T.linear(out, params.wo, params.bo)


def _broadcast_rows(bias: Tensor, batch: int) -> Tensor:
    """Tile a [h, T, T] bias to [batch, h, T, T] (sum-gradient broadcast)."""
    h, t, _ = bias.shape
    flat = T.reshape(bias, (1, h * t * t))
    ones = Tensor(np.ones((batch, 1), dtype=bias.dtype))
    return T.reshape(T.matmul(ones, flat), (batch, h, t, t))


def windowed_attention(x: Tensor, k: int, shift: int, params: AttentionParams) -> Tensor:
    """Self-attention inside k x k windows of [N, C, H, W] after cyclic shift.

    H and W must be divisible by k (callers pad); shift must be 0 or k // 2.
    Output shape equals input shape.
    """
    if x.ndim != 4:
        raise InvalidShape(f"windowed_attention expects [N,C,H,W], got {x.shape}")
    n, c, h, w = x.shape
    if h % k or w % k:
        raise InvalidShape(f"extents {h}x{w} not divisible by window {k}")
    if shift not in (0, k // 2):
        raise InvalidArgument(f"shift must be 0 or {k // 2}, got {shift}")
    if c % params.heads:
        raise InvalidShape(f"channels {c} not divisible by heads {params.heads}")

    if shift:
        x = T.roll2d(x, -shift, -shift)

    nh, nw = h // k, w // k
    tok = T.reshape(x, (n, c, nh, k, nw, k))
    tok = T.transpose(tok, (0, 2, 4, 3, 5, 1))
    tok = T.reshape(tok, (n * nh * nw, k * k, c))

    bias = None
    if params.rel_bias is not None:
        idx = relative_position_index(k)
        table = T.take_rows(params.rel_bias, idx.ravel())           # [T*T, heads]
        table = T.transpose(T.reshape(table, (k * k, k * k, params.heads)), (2, 0, 1))
        bias = _broadcast_rows(table, n * nh * nw)

    mask = None
    if shift:
        m = shift_attention_mask(h, w, k, shift)                     # [nh*nw, T, T]
        mask = np.tile(m, (n, 1, 1))[:, None, :, :]

    out = _attend(tok, params, bias, mask)

    out = T.reshape(out, (n, nh, nw, k, k, c))
    out = T.transpose(out, (0, 5, 1, 3, 2, 4))
    out = T.reshape(out, (n, c, h, w))
    if shift:
        out = T.roll2d(out, shift, shift)
    return out


def full_attention(x: Tensor, params: AttentionParams) -> Tensor:
    """Single-group attention over every position of [N, C, H, W]."""
    n, c, h, w = x.shape
    tok = T.reshape(T.transpose(x, (0, 2, 3, 1)), (n, h * w, c))
    out = _attend(tok, params, None, None)
    return T.transpose(T.reshape(out, (n, h, w, c)), (0, 3, 1, 2))
