"""Geometric resampling: half-pixel-center coordinate mapping, classical
bicubic/Lanczos resizing with anti-alias kernel widening, a differentiable
bicubic grid sampler (with coordinate gradients), and the offset-compensated
sampler used by the rescaling network.

All coordinate handling uses one convention: index R of an extent-H axis maps
to r = -1 + (2R+1)/H, so pixel centers are symmetric about 0 and the inverse
is q(r, H) = (r+1)*H/2 - 0.5.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from . import tensor as T
from .errors import InvalidArgument, InvalidShape
from .tensor import Tensor, _emit

# q(p(R,H),H) lands within 2.3e-13 of R in float64 for H <= 4096; legitimate
# non-integer center projections stay >= 1/(2*4096) away from integers, so
# snapping inside 2^-40 makes the round-trip exact without touching sampling.
_SNAP_TOL = 2.0 ** -40


@dataclass(frozen=True)
class ScalePlan:
    """Input/output extents of one resampling; per-axis scale = in/out."""

    in_h: int
    in_w: int
    out_h: int
    out_w: int

    def __post_init__(self):
        if min(self.in_h, self.in_w, self.out_h, self.out_w) < 1:
            raise InvalidArgument(f"extents must be >= 1, got {self}")

    @property
    def scale_h(self) -> float:
        return self.in_h / self.out_h

    @property
    def scale_w(self) -> float:
        return self.in_w / self.out_w

    @classmethod
    def from_scale(cls, in_h: int, in_w: int, scale: float) -> "ScalePlan":
        if scale <= 0:
            raise InvalidArgument(f"scale must be positive, got {scale}")
        return cls(in_h, in_w, max(1, round(in_h / scale)), max(1, round(in_w / scale)))

    def transposed(self) -> "ScalePlan":
        return ScalePlan(self.in_w, self.in_h, self.out_w, self.out_h)


def normalize_coord(index: int, extent: int) -> float:
    """Map integer pixel index to its center in [-1, 1]."""
    if not 0 <= index < extent:
        raise InvalidArgument(f"index {index} outside [0, {extent})")
    return -1.0 + (2.0 * index + 1.0) / extent


def _normalize_arr(idx: np.ndarray, extent: int) -> np.ndarray:
    return -1.0 + (2.0 * idx + 1.0) / extent


def denormalize_coord(r, extent: int):
    """Continuous pixel position of normalized coordinate r on an extent-H axis.

    Exact inverse of normalize_coord on pixel centers (snap within 2^-40).
    Accepts scalars or arrays; out-of-range r is allowed (consumers clamp).
    """
    x = (np.asarray(r, dtype=np.float64) + 1.0) * extent / 2.0 - 0.5
    n = np.rint(x)
    x = np.where(np.abs(x - n) <= _SNAP_TOL, n, x)
    return float(x) if np.isscalar(r) else x


def _phase_error(out_idx: np.ndarray, in_extent: int, out_extent: int) -> np.ndarray:
    r = _normalize_arr(out_idx, out_extent)
    pos = denormalize_coord(r, in_extent)
    nearest = np.clip(np.rint(pos), 0, in_extent - 1)
    return r - _normalize_arr(nearest, in_extent)


def sampling_error(out_index: int, plan: ScalePlan) -> float:
    """Normalized phase offset (row axis) between an output pixel center and
    the nearest input pixel center; zero whenever the centers coincide."""
    if not 0 <= out_index < plan.out_h:
        raise InvalidArgument(f"row {out_index} outside [0, {plan.out_h})")
    return float(_phase_error(np.array([out_index]), plan.in_h, plan.out_h)[0])


@dataclass
class SampleGrid:
    """Per-output-pixel sampling data: normalized coords, phase error, scale."""

    coords: np.ndarray   # [2, H, W], channel 0 = r (rows), 1 = c (cols)
    error: np.ndarray    # [2, H, W]
    scale: np.ndarray    # [2, H, W], constant (S_h, S_w) maps


def build_sample_grid(plan: ScalePlan) -> SampleGrid:
    rows = _normalize_arr(np.arange(plan.out_h, dtype=np.float64), plan.out_h)
    cols = _normalize_arr(np.arange(plan.out_w, dtype=np.float64), plan.out_w)
    rr = np.broadcast_to(rows[:, None], (plan.out_h, plan.out_w))
    cc = np.broadcast_to(cols[None, :], (plan.out_h, plan.out_w))
    er = _phase_error(np.arange(plan.out_h), plan.in_h, plan.out_h)
    ec = _phase_error(np.arange(plan.out_w), plan.in_w, plan.out_w)
    err = np.stack([
        np.broadcast_to(er[:, None], (plan.out_h, plan.out_w)),
        np.broadcast_to(ec[None, :], (plan.out_h, plan.out_w)),
    ])
    scale = np.stack([
        np.full((plan.out_h, plan.out_w), plan.scale_h),
        np.full((plan.out_h, plan.out_w), plan.scale_w),
    ])
    return SampleGrid(np.stack([rr, cc]), err, scale)


# ---------------------------------------------------------------------------
# Kernels

_KEYS_A = -0.5
_LANCZOS_A = 3


def bicubic_kernel(t: np.ndarray) -> np.ndarray:
    """Keys cubic, a = -0.5 (derivative continuous; support [-2, 2])."""
    a = _KEYS_A
    at = np.abs(t)
    out = np.zeros_like(at)
    inner = at <= 1.0
    outer = (at > 1.0) & (at < 2.0)
    ai = at[inner]
    out[inner] = (a + 2.0) * ai ** 3 - (a + 3.0) * ai ** 2 + 1.0
    ao = at[outer]
    out[outer] = a * (ao ** 3 - 5.0 * ao ** 2 + 8.0 * ao - 4.0)
    return out


def bicubic_kernel_derivative(t: np.ndarray) -> np.ndarray:
    a = _KEYS_A
    at = np.abs(t)
    s = np.sign(t)
    out = np.zeros_like(at)
    inner = at <= 1.0
    outer = (at > 1.0) & (at < 2.0)
    ai = at[inner]
    out[inner] = (3.0 * (a + 2.0) * ai ** 2 - 2.0 * (a + 3.0) * ai) * s[inner]
    ao = at[outer]
    out[outer] = a * (3.0 * ao ** 2 - 10.0 * ao + 8.0) * s[outer]
    return out


def lanczos_kernel(t: np.ndarray) -> np.ndarray:
    """Lanczos windowed sinc, a = 3 (support [-3, 3])."""
    at = np.abs(np.asarray(t, dtype=np.float64))
    out = np.zeros_like(at)
    inside = at < _LANCZOS_A
    x = at[inside]
    out[inside] = np.sinc(x) * np.sinc(x / _LANCZOS_A)
    return out


_KERNELS = {
    "bicubic": (bicubic_kernel, 2.0),
    "lanczos": (lanczos_kernel, float(_LANCZOS_A)),
}


def resize_matrix(in_extent: int, out_extent: int, kernel: str) -> np.ndarray:
    """Dense [out, in] separable resampling matrix with edge clamp.

    On downscale the kernel support widens by the scale factor (anti-aliasing);
    rows are normalized to unity so constants are fixed points.
    """
    kfun, radius = _KERNELS[kernel]
    scale = in_extent / out_extent
    widen = max(scale, 1.0)
    centers = denormalize_coord(_normalize_arr(np.arange(out_extent, dtype=np.float64), out_extent), in_extent)
    lo = np.ceil(centers - radius * widen).astype(np.int64)
    hi = np.floor(centers + radius * widen).astype(np.int64)
    m = np.zeros((out_extent, in_extent))
    for o in range(out_extent):
        taps = np.arange(lo[o], hi[o] + 1)
        w = kfun((taps - centers[o]) / widen)
        total = w.sum()
        if total == 0.0:
            raise InvalidArgument(f"degenerate kernel row for output {o}")
        w = w / total
        np.add.at(m[o], np.clip(taps, 0, in_extent - 1), w)
    return m


def _resize(img: Tensor, plan: ScalePlan, kernel: str) -> Tensor:
    if img.ndim != 4:
        raise InvalidShape(f"resize expects [N,C,H,W], got {img.shape}")
    if img.shape[2] != plan.in_h or img.shape[3] != plan.in_w:
        raise InvalidShape(f"image {img.shape} does not match plan {plan}")
    mr = resize_matrix(plan.in_h, plan.out_h, kernel).astype(img.dtype)
    mc = resize_matrix(plan.in_w, plan.out_w, kernel).astype(img.dtype)
    out = np.einsum("oh,nchw,pw->ncop", mr, img.data, mc, optimize=True)

    def bwd(g):
        return (np.einsum("oh,ncop,pw->nchw", mr, g, mc, optimize=True),)

    return _emit(f"{kernel}_resize", [img], out, bwd)


def bicubic_resize(img: Tensor, plan: ScalePlan) -> Tensor:
    """Separable Keys-bicubic resize, anti-aliased on downscale, edge clamped."""
    return _resize(img, plan, "bicubic")


def lanczos_resize(img: Tensor, plan: ScalePlan) -> Tensor:
    """Separable Lanczos-3 resize, anti-aliased on downscale, edge clamped."""
    return _resize(img, plan, "lanczos")


# ---------------------------------------------------------------------------
# Differentiable grid sampling


def _as_coord_tensor(coords: Union[Tensor, np.ndarray], n: int) -> Tensor:
    if isinstance(coords, Tensor):
        c = coords
    else:
        c = Tensor(np.asarray(coords, dtype=np.float64))
    if c.ndim == 3 and c.shape[0] == 2:
        c = T.reshape(c, (1, 2) + c.shape[1:])
    if c.ndim != 4 or c.shape[1] != 2:
        raise InvalidShape(f"coords must be [N,2,H,W], got {c.shape}")
    if c.shape[0] == n:
        return c
    if c.shape[0] != 1:
        raise InvalidShape(f"coords batch {c.shape[0]} vs features batch {n}")
    if c.requires_grad:
        ones = Tensor(np.ones((n, 1), dtype=c.dtype))
        return T.reshape(T.matmul(ones, T.reshape(c, (1, -1))), (n,) + c.shape[1:])
    return Tensor(np.broadcast_to(c.data, (n,) + c.shape[1:]).copy(), dtype=c.dtype)


def grid_sample_bicubic(features: Tensor, coords: Union[Tensor, np.ndarray]) -> Tensor:
    """Sample [N,C,Hi,Wi] at normalized (r,c) positions with 4x4 bicubic taps.

    Edge clamped; differentiable w.r.t. features and coords (coordinate
    gradients via the kernel's analytic derivative).
    """
    if features.ndim != 4:
        raise InvalidShape(f"features must be [N,C,Hi,Wi], got {features.shape}")
    n, c, hi, wi = features.shape
    ct = _as_coord_tensor(coords, n)
    ho, wo = ct.shape[2], ct.shape[3]

    cd = ct.data.astype(np.float64)
    ys = (cd[:, 0] + 1.0) * hi / 2.0 - 0.5
    xs = (cd[:, 1] + 1.0) * wi / 2.0 - 0.5
    iy = np.floor(ys)
    ix = np.floor(xs)
    fy = ys - iy
    fx = xs - ix
    offs = np.array([-1.0, 0.0, 1.0, 2.0])
    ty = fy[..., None] - offs          # [N,Ho,Wo,4]
    tx = fx[..., None] - offs
    wy = bicubic_kernel(ty)
    wx = bicubic_kernel(tx)
    yidx = np.clip(iy[..., None] + offs, 0, hi - 1).astype(np.int64)
    xidx = np.clip(ix[..., None] + offs, 0, wi - 1).astype(np.int64)
    lin = (yidx[..., :, None] * wi + xidx[..., None, :]).reshape(n, ho * wo * 16)

    g2 = features.data.transpose(0, 2, 3, 1).reshape(n, hi * wi, c)
    vals = np.take_along_axis(g2, lin[:, :, None], axis=1).reshape(n, ho * wo, 16, c)
    w2 = (wy[..., :, None] * wx[..., None, :]).reshape(n, ho * wo, 16, 1)
    out = (vals * w2).sum(axis=2).reshape(n, ho, wo, c).transpose(0, 3, 1, 2)
    out = out.astype(features.dtype)

    fdtype = features.dtype
    fshape = features.shape

    def bwd(g):
        gq = g.transpose(0, 2, 3, 1).reshape(n, ho * wo, 1, c).astype(np.float64)
        gacc = np.zeros((n, hi * wi, c))
        contrib = (gq * w2).reshape(n, ho * wo * 16, c)
        np.add.at(gacc, (np.arange(n)[:, None], lin), contrib)
        gfeat = gacc.reshape(n, hi, wi, c).transpose(0, 3, 1, 2).astype(fdtype)

        gcoord = None
        if ct.requires_grad:
            per_tap = (gq * vals).sum(-1).reshape(n, ho, wo, 4, 4)
            dwy = bicubic_kernel_derivative(ty)
            dwx = bicubic_kernel_derivative(tx)
            d_y = (per_tap * (dwy[..., :, None] * wx[..., None, :])).sum((-2, -1))
            d_x = (per_tap * (wy[..., :, None] * dwx[..., None, :])).sum((-2, -1))
            gcoord = np.stack([d_y * (hi / 2.0), d_x * (wi / 2.0)], axis=1).astype(ct.dtype)
        return (gfeat, gcoord)

    return _emit("grid_sample_bicubic", [features, ct], out, bwd)


def snap_coords_to_centers(coords: np.ndarray, in_h: int, in_w: int) -> np.ndarray:
    """Round normalized coords to the nearest input pixel center (the
    integer-query variant of the compensated sampler)."""
    out = np.array(coords, dtype=np.float64, copy=True)
    ridx = np.clip(np.rint(denormalize_coord(out[..., 0, :, :], in_h)), 0, in_h - 1)
    cidx = np.clip(np.rint(denormalize_coord(out[..., 1, :, :], in_w)), 0, in_w - 1)
    out[..., 0, :, :] = _normalize_arr(ridx, in_h)
    out[..., 1, :, :] = _normalize_arr(cidx, in_w)
    return out


def deformable_compensated_sample(
    features: Tensor,
    base_coords: Union[Tensor, np.ndarray],
    offsets: Tensor,
    weights: Tensor,
) -> Tensor:
    """Base bicubic query plus K offset taps scaled by per-channel weights.

    out = sample(features, base) + sum_k weights[:,k] * sample(features, base + offsets[:,k])

    offsets: [N,K,2,H,W] in normalized units; weights: [N,K,C,H,W].
    """
    n, c = features.shape[0], features.shape[1]
    if offsets.ndim != 5 or offsets.shape[2] != 2:
        raise InvalidShape(f"offsets must be [N,K,2,H,W], got {offsets.shape}")
    if weights.ndim != 5 or weights.shape[2] != c:
        raise InvalidShape(f"weights must be [N,K,{c},H,W], got {weights.shape}")
    if offsets.shape[1] != weights.shape[1]:
        raise InvalidShape(
            f"offset taps {offsets.shape[1]} != weight taps {weights.shape[1]}"
        )
    k = offsets.shape[1]
    if k < 1:
        raise InvalidShape("deformable sampling needs K >= 1")

    base = _as_coord_tensor(base_coords, n)
    out = grid_sample_bicubic(features, base)
    for j in range(k):
        off_j = T.reshape(T.narrow(offsets, 1, j, 1), (offsets.shape[0], 2) + offsets.shape[3:])
        w_j = T.reshape(T.narrow(weights, 1, j, 1), (weights.shape[0], c) + weights.shape[3:])
        tap = grid_sample_bicubic(features, T.add(base, off_j))
        out = T.add(out, T.mul(w_j, tap))
    return out
