"""Alternating optimization: fit the virtual codec to the real (or mock)
codec's outputs, then train the rescaler through the frozen virtual codec with
the rate-distortion loss.

Gradient isolation is structural: ``backward`` only accumulates into the
parameter set passed as ``wrt``, so rescaler steps cannot touch codec-proxy
parameters and vice versa.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import rarn as RN
from . import tensor as T
from . import tvc as V
from .codec import CodecConfig, encode_decode
from .errors import ConfigError, InvalidArgument, NumericError
from .resample import ScalePlan, bicubic_resize, lanczos_resize
from .tensor import Tape, Tensor, backward
from .video_io import VideoSeq, frame_to_tensor, tensor_to_frame


@dataclass
class TrainConfig:
    lam: float = 0.05                  # RD trade-off weight on the rate term
    lambda_d: float = 0.5              # downsample-anchor weight
    lambda_r: float = 0.1              # auxiliary-rate weight
    lr: float = 1e-4
    tvc_lr: Optional[float] = None     # defaults to lr
    betas: Tuple[float, float] = (0.9, 0.999)
    steps: int = 300
    tvc_steps_per_rarn_step: int = 1
    tvc_warmup_steps: int = 0          # steps fitting only the proxy before the rescaler moves
    fit_point: Optional[float] = None  # pin the ladder point sampled for proxy fitting
    average_tail: int = 0              # Polyak-average rescaler params over the last N steps
    batch: int = 2
    crop_size: int = 32
    seed: int = 0
    scale_choices: Tuple[float, ...] = (1.5, 2.0, 2.5)
    scale_continuous: Tuple[float, float] = (1.25, 2.75)
    anchor_filter: str = "bicubic"     # Eq-form default; "lanczos" variant exposed
    precision: str = "float32"
    rate_calibration_alpha: float = 0.01
    gop_mode: bool = False
    checkpoint_every: int = 100

    def __post_init__(self):
        if min(self.lam, self.lambda_d, self.lambda_r) <= 0:
            raise ConfigError("lam, lambda_d, lambda_r must all be positive")
        if self.anchor_filter not in ("bicubic", "lanczos"):
            raise ConfigError(f"anchor_filter must be bicubic|lanczos, got {self.anchor_filter!r}")
        if self.steps < 0 or self.batch < 1 or self.crop_size < 8:
            raise ConfigError("steps >= 0, batch >= 1, crop_size >= 8 required")


@dataclass
class StepRecord:
    step: int
    loss: float
    distortion: float
    rate_bpp: float
    tvc_loss: float


@dataclass
class TrainReport:
    records: List[StepRecord] = field(default_factory=list)
    wall_time_s: float = 0.0
    checkpoints: List[str] = field(default_factory=list)
    optimizer_note: str = "adam lr/betas as configured"

    def write_csv(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write("step,L,D,R,L_tvc\n")
            for r in self.records:
                fh.write(f"{r.step},{r.loss!r},{r.distortion!r},{r.rate_bpp!r},{r.tvc_loss!r}\n")

    def summary(self) -> dict:
        return {
            "steps": len(self.records),
            "final_loss": self.records[-1].loss if self.records else None,
            "wall_time_s": self.wall_time_s,
            "checkpoints": self.checkpoints,
            "optimizer": self.optimizer_note,
        }


class Adam:
    """Adaptive-moment optimizer over a named tensor dict (functional updates:
    tensors are replaced, never mutated)."""

    def __init__(self, tensors: Dict[str, Tensor], lr: float = 1e-4,
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.tensors = tensors
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self) -> None:
        if self.lr == 0.0:
            self._zero_grads()
            return
        self.t += 1
        for name in list(self.tensors):
            p = self.tensors[name]
            if p.grad is None:
                continue
            g = p.grad
            m = self.m.get(name)
            v = self.v.get(name)
            m = g * (1 - self.b1) if m is None else self.b1 * m + (1 - self.b1) * g
            v = g * g * (1 - self.b2) if v is None else self.b2 * v + (1 - self.b2) * g * g
            self.m[name], self.v[name] = m, v
            mhat = m / (1 - self.b1 ** self.t)
            vhat = v / (1 - self.b2 ** self.t)
            new = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)
            self.tensors[name] = Tensor(new, requires_grad=True, dtype=p.dtype)

    def _zero_grads(self) -> None:
        for p in self.tensors.values():
            p.zero_grad()


def _anchor_resize(x: Tensor, plan: ScalePlan, which: str) -> Tensor:
    return bicubic_resize(x, plan) if which == "bicubic" else lanczos_resize(x, plan)


def rd_loss(
    x: Tensor,
    y: Tensor,
    y_decoded: Tensor,
    r_tvc: Tensor,
    r_f: Tensor,
    plan: ScalePlan,
    cfg: TrainConfig,
) -> Tuple[Tensor, Tensor, Tensor]:
    """(L, D, R): reconstruction against the linear upsample of the proxy-decoded
    frame, an anchor term tying y to the classical downsample, and the rate
    term in bits per source pixel."""
    if x.shape[2:] != (plan.in_h, plan.in_w) or y.shape[2:] != (plan.out_h, plan.out_w):
        raise InvalidArgument(f"rd_loss shapes {x.shape}/{y.shape} do not match plan {plan}")
    up = bicubic_resize(y_decoded, ScalePlan(plan.out_h, plan.out_w, plan.in_h, plan.in_w))
    rec = T.reduce_mean(T.mul(T.sub(x, up), T.sub(x, up)))
    anchor = _anchor_resize(x, plan, cfg.anchor_filter)
    fdev = T.reduce_mean(T.mul(T.sub(y, anchor), T.sub(y, anchor)))
    d = T.add(rec, T.mul(fdev, cfg.lambda_d))
    bits = T.add(r_tvc, T.mul(r_f, cfg.lambda_r))
    r = T.mul(bits, 1.0 / (plan.in_h * plan.in_w))
    loss = T.add(d, T.mul(r, cfg.lam))
    return loss, d, r


@dataclass
class TvcFitLoss:
    total: float
    mse: float
    calibration: float


def tvc_fit_step(
    batch_y: Sequence[Tensor],
    codec_outputs: Sequence[Tensor],
    tvc_params: V.TvcParams,
    opt: Adam,
    measured_bpp: Optional[float] = None,
    alpha: float = 0.01,
    rng: Optional[np.random.Generator] = None,
) -> TvcFitLoss:
    """One optimizer step pulling the proxy's output toward the codec's output
    on identical inputs, plus a rate-calibration term tying the proxy's bit
    estimate to the measured bits per pixel (skipped without a measurement)."""
    if len(batch_y) != len(codec_outputs):
        raise InvalidArgument(
            f"batch size {len(batch_y)} != codec output count {len(codec_outputs)}"
        )
    n = len(batch_y)
    pixels = sum(y.shape[2] * y.shape[3] for y in batch_y)
    with Tape() as tape:
        mse_sum = None
        bits_sum = None
        for y, target in zip(batch_y, codec_outputs):
            dec, bits = V.intra_code(y.detach(), tvc_params, "train", rng=rng)
            diff = T.sub(dec, target.detach())
            mse = T.reduce_mean(T.mul(diff, diff))
            mse_sum = mse if mse_sum is None else T.add(mse_sum, mse)
            bits_sum = bits if bits_sum is None else T.add(bits_sum, bits)
        mse_t = T.mul(mse_sum, 1.0 / n)
        if measured_bpp is not None and measured_bpp > 0:
            ratio = T.add(T.mul(bits_sum, 1.0 / (pixels * measured_bpp)), -1.0)
            calib_t = T.mul(T.mul(ratio, ratio), alpha)
            total = T.add(mse_t, calib_t)
            calib = calib_t.item()
        else:
            total = mse_t
            calib = 0.0
        result = TvcFitLoss(total.item(), mse_t.item(), calib)
    if opt.lr != 0.0:
        backward(total, tape, wrt=tvc_params.tensors.values())
    opt.step()
    for p in tvc_params.tensors.values():
        p.zero_grad()
    return result


# ---------------------------------------------------------------------------
# Data helpers


def synthetic_training_images(n: int, size: int, seed: int) -> List[Tensor]:
    """Deterministic textured stand-ins for natural frames: smooth gradients,
    oriented sinusoids, blockwise-varying texture and soft edges in [0.05, 0.95]."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
        img = np.zeros((3, size, size))
        base = 0.5 + 0.25 * np.sin(2 * np.pi * (rng.uniform(0.5, 2) * xx + rng.uniform(0.5, 2) * yy))
        freq = rng.uniform(3, 9, size=2)
        tex = 0.15 * np.sin(2 * np.pi * freq[0] * xx) * np.cos(2 * np.pi * freq[1] * yy)
        noise = rng.normal(0, 1, (size, size))
        smooth = np.cumsum(np.cumsum(noise, 0), 1)
        smooth = (smooth - smooth.mean()) / (np.abs(smooth).max() + 1e-9) * 0.2
        edge = 0.2 * (xx > rng.uniform(0.3, 0.7)).astype(np.float64)
        luma = np.clip(base + tex + smooth + edge, 0.05, 0.95)
        img[0] = luma
        img[1] = np.clip(0.5 + 0.2 * (luma - 0.5) + 0.05 * np.sin(6 * xx), 0.05, 0.95)
        img[2] = np.clip(0.5 - 0.15 * (luma - 0.5), 0.05, 0.95)
        out.append(Tensor(img[None]))
    return out


def load_training_images(seq: VideoSeq, max_frames: Optional[int] = None) -> List[Tensor]:
    frames = seq.frames if max_frames is None else seq.frames[:max_frames]
    return [frame_to_tensor(f) for f in frames]


def _sample_scale(rng: np.random.Generator, cfg: TrainConfig) -> float:
    if rng.random() < 0.5:
        return float(rng.choice(cfg.scale_choices))
    return float(rng.uniform(*cfg.scale_continuous))


def _sample_crop(rng: np.random.Generator, images: Sequence[Tensor], size: int) -> Tensor:
    img = images[int(rng.integers(len(images)))]
    h, w = img.shape[2], img.shape[3]
    if h < size or w < size:
        raise InvalidArgument(f"training image {h}x{w} smaller than crop {size}")
    oy = int(rng.integers(h - size + 1))
    ox = int(rng.integers(w - size + 1))
    return Tensor(img.data[:, :, oy:oy + size, ox:ox + size].copy())


def _codec_roundtrip(y: Tensor, codec_cfg: CodecConfig, point: float) -> Tuple[Tensor, float]:
    """(decoded tensor, measured bpp of the low-res frame)."""
    frame = tensor_to_frame(y.detach())
    res = encode_decode(VideoSeq([frame]), codec_cfg, point)
    bpp = res.bits_total / (frame.width * frame.height)
    return frame_to_tensor(res.decoded.frames[0]), bpp


def alternate_train(
    data: Sequence[Tensor],
    cfg: TrainConfig,
    rarn_config: RN.RarnConfig,
    tvc_config: V.TvcConfig,
    codec_cfg: CodecConfig,
    out_dir: Optional[str] = None,
    rarn_params: Optional[RN.RarnParams] = None,
    tvc_params: Optional[V.TvcParams] = None,
) -> Tuple[RN.RarnParams, V.TvcParams, TrainReport]:
    """The outer loop: per step, sample crops and a scale factor, precode in
    train mode, run the codec on the detached precode, fit the proxy, then take
    one rescaler step on the RD loss through the frozen proxy."""
    if not data:
        raise InvalidArgument("training data is empty")
    t0 = time.monotonic()
    report = TrainReport(optimizer_note=f"adam lr={cfg.lr} betas={cfg.betas}")
    with T.precision(cfg.precision):
        rng = np.random.default_rng(cfg.seed)
        if rarn_params is None:
            rarn_params = RN.init_params(rarn_config, seed=cfg.seed)
        if tvc_params is None:
            tvc_params = V.init_params(tvc_config, seed=cfg.seed + 1)
        opt_rarn = Adam(rarn_params.tensors, lr=cfg.lr, betas=cfg.betas)
        opt_tvc = Adam(tvc_params.tensors, lr=cfg.tvc_lr if cfg.tvc_lr is not None else cfg.lr,
                       betas=cfg.betas)

        if out_dir is not None:
            report.checkpoints.extend(_save_checkpoints(out_dir, "init", rarn_params, tvc_params))

        tail_sum: Dict[str, np.ndarray] = {}
        tail_n = 0
        for step in range(cfg.steps):
            try:
                rec = _train_step(step, data, cfg, rng, rarn_params, tvc_params,
                                  opt_rarn, opt_tvc, codec_cfg)
            except NumericError as exc:
                raise NumericError(f"non-finite loss at training step {step}: {exc}") from exc
            if not all(math.isfinite(v) for v in (rec.loss, rec.distortion, rec.rate_bpp)):
                raise NumericError(f"non-finite loss at training step {step}: {rec}")
            report.records.append(rec)
            if cfg.average_tail and step >= cfg.steps - cfg.average_tail:
                for name, t in rarn_params.tensors.items():
                    acc = tail_sum.get(name)
                    tail_sum[name] = t.data.astype(np.float64) if acc is None else acc + t.data
                tail_n += 1
            if out_dir is not None and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
                report.checkpoints.extend(
                    _save_checkpoints(out_dir, f"step{step + 1}", rarn_params, tvc_params)
                )
        if tail_n:
            for name in rarn_params.tensors:
                avg = (tail_sum[name] / tail_n).astype(rarn_params.tensors[name].dtype)
                rarn_params.tensors[name] = Tensor(avg, requires_grad=True)
        if out_dir is not None:
            report.checkpoints.extend(_save_checkpoints(out_dir, "final", rarn_params, tvc_params))
    report.wall_time_s = time.monotonic() - t0
    return rarn_params, tvc_params, report


def _save_checkpoints(out_dir: str, tag: str, rarn_params, tvc_params) -> List[str]:
    import os

    rp = os.path.join(out_dir, f"rarn_{tag}.ckpt")
    tp = os.path.join(out_dir, f"tvc_{tag}.ckpt")
    rarn_params.save(rp)
    tvc_params.save(tp)
    return [rp, tp]


def _train_step(step, data, cfg, rng, rarn_params, tvc_params, opt_rarn, opt_tvc, codec_cfg):
    scale = _sample_scale(rng, cfg)
    crops = [_sample_crop(rng, data, cfg.crop_size) for _ in range(cfg.batch)]
    plan = ScalePlan.from_scale(cfg.crop_size, cfg.crop_size, scale)
    point = float(rng.choice(codec_cfg.ladder)) if cfg.fit_point is None else float(cfg.fit_point)
    warming_up = step < cfg.tvc_warmup_steps

    with Tape() as tape:
        ys, rfs = [], []
        for crop in crops:
            y, rf = RN.precode(crop, plan, rarn_params, "train", rng=rng)
            ys.append(y)
            rfs.append(rf)

        targets, bpps = [], []
        for y in ys:
            dec, bpp = _codec_roundtrip(y, codec_cfg, point)
            targets.append(dec)
            bpps.append(bpp)
        measured_bpp = float(np.mean(bpps))

        fit = TvcFitLoss(0.0, 0.0, 0.0)
        for _ in range(cfg.tvc_steps_per_rarn_step):
            fit = tvc_fit_step(ys, targets, tvc_params, opt_tvc,
                               measured_bpp=measured_bpp,
                               alpha=cfg.rate_calibration_alpha, rng=rng)

        loss_sum = d_sum = r_sum = None
        for crop, y, rf in zip(crops, ys, rfs):
            y_dec, r_tvc = V.intra_code(y, tvc_params, "train", rng=rng)
            loss, d, r = rd_loss(crop, y, y_dec, r_tvc, rf, plan, cfg)
            loss_sum = loss if loss_sum is None else T.add(loss_sum, loss)
            d_sum = d if d_sum is None else T.add(d_sum, d)
            r_sum = r if r_sum is None else T.add(r_sum, r)
        total = T.mul(loss_sum, 1.0 / len(crops))
        record = StepRecord(
            step,
            total.item(),
            d_sum.item() / len(crops),
            r_sum.item() / len(crops),
            fit.total,
        )
    if not warming_up:
        backward(total, tape, wrt=rarn_params.tensors.values())
        for p in tvc_params.tensors.values():
            assert p.grad is None, "virtual-codec parameters received gradients in a rescaler step"
        opt_rarn.step()
    for p in rarn_params.tensors.values():
        p.zero_grad()
    return record


# ---------------------------------------------------------------------------
# Evaluation through the real codec pipeline


@dataclass
class PipelineEval:
    loss: float
    distortion: float
    rate_bpp: float
    psnr: float


def eval_through_codec(
    x: Tensor,
    plan: ScalePlan,
    precoder: Callable[[Tensor], Tensor],
    codec_cfg: CodecConfig,
    point: float,
    cfg: TrainConfig,
    upsample: str = "bicubic",
) -> PipelineEval:
    """Eq.-9-style loss with the measured codec standing in for the proxy:
    D as in training, R = measured bits per source pixel."""
    from .metrics import psnr_y

    y = precoder(x)
    frame = tensor_to_frame(y)
    res = encode_decode(VideoSeq([frame]), codec_cfg, point)
    dec_t = frame_to_tensor(res.decoded.frames[0])
    up = _anchor_resize(dec_t, ScalePlan(plan.out_h, plan.out_w, plan.in_h, plan.in_w), upsample)
    rec = float(np.mean((x.data - up.data) ** 2))
    anchor = _anchor_resize(x, plan, cfg.anchor_filter)
    fdev = float(np.mean((y.data - anchor.data) ** 2))
    d = rec + cfg.lambda_d * fdev
    r = res.bits_total / (plan.in_h * plan.in_w)
    psnr = psnr_y(tensor_to_frame(x), tensor_to_frame(up))
    return PipelineEval(d + cfg.lam * r, d, r, psnr)


def bicubic_precoder(plan: ScalePlan) -> Callable[[Tensor], Tensor]:
    def fn(x: Tensor) -> Tensor:
        return T.clamp01_ste(bicubic_resize(x, plan))
    return fn


def rarn_precoder(plan: ScalePlan, params: RN.RarnParams) -> Callable[[Tensor], Tensor]:
    def fn(x: Tensor) -> Tensor:
        y, _ = RN.precode(x, plan, params, "eval")
        return y
    return fn
