"""Command-line surface: precode video, evaluate RD curves against codec
ladders, compute Bjontegaard deltas, run toy training, gradient verification
and throughput benchmarks.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 model error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from typing import Callable, List, Optional

import numpy as np

from . import rarn as RN
from . import tensor as T
from . import training as TR
from . import tvc as V
from .codec import ENCODER_JOBS_ENV, CodecConfig, run_ladder
from .errors import (
    CodecProcessError,
    ConfigError,
    CorruptStream,
    UnsupportedFormat,
    VidprecodeError,
)
from .metrics import RdCurve, RdPoint, bd_report, psnr_y, ssim_y
from .resample import ScalePlan, bicubic_resize, lanczos_resize
from .runconfig import RunConfig, load_run_config
from .tensor import Tensor
from .video_io import VideoSeq, frame_to_tensor, read_y4m, tensor_to_frame, write_y4m

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_MODEL = 4


class ModelError(VidprecodeError):
    pass


def _plan_for(cfg: RunConfig, in_h: int, in_w: int) -> ScalePlan:
    if cfg.size is not None:
        w, h = cfg.size
        return ScalePlan(in_h, in_w, h, w)
    return ScalePlan.from_scale(in_h, in_w, cfg.scale)


def _load_rarn(cfg: RunConfig, path: Optional[str], lightweight: bool = False) -> RN.RarnParams:
    rcfg = cfg.rarn
    if lightweight:
        import dataclasses
        rcfg = dataclasses.replace(rcfg, lightweight=True)
    if path is None:
        return RN.init_params(rcfg, seed=cfg.seed)
    if not os.path.exists(path):
        raise ModelError(f"checkpoint not found: {path}")
    try:
        return RN.RarnParams.load(path, rcfg)
    except (ConfigError, CorruptStream) as exc:
        raise ModelError(f"cannot load checkpoint {path}: {exc}") from exc


def _precoder_for(method: str, cfg: RunConfig, plan: ScalePlan,
                  ckpt: Optional[str]) -> Callable[[Tensor], Tensor]:
    if method == "bicubic":
        return lambda x: T.clamp01_ste(bicubic_resize(x, plan))
    if method == "lanczos":
        return lambda x: T.clamp01_ste(lanczos_resize(x, plan))
    params = _load_rarn(cfg, ckpt, lightweight=(method == "rarn-lightweight"))
    return TR.rarn_precoder(plan, params)


# ---------------------------------------------------------------------------
# Commands


def cmd_precode(args) -> int:
    cfg, digest = load_run_config(args.config)
    if args.scale is not None:
        cfg.scale, cfg.size = args.scale, None
    if args.size is not None:
        w, h = args.size.lower().split("x")
        cfg.size = (int(w), int(h))
    seq = read_y4m(args.input)
    plan = _plan_for(cfg, seq.height, seq.width)
    params = _load_rarn(cfg, args.model or cfg.model_checkpoint)
    out_frames = []
    t0 = time.monotonic()
    for i, frame in enumerate(seq.frames):
        y, r_f = RN.precode(frame_to_tensor(frame), plan, params, "eval")
        out_frames.append(tensor_to_frame(y))
        print(f"frame {i}: rate_features_bits={r_f.item():.1f}")
    dt = time.monotonic() - t0
    write_y4m(VideoSeq(out_frames, seq.fps_num, seq.fps_den), args.output)
    print(f"precoded {len(out_frames)} frames at {len(out_frames) / dt:.2f} frames/s "
          f"(config {digest}, seed {cfg.seed})")
    return 0


def _upsampler(which: str, plan: ScalePlan):
    back = ScalePlan(plan.out_h, plan.out_w, plan.in_h, plan.in_w)
    fn = bicubic_resize if which == "bicubic" else lanczos_resize
    return lambda t: fn(t, back)


def cmd_encode_eval(args) -> int:
    cfg, digest = load_run_config(args.config)
    seq = read_y4m(args.input)
    plan = _plan_for(cfg, seq.height, seq.width)
    os.makedirs(cfg.output_dir, exist_ok=True)
    up = _upsampler(args.upsample or cfg.upsample, plan)
    sources = [frame_to_tensor(f) for f in seq.frames]
    written = []
    for method in cfg.methods:
        pre = _precoder_for(method, cfg, plan, args.model or cfg.model_checkpoint)
        low = VideoSeq([tensor_to_frame(pre(x)) for x in sources], seq.fps_num, seq.fps_den)
        points = []
        for res in run_ladder(low, cfg.codec):
            psnrs, ssims = [], []
            for src, dec in zip(seq.frames, res.decoded.frames):
                restored = tensor_to_frame(up(frame_to_tensor(dec)))
                psnrs.append(psnr_y(src, restored))
                if args.ssim:
                    ssims.append(ssim_y(src, restored))
            finite = [p for p in psnrs if math.isfinite(p)]
            quality = float(np.mean(finite)) if finite else math.inf
            points.append((res.kbps, quality, float(np.mean(ssims)) if ssims else None))
        points.sort(key=lambda p: p[0])
        header = [f"config_hash={digest} seed={cfg.seed} method={method} upsample={args.upsample or cfg.upsample}"]
        curve = RdCurve([RdPoint(r, q) for r, q, _ in points])
        path = os.path.join(cfg.output_dir, f"{method}.csv")
        curve.write_csv(path, header)
        written.append(path)
        if args.ssim:
            spath = os.path.join(cfg.output_dir, f"{method}_ssim.csv")
            RdCurve([RdPoint(r, s) for r, _, s in points]).write_csv(
                spath, header + ["quality_metric=ssim_single_scale"])
            written.append(spath)
    print("\n".join(written))
    return 0


def cmd_bdrate(args) -> int:
    from .errors import InvalidArgument

    try:
        anchor = RdCurve.read_csv(args.anchor)
        test = RdCurve.read_csv(args.test)
    except InvalidArgument as exc:
        raise ConfigError(str(exc)) from exc
    report = bd_report(anchor, test).as_dict()
    text = json.dumps(report, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return 0


def _training_images(cfg: RunConfig) -> List[Tensor]:
    spec = cfg.train_data
    if spec.startswith("synthetic:"):
        parts = spec.split(":")
        n, size = int(parts[1]), int(parts[2])
        return TR.synthetic_training_images(n, size, seed=cfg.seed + 1)
    images: List[Tensor] = []
    for path in spec.split(","):
        images.extend(TR.load_training_images(read_y4m(path.strip())))
    if not images:
        raise ConfigError("train_data produced no images")
    return images


def cmd_train_toy(args) -> int:
    cfg, digest = load_run_config(args.config)
    os.makedirs(cfg.output_dir, exist_ok=True)
    data = _training_images(cfg)
    rarn_params, tvc_params, report = TR.alternate_train(
        data, cfg.train, cfg.rarn, cfg.tvc, cfg.codec, out_dir=cfg.output_dir)
    report.write_csv(os.path.join(cfg.output_dir, "train_report.csv"))
    summary = report.summary()
    summary["config_hash"] = digest
    summary["seed"] = cfg.train.seed
    with open(os.path.join(cfg.output_dir, "train_summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
    print(json.dumps(summary, indent=2))
    return 0


def cmd_grad_check(args) -> int:
    from .gradcheck import run_all_suites

    results = run_all_suites()
    failed = False
    for name, err in sorted(results.items()):
        status = "PASS" if err < 1e-6 else "FAIL"
        failed |= status == "FAIL"
        print(f"{name:24s} max rel err {err:.3e}  {status}")
    return 1 if failed else 0


def cmd_bench(args) -> int:
    w, h = (int(v) for v in args.size.lower().split("x"))
    rng = np.random.default_rng(0)
    x = Tensor(rng.random((1, 3, h, w)))
    plan = ScalePlan.from_scale(h, w, 2.0)
    results = {}
    for label, lightweight in (("full", False), ("lightweight", True)):
        cfg = RN.RarnConfig(lightweight=lightweight)
        params = RN.init_params(cfg, seed=0)
        RN.precode(x, plan, params, "eval")  # warm caches before timing
        t0 = time.monotonic()
        for _ in range(args.frames):
            RN.precode(x, plan, params, "eval")
        fps = args.frames / (time.monotonic() - t0)
        results[label] = fps
        print(f"{label}: {fps:.3f} frames/s at {w}x{h} (scale 2.0)")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vidprecode",
                                description="Learned video precoding and RD evaluation toolkit")
    p.add_argument("--jobs", type=int, default=None,
                   help="cap for concurrent encoder processes")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("precode", help="rescale a Y4M with the learned precoder")
    sp.add_argument("--config", required=True)
    sp.add_argument("--model", default=None, help="rescaler checkpoint path")
    sp.add_argument("--scale", type=float, default=None)
    sp.add_argument("--size", default=None, help="target WxH")
    sp.add_argument("input")
    sp.add_argument("output")
    sp.set_defaults(fn=cmd_precode)

    se = sub.add_parser("encode-eval", help="RD curves per precoding method")
    se.add_argument("--config", required=True)
    se.add_argument("--model", default=None)
    se.add_argument("--upsample", choices=["bicubic", "lanczos"], default=None)
    se.add_argument("--ssim", action="store_true", help="also write single-scale SSIM curves")
    se.add_argument("input")
    se.set_defaults(fn=cmd_encode_eval)

    sb = sub.add_parser("bdrate", help="Bjontegaard deltas between two curve CSVs")
    sb.add_argument("anchor")
    sb.add_argument("test")
    sb.add_argument("--out", default=None)
    sb.set_defaults(fn=cmd_bdrate)

    st = sub.add_parser("train-toy", help="run the alternating trainer at desk scale")
    st.add_argument("--config", required=True)
    st.set_defaults(fn=cmd_train_toy)

    sg = sub.add_parser("grad-check", help="finite-difference verification of every op")
    sg.set_defaults(fn=cmd_grad_check)

    sn = sub.add_parser("bench", help="precode throughput, full vs lightweight")
    sn.add_argument("--size", default="64x64")
    sn.add_argument("--frames", type=int, default=3)
    sn.set_defaults(fn=cmd_bench)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.jobs is not None:
        os.environ[ENCODER_JOBS_ENV] = str(args.jobs)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, CorruptStream, UnsupportedFormat, CodecProcessError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ModelError, VidprecodeError) as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL


if __name__ == "__main__":
    sys.exit(main())
