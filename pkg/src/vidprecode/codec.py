"""Run external encoders (or a hermetic mock codec) over video and measure
decoded output and bitstream size for RD evaluation and proxy-codec training.

The mock codec is a pure-int64 8x8 blockwise transform coder: exactly
orthogonal Walsh-Hadamard transform (sequency order), uniform quantization at
the ladder step, and a deterministic exp-Golomb-style bit proxy
(sum of ceil(log2(1+|q|)) + 1 per coefficient). Identical bits on every
platform; lossless at step 1.
"""

from __future__ import annotations

import os
import shlex
import shutil
import subprocess
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Sequence, Union

import numpy as np

from .errors import (
    CodecContractError,
    CodecProcessError,
    ConfigError,
    InvalidArgument,
)
from .video_io import Frame, VideoSeq, read_raw_yuv, read_y4m, write_y4m

ENCODER_JOBS_ENV = "VIDPRECODE_ENCODER_JOBS"

_REQUIRED_BY_MODE = {"two_pass_bitrate": "{bitrate_kbps}", "cqp": "{qp}"}


@dataclass
class CodecConfig:
    """External-encoder invocation recipe, or the mock codec selector.

    Templates may be a single command or a list run in sequence (two-pass
    encoders); placeholders: {in} {out} {bitrate_kbps} {qp} {gop} {preset}
    {width} {height} {fps}.
    """

    kind: str = "mock"                      # "external" | "mock"
    encode_template: Union[str, List[str]] = ""
    decode_template: Union[str, List[str]] = ""
    rate_mode: str = "cqp"                  # "two_pass_bitrate" | "cqp"
    preset: str = "medium"
    gop: int = 30
    ladder: List[float] = field(default_factory=list)
    timeout_s: float = 300.0
    bitstream_suffix: str = ".bin"
    decoded_suffix: str = ".y4m"

    def __post_init__(self):
        if self.kind not in ("external", "mock"):
            raise ConfigError(f"codec kind must be external|mock, got {self.kind!r}")
        if self.rate_mode not in _REQUIRED_BY_MODE:
            raise ConfigError(f"rate_mode must be two_pass_bitrate|cqp, got {self.rate_mode!r}")
        if not self.ladder:
            raise ConfigError("codec ladder must be non-empty")
        diffs = np.diff(np.asarray(self.ladder, dtype=np.float64))
        if not (np.all(diffs > 0) or np.all(diffs < 0)):
            raise ConfigError(f"ladder must be strictly monotone, got {self.ladder}")
        if self.kind == "mock":
            if self.rate_mode != "cqp":
                raise ConfigError("mock codec supports rate_mode='cqp' only (ladder of quantizer steps)")
            for p in self.ladder:
                if p < 1 or int(p) != p:
                    raise ConfigError(f"mock ladder points must be integers >= 1, got {p}")
        else:
            placeholders = "".join(self._encode_cmds()) + "".join(self._decode_cmds())
            needed = _REQUIRED_BY_MODE[self.rate_mode]
            for token in ("{in}", "{out}", needed):
                if token not in placeholders:
                    raise ConfigError(f"external codec templates lack required placeholder {token}")

    def _encode_cmds(self) -> List[str]:
        return [self.encode_template] if isinstance(self.encode_template, str) else list(self.encode_template)

    def _decode_cmds(self) -> List[str]:
        return [self.decode_template] if isinstance(self.decode_template, str) else list(self.decode_template)


@dataclass
class EncodeResult:
    decoded: VideoSeq
    bits_total: int
    kbps: float
    ladder_point: float

    def __post_init__(self):
        if self.bits_total <= 0:
            raise CodecContractError("encoder produced an empty bitstream")


# ---------------------------------------------------------------------------
# Mock codec: exactly orthogonal integer transform


def _sequency_hadamard(n: int = 8) -> np.ndarray:
    h = np.array([[1]], dtype=np.int64)
    while h.shape[0] < n:
        h = np.block([[h, h], [h, -h]])
    changes = (np.diff(h, axis=1) != 0).sum(axis=1)
    return h[np.argsort(changes, kind="stable")]


_H8 = _sequency_hadamard(8)
_POW2 = 2 ** np.arange(0, 40, dtype=np.int64)


def _round_div(a: np.ndarray, b: int) -> np.ndarray:
    """Integer divide with round-half-away-from-zero."""
    sign = np.sign(a)
    return sign * ((np.abs(a) + b // 2) // b)


def _blockify(plane: np.ndarray) -> tuple[np.ndarray, int, int]:
    """Edge-pad a plane to 8x8 multiples and return [nb, 8, 8] int64 blocks."""
    h, w = plane.shape
    ph, pw = (-h) % 8, (-w) % 8
    p = np.pad(plane, ((0, ph), (0, pw)), mode="edge").astype(np.int64)
    hp, wp = p.shape
    blocks = p.reshape(hp // 8, 8, wp // 8, 8).transpose(0, 2, 1, 3).reshape(-1, 8, 8)
    return blocks, hp, wp


def _unblockify(blocks: np.ndarray, hp: int, wp: int, h: int, w: int) -> np.ndarray:
    p = blocks.reshape(hp // 8, wp // 8, 8, 8).transpose(0, 2, 1, 3).reshape(hp, wp)
    return p[:h, :w]


def _mock_code_plane(plane: np.ndarray, step: int) -> tuple[np.ndarray, int]:
    h, w = plane.shape
    blocks, hp, wp = _blockify(plane)
    coeffs = _H8 @ blocks @ _H8.T
    # transform gain is 8 (H entries are +-1), so 8*step quantizes in sample units
    q = _round_div(coeffs, 8 * step)
    n = np.abs(q) + 1
    bits = int(np.searchsorted(_POW2, n.ravel(), side="left").sum() + n.size)
    recon = _round_div(_H8.T @ (q * (8 * step)) @ _H8, 64)
    recon = np.clip(recon, 0, 255).astype(np.uint8)
    return _unblockify(recon, hp, wp, h, w), bits


def mock_encode_decode(seq: VideoSeq, step: int) -> EncodeResult:
    frames = []
    total_bits = 0
    for f in seq.frames:
        planes = []
        for plane in (f.y, f.u, f.v):
            rec, bits = _mock_code_plane(plane, step)
            planes.append(rec)
            total_bits += bits
        frames.append(Frame(*planes))
    decoded = VideoSeq(frames, seq.fps_num, seq.fps_den)
    kbps = total_bits / decoded.duration_seconds() / 1000.0
    return EncodeResult(decoded, total_bits, kbps, float(step))


# ---------------------------------------------------------------------------
# External codec


def _run_command(cmd: str, cwd: str, timeout_s: float) -> None:
    argv = shlex.split(cmd)
    try:
        proc = subprocess.run(
            argv, cwd=cwd, capture_output=True, text=True, timeout=timeout_s
        )
    except FileNotFoundError as exc:
        raise CodecProcessError(f"command not found: {argv[0]!r} (full command: {cmd})") from exc
    except subprocess.TimeoutExpired as exc:
        raise CodecProcessError(f"command timed out after {timeout_s}s: {cmd}") from exc
    if proc.returncode != 0:
        raise CodecProcessError(
            f"command failed (exit {proc.returncode}): {cmd}\n"
            f"stdout:\n{proc.stdout}\nstderr:\n{proc.stderr}"
        )


def _external_encode_decode(seq: VideoSeq, cfg: CodecConfig, point: float) -> EncodeResult:
    scratch = tempfile.mkdtemp(prefix="vidprecode_codec_")
    try:
        in_path = os.path.join(scratch, "in.y4m")
        bitstream = os.path.join(scratch, "stream" + cfg.bitstream_suffix)
        out_path = os.path.join(scratch, "out" + cfg.decoded_suffix)
        write_y4m(seq, in_path)
        subs = {
            "in": in_path,
            "out": bitstream,
            "bitrate_kbps": int(point) if float(point).is_integer() else point,
            "qp": int(point) if float(point).is_integer() else point,
            "gop": cfg.gop,
            "preset": cfg.preset,
            "width": seq.width,
            "height": seq.height,
            "fps": f"{seq.fps_num}/{seq.fps_den}",
        }
        for cmd in cfg._encode_cmds():
            _run_command(cmd.format(**subs), scratch, cfg.timeout_s)
        if not os.path.exists(bitstream):
            raise CodecProcessError(f"encoder wrote no bitstream at {bitstream}")
        bits_total = os.path.getsize(bitstream) * 8
        subs["in"], subs["out"] = bitstream, out_path
        for cmd in cfg._decode_cmds():
            _run_command(cmd.format(**subs), scratch, cfg.timeout_s)
        if cfg.decoded_suffix == ".y4m":
            decoded = read_y4m(out_path)
        else:
            decoded = read_raw_yuv(out_path, seq.width, seq.height)
        if (decoded.width, decoded.height) != (seq.width, seq.height):
            raise CodecContractError(
                f"decoded {decoded.width}x{decoded.height} != input {seq.width}x{seq.height}"
            )
        if len(decoded.frames) != len(seq.frames):
            raise CodecContractError(
                f"decoded {len(decoded.frames)} frames != input {len(seq.frames)}"
            )
        kbps = bits_total / seq.duration_seconds() / 1000.0
        result = EncodeResult(decoded, bits_total, kbps, float(point))
    except Exception:
        print(f"codec scratch dir preserved for inspection: {scratch}")
        raise
    shutil.rmtree(scratch, ignore_errors=True)
    return result


def encode_decode(seq: VideoSeq, cfg: CodecConfig, point: float) -> EncodeResult:
    """Encode and decode one sequence at one ladder point."""
    if point not in cfg.ladder:
        raise InvalidArgument(f"point {point} not on ladder {cfg.ladder}")
    if cfg.kind == "mock":
        return mock_encode_decode(seq, int(point))
    return _external_encode_decode(seq, cfg, point)


def run_ladder(seq: VideoSeq, cfg: CodecConfig) -> List[EncodeResult]:
    """One EncodeResult per ladder point, input order preserved; any failure
    aborts with its context (no silent gaps)."""
    jobs = max(1, int(os.environ.get(ENCODER_JOBS_ENV, "1")))
    if jobs == 1 or cfg.kind == "mock":
        return [encode_decode(seq, cfg, p) for p in cfg.ladder]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(encode_decode, seq, cfg, p) for p in cfg.ladder]
        return [f.result() for f in futures]
