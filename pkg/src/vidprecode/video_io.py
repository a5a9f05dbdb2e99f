"""Planar 8-bit YUV 4:2:0 frame and sequence I/O (Y4M subset and raw), plus
conversion between frames and [1,3,H,W] tensors in [0,1].

Geometry is never resampled here except chroma up/down conversion for tensor
interchange (co-sited top-left siting); the luma plane passes through I/O
untouched.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import BinaryIO, List, Union

import numpy as np

from .errors import CorruptStream, InvalidArgument, InvalidShape, UnsupportedFormat
from .tensor import Tensor, default_dtype


def _chroma_extent(n: int) -> int:
    return (n + 1) // 2


@dataclass
class Frame:
    """One 4:2:0 picture: full-res Y, quarter-res U and V, 8-bit samples."""

    y: np.ndarray
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.y = np.ascontiguousarray(self.y, dtype=np.uint8)
        self.u = np.ascontiguousarray(self.u, dtype=np.uint8)
        self.v = np.ascontiguousarray(self.v, dtype=np.uint8)
        h, w = self.y.shape
        ch, cw = _chroma_extent(h), _chroma_extent(w)
        if self.u.shape != (ch, cw) or self.v.shape != (ch, cw):
            raise InvalidShape(
                f"chroma {self.u.shape}/{self.v.shape} inconsistent with {w}x{h} 4:2:0 (want {(ch, cw)})"
            )

    @property
    def width(self) -> int:
        return self.y.shape[1]

    @property
    def height(self) -> int:
        return self.y.shape[0]

    @classmethod
    def gray(cls, width: int, height: int, value: int = 128) -> "Frame":
        ch, cw = _chroma_extent(height), _chroma_extent(width)
        return cls(
            np.full((height, width), value, dtype=np.uint8),
            np.full((ch, cw), 128, dtype=np.uint8),
            np.full((ch, cw), 128, dtype=np.uint8),
        )


@dataclass
class VideoSeq:
    """Ordered frames sharing dimensions, with a rational frame rate."""

    frames: List[Frame]
    fps_num: int = 30
    fps_den: int = 1

    def __post_init__(self):
        if not self.frames:
            raise InvalidArgument("VideoSeq needs at least one frame")
        w, h = self.frames[0].width, self.frames[0].height
        for i, f in enumerate(self.frames):
            if (f.width, f.height) != (w, h):
                raise InvalidShape(f"frame {i} is {f.width}x{f.height}, expected {w}x{h}")
        if self.fps_num <= 0 or self.fps_den <= 0:
            raise InvalidArgument("frame rate must be positive")

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def height(self) -> int:
        return self.frames[0].height

    def duration_seconds(self) -> float:
        return len(self.frames) * self.fps_den / self.fps_num


# ---------------------------------------------------------------------------
# Y4M

_Y4M_SIG = b"YUV4MPEG2"


def _frame_payload_size(w: int, h: int) -> int:
    return w * h + 2 * _chroma_extent(w) * _chroma_extent(h)


def read_y4m(path_or_file: Union[str, BinaryIO]) -> VideoSeq:
    """Parse a progressive C420 (or colorspace-omitted) Y4M stream."""
    fh = open(path_or_file, "rb") if isinstance(path_or_file, str) else path_or_file
    try:
        header = bytearray()
        while True:
            b = fh.read(1)
            if not b:
                raise CorruptStream("unterminated Y4M stream header")
            if b == b"\n":
                break
            header.extend(b)
        fields = bytes(header).split(b" ")
        if fields[0] != _Y4M_SIG:
            raise UnsupportedFormat(f"not a Y4M stream (signature {fields[0]!r})")
        width = height = None
        fps_num, fps_den = 25, 1
        for tok in fields[1:]:
            if not tok:
                continue
            tag, val = tok[:1], tok[1:].decode("ascii", "replace")
            if tag == b"W":
                width = int(val)
            elif tag == b"H":
                height = int(val)
            elif tag == b"F":
                num, den = val.split(":")
                fps_num, fps_den = int(num), int(den)
            elif tag == b"C":
                if not val.startswith("420"):
                    raise UnsupportedFormat(f"colorspace C{val} is not 4:2:0")
            # I (interlacing), A (aspect), X (comment) tolerated and ignored
        if not width or not height:
            raise CorruptStream("Y4M header lacks W/H")

        frames = []
        payload = _frame_payload_size(width, height)
        while True:
            line = bytearray()
            b = fh.read(1)
            if not b:
                break
            while b != b"\n":
                line.extend(b)
                b = fh.read(1)
                if not b:
                    raise CorruptStream("unterminated FRAME marker")
            if not bytes(line).startswith(b"FRAME"):
                raise CorruptStream(f"expected FRAME marker, got {bytes(line)[:16]!r}")
            raw = fh.read(payload)
            if len(raw) != payload:
                raise CorruptStream(
                    f"truncated frame {len(frames)}: {len(raw)} of {payload} payload bytes"
                )
            frames.append(_frame_from_planar(raw, width, height))
        if not frames:
            raise CorruptStream("Y4M stream contains no frames")
        return VideoSeq(frames, fps_num, fps_den)
    finally:
        if isinstance(path_or_file, str):
            fh.close()


def write_y4m(seq: VideoSeq, path_or_file: Union[str, BinaryIO]) -> None:
    """Write with a canonical header: W H F Ip A1:1 C420."""
    fh = open(path_or_file, "wb") if isinstance(path_or_file, str) else path_or_file
    try:
        fh.write(
            f"YUV4MPEG2 W{seq.width} H{seq.height} F{seq.fps_num}:{seq.fps_den} Ip A1:1 C420\n".encode()
        )
        for f in seq.frames:
            fh.write(b"FRAME\n")
            fh.write(f.y.tobytes())
            fh.write(f.u.tobytes())
            fh.write(f.v.tobytes())
    finally:
        if isinstance(path_or_file, str):
            fh.close()


def _frame_from_planar(raw: bytes, width: int, height: int) -> Frame:
    cw, ch = _chroma_extent(width), _chroma_extent(height)
    ysz, csz = width * height, cw * ch
    buf = np.frombuffer(raw, dtype=np.uint8)
    return Frame(
        buf[:ysz].reshape(height, width).copy(),
        buf[ysz:ysz + csz].reshape(ch, cw).copy(),
        buf[ysz + csz:ysz + 2 * csz].reshape(ch, cw).copy(),
    )


# ---------------------------------------------------------------------------
# Raw planar YUV420p


def read_raw_yuv(path: str, width: int, height: int) -> VideoSeq:
    with open(path, "rb") as fh:
        blob = fh.read()
    payload = _frame_payload_size(width, height)
    if not blob or len(blob) % payload:
        raise CorruptStream(
            f"{path}: size {len(blob)} is not a positive multiple of frame payload {payload}"
        )
    frames = [
        _frame_from_planar(blob[i * payload:(i + 1) * payload], width, height)
        for i in range(len(blob) // payload)
    ]
    return VideoSeq(frames)


def write_raw_yuv(seq: VideoSeq, path: str) -> None:
    with open(path, "wb") as fh:
        for f in seq.frames:
            fh.write(f.y.tobytes())
            fh.write(f.u.tobytes())
            fh.write(f.v.tobytes())


# ---------------------------------------------------------------------------
# Tensor interchange


def _upsample_chroma(plane: np.ndarray, width: int, height: int) -> np.ndarray:
    """Bilinear 2x chroma upsample, co-sited top-left: chroma (i,j) sits at luma (2i,2j)."""
    ch, cw = plane.shape
    p = plane.astype(np.float64)
    yy = np.arange(height) / 2.0
    xx = np.arange(width) / 2.0
    y0 = np.clip(np.floor(yy).astype(int), 0, ch - 1)
    y1 = np.clip(y0 + 1, 0, ch - 1)
    x0 = np.clip(np.floor(xx).astype(int), 0, cw - 1)
    x1 = np.clip(x0 + 1, 0, cw - 1)
    fy = (yy - y0)[:, None]
    fx = (xx - x0)[None, :]
    top = p[y0][:, x0] * (1 - fx) + p[y0][:, x1] * fx
    bot = p[y1][:, x0] * (1 - fx) + p[y1][:, x1] * fx
    return top * (1 - fy[:, 0])[:, None] + bot * fy[:, 0][:, None]


def _downsample_chroma(full: np.ndarray) -> np.ndarray:
    """Box 2x2 average with edge clamp on odd extents."""
    h, w = full.shape
    ch, cw = _chroma_extent(h), _chroma_extent(w)
    y0 = 2 * np.arange(ch)
    y1 = np.minimum(y0 + 1, h - 1)
    x0 = 2 * np.arange(cw)
    x1 = np.minimum(x0 + 1, w - 1)
    return 0.25 * (full[y0][:, x0] + full[y0][:, x1] + full[y1][:, x0] + full[y1][:, x1])


def frame_to_tensor(frame: Frame) -> Tensor:
    """[1,3,H,W] in [0,1]; chroma bilinearly upsampled to full resolution."""
    h, w = frame.height, frame.width
    y = frame.y.astype(np.float64) / 255.0
    u = _upsample_chroma(frame.u, w, h) / 255.0
    v = _upsample_chroma(frame.v, w, h) / 255.0
    return Tensor(np.stack([y, u, v])[None], dtype=default_dtype())


def _quantize(plane: np.ndarray) -> np.ndarray:
    # round half away from zero; values are clamped non-negative first
    return np.floor(np.clip(plane, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def tensor_to_frame(t: Tensor) -> Frame:
    """Clamp to [0,1], quantize (round half away from zero), box-downsample chroma."""
    if t.ndim != 4 or t.shape[0] != 1 or t.shape[1] != 3:
        raise InvalidShape(f"tensor_to_frame expects [1,3,H,W], got {t.shape}")
    arr = np.asarray(t.data, dtype=np.float64)
    y = _quantize(arr[0, 0])
    u = _quantize(_downsample_chroma(np.clip(arr[0, 1], 0.0, 1.0)))
    v = _quantize(_downsample_chroma(np.clip(arr[0, 2], 0.0, 1.0)))
    return Frame(y, u, v)


def seq_to_tensors(seq: VideoSeq) -> List[Tensor]:
    return [frame_to_tensor(f) for f in seq.frames]


def tensors_to_seq(tensors: List[Tensor], fps_num: int = 30, fps_den: int = 1) -> VideoSeq:
    return VideoSeq([tensor_to_frame(t) for t in tensors], fps_num, fps_den)
