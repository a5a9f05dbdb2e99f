"""Flat binary checkpoint container: magic header, version byte, then
(name, dtype, shape, raw little-endian values) records. Round-trips bit-exactly.
"""

from __future__ import annotations

import struct
from typing import Mapping

import numpy as np

from .errors import CorruptStream
from .tensor import Tensor

MAGIC = b"VPCKPT\x00"
VERSION = 1

_DTYPE_CODES = {np.dtype("<f4"): 4, np.dtype("<f8"): 8}
_CODE_DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


def save_params(params: Mapping[str, Tensor], path: str) -> None:
    """Write named tensors in deterministic (sorted) order."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B", VERSION))
        fh.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            data = params[name].data
            le = data.astype(data.dtype.newbyteorder("<"), copy=False)
            enc = name.encode("utf-8")
            fh.write(struct.pack("<H", len(enc)))
            fh.write(enc)
            fh.write(struct.pack("<B", _DTYPE_CODES[np.dtype(le.dtype.str)]))
            fh.write(struct.pack("<B", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(le.tobytes())


def load_params(path: str, requires_grad: bool = True) -> dict[str, Tensor]:
    """Read a checkpoint; dtypes and values are restored bit-exactly."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise CorruptStream(f"{path}: not a checkpoint (bad magic)")
    off = len(MAGIC)
    version = blob[off]
    off += 1
    if version != VERSION:
        raise CorruptStream(f"{path}: unsupported checkpoint version {version}")
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    out: dict[str, Tensor] = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off:off + nlen].decode("utf-8")
            off += nlen
            code, ndim = struct.unpack_from("<BB", blob, off)
            off += 2
            shape = struct.unpack_from(f"<{ndim}I", blob, off)
            off += 4 * ndim
            dtype = _CODE_DTYPES[code]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if ndim else dtype.itemsize
            raw = blob[off:off + nbytes]
            if len(raw) != nbytes:
                raise CorruptStream(f"{path}: truncated record {name!r}")
            off += nbytes
            arr = np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
            out[name] = Tensor(arr, requires_grad=requires_grad, dtype=arr.dtype)
    except (struct.error, KeyError) as exc:
        raise CorruptStream(f"{path}: malformed checkpoint ({exc})") from exc
    return out
