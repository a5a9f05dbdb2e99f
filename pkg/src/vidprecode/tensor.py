"""Minimal dense tensor arithmetic with reverse-mode automatic differentiation.

Tensors wrap contiguous numpy arrays (float32 or float64, selected by a global
precision switch) and are immutable after construction. Differentiable ops
record onto the innermost active :class:`Tape`; ``backward`` replays the tape
in exact reverse execution order and accumulates gradients on every
``requires_grad`` tensor (optionally restricted to a ``wrt`` set).

Broadcasting is deliberately narrow: scalar operands and per-channel bias/scale
only. Every op raises :class:`~vidprecode.errors.NumericError` if its result
contains NaN or Inf.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from .errors import InvalidArgument, InvalidShape, NumericError, TapeConsumed

_DEFAULT_DTYPE = np.dtype(np.float32)
_VALID_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


def set_default_dtype(dtype: Union[str, np.dtype]) -> None:
    """Set the global precision for newly created tensors ('float32' or 'float64')."""
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt not in _VALID_DTYPES:
        raise InvalidArgument(f"unsupported dtype {dtype!r}; use float32 or float64")
    _DEFAULT_DTYPE = dt


def default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def precision(dtype: Union[str, np.dtype]):
    """Temporarily switch the global default dtype (gradient tests run in float64)."""
    global _DEFAULT_DTYPE
    prev = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _DEFAULT_DTYPE = prev


class Tensor:
    """Immutable dense array, optionally participating in gradient recording.

    ``data`` is a read-only contiguous numpy array; ``grad`` is populated by
    ``backward`` for tensors with ``requires_grad=True``.
    """

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str = ""):
        arr = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        if arr.dtype not in _VALID_DTYPES:
            arr = arr.astype(_DEFAULT_DTYPE)
        arr = np.ascontiguousarray(arr)
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor created with non-finite values")
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise InvalidShape(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        """Copy of this tensor cut loose from any tape and gradient flow."""
        return Tensor(self.data.copy(), requires_grad=False, dtype=self.dtype)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=False, dtype=np.dtype(dtype))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # Arithmetic sugar (scalar or same-shape only).
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor_like(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)


class _Node:
    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op: str, inputs, output: Tensor, backward_fn):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of executed ops; single-use, replayed in reverse by ``backward``."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False
        self._output_ids: set[int] = set()

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _TAPE_STACK.pop()

    def record(self, op: str, inputs, output: Tensor, backward_fn) -> None:
        self.nodes.append(_Node(op, inputs, output, backward_fn))
        self._output_ids.add(id(output))

    def op_names(self) -> list[str]:
        return [n.op for n in self.nodes]


_TAPE_STACK: list[Tape] = []


def _active_tape() -> Optional[Tape]:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def backward(loss: Tensor, tape: Tape, wrt: Optional[Iterable[Tensor]] = None) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for requires_grad tensors on ``tape``.

    ``wrt`` restricts which tensors receive gradients (used to freeze one model
    while training another). The tape is consumed; calling again raises.
    """
    if loss.data.size != 1:
        raise InvalidShape(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape.consumed:
        raise TapeConsumed("tape already replayed; build a fresh tape")
    if id(loss) not in tape._output_ids:
        raise InvalidArgument("loss was not produced on this tape")
    tape.consumed = True

    wrt_ids = None if wrt is None else {id(t) for t in wrt}
    flowing: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        gout = flowing.pop(id(node.output), None)
        if gout is None:
            continue
        gins = node.backward_fn(gout)
        for t, g in zip(node.inputs, gins):
            if g is None or not t.requires_grad:
                continue
            acc = flowing.get(id(t))
            flowing[id(t)] = g if acc is None else acc + g
            if id(t) not in tape._output_ids and (wrt_ids is None or id(t) in wrt_ids):
                if t.grad is None:
                    t.grad = np.zeros_like(t.data)
                t.grad = t.grad + flowing[id(t)]
                flowing.pop(id(t))


def _as_tensor_like(value, ref: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=ref.dtype), dtype=ref.dtype)


def _emit(op: str, inputs: Sequence[Tensor], out_data: np.ndarray, backward_fn) -> Tensor:
    if not np.all(np.isfinite(out_data)):
        raise NumericError(f"non-finite values produced by op '{op}'")
    out = Tensor(out_data, requires_grad=any(t.requires_grad for t in inputs))
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        tape.record(op, tuple(inputs), out, backward_fn)
    return out


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise InvalidShape(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# Elementwise ops


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = a.dtype.type(b)
        return _emit("add_scalar", [a], a.data + c, lambda g: (g,))
    _check_same_shape("add", a, b)
    return _emit("add", [a, b], a.data + b.data, lambda g: (g, g))


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = a.dtype.type(b)
        return _emit("sub_scalar", [a], a.data - c, lambda g: (g,))
    _check_same_shape("sub", a, b)
    return _emit("sub", [a, b], a.data - b.data, lambda g: (g, -g))


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = a.dtype.type(b)
        return _emit("mul_scalar", [a], a.data * c, lambda g: (g * c,))
    _check_same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _emit("mul", [a, b], ad * bd, lambda g: (g * bd, g * ad))


def neg(a: Tensor) -> Tensor:
    return _emit("neg", [a], -a.data, lambda g: (-g,))


def add_channel_bias(x: Tensor, b: Tensor) -> Tensor:
    """x[N,C,...] + b[C] broadcast over all non-channel axes."""
    if b.ndim != 1 or x.ndim < 2 or x.shape[1] != b.shape[0]:
        raise InvalidShape(f"add_channel_bias: x {x.shape} vs bias {b.shape}")
    bshape = (1, b.shape[0]) + (1,) * (x.ndim - 2)
    axes = (0,) + tuple(range(2, x.ndim))
    return _emit(
        "add_channel_bias",
        [x, b],
        x.data + b.data.reshape(bshape),
        lambda g: (g, g.sum(axis=axes)),
    )


def mul_channel(x: Tensor, s: Tensor) -> Tensor:
    """x[N,C,...] * s[C] broadcast over all non-channel axes."""
    if s.ndim != 1 or x.ndim < 2 or x.shape[1] != s.shape[0]:
        raise InvalidShape(f"mul_channel: x {x.shape} vs scale {s.shape}")
    sshape = (1, s.shape[0]) + (1,) * (x.ndim - 2)
    axes = (0,) + tuple(range(2, x.ndim))
    xd = x.data
    sb = s.data.reshape(sshape)
    return _emit(
        "mul_channel",
        [x, s],
        xd * sb,
        lambda g: (g * sb, (g * xd).sum(axis=axes)),
    )


def scale_by_scalar(x: Tensor, s: Tensor) -> Tensor:
    """x * s where s is a single-element learned tensor."""
    if s.size != 1:
        raise InvalidShape(f"scale_by_scalar needs a single-element scale, got {s.shape}")
    sval = s.data.reshape(())
    xd = x.data
    return _emit(
        "scale_by_scalar",
        [x, s],
        xd * sval,
        lambda g: (g * sval, np.array((g * xd).sum(), dtype=s.dtype).reshape(s.shape)),
    )


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _emit("exp", [a], out, lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _emit("log", [a], np.log(ad), lambda g: (g / ad,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _emit("tanh", [a], out, lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    ad = a.data
    out = np.empty_like(ad)
    pos = ad >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-ad[pos]))
    e = np.exp(ad[~pos])
    out[~pos] = e / (1.0 + e)
    return _emit("sigmoid", [a], out, lambda g: (g * out * (1.0 - out),))


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    ad = a.data
    mask = np.where(ad >= 0, 1.0, slope).astype(ad.dtype)
    return _emit("leaky_relu", [a], ad * mask, lambda g: (g * mask,))


def clamp_min(a: Tensor, floor: float) -> Tensor:
    """max(a, floor); zero subgradient below the floor."""
    ad = a.data
    mask = (ad > floor).astype(ad.dtype)
    return _emit("clamp_min", [a], np.maximum(ad, floor), lambda g: (g * mask,))


def clamp01_ste(a: Tensor) -> Tensor:
    """Clamp to [0,1] with a straight-through gradient (bounded output head)."""
    return _emit("clamp01_ste", [a], np.clip(a.data, 0.0, 1.0), lambda g: (g,))


def softmax(a: Tensor, axis: int) -> Tensor:
    ad = a.data
    shifted = ad - ad.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((g - dot) * out,)

    return _emit("softmax", [a], out, bwd)


# ---------------------------------------------------------------------------
# Reductions


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    ashape = a.shape

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, ashape).copy(),)
        ax = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, ashape).copy(),)

    return _emit("sum", [a], a.data.sum(axis=axis, keepdims=keepdims), bwd)


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    ashape = a.shape
    if axis is None:
        count = a.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for d in ax:
            count *= ashape[d]

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g / count, ashape).copy(),)
        ax = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g / count, ashape).copy(),)

    return _emit("mean", [a], a.data.mean(axis=axis, keepdims=keepdims), bwd)


# ---------------------------------------------------------------------------
# Shape ops


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _emit("reshape", [a], a.data.reshape(shape), lambda g: (g.reshape(old),))


def transpose(a: Tensor, perm) -> Tensor:
    perm = tuple(perm)
    inv = tuple(np.argsort(perm))
    return _emit("transpose", [a], np.ascontiguousarray(a.data.transpose(perm)), lambda g: (g.transpose(inv),))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise InvalidArgument("concat of zero tensors")
    sizes = [t.shape[axis] for t in tensors]
    offs = np.cumsum([0] + sizes)

    def bwd(g):
        return tuple(
            np.ascontiguousarray(np.take(g, range(offs[i], offs[i + 1]), axis=axis))
            for i in range(len(sizes))
        )

    return _emit("concat", list(tensors), np.concatenate([t.data for t in tensors], axis=axis), bwd)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    ashape = a.shape

    def bwd(g):
        full = np.zeros(ashape, dtype=g.dtype)
        full[idx] = g
        return (full,)

    return _emit("narrow", [a], np.ascontiguousarray(a.data[idx]), bwd)


def roll2d(a: Tensor, shift_y: int, shift_x: int) -> Tensor:
    """Cyclic shift over the last two axes."""
    out = np.roll(a.data, (shift_y, shift_x), axis=(-2, -1))
    return _emit("roll2d", [a], out, lambda g: (np.roll(g, (-shift_y, -shift_x), axis=(-2, -1)),))


def pad2d(a: Tensor, top: int, bottom: int, left: int, right: int, mode: str = "zero") -> Tensor:
    """Pad the last two axes; mode 'zero' or 'edge' (replicate)."""
    if min(top, bottom, left, right) < 0:
        raise InvalidArgument("negative padding")
    spec = [(0, 0)] * (a.ndim - 2) + [(top, bottom), (left, right)]
    H, W = a.shape[-2], a.shape[-1]
    if mode == "zero":
        out = np.pad(a.data, spec)

        def bwd(g):
            return (np.ascontiguousarray(g[..., top:top + H, left:left + W]),)

    elif mode == "edge":
        out = np.pad(a.data, spec, mode="edge")
        src_y = np.clip(np.arange(-top, H + bottom), 0, H - 1)
        src_x = np.clip(np.arange(-left, W + right), 0, W - 1)
        flat_idx = (src_y[:, None] * W + src_x[None, :]).ravel()

        def bwd(g):
            lead = g.shape[:-2]
            gflat = g.reshape(lead + (-1,))
            acc = np.zeros(lead + (H * W,), dtype=g.dtype)
            np.add.at(acc, (..., flat_idx), gflat)
            return (acc.reshape(lead + (H, W)),)

    else:
        raise InvalidArgument(f"unknown pad mode {mode!r}")
    return _emit(f"pad2d_{mode}", [a], out, bwd)


def take_rows(table: Tensor, indices: np.ndarray) -> Tensor:
    """Gather rows of a 2-D table; backward scatter-adds into the table."""
    if table.ndim != 2:
        raise InvalidShape("take_rows expects a 2-D table")
    idx = np.asarray(indices, dtype=np.int64)
    tshape = table.shape

    def bwd(g):
        acc = np.zeros(tshape, dtype=g.dtype)
        np.add.at(acc, idx.ravel(), g.reshape(-1, tshape[1]))
        return (acc,)

    return _emit("take_rows", [table], table.data[idx.ravel()].reshape(idx.shape + (tshape[1],)), bwd)


def add_const(a: Tensor, const: np.ndarray) -> Tensor:
    """Add a non-differentiable constant array (e.g. an attention mask).

    The constant may broadcast into ``a``'s shape but must not enlarge it.
    """
    c = np.asarray(const, dtype=a.dtype)
    out = a.data + c
    if out.shape != a.shape:
        raise InvalidShape(f"add_const: constant {c.shape} enlarges tensor {a.shape}")
    return _emit("add_const", [a], out, lambda g: (g,))


# ---------------------------------------------------------------------------
# Linear algebra


def _unbroadcast_batch(g: np.ndarray, target_shape) -> np.ndarray:
    """Sum gradient over batch dims that were broadcast in matmul."""
    if g.shape == tuple(target_shape):
        return g
    extra = g.ndim - len(target_shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ts) in enumerate(zip(g.shape, target_shape)) if gs != ts)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(target_shape)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise InvalidShape("matmul requires >=2-D operands")
    if a.shape[-1] != b.shape[-2]:
        raise InvalidShape(f"matmul: inner dims {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    out = ad @ bd
    ashape, bshape = a.shape, b.shape

    def bwd(g):
        ga = _unbroadcast_batch(g @ np.swapaxes(bd, -1, -2), ashape)
        gb = _unbroadcast_batch(np.swapaxes(ad, -1, -2) @ g, bshape)
        return (ga, gb)

    return _emit("matmul", [a, b], out, bwd)


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Fully-connected layer: x[..., in] @ w[in, out] + b[out]."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise InvalidShape(f"linear: x {x.shape} vs w {w.shape}")
    xd, wd = x.data, w.data
    out = xd @ wd
    if b is not None:
        if b.shape != (w.shape[1],):
            raise InvalidShape(f"linear: bias {b.shape} vs out features {w.shape[1]}")
        out = out + b.data
    xshape = x.shape

    def bwd(g):
        ga = g @ wd.T
        gw = xd.reshape(-1, xshape[-1]).T @ g.reshape(-1, wd.shape[1])
        gb = None if b is None else g.reshape(-1, wd.shape[1]).sum(axis=0)
        return (ga, gw, gb) if b is not None else (ga, gw)

    inputs = [x, w] if b is None else [x, w, b]
    return _emit("linear", inputs, out, bwd)


# ---------------------------------------------------------------------------
# Convolution


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    n, c = xp.shape[0], xp.shape[1]
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :out_h, :out_w]
    # [N, C, H', W', kh, kw] -> [N, H'*W', C*kh*kw]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n, out_h * out_w, c * kh * kw)


def _col2im(gcols: np.ndarray, xp_shape, kh: int, kw: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    n, c = xp_shape[0], xp_shape[1]
    gx = np.zeros(xp_shape, dtype=gcols.dtype)
    gr = gcols.reshape(n, out_h, out_w, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
    for i in range(kh):
        for j in range(kw):
            gx[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += gr[:, :, :, :, i, j]
    return gx


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D convolution (cross-correlation) over [N,C,H,W] with [O,C,kh,kw] weights."""
    if x.ndim != 4 or w.ndim != 4:
        raise InvalidShape(f"conv2d: x {x.shape}, w {w.shape}")
    n, c, h, wdt = x.shape
    o, cw, kh, kw = w.shape
    if cw != c:
        raise InvalidShape(f"conv2d: input channels {c} vs weight channels {cw}")
    if stride < 1:
        raise InvalidArgument("conv2d: stride must be >= 1")
    if kh > h + 2 * pad or kw > wdt + 2 * pad:
        raise InvalidShape(f"conv2d: kernel {kh}x{kw} exceeds padded input {h + 2 * pad}x{wdt + 2 * pad}")
    if b is not None and b.shape != (o,):
        raise InvalidShape(f"conv2d: bias {b.shape} vs out channels {o}")
    if not np.all(np.isfinite(x.data)):
        raise NumericError("conv2d: non-finite input")

    out_h = (h + 2 * pad - kh) // stride + 1
    out_w = (wdt + 2 * pad - kw) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = _im2col(xp, kh, kw, stride, out_h, out_w)
    w2d = w.data.reshape(o, -1)
    out = cols @ w2d.T
    if b is not None:
        out = out + b.data
    out = np.ascontiguousarray(out.transpose(0, 2, 1)).reshape(n, o, out_h, out_w)
    xp_shape = xp.shape

    def bwd(g):
        g2 = g.reshape(n, o, out_h * out_w).transpose(0, 2, 1)  # [N, L, O]
        gw = np.einsum("nlo,nlk->ok", g2, cols).reshape(w.shape)
        gcols = g2 @ w2d
        gxp = _col2im(gcols, xp_shape, kh, kw, stride, out_h, out_w)
        gx = gxp[:, :, pad:pad + h, pad:pad + wdt] if pad else gxp
        gx = np.ascontiguousarray(gx)
        if b is not None:
            return (gx, gw, g2.sum(axis=(0, 1)))
        return (gx, gw)

    inputs = [x, w] if b is None else [x, w, b]
    return _emit("conv2d", inputs, out, bwd)


# ---------------------------------------------------------------------------
# Channel-space resizing


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """[N,C,H*r,W*r] -> [N,C*r*r,H,W] (space to depth)."""
    n, c, h, w = x.shape
    if h % r or w % r:
        raise InvalidShape(f"pixel_unshuffle: {h}x{w} not divisible by {r}")
    t = reshape(x, (n, c, h // r, r, w // r, r))
    t = transpose(t, (0, 1, 3, 5, 2, 4))
    return reshape(t, (n, c * r * r, h // r, w // r))


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """[N,C*r*r,H,W] -> [N,C,H*r,W*r] (depth to space); inverse of pixel_unshuffle."""
    n, c, h, w = x.shape
    if c % (r * r):
        raise InvalidShape(f"pixel_shuffle: {c} channels not divisible by {r * r}")
    t = reshape(x, (n, c // (r * r), r, r, h, w))
    t = transpose(t, (0, 1, 4, 2, 5, 3))
    return reshape(t, (n, c // (r * r), h * r, w * r))
