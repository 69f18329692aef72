"""Dense tensors with an eager forward pass and a recorded reverse-mode tape.

Every differentiable operation is registered under a string kind in ``OPS``.
Calling :meth:`Tape.record` evaluates the forward immediately and appends a
node; :meth:`Tape.backward` sweeps the nodes once in reverse order and writes
``d loss / d value`` into every watched :class:`Parameter`.

Image-shaped tensors use the ``(N, C, H, W)`` layout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "OPS",
    "Parameter",
    "ShapeError",
    "Tape",
    "TapeError",
    "Tensor",
    "adam_step",
    "bilinear_matrix",
    "box_filter",
    "broadcast_channels",
    "concat",
    "conv2d",
    "crop",
    "downsample",
    "grad_x",
    "grad_y",
    "maxpool2",
    "resize_bilinear",
    "slice_channels",
    "upsample",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""


class TapeError(RuntimeError):
    """Raised on misuse of a tape (non-scalar loss, double backward, ...)."""


# ---------------------------------------------------------------------------
# helpers


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(kind: str, *shapes: tuple[int, ...]) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(*shapes)
    except ValueError:
        raise ShapeError(
            f"{kind}: incompatible shapes {' vs '.join(str(s) for s in shapes)}"
        ) from None


def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic ``(n_out, n_in)`` interpolation matrix, half-pixel centres."""
    if n_in < 1 or n_out < 1:
        raise ValueError(f"extents must be >= 1, got {n_in} -> {n_out}")
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    for i in range(n_out):
        src = (i + 0.5) * scale - 0.5
        src = min(max(src, 0.0), n_in - 1.0)
        lo = int(np.floor(src))
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        mat[i, lo] += 1.0 - frac
        mat[i, hi] += frac
    return mat


def _window_sum(x: np.ndarray, radius: int, axis: int) -> np.ndarray:
    """Sum over a ``2*radius+1`` window along ``axis`` with zero fill outside."""
    n = x.shape[axis]
    pad = [(0, 0)] * x.ndim
    pad[axis] = (1, 0)
    csum = np.pad(np.cumsum(x, axis=axis, dtype=np.float64), pad)
    idx = np.arange(n)
    hi = np.minimum(idx + radius + 1, n)
    lo = np.maximum(idx - radius, 0)
    return np.take(csum, hi, axis=axis) - np.take(csum, lo, axis=axis)


def _box_counts(h: int, w: int, radius: int) -> np.ndarray:
    rows = np.minimum(np.arange(h) + radius + 1, h) - np.maximum(np.arange(h) - radius, 0)
    cols = np.minimum(np.arange(w) + radius + 1, w) - np.maximum(np.arange(w) - radius, 0)
    return np.outer(rows, cols).astype(np.float64)


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    # (N, Ho, Wo, C, kh, kw) -> rows of patches
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * kh * kw)
    return cols, ho, wo


# ---------------------------------------------------------------------------
# operation registry


@dataclass(frozen=True)
class OpDef:
    kind: str
    arity: int | None
    forward: Callable[..., tuple[np.ndarray, Any]]
    backward: Callable[..., tuple[np.ndarray | None, ...]]


OPS: dict[str, OpDef] = {}


def _register(kind: str, arity: int | None):
    def deco(cls):
        OPS[kind] = OpDef(kind, arity, cls.forward, cls.backward)
        return cls

    return deco


@_register("add", 2)
class _Add:
    @staticmethod
    def forward(a, b):
        _broadcast_shape("add", a.shape, b.shape)
        return a + b, None

    @staticmethod
    def backward(g, ctx, a, b):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


@_register("sub", 2)
class _Sub:
    @staticmethod
    def forward(a, b):
        _broadcast_shape("sub", a.shape, b.shape)
        return a - b, None

    @staticmethod
    def backward(g, ctx, a, b):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


@_register("mul", 2)
class _Mul:
    @staticmethod
    def forward(a, b):
        _broadcast_shape("mul", a.shape, b.shape)
        return a * b, None

    @staticmethod
    def backward(g, ctx, a, b):
        return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


@_register("div", 2)
class _Div:
    @staticmethod
    def forward(a, b):
        _broadcast_shape("div", a.shape, b.shape)
        return a / b, None

    @staticmethod
    def backward(g, ctx, a, b):
        ga = g / b
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * a / b, b.shape)


@_register("abs", 1)
class _Abs:
    @staticmethod
    def forward(a):
        return np.abs(a), None

    @staticmethod
    def backward(g, ctx, a):
        # subgradient 0 at the kink
        return (g * np.sign(a),)


@_register("tanh", 1)
class _Tanh:
    @staticmethod
    def forward(a):
        out = np.tanh(a)
        return out, out

    @staticmethod
    def backward(g, out, a):
        return (g * (1.0 - out * out),)


@_register("exp", 1)
class _Exp:
    @staticmethod
    def forward(a):
        out = np.exp(a)
        return out, out

    @staticmethod
    def backward(g, out, a):
        return (g * out,)


@_register("log", 1)
class _Log:
    @staticmethod
    def forward(a):
        if np.any(a <= 0):
            raise ValueError("log: non-positive input")
        return np.log(a), None

    @staticmethod
    def backward(g, ctx, a):
        return (g / a,)


@_register("sqrt", 1)
class _Sqrt:
    @staticmethod
    def forward(a):
        if np.any(a < 0):
            raise ValueError("sqrt: negative input")
        out = np.sqrt(a)
        return out, out

    @staticmethod
    def backward(g, out, a):
        # 0 at the origin, same convention as abs
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, g * 0.5 / safe, 0.0).astype(g.dtype),)


@_register("square", 1)
class _Square:
    @staticmethod
    def forward(a):
        return a * a, None

    @staticmethod
    def backward(g, ctx, a):
        return (2.0 * g * a,)


@_register("sigmoid", 1)
class _Sigmoid:
    @staticmethod
    def forward(a):
        out = np.empty_like(a)
        pos = a >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
        ea = np.exp(a[~pos])
        out[~pos] = ea / (1.0 + ea)
        return out, out

    @staticmethod
    def backward(g, out, a):
        return (g * out * (1.0 - out),)


@_register("relu", 1)
class _Relu:
    @staticmethod
    def forward(a):
        return np.maximum(a, 0), None

    @staticmethod
    def backward(g, ctx, a):
        return (g * (a > 0),)


@_register("leaky_relu", 1)
class _LeakyRelu:
    @staticmethod
    def forward(a, slope=0.2):
        return np.where(a > 0, a, a * slope).astype(a.dtype), None

    @staticmethod
    def backward(g, ctx, a, slope=0.2):
        return (np.where(a > 0, g, g * slope).astype(g.dtype),)


@_register("clamp", 1)
class _Clamp:
    @staticmethod
    def forward(a, lo=None, hi=None):
        return np.clip(a, lo, hi), None

    @staticmethod
    def backward(g, ctx, a, lo=None, hi=None):
        mask = np.ones(a.shape, dtype=bool)
        if lo is not None:
            mask &= a > lo
        if hi is not None:
            mask &= a < hi
        return (g * mask,)


@_register("sum", 1)
class _Sum:
    @staticmethod
    def forward(a, axis=None, keepdims=False):
        return np.asarray(np.sum(a, axis=axis, keepdims=keepdims, dtype=np.float64), dtype=a.dtype), None

    @staticmethod
    def backward(g, ctx, a, axis=None, keepdims=False):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).astype(a.dtype),)


@_register("mean", 1)
class _Mean:
    @staticmethod
    def forward(a, axis=None, keepdims=False):
        return np.asarray(np.mean(a, axis=axis, keepdims=keepdims, dtype=np.float64), dtype=a.dtype), None

    @staticmethod
    def backward(g, ctx, a, axis=None, keepdims=False):
        count = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return ((np.broadcast_to(g, a.shape) / count).astype(a.dtype),)


@_register("conv2d", None)
class _Conv2d:
    """Cross-correlation, zero padding ``(k - 1) // 2``, stride 1 or 2."""

    @staticmethod
    def forward(x, w, b=None, stride=1):
        if stride not in (1, 2):
            raise ValueError(f"conv2d: stride must be 1 or 2, got {stride}")
        if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
            raise ShapeError(f"conv2d: input {x.shape} incompatible with weight {w.shape}")
        if b is not None and b.shape != (w.shape[0],):
            raise ShapeError(f"conv2d: bias {b.shape} does not match {w.shape[0]} outputs")
        cout, _, kh, kw = w.shape
        pad = (kh - 1) // 2
        cols, ho, wo = _im2col(x, kh, kw, stride, pad)
        out = cols @ w.reshape(cout, -1).T
        if b is not None:
            out += b
        n = x.shape[0]
        out = out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
        return np.ascontiguousarray(out), (cols, ho, wo)

    @staticmethod
    def backward(g, ctx, x, w, b=None, stride=1):
        cols, ho, wo = ctx
        n, c, h, wd = x.shape
        cout, _, kh, kw = w.shape
        pad = (kh - 1) // 2
        g2 = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, cout)
        gw = (g2.T @ cols).reshape(w.shape).astype(w.dtype)
        gb = g2.sum(axis=0).astype(w.dtype) if b is not None else None
        dcols = (g2 @ w.reshape(cout, -1)).reshape(n, ho, wo, c, kh, kw)
        dxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[
                    :, :, :, :, i, j
                ].transpose(0, 3, 1, 2)
        gx = dxp[:, :, pad : pad + h, pad : pad + wd]
        grads = (gx, gw) if b is None else (gx, gw, gb)
        return grads


@_register("resize_bilinear", 1)
class _ResizeBilinear:
    """Separable bilinear resampling of the last two axes."""

    @staticmethod
    def forward(a, size):
        mh = bilinear_matrix(a.shape[-2], size[0]).astype(a.dtype)
        mw = bilinear_matrix(a.shape[-1], size[1]).astype(a.dtype)
        return np.ascontiguousarray(mh @ a @ mw.T), (mh, mw)

    @staticmethod
    def backward(g, ctx, a, size):
        mh, mw = ctx
        return (mh.T @ g @ mw,)


@_register("downsample_bilinear", 1)
class _Downsample:
    """Bilinear downsample by 2; on even extents this is 2x2 averaging."""

    @staticmethod
    def forward(a):
        size = (max(1, a.shape[-2] // 2), max(1, a.shape[-1] // 2))
        return _ResizeBilinear.forward(a, size)

    @staticmethod
    def backward(g, ctx, a):
        return _ResizeBilinear.backward(g, ctx, a, None)


@_register("upsample_nearest", 1)
class _Upsample:
    @staticmethod
    def forward(a):
        return a.repeat(2, axis=-2).repeat(2, axis=-1), None

    @staticmethod
    def backward(g, ctx, a):
        h, w = a.shape[-2:]
        g = g.reshape(*g.shape[:-2], h, 2, w, 2)
        return (g.sum(axis=(-3, -1)),)


@_register("maxpool2", 1)
class _MaxPool2:
    @staticmethod
    def forward(a):
        n, c, h, w = a.shape
        h2, w2 = h // 2, w // 2
        blocks = a[:, :, : h2 * 2, : w2 * 2].reshape(n, c, h2, 2, w2, 2)
        out = blocks.max(axis=(3, 5))
        return out, None

    @staticmethod
    def backward(g, out_unused, a):
        n, c, h, w = a.shape
        h2, w2 = h // 2, w // 2
        blocks = a[:, :, : h2 * 2, : w2 * 2].reshape(n, c, h2, 2, w2, 2)
        flat = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
        arg = flat.argmax(axis=-1)
        onehot = np.zeros_like(flat)
        np.put_along_axis(onehot, arg[..., None], 1.0, axis=-1)
        onehot *= g[..., None]
        gx = np.zeros_like(a)
        gx[:, :, : h2 * 2, : w2 * 2] = (
            onehot.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2 * 2, w2 * 2)
        )
        return (gx,)


@_register("concat", None)
class _Concat:
    """Concatenation along the channel axis (axis 1)."""

    @staticmethod
    def forward(*arrays):
        ref = arrays[0].shape
        for arr in arrays[1:]:
            if arr.ndim != len(ref) or arr.shape[:1] + arr.shape[2:] != ref[:1] + ref[2:]:
                raise ShapeError(f"concat: {arr.shape} incompatible with {ref}")
        return np.concatenate(arrays, axis=1), None

    @staticmethod
    def backward(g, ctx, *arrays):
        bounds = np.cumsum([a.shape[1] for a in arrays])[:-1]
        return tuple(np.split(g, bounds, axis=1))


@_register("broadcast_channels", 1)
class _BroadcastChannels:
    @staticmethod
    def forward(a, channels=3):
        if a.ndim != 4 or a.shape[1] != 1:
            raise ShapeError(f"broadcast_channels: expected (N, 1, H, W), got {a.shape}")
        return np.repeat(a, channels, axis=1), None

    @staticmethod
    def backward(g, ctx, a, channels=3):
        return (g.sum(axis=1, keepdims=True),)


@_register("slice_channels", 1)
class _SliceChannels:
    @staticmethod
    def forward(a, start, stop):
        if not 0 <= start < stop <= a.shape[1]:
            raise ShapeError(f"slice_channels: [{start}:{stop}] out of range for {a.shape}")
        return a[:, start:stop].copy(), None

    @staticmethod
    def backward(g, ctx, a, start, stop):
        out = np.zeros_like(a)
        out[:, start:stop] = g
        return (out,)


@_register("crop", 1)
class _Crop:
    """Spatial crop of the last two axes to ``[top:top+h, left:left+w]``."""

    @staticmethod
    def forward(a, top, left, height, width):
        if top + height > a.shape[-2] or left + width > a.shape[-1]:
            raise ShapeError(f"crop: window exceeds {a.shape}")
        return a[..., top : top + height, left : left + width].copy(), None

    @staticmethod
    def backward(g, ctx, a, top, left, height, width):
        out = np.zeros_like(a)
        out[..., top : top + height, left : left + width] = g
        return (out,)


@_register("grad_x", 1)
class _GradX:
    """Forward difference along the last axis, zero in the last column."""

    @staticmethod
    def forward(a):
        out = np.zeros_like(a)
        out[..., :-1] = a[..., 1:] - a[..., :-1]
        return out, None

    @staticmethod
    def backward(g, ctx, a):
        out = np.zeros_like(g)
        out[..., 1:] += g[..., :-1]
        out[..., :-1] -= g[..., :-1]
        return (out,)


@_register("grad_y", 1)
class _GradY:
    """Forward difference along the second-to-last axis, zero in the last row."""

    @staticmethod
    def forward(a):
        out = np.zeros_like(a)
        out[..., :-1, :] = a[..., 1:, :] - a[..., :-1, :]
        return out, None

    @staticmethod
    def backward(g, ctx, a):
        out = np.zeros_like(g)
        out[..., 1:, :] += g[..., :-1, :]
        out[..., :-1, :] -= g[..., :-1, :]
        return (out,)


@_register("box_filter", 1)
class _BoxFilter:
    """Windowed mean over the last two axes, normalised by in-bounds count."""

    @staticmethod
    def forward(a, radius):
        if radius < 1:
            raise ValueError(f"box_filter: radius must be >= 1, got {radius}")
        counts = _box_counts(a.shape[-2], a.shape[-1], radius)
        s = _window_sum(_window_sum(a, radius, a.ndim - 1), radius, a.ndim - 2)
        return (s / counts).astype(a.dtype), counts

    @staticmethod
    def backward(g, counts, a, radius):
        scaled = g / counts
        s = _window_sum(_window_sum(scaled, radius, g.ndim - 1), radius, g.ndim - 2)
        return (s.astype(g.dtype),)


# ---------------------------------------------------------------------------
# tensors, parameters and the tape


class Parameter:
    """Trainable array with its gradient and Adam moment state."""

    def __init__(self, value, name: str = ""):
        self.name = name
        self.value = np.array(value, dtype=np.float32)
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)
        self.step = 0

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.value.shape})"


@dataclass
class _Node:
    kind: str
    inputs: tuple[int, ...]
    value: np.ndarray
    ctx: Any = None
    attrs: dict = field(default_factory=dict)
    requires_grad: bool = False
    param: Parameter | None = None


class Tensor:
    """A value living on a :class:`Tape`. Arithmetic records new nodes."""

    __slots__ = ("tape", "node")
    __array_priority__ = 1000

    def __init__(self, tape: "Tape", node: int):
        self.tape = tape
        self.node = node

    @property
    def data(self) -> np.ndarray:
        return self.tape.nodes[self.node].value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def requires_grad(self) -> bool:
        return self.tape.nodes[self.node].requires_grad

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def _lift(self, other) -> "Tensor":
        return other if isinstance(other, Tensor) else self.tape.constant(other)

    def __add__(self, other):
        return self.tape.record("add", (self, self._lift(other)))

    def __radd__(self, other):
        return self.tape.record("add", (self._lift(other), self))

    def __sub__(self, other):
        return self.tape.record("sub", (self, self._lift(other)))

    def __rsub__(self, other):
        return self.tape.record("sub", (self._lift(other), self))

    def __mul__(self, other):
        return self.tape.record("mul", (self, self._lift(other)))

    def __rmul__(self, other):
        return self.tape.record("mul", (self._lift(other), self))

    def __truediv__(self, other):
        return self.tape.record("div", (self, self._lift(other)))

    def __rtruediv__(self, other):
        return self.tape.record("div", (self._lift(other), self))

    def __neg__(self):
        return self.tape.record("sub", (self.tape.constant(0.0), self))

    def __abs__(self):
        return self.tape.record("abs", (self,))

    def tanh(self):
        return self.tape.record("tanh", (self,))

    def exp(self):
        return self.tape.record("exp", (self,))

    def log(self):
        return self.tape.record("log", (self,))

    def sqrt(self):
        return self.tape.record("sqrt", (self,))

    def square(self):
        return self.tape.record("square", (self,))

    def sigmoid(self):
        return self.tape.record("sigmoid", (self,))

    def relu(self):
        return self.tape.record("relu", (self,))

    def leaky_relu(self, slope: float = 0.2):
        return self.tape.record("leaky_relu", (self,), slope=slope)

    def clamp(self, lo=None, hi=None):
        return self.tape.record("clamp", (self,), lo=lo, hi=hi)

    def sum(self, axis=None, keepdims: bool = False):
        return self.tape.record("sum", (self,), axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return self.tape.record("mean", (self,), axis=axis, keepdims=keepdims)

    def __repr__(self) -> str:
        return f"Tensor(node={self.node}, shape={self.shape})"


class Tape:
    """Ordered record of operations for one backward sweep.

    A tape is single-owner. ``dtype`` defaults to float32; gradient checks run
    on a float64 tape so that finite differences are not swamped by rounding.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.nodes: list[_Node] = []
        self.consumed = False

    def __len__(self) -> int:
        return len(self.nodes)

    def _append(self, node: _Node) -> Tensor:
        if self.consumed:
            raise TapeError("tape already consumed by backward()")
        self.nodes.append(node)
        return Tensor(self, len(self.nodes) - 1)

    def constant(self, value) -> Tensor:
        arr = np.asarray(value, dtype=self.dtype)
        return self._append(_Node("const", (), arr))

    def watch(self, param: Parameter) -> Tensor:
        """Leaf bound to ``param``; backward writes into ``param.grad``."""
        arr = param.value.astype(self.dtype, copy=False)
        return self._append(_Node("param", (), arr, requires_grad=True, param=param))

    def record(self, kind: str, inputs: Sequence[Tensor], **attrs) -> Tensor:
        try:
            op = OPS[kind]
        except KeyError:
            raise ValueError(f"unknown operation kind {kind!r}") from None
        if op.arity is not None and len(inputs) != op.arity:
            raise ValueError(f"{kind}: expected {op.arity} inputs, got {len(inputs)}")
        for t in inputs:
            if t.tape is not self:
                raise TapeError(f"{kind}: input belongs to a different tape")
        arrays = [self.nodes[t.node].value for t in inputs]
        out, ctx = op.forward(*arrays, **attrs)
        out = np.asarray(out, dtype=self.dtype)
        if not np.all(np.isfinite(out)):
            raise FloatingPointError(f"{kind}: non-finite output")
        requires_grad = any(self.nodes[t.node].requires_grad for t in inputs)
        return self._append(
            _Node(kind, tuple(t.node for t in inputs), out, ctx if requires_grad else None, attrs, requires_grad)
        )

    def backward(self, loss: Tensor) -> None:
        """Accumulate ``d loss / d value`` into every watched parameter."""
        if self.consumed:
            raise TapeError("tape already consumed by backward()")
        if loss.tape is not self:
            raise TapeError("loss belongs to a different tape")
        if loss.data.size != 1:
            raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        self.consumed = True
        grads: dict[int, np.ndarray] = {loss.node: np.ones_like(loss.data)}
        for idx in range(loss.node, -1, -1):
            g = grads.pop(idx, None)
            if g is None:
                continue
            node = self.nodes[idx]
            if node.param is not None:
                node.param.grad += g.astype(node.param.grad.dtype).reshape(node.param.grad.shape)
                continue
            if not node.inputs:
                continue
            arrays = [self.nodes[i].value for i in node.inputs]
            in_grads = OPS[node.kind].backward(g, node.ctx, *arrays, **node.attrs)
            for src, gi in zip(node.inputs, in_grads):
                if gi is None or not self.nodes[src].requires_grad:
                    continue
                gi = np.asarray(gi, dtype=self.dtype)
                if src in grads:
                    grads[src] = grads[src] + gi
                else:
                    grads[src] = gi
        for node in self.nodes:
            node.ctx = None


def adam_step(
    params: Iterable[Parameter],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Bias-corrected adaptive-moment update; zeroes gradients afterwards."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    for p in params:
        p.step += 1
        g = p.grad.astype(np.float64)
        p.m = (beta1 * p.m + (1.0 - beta1) * g).astype(np.float32)
        p.v = (beta2 * p.v + (1.0 - beta2) * g * g).astype(np.float32)
        m_hat = p.m.astype(np.float64) / (1.0 - beta1**p.step)
        v_hat = p.v.astype(np.float64) / (1.0 - beta2**p.step)
        p.value = (p.value - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(np.float32)
        p.zero_grad()


# ---------------------------------------------------------------------------
# functional front-end for the non-arithmetic kinds


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1) -> Tensor:
    inputs = (x, w) if b is None else (x, w, b)
    return x.tape.record("conv2d", inputs, stride=stride)


def concat(*tensors: Tensor) -> Tensor:
    return tensors[0].tape.record("concat", tensors)


def resize_bilinear(x: Tensor, height: int, width: int) -> Tensor:
    return x.tape.record("resize_bilinear", (x,), size=(height, width))


def downsample(x: Tensor) -> Tensor:
    return x.tape.record("downsample_bilinear", (x,))


def upsample(x: Tensor) -> Tensor:
    return x.tape.record("upsample_nearest", (x,))


def maxpool2(x: Tensor) -> Tensor:
    return x.tape.record("maxpool2", (x,))


def broadcast_channels(x: Tensor, channels: int = 3) -> Tensor:
    return x.tape.record("broadcast_channels", (x,), channels=channels)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    return x.tape.record("slice_channels", (x,), start=start, stop=stop)


def crop(x: Tensor, top: int, left: int, height: int, width: int) -> Tensor:
    return x.tape.record("crop", (x,), top=top, left=left, height=height, width=width)


def grad_x(x: Tensor) -> Tensor:
    return x.tape.record("grad_x", (x,))


def grad_y(x: Tensor) -> Tensor:
    return x.tape.record("grad_y", (x,))


def box_filter(x: Tensor, radius: int) -> Tensor:
    return x.tape.record("box_filter", (x,), radius=radius)
