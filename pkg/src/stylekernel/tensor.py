"""Dense tensors over numpy buffers with a reverse-mode tape.

Every public op returns a new :class:`Tensor`; when any input requires a
gradient (and grad mode is on) the result carries a :class:`TapeNode` holding
the backward rule. Broadcasting is limited to tensor-with-scalar; anything
else goes through the explicit :func:`expand`.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@dataclass(eq=False)
class TapeNode:
    op: str
    inputs: tuple
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node")
    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node: TapeNode | None = None

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise ValueError(f"expected a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return self.shape[0]

    # -- operators ----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return mul(reciprocal(self), other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    @property
    def T(self):
        return transpose(self)

    def backward(self) -> None:
        backward(self)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, op: str, inputs: tuple, backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(isinstance(t, Tensor) and t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = TapeNode(op, inputs, backward_fn)
    return out


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

def _topo_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for inp in t.node.inputs:
                if isinstance(inp, Tensor) and inp.requires_grad and id(inp) not in seen:
                    stack.append((inp, False))
    return order


def backward(root: Tensor) -> None:
    """Populate ``.grad`` on every requires-grad leaf reachable from ``root``.

    Gradients accumulate into existing ``.grad`` buffers; leaves reached only
    through zero-gradient paths end up with an all-zero buffer.
    """
    if root.size != 1:
        raise ValueError(f"backward() needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        raise ValueError("backward() root does not require grad")
    grads = {id(root): np.ones_like(root.data)}
    for t in reversed(_topo_order(root)):
        g = grads.pop(id(t), None)
        if t.node is None:
            if g is None:
                g = np.zeros_like(t.data)
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        if g is None:
            continue  # nothing flows through this node (e.g. only behind sign)
        in_grads = t.node.backward(g)
        for inp, ig in zip(t.node.inputs, in_grads):
            if not (isinstance(inp, Tensor) and inp.requires_grad) or ig is None:
                continue
            if ig.shape != inp.shape:
                raise RuntimeError(f"{t.node.op}: grad shape {ig.shape} != input shape {inp.shape}")
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + ig  # never in place: backward rules may share buffers
            else:
                grads[key] = ig


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def _pair(a, b, op: str) -> tuple[Tensor, Tensor]:
    """Coerce operands to tensors; plain numbers take the other side's dtype."""
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype if isinstance(b, Tensor) else DEFAULT_DTYPE))
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    if b.shape != a.shape and b.size != 1 and a.size != 1:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")
    return a, b


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape).astype(g.dtype)


def add(a, b) -> Tensor:
    a, b = _pair(a, b, "add")
    return _make(a.data + b.data, "add", (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b, "sub")
    return _make(a.data - b.data, "sub", (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b, "mul")
    return _make(a.data * b.data, "mul", (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = _pair(a, b, "div")
    out = a.data / b.data

    def bw(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))
    return _make(out, "div", (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, "neg", (a,), lambda g: (-g,))


def reciprocal(a: Tensor) -> Tensor:
    out = 1.0 / a.data
    return _make(out, "reciprocal", (a,), lambda g: (-g * out * out,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0).astype(a.dtype), "relu", (a,), lambda g: (g * mask,))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    mask = a.data > 0
    scale = np.where(mask, 1.0, slope).astype(a.dtype)
    return _make(a.data * scale, "leaky_relu", (a,), lambda g: (g * scale,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, "tanh", (a,), lambda g: (g * (1 - out * out),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, "exp", (a,), lambda g: (g * out,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _make(out, "sqrt", (a,), lambda g: (g / (2 * out),))


def square(a: Tensor) -> Tensor:
    return _make(a.data * a.data, "square", (a,), lambda g: (2 * g * a.data,))


def sign(a: Tensor) -> Tensor:
    """1 where the input is strictly positive, else 0. Gradient is zero."""
    out = (a.data > 0).astype(a.dtype)
    return _make(out, "sign", (a,), lambda g: (None,))


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; ties send the gradient to ``a``."""
    a, b = _pair(a, b, "maximum")
    pick_a = a.data >= b.data
    out = np.where(pick_a, a.data, b.data)
    return _make(out, "maximum", (a, b),
                 lambda g: (_unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)))


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(a: Tensor, axis=None) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes)
    keep = tuple(1 if i in axes else s for i, s in enumerate(a.shape))

    def bw(g):
        return (np.broadcast_to(g.reshape(keep), a.shape).copy(),)
    return _make(np.asarray(out, dtype=a.dtype), "sum", (a,), bw)


def mean(a: Tensor, axis=None) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes]))
    return mul(sum_(a, axes), 1.0 / count)


def min_(a: Tensor, axis: int) -> Tensor:
    """Minimum along one axis; the gradient goes to the first arg-min."""
    axis = axis % a.ndim
    idx = np.argmin(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis).squeeze(axis)

    def bw(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis)
        return (full,)
    return _make(out, "min", (a,), bw)


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)
    return _make(out, "reshape", (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(a.data.transpose(axes))
    return _make(out, "transpose", (a,), lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def expand(a: Tensor, shape) -> Tensor:
    """Explicit broadcast of ``a`` to ``shape`` (numpy rules); backward sums."""
    shape = tuple(shape)
    out = np.broadcast_to(a.data, shape).copy()
    lead = len(shape) - a.ndim
    axes = tuple(range(lead)) + tuple(
        lead + i for i, s in enumerate(a.shape) if s == 1 and shape[lead + i] != 1)

    def bw(g):
        return (g.sum(axis=axes).reshape(a.shape),)
    return _make(out, "expand", (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    axis = axis % tensors[0].ndim
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, bounds, axis=axis))
    return _make(out, "concat", tuple(tensors), bw)


def getitem(a: Tensor, index) -> Tensor:
    out = np.ascontiguousarray(a.data[index])

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)
    return _make(out, "getitem", (a,), bw)


def take(a: Tensor, indices, axis: int) -> Tensor:
    """Gather along ``axis``; duplicate indices accumulate on backward."""
    indices = np.asarray(indices)
    axis = axis % a.ndim
    out = np.take(a.data, indices, axis=axis)

    def bw(g):
        full = np.zeros_like(a.data)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        return (full,)
    return _make(out, "take", (a,), bw)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul inner extent mismatch: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def bw(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb
    return _make(out, "matmul", (a, b), bw)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of a 2-D tensor, stabilised by subtracting the row max."""
    if x.ndim != 2:
        raise ValueError(f"softmax_rows expects a 2-D tensor, got {x.shape}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)
    return _make(out, "softmax_rows", (x,), bw)


def normalize_rows(x: Tensor, eps: float = 1e-8) -> Tensor:
    """Divide each row by ``max(||row||, eps)``."""
    norm = np.sqrt((x.data * x.data).sum(axis=1, keepdims=True))
    clipped = norm <= eps
    denom = np.where(clipped, eps, norm)
    out = x.data / denom

    def bw(g):
        proj = (g * out).sum(axis=1, keepdims=True)
        gx = (g - np.where(clipped, 0, proj) * out) / denom
        return (gx,)
    return _make(out, "normalize_rows", (x,), bw)


# ---------------------------------------------------------------------------
# feature-map ops (H x W x C layout)
# ---------------------------------------------------------------------------

def _check_fmap(x: Tensor, op: str):
    if x.ndim != 3:
        raise ValueError(f"{op} expects an H x W x C feature map, got shape {x.shape}")


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of an H x W x C_in map with a C_out x C_in x kh x kw kernel."""
    _check_fmap(x, "conv2d")
    if w.ndim != 4:
        raise ValueError(f"conv2d weight must be C_out x C_in x kh x kw, got {w.shape}")
    H, W, cin = x.shape
    cout, wcin, kh, kw = w.shape
    if wcin != cin:
        raise ValueError(f"conv2d channel mismatch: input has {cin}, weight expects {wcin}")
    if b is not None and b.shape != (cout,):
        raise ValueError(f"conv2d bias must have shape ({cout},), got {b.shape}")
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    if Ho <= 0 or Wo <= 0:
        raise ValueError(f"conv2d output extent nonpositive for input {x.shape}, kernel {kh}x{kw}, "
                         f"stride {stride}, pad {pad}")
    xp = np.pad(x.data, ((pad, pad), (pad, pad), (0, 0))) if pad else x.data
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(0, 1))
    win = win[::stride, ::stride][:Ho, :Wo]  # Ho, Wo, cin, kh, kw
    cols = win.reshape(Ho * Wo, cin * kh * kw)
    wmat = w.data.reshape(cout, cin * kh * kw)
    out = cols @ wmat.T
    if b is not None:
        out += b.data
    out = out.reshape(Ho, Wo, cout)

    def bw(g):
        g2 = g.reshape(Ho * Wo, cout)
        gw = gb = gx = None
        if w.requires_grad:
            gw = (g2.T @ cols).reshape(cout, cin, kh, kw)
        if b is not None and b.requires_grad:
            gb = g2.sum(axis=0)
        if x.requires_grad:
            gcols = (g2 @ wmat).reshape(Ho, Wo, cin, kh, kw)
            gxp = np.zeros(xp.shape, dtype=x.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[i:i + stride * Ho:stride, j:j + stride * Wo:stride] += gcols[:, :, :, i, j]
            gx = gxp[pad:pad + H, pad:pad + W] if pad else gxp
            gx = np.ascontiguousarray(gx)
        return (gx, gw, gb) if b is not None else (gx, gw)
    inputs = (x, w, b) if b is not None else (x, w)
    return _make(out, "conv2d", inputs, bw)


def max_pool2x2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; ties route the gradient to the first max."""
    _check_fmap(x, "max_pool2x2")
    H, W, C = x.shape
    Ho, Wo = H // 2, W // 2
    blocks = x.data[:2 * Ho, :2 * Wo].reshape(Ho, 2, Wo, 2, C).transpose(0, 2, 1, 3, 4).reshape(Ho, Wo, 4, C)
    idx = blocks.argmax(axis=2)
    out = np.take_along_axis(blocks, idx[:, :, None, :], axis=2)[:, :, 0, :]

    def bw(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, idx[:, :, None, :], g[:, :, None, :], axis=2)
        gx = np.zeros_like(x.data)
        gx[:2 * Ho, :2 * Wo] = gb.reshape(Ho, Wo, 2, 2, C).transpose(0, 2, 1, 3, 4).reshape(2 * Ho, 2 * Wo, C)
        return (gx,)
    return _make(np.ascontiguousarray(out), "max_pool2x2", (x,), bw)


def upsample_nearest2x(x: Tensor) -> Tensor:
    _check_fmap(x, "upsample_nearest2x")
    H, W, C = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=0), 2, axis=1)

    def bw(g):
        return (g.reshape(H, 2, W, 2, C).sum(axis=(1, 3)),)
    return _make(out, "upsample_nearest2x", (x,), bw)


SIGMA_FLOOR = 1e-5


def instance_norm_stats(x: Tensor, eps: float = SIGMA_FLOOR) -> tuple[Tensor, Tensor]:
    """Per-channel spatial mean and (population) std, std floored at ``eps``."""
    _check_fmap(x, "instance_norm_stats")
    H, W, C = x.shape
    n = H * W
    flat = x.data.reshape(n, C)
    mu = flat.mean(axis=0)
    centered = flat - mu
    std = np.sqrt((centered * centered).mean(axis=0))
    floored = std <= eps
    sigma = np.where(floored, eps, std).astype(x.dtype)

    mu_t = _make(mu, "in_mean", (x,), lambda g: (np.broadcast_to(g / n, x.shape).astype(x.dtype),))

    def bw_sigma(g):
        coef = np.where(floored, 0, g / (n * sigma))
        return ((centered * coef).reshape(x.shape),)
    sigma_t = _make(sigma, "in_std", (x,), bw_sigma)
    return mu_t, sigma_t


def instance_normalize(x: Tensor, eps: float = SIGMA_FLOOR) -> Tensor:
    """(x - mu_c) / sigma_c per channel."""
    mu, sigma = instance_norm_stats(x, eps)
    return div(sub(x, expand(mu, x.shape)), expand(sigma, x.shape))


def mse(a: Tensor, b) -> Tensor:
    return mean(square(sub(a, b)))
