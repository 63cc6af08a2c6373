"""Dense float64 tensors with reverse-mode differentiation.

Every operation here builds a node holding a closure that maps the output
gradient to one gradient per parent. Operations accept optional leading batch
axes in front of the documented trailing shape, so a whole episode of videos can
flow through a single graph.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DimensionError, NumericalError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Build no graph inside the block (evaluation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple = (),
        _backward: Optional[Callable] = None,
        op: str = "leaf",
    ):
        self.data = np.asarray(data, dtype=np.float64)
        if not self.data.flags.c_contiguous:
            self.data = self.data.copy(order="C")
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
        if grad is None:
            if self.size != 1:
                raise DimensionError(f"backward() needs an explicit gradient for shape {self.shape}")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other: float):
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    # BLAS and pairwise sums round differently per memory layout; a fixed
    # layout makes every result a function of values and shapes only
    if not data.flags.c_contiguous:
        data = data.copy(order="C")
    # a sum is cheaper than an elementwise scan and propagates NaN/Inf
    if not np.isfinite(data.sum()) and not np.isfinite(data).all():
        raise NumericalError(f"non-finite values produced by operation '{op}'", op=op)
    rg = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if rg:
        return Tensor(data, True, tuple(parents), backward, op)
    return Tensor(data, False, (), None, op)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    ra, rb = a.requires_grad, b.requires_grad

    def backward(g):
        return (_unbroadcast(g, sa) if ra else None, _unbroadcast(g, sb) if rb else None)

    return _node(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    ra, rb = a.requires_grad, b.requires_grad

    def backward(g):
        return (_unbroadcast(g, sa) if ra else None, _unbroadcast(-g, sb) if rb else None)

    return _node(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        return scale(as_tensor(a), float(b))
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    ra, rb = a.requires_grad, b.requires_grad

    def backward(g):
        return (
            _unbroadcast(g * bd, ad.shape) if ra else None,
            _unbroadcast(g * ad, bd.shape) if rb else None,
        )

    return _node(ad * bd, (a, b), backward, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a constant."""
    return _node(a.data * c, (a,), lambda g: (g * c,), "scale")


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _node(ad * ad, (a,), lambda g: (2.0 * ad * g,), "square")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


# ---------------------------------------------------------------- shape ops


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    return _node(np.swapaxes(a.data, i, j), (a,), lambda g: (np.swapaxes(g, i, j),), "swapaxes")


def getitem(a: Tensor, idx) -> Tensor:
    src = a.shape

    def backward(g):
        out = np.zeros(src)
        np.add.at(out, idx, g)
        return (out,)

    return _node(a.data[idx], (a,), backward, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _node(np.stack([t.data for t in tensors], axis=axis), tensors, backward, "stack")


# ---------------------------------------------------------------- reductions


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    src = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _node(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tsum(a, axis, keepdims), 1.0 / n)


def tmin(a: Tensor, axis: int) -> Tensor:
    """Minimum along one axis; the gradient goes to the first minimizing entry."""
    idx = np.expand_dims(np.argmin(a.data, axis=axis), axis)
    src = a.shape

    def backward(g):
        out = np.zeros(src)
        np.put_along_axis(out, idx, np.expand_dims(g, axis), axis=axis)
        return (out,)

    return _node(np.take_along_axis(a.data, idx, axis=axis).squeeze(axis), (a,), backward, "min")


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    ra, rb = a.requires_grad, b.requires_grad

    def backward(g):
        ga = _unbroadcast(_bmm(g, np.swapaxes(bd, -1, -2)), ad.shape) if ra else None
        if not rb:
            return ga, None
        if _foldable(ad, bd):
            gb = _fold_rows(np.swapaxes(ad, -1, -2), bd.ndim, axis=-1) @ _fold_rows(g, bd.ndim, axis=-2)
        else:
            gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _node(_bmm(ad, bd), (a, b), backward, "matmul")


def _foldable(x: np.ndarray, y: np.ndarray) -> bool:
    # x carries extra leading axes that y broadcasts over
    return x.ndim > y.ndim > 2 and x.shape[x.ndim - y.ndim : -2] == y.shape[:-2]


def _fold_rows(x: np.ndarray, nd: int, axis: int) -> np.ndarray:
    """Move the leading axes beyond the last ``nd`` into ``axis`` (-2 rows, -1 columns)."""
    extra = x.ndim - nd
    x = x.reshape(-1, *x.shape[extra:])
    x = np.moveaxis(x, 0, axis - 1 if axis == -2 else -2)
    # [..., P, m, k] -> [..., P*m, k] or [..., k, P, m] -> [..., k, P*m]
    if axis == -2:
        return x.reshape(*x.shape[:-3], -1, x.shape[-1])
    return x.reshape(*x.shape[:-2], -1)


def _bmm(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """x @ y with broadcast leading axes of x folded into rows so BLAS sees few large products."""
    if not _foldable(x, y):
        return x @ y
    extra = x.ndim - y.ndim
    lead, m = x.shape[:extra], x.shape[-2]
    out = _fold_rows(x, y.ndim, axis=-2) @ y  # [..., P*m, n]
    out = out.reshape(*out.shape[:-2], -1, m, out.shape[-1])
    return np.moveaxis(out, -3, 0).reshape(*lead, *out.shape[:-3], m, out.shape[-1])


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis, stabilized by the row maximum."""
    y = x.data - x.data.max(axis=-1, keepdims=True)
    np.exp(y, out=y)
    y /= y.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _node(y, (x,), backward, "softmax_rows")


def log_softmax_rows(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def backward(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _node(out, (x,), backward, "log_softmax_rows")


def layer_norm(x: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalize to zero mean, unit variance along ``axis`` (no affine)."""
    mu = x.data.mean(axis=axis, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=axis, keepdims=True) + eps)
    y = xc * inv

    def backward(g):
        gm = g.mean(axis=axis, keepdims=True)
        gym = (g * y).mean(axis=axis, keepdims=True)
        return (inv * (g - gm - y * gym),)

    return _node(y, (x,), backward, "layer_norm")


# ---------------------------------------------------------------- convolutions
#
# All kernels are applied as cross-correlations with zero padding, the
# convention of every deep-learning framework.


def _pad_hw(a: np.ndarray) -> np.ndarray:
    pad = [(0, 0)] * (a.ndim - 2) + [(1, 1), (1, 1)]
    return np.pad(a, pad)


def conv1x1(x: Tensor, k: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Per-pixel channel mixing: x[..., C_in, H, W], k[C_out, C_in]."""
    if k.ndim != 2 or x.ndim < 3 or x.shape[-3] != k.shape[1]:
        raise DimensionError(f"conv1x1 channel mismatch: input {x.shape}, kernel {k.shape}")
    *lead, C, H, W = x.shape
    xd = x.data.reshape(*lead, C, H * W)
    kd = k.data
    out = kd @ xd
    parents = [x, k]
    if bias is not None:
        out = out + bias.data[:, None]
        parents.append(bias)

    def backward(g):
        g2 = g.reshape(*lead, kd.shape[0], H * W)
        gx = (kd.T @ g2).reshape(x.shape)
        gk = np.tensordot(g2.reshape(-1, kd.shape[0], H * W), xd.reshape(-1, C, H * W), axes=([0, 2], [0, 2]))
        if bias is None:
            return gx, gk
        return gx, gk, g2.reshape(-1, kd.shape[0], H * W).sum(axis=(0, 2))

    return _node(out.reshape(*lead, kd.shape[0], H, W), parents, backward, "conv1x1")


def depthwise_conv2d(x: Tensor, k: Tensor) -> Tensor:
    """One 3x3 kernel per channel, same padding: x[..., C, H, W], k[C, 3, 3]."""
    if k.shape[1:] != (3, 3) or x.ndim < 3 or x.shape[-3] != k.shape[0]:
        raise DimensionError(f"depthwise_conv2d channel mismatch: input {x.shape}, kernel {k.shape}")
    H, W = x.shape[-2:]
    xp = _pad_hw(x.data)
    kd = k.data
    out = np.zeros(x.shape)
    for dy in range(3):
        for dx in range(3):
            out += kd[:, dy, dx, None, None] * xp[..., dy : dy + H, dx : dx + W]

    def backward(g):
        gxp = np.zeros(xp.shape)
        gk = np.zeros(kd.shape)
        lead = tuple(range(g.ndim - 3))
        for dy in range(3):
            for dx in range(3):
                gxp[..., dy : dy + H, dx : dx + W] += kd[:, dy, dx, None, None] * g
                gk[:, dy, dx] = (g * xp[..., dy : dy + H, dx : dx + W]).sum(axis=lead + (-2, -1))
        return gxp[..., 1:-1, 1:-1], gk

    return _node(out, (x, k), backward, "depthwise_conv2d")


def conv2d_3x3(x: Tensor, k: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Full 3x3 convolution, same padding: x[..., C_in, H, W], k[C_out, C_in, 3, 3]."""
    if k.ndim != 4 or k.shape[2:] != (3, 3) or x.ndim < 3 or x.shape[-3] != k.shape[1]:
        raise DimensionError(f"conv2d_3x3 channel mismatch: input {x.shape}, kernel {k.shape}")
    *lead, C, H, W = x.shape
    O = k.shape[0]
    xp = _pad_hw(x.data)
    # im2col: [..., C*9, H*W] with (c, dy, dx) ordering to match k.reshape(O, C*9)
    cols = np.stack(
        [xp[..., dy : dy + H, dx : dx + W] for dy in range(3) for dx in range(3)], axis=-3
    ).reshape(*lead, C * 9, H * W)
    kf = k.data.reshape(O, C * 9)
    out = kf @ cols
    parents = [x, k]
    if bias is not None:
        out = out + bias.data[:, None]
        parents.append(bias)

    def backward(g):
        g2 = g.reshape(*lead, O, H * W)
        gcols = (kf.T @ g2).reshape(*lead, C, 9, H, W)
        gxp = np.zeros(xp.shape)
        t = 0
        for dy in range(3):
            for dx in range(3):
                gxp[..., dy : dy + H, dx : dx + W] += gcols[..., t, :, :]
                t += 1
        gk = np.tensordot(g2.reshape(-1, O, H * W), cols.reshape(-1, C * 9, H * W), axes=([0, 2], [0, 2]))
        gx = gxp[..., 1:-1, 1:-1]
        if bias is None:
            return gx, gk.reshape(k.shape)
        return gx, gk.reshape(k.shape), g2.reshape(-1, O, H * W).sum(axis=(0, 2))

    return _node(out.reshape(*lead, O, H, W), parents, backward, "conv2d_3x3")


def depthwise_conv3d_t311(x: Tensor, k: Tensor) -> Tensor:
    """Temporal 3-tap depthwise filter: x[..., L, D, H, W], k[D, 3]; zero-padded in time."""
    if k.ndim != 2 or k.shape[1] != 3 or x.ndim < 4 or x.shape[-3] != k.shape[0]:
        raise DimensionError(f"depthwise_conv3d_t311 channel mismatch: input {x.shape}, kernel {k.shape}")
    L = x.shape[-4]
    pad = [(0, 0)] * (x.ndim - 4) + [(1, 1), (0, 0), (0, 0), (0, 0)]
    xp = np.pad(x.data, pad)
    kd = k.data
    out = np.zeros(x.shape)
    for t in range(3):
        out += kd[:, t, None, None] * xp[..., t : t + L, :, :, :]

    def backward(g):
        gxp = np.zeros(xp.shape)
        gk = np.zeros(kd.shape)
        red = tuple(range(g.ndim - 3)) + (-2, -1)
        for t in range(3):
            gxp[..., t : t + L, :, :, :] += kd[:, t, None, None] * g
            gk[:, t] = (g * xp[..., t : t + L, :, :, :]).sum(axis=red)
        return gxp[..., 1:-1, :, :, :], gk

    return _node(out, (x, k), backward, "depthwise_conv3d_t311")


def depthwise_conv3d(x: Tensor, k: Tensor) -> Tensor:
    """Depthwise 3x3x3 spatio-temporal filter: x[..., L, D, H, W], k[D, 3, 3, 3]."""
    if k.ndim != 4 or k.shape[1:] != (3, 3, 3) or x.ndim < 4 or x.shape[-3] != k.shape[0]:
        raise DimensionError(f"depthwise_conv3d channel mismatch: input {x.shape}, kernel {k.shape}")
    L, _, H, W = x.shape[-4:]
    pad = [(0, 0)] * (x.ndim - 4) + [(1, 1), (0, 0), (1, 1), (1, 1)]
    xp = np.pad(x.data, pad)
    kd = k.data
    out = np.zeros(x.shape)
    for t in range(3):
        for dy in range(3):
            for dx in range(3):
                out += kd[:, t, dy, dx, None, None] * xp[..., t : t + L, :, dy : dy + H, dx : dx + W]

    def backward(g):
        gxp = np.zeros(xp.shape)
        gk = np.zeros(kd.shape)
        red = tuple(range(g.ndim - 3)) + (-2, -1)
        for t in range(3):
            for dy in range(3):
                for dx in range(3):
                    win = (..., slice(t, t + L), slice(None), slice(dy, dy + H), slice(dx, dx + W))
                    gxp[win] += kd[:, t, dy, dx, None, None] * g
                    gk[:, t, dy, dx] = (g * xp[win]).sum(axis=red)
        return gxp[..., 1:-1, :, 1:-1, 1:-1], gk

    return _node(out, (x, k), backward, "depthwise_conv3d")


# ---------------------------------------------------------------- resampling


def _separable(x: Tensor, rows: np.ndarray, cols: np.ndarray, op: str) -> Tensor:
    """y[..., i, j] = sum_{h, w} rows[i, h] x[..., h, w] cols[j, w]."""
    out = rows @ x.data @ cols.T

    def backward(g):
        return (rows.T @ g @ cols,)

    return _node(out, (x,), backward, op)


def pool_matrix(n: int) -> np.ndarray:
    """Averaging operator for 2-wide stride-2 windows; a trailing odd cell averages alone."""
    m = (n + 1) // 2
    P = np.zeros((m, n))
    for i in range(m):
        cells = range(2 * i, min(2 * i + 2, n))
        for c in cells:
            P[i, c] = 1.0 / len(cells)
    return P


def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """1-D linear interpolation weights with align_corners=False sampling."""
    A = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = max((i + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        A[i, i0] += 1.0 - frac
        A[i, i1] += frac
    return A


def avgpool2x2(x: Tensor) -> Tensor:
    H, W = x.shape[-2:]
    return _separable(x, pool_matrix(H), pool_matrix(W), "avgpool2x2")


def bilinear_upsample2x(x: Tensor, out_hw: Optional[tuple] = None) -> Tensor:
    """Bilinear resize to ``out_hw`` (defaults to twice the input extent)."""
    h, w = x.shape[-2:]
    H, W = out_hw if out_hw is not None else (2 * h, 2 * w)
    return _separable(x, bilinear_matrix(h, H), bilinear_matrix(w, W), "bilinear_upsample2x")

