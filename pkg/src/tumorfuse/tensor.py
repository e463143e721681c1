"""Dense tensors with reverse-mode automatic differentiation.

Every differentiable operation returns a new :class:`Tensor` that remembers
its parents and a closure mapping the output gradient to input gradients.
Calling :func:`backward` on a scalar linearizes that graph into a
:class:`Tape` (topological order) and sweeps it in reverse.

Forward math runs in the dtype of the inputs: float32 by default, float64
when the caller builds float64 tensors (gradient checking does this).
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DimensionError, EvaluationError

DEFAULT_DTYPE = np.float32

_node_ids = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference only)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(data, dtype=None) -> np.ndarray:
    if isinstance(data, Tensor):
        data = data.data
    if dtype is not None:
        return np.asarray(data, dtype=dtype)
    arr = np.asarray(data)
    # python numbers and lists default to float32; float arrays keep their dtype
    if arr.dtype.kind != "f" or not isinstance(data, (np.ndarray, np.generic)):
        arr = arr.astype(DEFAULT_DTYPE)
    return arr


class Tensor:
    """An n-dimensional array plus the bookkeeping needed for backprop."""

    __slots__ = ("data", "requires_grad", "grad", "node_id", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node_id = next(_node_ids)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data, dtype=self.data.dtype)

    def clone(self) -> Tensor:
        return Tensor(self.data.copy(), requires_grad=self.requires_grad, dtype=self.data.dtype)

    def astype(self, dtype) -> Tensor:
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, dtype=dtype)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def zeros(shape, requires_grad=False, dtype=DEFAULT_DTYPE) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def ones(shape, requires_grad=False, dtype=DEFAULT_DTYPE) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)


def _lift(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out.op = op
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- elementwise ------------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    return _result(a.data + b.data, (a, b),
                   lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    return _result(a.data - b.data, (a, b),
                   lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    return _result(a.data * b.data, (a, b),
                   lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    out = a.data / b.data

    def backward(g):
        return unbroadcast(g / b.data, a.shape), unbroadcast(-g * out / b.data, b.shape)

    return _result(out, (a, b), backward, "div")


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def power(a: Tensor, exponent: float) -> Tensor:
    out = a.data ** exponent
    return _result(out, (a,), lambda g: (g * exponent * a.data ** (exponent - 1),), "pow")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a: Tensor) -> Tensor:
    """Square root whose gradient at exactly 0 is taken as 0, not infinity."""
    out = np.sqrt(a.data)

    def backward(g):
        safe = np.where(out > 0, out, 1)
        return (np.where(out > 0, g * 0.5 / safe, 0).astype(out.dtype),)

    return _result(out, (a,), backward, "sqrt")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1 - out * out),), "tanh")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: (g * mask,), "relu")


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    x = a.data
    c = x.dtype.type(_GELU_C)
    inner = c * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    out = 0.5 * x * (1 + t)

    def backward(g):
        dinner = c * (1 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1 + t) + 0.5 * x * (1 - t * t) * dinner),)

    return _result(out, (a,), backward, "gelu")


def clamp_min(a: Tensor, lo: float) -> Tensor:
    """max(a, lo); gradient flows only where a > lo."""
    mask = a.data > lo
    out = np.where(mask, a.data, a.data.dtype.type(lo))
    return _result(out, (a,), lambda g: (g * mask,), "clamp_min")


# -- reductions and shape ops ---------------------------------------------
def _expand_reduced(g: np.ndarray, shape, axis, keepdims) -> np.ndarray:
    if axis is not None and not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(ax % len(shape) for ax in axes)
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = np.sum(a.data, axis=axis, keepdims=keepdims)
    out = np.asarray(out, dtype=a.dtype)
    return _result(out, (a,), lambda g: (_expand_reduced(g, a.shape, axis, keepdims),), "sum")


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = np.asarray(np.mean(a.data, axis=axis, keepdims=keepdims), dtype=a.dtype)
    count = a.size // max(out.size, 1)

    def backward(g):
        return (_expand_reduced(g / count, a.shape, axis, keepdims),)

    return _result(out, (a,), backward, "mean")


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)
    return _result(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    out = np.transpose(a.data, axes)
    inverse = None if axes is None else tuple(np.argsort(axes))
    return _result(out, (a,), lambda g: (np.transpose(g, inverse),), "transpose")


def getitem(a: Tensor, index) -> Tensor:
    out = a.data[index]

    basic = all(isinstance(i, (slice, int, type(None), type(Ellipsis)))
                for i in (index if isinstance(index, tuple) else (index,)))

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _result(np.array(out), (a,), backward, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(out, tensors, backward, "concat")


def pad2d(a: Tensor, padding: int) -> Tensor:
    """Zero-pad the last two axes."""
    if padding == 0:
        return a
    width = [(0, 0)] * (a.ndim - 2) + [(padding, padding), (padding, padding)]
    out = np.pad(a.data, width)
    p = padding
    return _result(out, (a,), lambda g: (g[..., p:-p, p:-p],), "pad2d")


# -- linear algebra ---------------------------------------------------------
def matmul(a, b) -> Tensor:
    """Matrix product with numpy batch broadcasting over leading axes."""
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise DimensionError(f"matmul cannot broadcast {a.shape} @ {b.shape}") from exc

    def backward(g):
        ga = unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), backward, "matmul")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Softmax along ``axis`` with max subtraction for overflow safety."""
    if not -x.ndim <= axis < max(x.ndim, 1):
        raise DimensionError(f"softmax axis {axis} invalid for shape {x.shape}")
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def backward(g):
        dot = np.sum(g * out, axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _result(out, (x,), backward, "softmax")


# -- convolution and pooling -------------------------------------------------
def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 4:
        raise DimensionError(f"expected C×H×W or N×C×H×W input, got shape {x.shape}")
    return x, False


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation (no kernel flip).

    ``x`` is C×H×W or N×C×H×W; ``weight`` is C'×C×k×k; ``bias`` has C' entries.
    """
    x, squeeze = _batched(x)
    n, c, h, w = x.shape
    if weight.ndim != 4 or weight.shape[1] != c:
        raise DimensionError(f"conv2d weight {weight.shape} incompatible with input channels {c}")
    c_out, _, kh, kw = weight.shape
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise DimensionError(f"kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    h_out = (hp - kh) // stride + 1
    w_out = (wp - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    # im2col in (n, c·kh·kw, h_out·w_out) layout so the product lands in NCHW directly
    cols = np.empty((n, c, kh, kw, h_out, w_out), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * h_out:stride, j:j + stride * w_out:stride]
    cols = cols.reshape(n, c * kh * kw, h_out * w_out)
    wmat = weight.data.reshape(c_out, -1)
    out = np.matmul(wmat, cols)
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(n, c_out, h_out, w_out)

    def backward(g):
        gflat = g.reshape(n, c_out, h_out * w_out)
        gw = np.matmul(gflat, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape) \
            if weight.requires_grad else None
        gb = gflat.sum(axis=(0, 2)) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = np.matmul(wmat.T, gflat).reshape(n, c, kh, kw, h_out, w_out)
            gxp = np.zeros(xp.shape, dtype=xp.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * h_out:stride, j:j + stride * w_out:stride] += gcols[:, :, i, j]
            gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    result = _result(out, parents, backward, "conv2d")
    return reshape(result, result.shape[1:]) if squeeze else result


def max_pool2d(x: Tensor, window: int, stride: int | None = None) -> Tensor:
    """Max pooling; backward routes the gradient to the first argmax of each window."""
    stride = window if stride is None else stride
    x, squeeze = _batched(x)
    n, c, h, w = x.shape
    if window > h or window > w:
        raise DimensionError(f"pool window {window} exceeds input {h}x{w}")
    h_out = (h - window) // stride + 1
    w_out = (w - window) // stride + 1
    win = sliding_window_view(x.data, (window, window), axis=(2, 3))[:, :, ::stride, ::stride]
    flat = win.reshape(n, c, h_out, w_out, window * window)
    arg = np.argmax(flat, axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gx = np.zeros_like(x.data)
        for i in range(window):
            for j in range(window):
                hit = arg == i * window + j
                gx[:, :, i:i + stride * h_out:stride, j:j + stride * w_out:stride] += g * hit
        return (gx,)

    result = _result(np.ascontiguousarray(out), (x,), backward, "max_pool2d")
    return reshape(result, result.shape[1:]) if squeeze else result


# -- tape ----------------------------------------------------------------------
class Tape:
    """Operations reachable from a loss, in topological order.

    A tape is built for one forward pass and consumed by one backward pass.
    ``gradients`` maps node ids to gradient tensors once :meth:`run` has been
    called.
    """

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes
        self.gradients: dict[int, Tensor] = {}
        self._done = False

    @classmethod
    def from_loss(cls, loss: Tensor) -> Tape:
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(loss, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if node.node_id in seen:
                continue
            seen.add(node.node_id)
            stack.append((node, True))
            for parent in reversed(node._parents):
                if parent.requires_grad and parent.node_id not in seen:
                    stack.append((parent, False))
        return cls(order)

    def run(self, loss: Tensor) -> dict[int, Tensor]:
        if self._done:
            raise ContractError("tape already consumed; rerun the forward pass")
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.get(node.node_id)
            if g is None:
                continue
            if node.is_leaf:
                self.gradients[node.node_id] = Tensor(g, dtype=g.dtype)
                node.grad = g if node.grad is None else node.grad + g
                continue
            del grads[node.node_id]
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                pg = np.asarray(pg, dtype=parent.dtype)
                if parent.node_id in grads:
                    grads[parent.node_id] = grads[parent.node_id] + pg
                else:
                    grads[parent.node_id] = pg
        self._done = True
        return self.gradients


def backward(loss: Tensor, tape: Tape | None = None) -> dict[int, Tensor]:
    """Backpropagate from a scalar ``loss``; leaf gradients land in ``.grad``.

    Returns the gradient map (leaf node id -> gradient tensor).
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}
    tape = tape or Tape.from_loss(loss)
    return tape.run(loss)


# -- gradient checking ---------------------------------------------------------
def grad_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-6) -> float:
    """Max relative error between backprop and central differences.

    ``f`` maps a tensor to a scalar tensor. Both passes run in float64.
    Error per coordinate is |a - n| / max(|a|, |n|, 1e-8).
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ContractError(f"eps must lie in [1e-6, 1e-3], got {eps}")
    base = np.array(_as_array(x), dtype=np.float64)
    xt = Tensor(base.copy(), requires_grad=True, dtype=np.float64)
    y = f(xt)
    if not np.all(np.isfinite(y.data)):
        raise EvaluationError(f"f(x) is not finite: {y.data}")
    backward(y)
    analytic = xt.grad if xt.grad is not None else np.zeros_like(base)

    numeric = np.zeros_like(base)
    flat = base.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        with no_grad():
            fp = float(f(Tensor(base, dtype=np.float64)).data)
        flat[i] = orig - eps
        with no_grad():
            fm = float(f(Tensor(base, dtype=np.float64)).data)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise EvaluationError(f"f is not finite near coordinate {i}")
        numeric.reshape(-1)[i] = (fp - fm) / (2 * eps)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom)) if base.size else 0.0


def grad_check_params(loss_fn: Callable[[], Tensor], params: Iterable[Tensor], eps: float = 1e-6) -> float:
    """Like :func:`grad_check` but over every entry of several float64 leaves.

    ``loss_fn`` closes over ``params``; their ``.data`` is perturbed in place.
    """
    params = list(params)
    for p in params:
        if p.dtype != np.float64:
            raise ContractError("grad_check_params needs float64 parameters")
        p.grad = None
    loss = loss_fn()
    if not np.all(np.isfinite(loss.data)):
        raise EvaluationError(f"loss is not finite: {loss.data}")
    backward(loss)
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        numeric = np.zeros(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            with no_grad():
                fp = float(loss_fn().data)
            flat[i] = orig - eps
            with no_grad():
                fm = float(loss_fn().data)
            flat[i] = orig
            numeric[i] = (fp - fm) / (2 * eps)
        a = analytic.reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-8)
        if flat.size:
            worst = max(worst, float(np.max(np.abs(a - numeric) / denom)))
        p.grad = None
    return worst
