"""Dense tensors with define-by-run reverse-mode differentiation.

Every op records its parents and a closure that maps the output gradient to
parent gradients. ``backward`` replays the recorded ops in exact reverse
creation order. Data lives in numpy arrays; masks are boolean arrays where
``True`` marks a valid (unmasked) position.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError, NumericalError, ValidationError

_SEQ = itertools.count()
_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_seq", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._seq = next(_SEQ)
        self._op = "leaf"
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def backward(self) -> None:
        backward(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if dtype is None:
        return Tensor(np.asarray(x, dtype=np.float64))
    return Tensor(np.asarray(x, dtype=dtype))


def _scalar_like(x, ref: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=ref.data.dtype))


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericalError(f"non-finite values produced by {op}")


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    _check_finite(data, op)
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    out._op = op
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# elementwise arithmetic

def add(a, b) -> Tensor:
    a = as_tensor(a) if not isinstance(a, Tensor) else a
    b = _scalar_like(b, a)
    a = _scalar_like(a, b)

    def bw(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a = as_tensor(a) if not isinstance(a, Tensor) else a
    b = _scalar_like(b, a)
    a = _scalar_like(a, b)

    def bw(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a = as_tensor(a) if not isinstance(a, Tensor) else a
    b = _scalar_like(b, a)
    a = _scalar_like(a, b)

    def bw(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a = as_tensor(a) if not isinstance(a, Tensor) else a
    b = _scalar_like(b, a)
    a = _scalar_like(a, b)

    def bw(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return _make(a.data / b.data, (a, b), bw, "div")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        y = np.exp(a.data)
    return _make(y, (a,), lambda g: (g * y,), "exp")


def log(a: Tensor) -> Tensor:
    if (a.data <= 0).any():
        raise NumericalError("log of non-positive value")
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid_np(a.data)
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return _make(np.where(pos, a.data, 0.0).astype(a.dtype), (a,), lambda g: (g * pos,), "relu")


# shape ops

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes, differentiable in both inputs."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    try:
        with np.errstate(invalid="ignore", over="ignore"):
            out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}") from exc

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return _make(out, (a, b), bw, "matmul")


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    inv = np.argsort(axes)
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    return _make(np.swapaxes(a.data, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),), "swapaxes")


def getitem(a: Tensor, idx) -> Tensor:
    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(np.array(a.data[idx]), (a,), bw, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _make(np.stack([t.data for t in tensors], axis=axis), tensors, bw, "stack")


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), bw, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[i] for i in axes]))
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def where(cond: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    cond = np.asarray(cond, dtype=bool)
    a = as_tensor(a, dtype=getattr(b, "dtype", None))
    b = _scalar_like(b, a)

    def bw(g):
        return unbroadcast(np.where(cond, g, 0.0), a.shape), unbroadcast(np.where(cond, 0.0, g), b.shape)

    return _make(np.where(cond, a.data, b.data), (a, b), bw, "where")


# fused ops

def softmax(v: Tensor, mask=None, axis: int = -1) -> Tensor:
    """Softmax over ``axis``; masked entries are excluded and come out exactly 0.

    ``mask`` broadcasts against ``v``; ``True`` marks valid entries. A row with
    no valid entry raises ``ValidationError``.
    """
    x = v.data
    if mask is None:
        shifted = x - x.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
    else:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not mask.any(axis=axis).all():
            raise ValidationError("softmax row is fully masked")
        m = np.where(mask, x, -np.inf).max(axis=axis, keepdims=True)
        e = np.exp(np.where(mask, x - m, -np.inf))
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (v,), bw, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then apply ``gamma``/``beta``."""
    d = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        gxhat = g * gamma.data
        gx = inv / d * (d * gxhat - gxhat.sum(axis=-1, keepdims=True)
                        - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True))
        return gx, unbroadcast(g * xhat, gamma.shape), unbroadcast(g, beta.shape)

    return _make(out, (x, gamma, beta), bw, "layer_norm")


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy on logits, in the stable log-space form."""
    t = targets.data if isinstance(targets, Tensor) else np.asarray(targets, dtype=logits.dtype)
    if t.shape != logits.shape:
        raise DimensionError(f"bce_with_logits shape mismatch: {logits.shape} vs {t.shape}")
    if (t < 0).any() or (t > 1).any():
        raise ValidationError("bce_with_logits targets must lie in [0, 1]")
    z = logits.data
    per = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    n = z.size

    def bw(g):
        return (g * (_sigmoid_np(z) - t) / n,)

    return _make(np.asarray(per.mean()), (logits,), bw, "bce_with_logits")


def lstm(x: Tensor, w_in: Tensor, w_hh: Tensor, bias: Tensor, mask=None, reverse: bool = False) -> Tensor:
    """Single-layer LSTM over ``x[B, T, D]``; returns all hidden states ``[B, T, H]``.

    Gate order is input, forget, cell, output. Masked steps hold the state and
    emit zeros, so right-padded batches run correctly in either direction.
    """
    B, T, _ = x.shape
    H = w_hh.shape[0]
    dt = x.dtype
    if mask is None:
        mask = np.ones((B, T), dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    steps = range(T - 1, -1, -1) if reverse else range(T)
    xw = x.data @ w_in.data + bias.data  # [B,T,4H]
    h = np.zeros((B, H), dtype=dt)
    c = np.zeros((B, H), dtype=dt)
    out = np.zeros((B, T, H), dtype=dt)
    cache = []
    for t in steps:
        m = mask[:, t:t + 1]
        pre = xw[:, t] + h @ w_hh.data
        i = _sigmoid_np(pre[:, :H])
        f = _sigmoid_np(pre[:, H:2 * H])
        gg = np.tanh(pre[:, 2 * H:3 * H])
        o = _sigmoid_np(pre[:, 3 * H:])
        c_new = f * c + i * gg
        tc = np.tanh(c_new)
        h_new = o * tc
        cache.append((t, m, h, c, i, f, gg, o, tc))
        h = np.where(m, h_new, h)
        c = np.where(m, c_new, c)
        out[:, t] = np.where(m, h_new, 0.0)

    def bw(g):
        gxw = np.zeros_like(xw)
        gwhh = np.zeros_like(w_hh.data)
        dh = np.zeros((B, H), dtype=dt)
        dc = np.zeros((B, H), dtype=dt)
        for t, m, h_prev, c_prev, i, f, gg, o, tc in reversed(cache):
            dh_new = np.where(m, dh + g[:, t], 0.0)
            dc_new = np.where(m, dc, 0.0)
            do = dh_new * tc
            dcn = dc_new + dh_new * o * (1.0 - tc * tc)
            di = dcn * gg
            dgg = dcn * i
            df = dcn * c_prev
            dpre = np.concatenate([di * i * (1 - i), df * f * (1 - f), dgg * (1 - gg * gg), do * o * (1 - o)], axis=1)
            gxw[:, t] = dpre
            gwhh += h_prev.T @ dpre
            dh = np.where(m, dpre @ w_hh.data.T, dh)
            dc = np.where(m, dcn * f, dc)
        gx = gxw @ w_in.data.T
        gw = np.einsum("btd,btk->dk", x.data, gxw)
        gb = gxw.sum(axis=(0, 1))
        return gx, gw, gwhh, gb

    return _make(out, (x, w_in, w_hh, bias), bw, "lstm")


# backward pass

def _collect(root: Tensor) -> list[Tensor]:
    seen: set[int] = set()
    nodes: list[Tensor] = []
    stack_ = [root]
    while stack_:
        node = stack_.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        nodes.append(node)
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append(p)
    nodes.sort(key=lambda n: n._seq, reverse=True)
    return nodes


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf that ``loss`` depends on.

    Leaf gradients accumulate across separate graphs; backpropagating the same
    graph twice is an error.
    """
    if loss.data.size != 1 or loss.ndim != 0:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise RuntimeError("backward already called on this graph")
    if not loss.requires_grad:
        raise RuntimeError("loss does not depend on any tensor requiring grad")
    loss._consumed = True
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in _collect(loss):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        pgrads = node._backward(g)
        for p, pg in zip(node._parents, pgrads):
            if not p.requires_grad or pg is None:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    # release the graph
    loss._parents = ()


def leaves(loss: Tensor) -> list[Tensor]:
    return [n for n in _collect(loss) if n._backward is None]


def numerical_grad(f: Callable[[], float], x: np.ndarray, h: float = 1e-5,
                   indices: Iterable[tuple] | None = None) -> dict[tuple, float]:
    """Central finite differences of the scalar ``f`` w.r.t. entries of ``x`` (mutated in place)."""
    if indices is None:
        indices = list(np.ndindex(*x.shape))
    out = {}
    for idx in indices:
        orig = x[idx]
        x[idx] = orig + h
        fp = f()
        x[idx] = orig - h
        fm = f()
        x[idx] = orig
        out[idx] = (fp - fm) / (2 * h)
    return out


def rel_error(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)
