"""Reverse-mode autodiff over numpy arrays.

Broadcasting follows numpy for the elementwise ops (add, mul); gradients are
summed back to each operand's shape. Everything else is shape-exact.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
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
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise -----------------------------------------------------------


def add(a, b) -> Tensor:
    if isinstance(b, (int, float)):
        return _make(a.data + b, (a,), lambda g: (g,))
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    if isinstance(b, (int, float)):
        return _make(a.data * b, (a,), lambda g: (g * b,))
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


@contextlib.contextmanager
def record_kinks():
    """Collect the on/off pattern of every relu evaluated inside the block."""
    prev = getattr(_state, "kinks", None)
    _state.kinks = masks = []
    try:
        yield masks
    finally:
        _state.kinks = prev


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    kinks = getattr(_state, "kinks", None)
    if kinks is not None:
        kinks.append(mask)
    return _make(x.data * mask, (x,), lambda g: (g * mask,))


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    if not training or p <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return _make(x.data * keep, (x,), lambda g: (g * keep,))


# -- shape -----------------------------------------------------------------


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    src = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.data.ndim)))
    inverse = tuple(np.argsort(axes))
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),))


def index(x: Tensor, key) -> Tensor:
    """Basic/advanced indexing; gradients scatter-add back."""
    src_shape, dtype = x.shape, x.dtype

    def back(g):
        out = np.zeros(src_shape, dtype=dtype)
        np.add.at(out, key, g)
        return (out,)

    return _make(x.data[key], (x,), back)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    src = x.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _make(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), back)


def mean(x: Tensor) -> Tensor:
    return mul(tsum(x), 1.0 / x.size)


# -- linear algebra --------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, (a, b), back)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, w)
    return y if b is None else add(y, b)


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)

    def back(g):
        out = np.zeros_like(weight.data)
        np.add.at(out, ids, g)
        return (out,)

    return _make(weight.data[ids], (weight,), back)


# -- normalisation / softmax -----------------------------------------------


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    n = x.shape[-1]

    def back(g):
        gg = _unbroadcast(g * xhat, gamma.shape)
        gb = _unbroadcast(g, beta.shape)
        gx_hat = g * gamma.data
        gx = inv / n * (n * gx_hat - gx_hat.sum(-1, keepdims=True) - xhat * (gx_hat * xhat).sum(-1, keepdims=True))
        return gx, gg, gb

    return _make(xhat * gamma.data + beta.data, (x, gamma, beta), back)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _make(s, (x,), back)


def log_softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits: Tensor, targets: np.ndarray, ignore_index: int | None = None) -> Tensor:
    """Mean negative log-likelihood of ``targets`` over rows of ``logits``."""
    targets = np.asarray(targets, dtype=np.int64)
    keep = np.ones(targets.shape, dtype=bool) if ignore_index is None else targets != ignore_index
    n = int(keep.sum())
    if n == 0:
        raise ValueError("no targets left after masking")
    logp = log_softmax(logits.data)
    rows = np.arange(targets.shape[0])
    nll = -logp[rows, targets]
    loss = np.asarray((nll * keep).sum() / n)

    def back(g):
        p = np.exp(logp)
        p[rows, targets] -= 1.0
        return (p * (keep[:, None] * (g / n)),)

    return _make(loss, (logits,), back)


# -- spatial ---------------------------------------------------------------


def _out(n: int, k: int, s: int, p: int, d: int) -> int:
    return (n + 2 * p - d * (k - 1) - 1) // s + 1


def _windows(xp: np.ndarray, k: int, s: int, d: int, ho: int, wo: int):
    """Yield (ki, kj, view) with view[c, i, j] = xp[c, i*s + ki*d, j*s + kj*d]."""
    for ki in range(k):
        r0 = ki * d
        for kj in range(k):
            c0 = kj * d
            yield ki, kj, xp[:, r0 : r0 + s * (ho - 1) + 1 : s, c0 : c0 + s * (wo - 1) + 1 : s]


def _im2col(x: np.ndarray, k: int, s: int, p: int, d: int) -> tuple[np.ndarray, int, int]:
    c, h, w = x.shape
    ho, wo = _out(h, k, s, p, d), _out(w, k, s, p, d)
    if s == k and d == 1 and p == 0:
        v = x[:, : ho * k, : wo * k].reshape(c, ho, k, wo, k).transpose(0, 2, 4, 1, 3)
        return v.reshape(c * k * k, ho * wo), ho, wo
    xp = np.pad(x, ((0, 0), (p, p), (p, p))) if p else x
    cols = np.empty((c, k, k, ho, wo), dtype=x.dtype)
    for ki, kj, v in _windows(xp, k, s, d, ho, wo):
        cols[:, ki, kj] = v
    return cols.reshape(c * k * k, ho * wo), ho, wo


def _col2im(cols: np.ndarray, shape, k: int, s: int, p: int, d: int, ho: int, wo: int) -> np.ndarray:
    c, h, w = shape
    if s == k and d == 1 and p == 0:
        out = np.zeros(shape, dtype=cols.dtype)
        v = cols.reshape(c, k, k, ho, wo).transpose(0, 3, 1, 4, 2).reshape(c, ho * k, wo * k)
        out[:, : ho * k, : wo * k] = v
        return out
    xp = np.zeros((c, h + 2 * p, w + 2 * p), dtype=cols.dtype)
    cols = cols.reshape(c, k, k, ho, wo)
    for ki, kj, v in _windows(xp, k, s, d, ho, wo):
        v += cols[:, ki, kj]
    return xp[:, p : p + h, p : p + w] if p else xp


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0, dilation: int = 1) -> Tensor:
    """Single-image convolution: x [C, H, W], w [O, C, k, k] -> [O, Ho, Wo]."""
    o, c, k, _ = w.shape
    if x.shape[0] != c:
        raise ValueError(f"conv2d expects {c} input channels, got {x.shape[0]}")
    cols, ho, wo = _im2col(x.data, k, stride, padding, dilation)
    wm = w.data.reshape(o, c * k * k)
    y = wm @ cols
    if b is not None:
        y = y + b.data[:, None]
    parents = (x, w) if b is None else (x, w, b)

    def back(g):
        g2 = g.reshape(o, ho * wo)
        gw = (g2 @ cols.T).reshape(w.shape)
        gx = _col2im(wm.T @ g2, x.shape, k, stride, padding, dilation, ho, wo) if x.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=1)

    return _make(y.reshape(o, ho, wo), parents, back)


def max_pool2d(x: Tensor, k: int, stride: int, padding: int = 0) -> Tensor:
    c, h, w = x.shape
    ho, wo = _out(h, k, stride, padding, 1), _out(w, k, stride, padding, 1)
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)), constant_values=-np.inf)
    stack = np.stack([v for _, _, v in _windows(xp, k, stride, 1, ho, wo)])
    arg = stack.argmax(axis=0)
    y = np.take_along_axis(stack, arg[None], axis=0)[0]

    def back(g):
        gs = np.zeros(stack.shape, dtype=g.dtype)
        np.put_along_axis(gs, arg[None], g[None], axis=0)
        gp = np.zeros(xp.shape, dtype=g.dtype)
        for (ki, kj, v), gk in zip(_windows(gp, k, stride, 1, ho, wo), gs):
            v += gk
        return (gp[:, padding : padding + h, padding : padding + w],)

    return _make(y, (x,), back)


def avg_pool2d(x: Tensor, k: int, stride: int, padding: int = 0) -> Tensor:
    """Mean over each window, zero padding included in the divisor."""
    c, h, w = x.shape
    ho, wo = _out(h, k, stride, padding, 1), _out(w, k, stride, padding, 1)
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    y = sum(v for _, _, v in _windows(xp, k, stride, 1, ho, wo)) / (k * k)

    def back(g):
        gp = np.zeros(xp.shape, dtype=g.dtype)
        for _, _, v in _windows(gp, k, stride, 1, ho, wo):
            v += g / (k * k)
        return (gp[:, padding : padding + h, padding : padding + w],)

    return _make(y, (x,), back)


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    sizes = [t.shape[axis] for t in xs]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(xs)))

    return _make(np.concatenate([t.data for t in xs], axis=axis), tuple(xs), back)


def parameters_size(params: Iterable[Tensor]) -> int:
    return sum(p.size for p in params)
