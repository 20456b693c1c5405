"""Small float64 array engine with reverse-mode gradients and multiply-accumulate counting.

Only the operations the temporal-reasoning models need are provided. MACs are
counted for matmul and convolutions during the forward pass; elementwise ops,
reductions, softmax and the backward pass are not counted.
"""

from __future__ import annotations

import contextvars
import itertools
import math
import os
from typing import Callable, Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_counters: contextvars.ContextVar[tuple] = contextvars.ContextVar("aztr_flop_counters", default=())
_debug = os.environ.get("AZTR_DEBUG", "") not in ("", "0")


def set_debug(flag: bool) -> None:
    """Toggle NaN/Inf checks after every op."""
    global _debug
    _debug = bool(flag)


class FlopCounter:
    """Counts MACs issued inside its ``with`` block (current context only).

    Counters nest: an op inside two active blocks is counted by both.
    """

    def __init__(self):
        self.total = 0
        self._token = None

    def add(self, macs: int) -> None:
        if macs < 0:
            raise ValueError("negative MAC count")
        self.total += int(macs)

    def __enter__(self):
        self._token = _counters.set(_counters.get() + (self,))
        return self

    def __exit__(self, *exc):
        _counters.reset(self._token)
        self._token = None


def _count(macs: int) -> None:
    for c in _counters.get():
        c.add(macs)


class GraphConsumedError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), _backward=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents = _parents
        self._backward = _backward
        self._consumed = False
        if _debug and not np.all(np.isfinite(self.data)):
            raise FloatingPointError(f"non-finite values in tensor of shape {self.data.shape}")

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other), scale(self, -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other: float):
        return scale(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self) -> "Tensor":
        return total(self)

    def mean(self, axis: int) -> "Tensor":
        return mean(self, axis)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf with ``requires_grad``.

        The recorded graph is released afterwards; calling backward through it
        again raises :class:`GraphConsumedError`.
        """
        if self._consumed:
            raise GraphConsumedError("graph already consumed by a previous backward()")
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.data.shape:
            raise ValueError(f"gradient shape {grad.shape} != output shape {self.data.shape}")

        order = _topo_order(self)
        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
        for node in order:
            if node._backward is not None:
                node._backward = None
                node._parents = ()
                node._consumed = True


def _topo_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        if node._consumed:
            raise GraphConsumedError("graph already consumed by a previous backward()")
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents: Sequence[Tensor], backward) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), backward)
    return Tensor(data)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _result(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def scale(x: Tensor, s: float) -> Tensor:
    return _result(x.data * s, (x,), lambda g: (g * s,))


def _swap(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, leading axes broadcast."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs at least 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)
    _count(math.prod(out.shape) * a.shape[-1])

    def backward(g):
        return (_unbroadcast(np.matmul(g, _swap(b.data)), a.shape),
                _unbroadcast(np.matmul(_swap(a.data), g), b.shape))

    return _result(out, (a, b), backward)


def transpose(x: Tensor) -> Tensor:
    return _result(_swap(x.data), (x,), lambda g: (_swap(g),))


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),))


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def total(x: Tensor) -> Tensor:
    return _result(x.data.sum(), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean(x: Tensor, axis: int) -> Tensor:
    n = x.shape[axis]
    out = x.data.mean(axis=axis)

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape) / n,)

    return _result(out, (x,), backward)


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax along the last axis (max-subtracted)."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (x,), backward)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    squeeze = logits.ndim == 1
    data = logits.data[None] if squeeze else logits.data
    labels = np.atleast_1d(np.asarray(labels, dtype=np.intp))
    if data.ndim != 2 or labels.shape != (data.shape[0],):
        raise ValueError(f"cross_entropy shape mismatch: logits {logits.shape}, labels {labels.shape}")
    z = data - data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(len(labels))
    loss = -logp[rows, labels].mean()

    def backward(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        p *= g / len(labels)
        return (p[0] if squeeze else p,)

    return _result(loss, (logits,), backward)


IntOrTuple = Union[int, Sequence[int]]


def _tuplify(v: IntOrTuple, d: int, name: str) -> tuple[int, ...]:
    t = (int(v),) * d if isinstance(v, (int, np.integer)) else tuple(int(i) for i in v)
    if len(t) != d:
        raise ValueError(f"{name} needs {d} values, got {t}")
    return t


def _convnd(x, k, stride: IntOrTuple, padding: IntOrTuple, d: int) -> Tensor:
    x, k = _as_tensor(x), _as_tensor(k)
    if k.ndim != d + 2:
        raise ValueError(f"kernel must be {d + 2}-D (F, C, k...), got shape {k.shape}")
    batched = x.ndim == d + 2
    if x.ndim not in (d + 1, d + 2):
        raise ValueError(f"input must be {d + 1}-D (C, ...) or {d + 2}-D (B, C, ...), got shape {x.shape}")
    xd = x.data if batched else x.data[None]
    F, C = k.shape[:2]
    ks = k.shape[2:]
    if xd.shape[1] != C:
        raise ValueError(f"input has {xd.shape[1]} channels, kernel expects {C}")
    s = _tuplify(stride, d, "stride")
    p = _tuplify(padding, d, "padding")
    if any(v < 1 for v in s) or any(v < 0 for v in p):
        raise ValueError("stride must be >= 1 and padding >= 0")
    sp_in = xd.shape[2:]
    if any(n + 2 * pp < kk for n, pp, kk in zip(sp_in, p, ks)):
        raise ValueError(f"kernel {ks} larger than padded input {sp_in} (padding {p})")
    out_sp = tuple((n + 2 * pp - kk) // ss + 1 for n, pp, kk, ss in zip(sp_in, p, ks, s))

    xp = np.pad(xd, [(0, 0), (0, 0)] + [(pp, pp) for pp in p])
    sp_axes = tuple(range(2, 2 + d))
    win = sliding_window_view(xp, ks, axis=sp_axes)
    win = win[(slice(None), slice(None)) + tuple(slice(None, None, ss) for ss in s)]
    win = win[(slice(None), slice(None)) + tuple(slice(0, o) for o in out_sp)]
    # win: (B, C, *out, *ks)
    ker_axes = tuple(range(2 + d, 2 + 2 * d))
    out = np.tensordot(win, k.data, axes=((1,) + ker_axes, (1,) + tuple(range(2, 2 + d))))
    out = np.moveaxis(out, -1, 1)  # (B, F, *out)
    _count(xd.shape[0] * F * math.prod(out_sp) * C * math.prod(ks))

    def backward(g):
        gb = g if batched else g[None]
        out_axes = tuple(range(2, 2 + d))
        gk = np.tensordot(gb, win, axes=((0,) + out_axes, (0,) + out_axes))  # (F, C, *ks)
        gxp = np.zeros_like(xp)
        for off in itertools.product(*(range(kk) for kk in ks)):
            idx = (slice(None), slice(None)) + tuple(
                slice(o, o + ss * (n - 1) + 1, ss) for o, ss, n in zip(off, s, out_sp)
            )
            kslice = k.data[(slice(None), slice(None)) + off]  # (F, C)
            gxp[idx] += np.moveaxis(np.tensordot(gb, kslice, axes=((1,), (0,))), -1, 1)
        crop = (slice(None), slice(None)) + tuple(slice(pp, pp + n) for pp, n in zip(p, sp_in))
        gx = gxp[crop]
        return (gx if batched else gx[0], gk)

    return _result(out if batched else out[0], (x, k), backward)


def conv1d_temporal(x, kernels, stride: IntOrTuple = 1, padding: IntOrTuple = 0) -> Tensor:
    """(C, T) * (F, C, kt) -> (F, T'). Cross-correlation, zero padding."""
    return _convnd(x, kernels, stride, padding, 1)


def conv2d(x, kernels, stride: IntOrTuple = 1, padding: IntOrTuple = 0) -> Tensor:
    """(C, H, W) * (F, C, kh, kw) -> (F, H', W'). Cross-correlation, zero padding."""
    return _convnd(x, kernels, stride, padding, 2)


def conv3d(x, kernels, stride: IntOrTuple = 1, padding: IntOrTuple = 0) -> Tensor:
    """(C, T, H, W) * (F, C, kt, kh, kw) -> (F, T', H', W'). Cross-correlation, zero padding."""
    return _convnd(x, kernels, stride, padding, 3)


def conv_output_size(n: int, k: int, stride: int = 1, padding: int = 0) -> int:
    return (n + 2 * padding - k) // stride + 1


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between backward() gradients and central differences.

    Per coordinate the error is ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    xg = Tensor(np.array(x.data, copy=True), requires_grad=True)
    out = f(xg)
    if out.requires_grad:
        out.backward()
    analytic = xg.grad if xg.grad is not None else np.zeros_like(xg.data)

    base = np.array(x.data, copy=True)
    numeric = np.zeros_like(base)
    flat = base.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(Tensor(base)).item()
        flat[i] = orig - eps
        lo = f(Tensor(base)).item()
        flat[i] = orig
        nflat[i] = (hi - lo) / (2 * eps)
    err = np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(err.max()) if err.size else 0.0
