"""Reverse-mode automatic differentiation over dense float32 arrays.

Every value in the lab is a `Tensor`: a numpy float32 array plus an
optional gradient and the bookkeeping needed to replay the backward
pass. Operations build the compute graph eagerly; `Tensor.backward`
walks it once in reverse topological order, accumulating gradients
into every ancestor that requires them.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "no_grad",
    "upcast64",
    "is_grad_enabled",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "pow_",
    "sqrt",
    "relu",
    "gelu",
    "softmax",
    "layernorm",
    "reduce_sum",
    "reduce_mean",
    "reduce_max",
    "reshape",
    "transpose",
    "take",
    "stack",
    "dropout",
    "mse_loss",
    "cross_entropy",
]


class ShapeError(ValueError):
    """Raised when operand shapes cannot be combined."""


_GRAD_ENABLED = True
_DTYPE = np.float32


class upcast64:
    """Context manager: new tensors and reductions run in float64.

    Training never uses this; the finite-difference oracle does, so the
    difference quotient is not drowned by single-precision forward noise.
    Existing float32 arrays are left in place; numpy promotion carries
    the computation in double once any operand is double.
    """

    def __enter__(self):
        global _DTYPE
        self._prev = _DTYPE
        _DTYPE = np.float64
        return self

    def __exit__(self, *exc):
        global _DTYPE
        _DTYPE = self._prev
        return False


class no_grad:
    """Context manager that suspends graph recording (evaluation mode)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=_DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

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
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, free_graph: bool = True) -> None:
        """Populate `.grad` for every requires_grad ancestor of this scalar.

        Gradients accumulate (+=) across fan-out, so a value used twice
        receives the sum of both contributions. `free_graph` drops the
        recorded parent links afterwards so activations can be collected.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward requires a scalar root, got shape {self.data.shape}"
            )
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        if free_graph:
            for node in order:
                if node is not self:
                    node._parents = ()
                    node._backward = None

    # operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return pow_(self, p)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], bwd) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = bwd
    return out


def _acc(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    # never write in place: g may alias a view of another gradient
    t.grad = g.astype(t.data.dtype, copy=False) if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `g` down to `shape`, inverting numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# elementwise ------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _tensor(a), _tensor(b)
    data = a.data + b.data

    def bwd(g):
        _acc(a, _unbroadcast(g, a.data.shape))
        _acc(b, _unbroadcast(g, b.data.shape))

    return _node(data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = _tensor(a), _tensor(b)
    data = a.data - b.data

    def bwd(g):
        _acc(a, _unbroadcast(g, a.data.shape))
        _acc(b, _unbroadcast(-g, b.data.shape))

    return _node(data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = _tensor(a), _tensor(b)
    data = a.data * b.data

    def bwd(g):
        _acc(a, _unbroadcast(g * b.data, a.data.shape))
        _acc(b, _unbroadcast(g * a.data, b.data.shape))

    return _node(data, (a, b), bwd)


def div(a, b) -> Tensor:
    a, b = _tensor(a), _tensor(b)
    data = a.data / b.data

    def bwd(g):
        _acc(a, _unbroadcast(g / b.data, a.data.shape))
        _acc(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _node(data, (a, b), bwd)


def neg(a) -> Tensor:
    a = _tensor(a)

    def bwd(g):
        _acc(a, -g)

    return _node(-a.data, (a,), bwd)


def pow_(a, p: float) -> Tensor:
    a = _tensor(a)
    p = float(p)
    data = a.data**p

    def bwd(g):
        _acc(a, g * p * a.data ** (p - 1.0))

    return _node(data, (a,), bwd)


def sqrt(a) -> Tensor:
    a = _tensor(a)
    data = np.sqrt(a.data)

    def bwd(g):
        _acc(a, g * 0.5 / data)

    return _node(data, (a,), bwd)


def relu(a) -> Tensor:
    a = _tensor(a)
    data = np.maximum(a.data, 0.0)

    def bwd(g):
        _acc(a, g * (a.data > 0.0))

    return _node(data, (a,), bwd)


def gelu(a) -> Tensor:
    """tanh-approximation GELU."""
    a = _tensor(a)
    c = np.float32(np.sqrt(2.0 / np.pi))
    x = a.data
    inner = c * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    data = 0.5 * x * (1.0 + t)

    def bwd(g):
        dinner = c * (1.0 + 3 * 0.044715 * x**2)
        da = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
        _acc(a, g * da)

    return _node(data, (a,), bwd)


# linear algebra ----------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _tensor(a), _tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(
            f"matmul needs matrices, got shapes {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(
            f"matmul inner dimensions disagree: {a.data.shape} x {b.data.shape}"
        )
    data = a.data @ b.data

    def bwd(g):
        _acc(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
        _acc(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))

    return _node(data, (a, b), bwd)


# normalization -----------------------------------------------------------


def softmax(x, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along `axis`.

    -inf entries come out exactly 0; each slice must keep at least one
    finite entry.
    """
    x = _tensor(x)
    z = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(z)
    data = e / np.sum(e, axis=axis, keepdims=True)

    def bwd(g):
        s = np.sum(g * data, axis=axis, keepdims=True)
        _acc(x, (g - s) * data)

    return _node(data, (x,), bwd)


def layernorm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Zero-mean/unit-variance over the last axis, then affine."""
    x, gain, bias = _tensor(x), _tensor(gain), _tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.float32(eps))
    xhat = xc * inv
    data = xhat * gain.data + bias.data

    def bwd(g):
        n = x.data.shape[-1]
        if gain.requires_grad:
            _acc(gain, (g * xhat).reshape(-1, n).sum(axis=0))
        if bias.requires_grad:
            _acc(bias, g.reshape(-1, n).sum(axis=0))
        gg = g * gain.data
        gx = inv * (
            gg
            - gg.mean(axis=-1, keepdims=True)
            - xhat * (gg * xhat).mean(axis=-1, keepdims=True)
        )
        _acc(x, gx)

    return _node(data, (x, gain, bias), bwd)


# reductions & movement ----------------------------------------------------


def reduce_max(x, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Max along one axis; subgradient routes to the lowest argmax index."""
    x = _tensor(x)
    data = x.data.max(axis=axis, keepdims=keepdims)
    am = np.argmax(x.data, axis=axis)  # first occurrence = lowest index

    def bwd(g):
        mask = np.zeros_like(x.data)
        np.put_along_axis(mask, np.expand_dims(am, axis), 1.0, axis=axis)
        gexp = g if keepdims else np.expand_dims(g, axis)
        _acc(x, mask * gexp)

    return _node(data, (x,), bwd)


def reduce_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            gx = np.broadcast_to(g, x.data.shape)
        else:
            gexp = g if keepdims else np.expand_dims(g, axis)
            gx = np.broadcast_to(gexp, x.data.shape)
        _acc(x, gx)

    return _node(data, (x,), bwd)


def reduce_mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _tensor(x)
    data = x.data.mean(axis=axis, keepdims=keepdims)
    scale = x.data.dtype.type(data.size / x.data.size)

    def bwd(g):
        if axis is None:
            gx = np.broadcast_to(g * scale, x.data.shape)
        else:
            gexp = g if keepdims else np.expand_dims(g, axis)
            gx = np.broadcast_to(gexp * scale, x.data.shape)
        _acc(x, gx)

    return _node(data, (x,), bwd)


def reshape(x, shape) -> Tensor:
    x = _tensor(x)
    data = x.data.reshape(shape)

    def bwd(g):
        _acc(x, g.reshape(x.data.shape))

    return _node(data, (x,), bwd)


def transpose(x, axes) -> Tensor:
    x = _tensor(x)
    axes = tuple(axes)
    data = x.data.transpose(axes)
    inverse = tuple(np.argsort(axes))

    def bwd(g):
        _acc(x, g.transpose(inverse))

    return _node(data, (x,), bwd)


def take(x, indices, axis: int = 0) -> Tensor:
    """Gather slices of `x` along `axis`; backward scatter-adds."""
    x = _tensor(x)
    idx = np.asarray(indices, dtype=np.int64)
    data = np.take(x.data, idx, axis=axis)

    def bwd(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            np.add.at(gx, (slice(None),) * axis + (idx,), g)
            _acc(x, gx)

    return _node(data, (x,), bwd)


def stack(tensors, axis: int = 0) -> Tensor:
    ts = tuple(_tensor(t) for t in tensors)
    data = np.stack([t.data for t in ts], axis=axis)

    def bwd(g):
        for i, t in enumerate(ts):
            _acc(t, np.take(g, i, axis=axis))

    return _node(data, ts, bwd)


def dropout(x, rate: float, rng=None, training: bool = False) -> Tensor:
    """Inverted dropout; identity unless training with rate > 0."""
    x = _tensor(x)
    if not training or rate <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = 1.0 - rate
    mask = (rng.random(x.data.shape) < keep).astype(x.data.dtype) / x.data.dtype.type(keep)
    data = x.data * mask

    def bwd(g):
        _acc(x, g * mask)

    return _node(data, (x,), bwd)


# losses -------------------------------------------------------------------


def mse_loss(pred, target) -> Tensor:
    pred, target = _tensor(pred), _tensor(target)
    if pred.data.shape != target.data.shape:
        raise ShapeError(
            f"mse_loss shapes disagree: {pred.data.shape} vs {target.data.shape}"
        )
    diff = sub(pred, target)
    return reduce_mean(mul(diff, diff))


def cross_entropy(logits, targets, ignore_index: int | None = None) -> Tensor:
    """Mean negative log-likelihood of integer `targets` under `logits`.

    `logits` is (N, V) (a single (V,) row is promoted); targets equal to
    `ignore_index` contribute nothing to loss or gradient.
    """
    logits = _tensor(logits)
    if logits.data.ndim == 1:
        logits = reshape(logits, (1, -1))
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy expects (N, V) logits, got {logits.data.shape}")
    t = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    n, v = logits.data.shape
    if t.shape != (n,):
        raise ShapeError(f"cross_entropy got {n} rows but targets shape {t.shape}")
    valid = np.ones(n, dtype=bool) if ignore_index is None else t != ignore_index
    if np.any((t[valid] < 0) | (t[valid] >= v)):
        bad = t[valid][(t[valid] < 0) | (t[valid] >= v)][0]
        raise ValueError(f"vocabulary error: target {bad} outside [0, {v})")
    count = int(valid.sum())
    if count == 0:
        raise ValueError("cross_entropy: every target is ignored")

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    rows = np.arange(n)[valid]
    loss = np.asarray(-logp[rows, t[valid]].sum() / count, dtype=logits.data.dtype)

    def bwd(g):
        p = np.exp(logp)
        p[rows, t[valid]] -= 1.0
        p[~valid] = 0.0
        _acc(logits, g * p / np.float32(count))

    return _node(loss, (logits,), bwd)
