"""Reverse-mode differentiation over the small op set the fusion models use.

Each op computes its value eagerly through :mod:`ovofusion.numerics` (so FLOPs
are charged exactly once, on the forward pass) and records a closure with its
backward rule. :func:`backward` walks the recorded graph in reverse
topological order.
"""

from __future__ import annotations

from typing import Callable, Iterable, List, Sequence, Tuple

import numpy as np

from . import numerics as nx
from .flops import FlopCounter


class Tensor:
    """A value in the graph. Constants have ``requires_grad=False`` and never get a gradient."""

    __slots__ = ("value", "parents", "backward_rule", "requires_grad", "op")

    def __init__(self, value, parents: Tuple["Tensor", ...] = (), backward_rule=None, op: str = "leaf"):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.backward_rule = backward_rule
        self.op = op
        self.requires_grad = any(p.requires_grad for p in parents)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Tensor(op={self.op}, shape={self.shape})"


class Parameter(Tensor):
    """A trainable leaf; ``grad`` always matches ``value`` in shape."""

    __slots__ = ("name", "grad")

    def __init__(self, value, name: str = ""):
        super().__init__(np.array(value, dtype=np.float64, order="C"))
        self.requires_grad = True
        self.name = name
        self.grad = np.zeros_like(self.value)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _node(value, parents: Sequence[Tensor], rule: Callable, op: str) -> Tensor:
    return Tensor(value, tuple(parents), rule, op)


# -- ops -----------------------------------------------------------------------


def matmul(a, b, counter: FlopCounter | None = None) -> Tensor:
    a, b = lift(a), lift(b)
    value = nx.matmul(a.value, b.value, counter)

    def rule(g):
        ga = _unbroadcast(g @ np.swapaxes(b.value, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.value, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(value, (a, b), rule, "matmul")


def add(a, b, counter: FlopCounter | None = None) -> Tensor:
    a, b = lift(a), lift(b)
    value = a.value + b.value
    if counter is not None:
        counter.add(value.size)
    return _node(value, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def mul(a, b, counter: FlopCounter | None = None) -> Tensor:
    a, b = lift(a), lift(b)
    value = a.value * b.value
    if counter is not None:
        counter.add(value.size)

    def rule(g):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return _node(value, (a, b), rule, "elementwise-mul")


def scale(a, factor: float, counter: FlopCounter | None = None) -> Tensor:
    a = lift(a)
    if counter is not None:
        counter.add(a.value.size)
    return _node(a.value * factor, (a,), lambda g: (g * factor,), "scale")


def divide(a, divisor: float, counter: FlopCounter | None = None) -> Tensor:
    a = lift(a)
    if counter is not None:
        counter.add(a.value.size)
    return _node(a.value / divisor, (a,), lambda g: (g / divisor,), "scale")


def relu(a, counter: FlopCounter | None = None) -> Tensor:
    a = lift(a)
    mask = a.value > 0
    if counter is not None:
        counter.add(a.value.size)
    return _node(a.value * mask, (a,), lambda g: (g * mask,), "relu")


def softmax(a, counter: FlopCounter | None = None) -> Tensor:
    """Row softmax over the last axis."""
    a = lift(a)
    s = nx.softmax_rows(a.value, counter)

    def rule(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _node(s, (a,), rule, "softmax-rows")


def swapaxes(a, axis1: int = -1, axis2: int = -2) -> Tensor:
    a = lift(a)
    return _node(np.swapaxes(a.value, axis1, axis2), (a,), lambda g: (np.swapaxes(g, axis1, axis2),), "transpose")


def reshape(a, shape: Tuple[int, ...]) -> Tensor:
    a = lift(a)
    original = a.shape
    return _node(a.value.reshape(shape), (a,), lambda g: (g.reshape(original),), "reshape")


def concat(tensors: Sequence, axis: int = -2) -> Tensor:
    tensors = [lift(t) for t in tensors]
    value = np.concatenate([t.value for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def rule(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(value, tensors, rule, "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [lift(t) for t in tensors]
    value = np.stack([t.value for t in tensors], axis=axis)

    def rule(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _node(value, tensors, rule, "concat")


def index(a, key) -> Tensor:
    """Basic (slice/int) indexing."""
    a = lift(a)

    def rule(g):
        full = np.zeros_like(a.value)
        full[key] = g
        return (full,)

    return _node(a.value[key], (a,), rule, "index")


def others_mean(a, axis: int, counter: FlopCounter | None = None) -> Tensor:
    """Leave-one-out means along ``axis`` (see :func:`numerics.others_means`)."""
    a = lift(a)
    value = nx.others_means(a.value, axis=axis, counter=counter)
    # the map is symmetric, so its adjoint is itself
    return _node(value, (a,), lambda g: (nx.others_means(g, axis=axis),), "mean")


def mean_except(tensors: Sequence, i: int, counter: FlopCounter | None = None) -> Tensor:
    """Mean of ``tensors`` excluding position ``i`` (ascending-order sum)."""
    tensors = [lift(t) for t in tensors]
    value = nx.mean_except([t.value for t in tensors], i, counter)
    k = len(tensors)

    def rule(g):
        share = g / (k - 1)
        return tuple(None if j == i else share for j in range(k))

    return _node(value, tensors, rule, "mean")


def total(a) -> Tensor:
    a = lift(a)
    return _node(a.value.sum(), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),), "sum")


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under row-softmax ``logits``."""
    logits = lift(logits)
    z = logits.value
    if z.ndim == 1:
        z = z[None, :]
    labels = np.atleast_1d(np.asarray(labels))
    classes = z.shape[-1]
    if labels.shape[0] != z.shape[0]:
        raise ValueError(f"{labels.shape[0]} labels for {z.shape[0]} rows of logits")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ValueError(f"label out of range for {classes} classes")
    labels = labels.astype(np.int64)
    shifted = z - z.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=-1))
    rows = np.arange(z.shape[0])
    loss = float(np.mean(log_norm - shifted[rows, labels]))

    def rule(g):
        p = np.exp(shifted - log_norm[:, None])
        p[rows, labels] -= 1.0
        return ((g * p / z.shape[0]).reshape(logits.shape),)

    return _node(np.asarray(loss), (logits,), rule, "cross-entropy")


# -- reverse pass --------------------------------------------------------------


def _topological(loss: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    seen = set()
    stack_ = [(loss, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Fill ``grad`` on every :class:`Parameter` reachable from a scalar ``loss``."""
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = _topological(loss)
    for node in order:
        if isinstance(node, Parameter):
            node.grad = np.zeros_like(node.value)
    grads = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            node.grad = node.grad + g
        if node.backward_rule is None:
            continue
        for parent, pg in zip(node.parents, node.backward_rule(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg


def check_gradients(
    loss_fn: Callable[[], Tensor], params: Iterable[Parameter], eps: float = 1e-5
) -> Tuple[float, str]:
    """Compare autograd gradients with central differences.

    Returns the worst ``|g_auto - g_fd| / max(1e-8, |g_auto| + |g_fd|)`` over
    every parameter entry, and the name of the parameter holding it.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    params = list(params)
    backward(loss_fn())
    worst, worst_name = 0.0, ""
    for p in params:
        auto = p.grad.copy()
        flat = p.value.reshape(-1)
        for idx in range(flat.size):
            original = flat[idx]
            flat[idx] = original + eps
            up = float(loss_fn().value)
            flat[idx] = original - eps
            down = float(loss_fn().value)
            flat[idx] = original
            if not (np.isfinite(up) and np.isfinite(down)):
                raise FloatingPointError(f"non-finite loss while perturbing {p.name!r}")
            fd = (up - down) / (2 * eps)
            ga = auto.reshape(-1)[idx]
            err = abs(ga - fd) / max(1e-8, abs(ga) + abs(fd))
            if err > worst:
                worst, worst_name = err, p.name
    return worst, worst_name
