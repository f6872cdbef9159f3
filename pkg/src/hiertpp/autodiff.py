"""Minimal reverse-mode automatic differentiation over numpy arrays.

Only the operations the hierarchical model needs are provided.  Each op
builds a node holding its value, its parents and a closure that maps the
upstream gradient to parent gradients.  Nodes whose parents carry no
gradient are folded into constants so inference paths stay cheap.
"""
from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, NumericError

# below this |u * d| the expm1(u d)/u kernel switches to its Taylor series
SERIES_CUTOFF = 1e-3
_grad_enabled = True
_dtype = np.float64


@contextmanager
def extended_precision():
    """Evaluate new nodes in np.longdouble (80-bit on x86); used by grad_check."""
    global _dtype
    saved, _dtype = _dtype, np.longdouble
    try:
        yield
    finally:
        _dtype = saved


@contextmanager
def no_grad():
    """Build constant nodes only; for inference and frozen sub-networks."""
    global _grad_enabled
    saved, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = saved


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "op", "name", "_parents", "_backward")

    def __init__(self, value, requires_grad=False, name=None, op="const",
                 parents=(), backward=None):
        self.value = np.asarray(value, dtype=_dtype)
        self.grad = None
        self.requires_grad = requires_grad
        self.op = op
        self.name = name
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    @property
    def T(self):
        return transpose(self)

    def __repr__(self):
        label = self.name or self.op
        return f"Tensor({label}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


def parameter(value, name) -> Tensor:
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name, op="param")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, op, parents, backward) -> Tensor:
    if not _grad_enabled or not any(p.requires_grad for p in parents):
        return Tensor(value, op=op)
    return Tensor(value, requires_grad=True, op=op, parents=parents, backward=backward)


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.value + b.value, "add", (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a) -> Tensor:
    return _node(-a.value, "neg", (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.value * b.value, "mul", (a, b),
                 lambda g: (_unbroadcast(g * b.value, a.shape),
                            _unbroadcast(g * a.value, b.shape)))


def matmul(a, b) -> Tensor:
    """Matrix product for 1-D and 2-D operands (numpy semantics)."""
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value

    def backward(g):
        if av.ndim == 1 and bv.ndim == 1:
            return g * bv, g * av
        if av.ndim == 1:
            return bv @ g, np.outer(av, g)
        if bv.ndim == 1:
            return np.outer(g, bv), av.T @ g
        return g @ bv.T, av.T @ g

    return _node(av @ bv, "matmul", (a, b), backward)


def transpose(a) -> Tensor:
    return _node(a.value.T, "transpose", (a,), lambda g: (g.T,))


def exp(a) -> Tensor:
    out = np.exp(a.value)
    return _node(out, "exp", (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    return _node(np.log(a.value), "log", (a,), lambda g: (g / a.value,))


def tanh(a) -> Tensor:
    out = np.tanh(a.value)
    return _node(out, "tanh", (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _node(out, "sigmoid", (a,), lambda g: (g * out * (1.0 - out),))


def sum(a, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = a.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _node(a.value.sum(axis=axis), "sum", (a,), backward)


def _is_basic(idx):
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (slice, int)) for p in parts)


def getitem(a, idx) -> Tensor:
    basic = _is_basic(idx)

    def backward(g):
        out = np.zeros(a.shape)
        if basic:
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return _node(a.value[idx], "getitem", (a,), backward)


def take_rows(table, idx) -> Tensor:
    """Row lookup ``table[idx]`` (embedding)."""
    idx = np.asarray(idx, dtype=np.intp)

    def backward(g):
        out = np.zeros(table.shape)
        np.add.at(out, idx, g)
        return (out,)

    return _node(table.value[idx], "take_rows", (table,), backward)


def log_softmax(a) -> Tensor:
    """Log-softmax along the last axis."""
    z = a.value - a.value.max(axis=-1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    probs = np.exp(out)
    return _node(out, "log_softmax", (a,),
                 lambda g: (g - probs * g.sum(axis=-1, keepdims=True),))


def pick(a, idx) -> Tensor:
    """Select ``a[i, idx[i]]`` from a 2-D tensor."""
    idx = np.asarray(idx, dtype=np.intp)
    rows = np.arange(a.shape[0])

    def backward(g):
        out = np.zeros(a.shape)
        out[rows, idx] = g
        return (out,)

    return _node(a.value[rows, idx], "pick", (a,), backward)


def expm1_ratio(u, d) -> Tensor:
    """``expm1(u * d) / u`` with the removable singularity at u = 0 filled in.

    ``u`` is a scalar tensor and ``d`` a constant array of durations; the
    result is the integrated unit-baseline compensator of an exponential-affine
    intensity.  Gradients are taken with respect to ``u`` only.
    """
    d = np.asarray(d.value if isinstance(d, Tensor) else d, dtype=np.float64)
    uv = u.value.reshape(-1)[0]
    x = uv * d
    small = np.abs(x) < SERIES_CUTOFF
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        val = np.where(small, d * (1.0 + x / 2.0 + x * x / 6.0 + x ** 3 / 24.0), np.expm1(x) / uv)
        dval = np.where(small, d * d * (0.5 + x / 3.0 + x * x / 8.0 + x ** 3 / 30.0),
                        (d * np.exp(x) * uv - np.expm1(x)) / (uv * uv))
    return _node(val, "expm1_ratio", (u,), lambda g: (np.reshape(np.sum(g * dval), u.shape),))


def where_mask(mask, a, b) -> Tensor:
    """Blend ``mask * a + (1 - mask) * b`` for a constant 0/1 mask."""
    mask = np.asarray(mask, dtype=np.float64)
    return add(mul(a, mask), mul(b, 1.0 - mask))


def _toposort(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
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
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(node) into ``.grad`` of every parameter upstream."""
    if loss.value.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    order = _toposort(loss)
    for i, node in enumerate(order):
        if not np.all(np.isfinite(node.value)):
            raise NumericError(f"non-finite value at node #{i} ({node.name or node.op}, "
                               f"shape {node.shape})")
    grads = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def forward_backward(loss_fn: Callable[[], Tensor],
                     params: Sequence[Tensor]) -> tuple[float, list[np.ndarray]]:
    """Evaluate ``loss_fn`` and return the loss with exact gradients for ``params``.

    Parameters not reachable from the loss receive exact zeros.
    """
    for p in params:
        p.grad = None
    loss = loss_fn()
    backward(loss)
    grads = [p.grad if p.grad is not None else np.zeros(p.shape) for p in params]
    for p in params:
        p.grad = None
    return float(loss.value), grads


def numeric_gradients(loss_fn: Callable[[], Tensor], params: Sequence[Tensor],
                      step: float = 1e-5, extended: bool = True) -> list[np.ndarray]:
    """Central differences ``(L(p + h) - L(p - h)) / 2h`` for every entry.

    With ``extended`` the perturbed losses are evaluated in np.longdouble, so
    the difference of two nearly equal losses keeps about three more digits;
    this matters for entries whose true gradient is ~1e-8 while the loss is
    O(10).  Parameter values are restored bit-exactly afterwards.
    """
    saved = [p.value for p in params]
    out = []
    try:
        with extended_precision() if extended else no_grad():
            for p in params:
                p.value = p.value.astype(_dtype)
            with no_grad():
                for p in params:
                    flat = p.value.reshape(-1)
                    g = np.empty(flat.size)
                    for i in range(flat.size):
                        orig = flat[i]
                        flat[i] = orig + step
                        up = loss_fn().value
                        flat[i] = orig - step
                        down = loss_fn().value
                        flat[i] = orig
                        g[i] = float((up - down) / (2 * step))
                    out.append(g.reshape(p.shape))
    finally:
        for p, v in zip(params, saved):
            p.value = v
    return out


def grad_check(loss_fn: Callable[[], Tensor], params: Iterable[Tensor],
               step: float = 1e-5, extended: bool = True) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    The error for each entry is |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    params = list(params)
    _, analytic = forward_backward(loss_fn, params)
    numeric = numeric_gradients(loss_fn, params, step, extended)
    worst = 0.0
    for ga, gn in zip(analytic, numeric):
        err = np.abs(ga - gn) / np.maximum(np.maximum(np.abs(ga), np.abs(gn)), 1e-8)
        worst = max(worst, float(err.max(initial=0.0)))
    return worst
