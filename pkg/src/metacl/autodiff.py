"""Reverse-mode automatic differentiation over dense float64 tensors.

A dynamic tape: every differentiable operation appends a graph node with a
monotonically increasing sequence number, and ``backward`` replays the nodes
reachable from the loss in exact reverse construction order. The engine covers
what an MLP stack needs -- affine maps, ReLU, softmax cross-entropy, Euclidean
distances, elementwise arithmetic with numpy-style broadcasting -- plus plain
SGD on the resulting gradients.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager

import numpy as np

from .errors import ContractError, DimensionError

_node_seq = itertools.count()
_grad_enabled = True

# Finite stand-in for -inf: exp(-1e9) underflows to exactly 0.0 in float64,
# so masked logits get exactly zero softmax probability without NaN risk.
MASK_FILL = -1e9


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled():
    return _grad_enabled


class Node:
    """One recorded operation: kind, input tensors, output, and a closure
    mapping the output gradient to input gradients."""

    __slots__ = ("op", "inputs", "out", "backward_fn", "seq")

    def __init__(self, op, inputs, out, backward_fn):
        self.op = op
        self.inputs = inputs
        self.out = out
        self.backward_fn = backward_fn
        self.seq = next(_node_seq)


class Tensor:
    """Dense n-dimensional float64 value, optionally participating in grads.

    ``data`` is a row-major numpy array; ``grad`` (same shape) appears after a
    backward pass for every tensor with ``requires_grad``.
    """

    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self):
        """Gradient-disconnected copy of the current value."""
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # operator sugar; scalars are wrapped as constants
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def parameter(data, rng=None):
    """Trainable tensor (requires_grad on)."""
    return Tensor(data, requires_grad=True)


def _make(op, out_data, inputs, backward_fn):
    out = Tensor(out_data)
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = Node(op, inputs, out, backward_fn)
    return out


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic (numpy broadcasting rules)

def add(a, b):
    def backward_fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make("add", a.data + b.data, (a, b), backward_fn)


def sub(a, b):
    def backward_fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make("sub", a.data - b.data, (a, b), backward_fn)


def mul(a, b):
    def backward_fn(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return _make("mul", a.data * b.data, (a, b), backward_fn)


def div(a, b):
    def backward_fn(g):
        return (_unbroadcast(g / b.data, a.data.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make("div", a.data / b.data, (a, b), backward_fn)


def neg(a):
    def backward_fn(g):
        return (-g,)

    return _make("neg", -a.data, (a,), backward_fn)


def relu(x):
    """Elementwise max(0, x); subgradient at 0 is 0."""
    mask = x.data > 0

    def backward_fn(g):
        return (g * mask,)

    return _make("relu", np.where(mask, x.data, 0.0), (x,), backward_fn)


def sqrt(x):
    """Elementwise square root; negatives clamp to 0, subgradient at 0 is 0."""
    out_data = np.sqrt(np.maximum(x.data, 0.0))

    def backward_fn(g):
        return (np.where(out_data > 0, 0.5 * g / np.where(out_data > 0, out_data, 1.0), 0.0),)

    return _make("sqrt", out_data, (x,), backward_fn)


def tsum(x, axis=None, keepdims=False):
    """Sum over all entries or one axis."""
    def backward_fn(g):
        if axis is None:
            return (np.broadcast_to(g, x.data.shape).copy(),)
        g_exp = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g_exp, x.data.shape).copy(),)

    return _make("sum", x.data.sum(axis=axis, keepdims=keepdims), (x,), backward_fn)


def tmean(x, axis=None, keepdims=False):
    n = x.data.size if axis is None else x.data.shape[axis]

    def backward_fn(g):
        if axis is None:
            return (np.broadcast_to(g / n, x.data.shape).copy(),)
        g_exp = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g_exp / n, x.data.shape).copy(),)

    return _make("mean", x.data.mean(axis=axis, keepdims=keepdims), (x,), backward_fn)


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul: incompatible shapes {a.data.shape} x {b.data.shape}")

    def backward_fn(g):
        return g @ b.data.T, a.data.T @ g

    return _make("matmul", a.data @ b.data, (a, b), backward_fn)


def gather_rows(table, indices):
    """Row lookup ``table[indices]`` (embedding); scatter-adds on backward."""
    idx = np.asarray(indices, dtype=np.int64)

    def backward_fn(g):
        out = np.zeros_like(table.data)
        np.add.at(out, idx, g)
        return (out,)

    return _make("gather_rows", table.data[idx], (table,), backward_fn)


def slice_cols(x, n):
    """First ``n`` columns of a matrix; zero-pads the gradient."""
    def backward_fn(g):
        out = np.zeros_like(x.data)
        out[:, :n] = g
        return (out,)

    return _make("slice_cols", x.data[:, :n].copy(), (x,), backward_fn)


def mask_cols(x, valid, fill=MASK_FILL):
    """Replace columns >= ``valid`` with ``fill``; masked columns get no grad."""
    out_data = x.data.copy()
    out_data[:, valid:] = fill

    def backward_fn(g):
        g = g.copy()
        g[:, valid:] = 0.0
        return (g,)

    return _make("mask_cols", out_data, (x,), backward_fn)


# ---------------------------------------------------------------------------
# losses

def log_softmax(x):
    """Row-wise log-softmax with max-subtraction stabilization."""
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out_data = shifted - log_z
    softmax = np.exp(out_data)

    def backward_fn(g):
        return (g - softmax * g.sum(axis=1, keepdims=True),)

    return _make("log_softmax", out_data, (x,), backward_fn)


def softmax_cross_entropy(logits, targets):
    """Mean over the batch of -log softmax(logits)[target].

    ``targets`` is an integer class-index vector of length B.
    """
    if logits.data.ndim != 2:
        raise DimensionError(f"softmax_cross_entropy: logits must be 2-D, got {logits.data.shape}")
    targets = np.asarray(targets, dtype=np.int64)
    n, c = logits.data.shape
    if targets.shape != (n,):
        raise DimensionError(
            f"softmax_cross_entropy: {n} logit rows vs {targets.shape} targets")
    if targets.size and (targets.min() < 0 or targets.max() >= c):
        raise IndexError(
            f"softmax_cross_entropy: target out of range for {c} classes")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    softmax = np.exp(log_probs)
    loss = -log_probs[np.arange(n), targets].mean()

    def backward_fn(g):
        grad = softmax.copy()
        grad[np.arange(n), targets] -= 1.0
        return (grad * (g / n),)

    return _make("softmax_ce", loss, (logits,), backward_fn)


def soft_cross_entropy(logits, target_probs):
    """Mean over rows of -sum(target_probs * log softmax(logits)).

    ``target_probs`` is a constant (B, C) array of target distributions.
    """
    probs = np.asarray(target_probs, dtype=np.float64)
    if probs.shape != logits.data.shape:
        raise DimensionError(
            f"soft_cross_entropy: logits {logits.data.shape} vs targets {probs.shape}")
    n = logits.data.shape[0]
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    softmax = np.exp(log_probs)
    loss = -(probs * log_probs).sum(axis=1).mean()

    def backward_fn(g):
        row_mass = probs.sum(axis=1, keepdims=True)
        return ((softmax * row_mass - probs) * (g / n),)

    return _make("soft_ce", loss, (logits,), backward_fn)


def l2_distance(a, b):
    """Euclidean norm of (a - b), averaged over batch rows.

    1-D inputs are treated as a single row. Zero distance propagates a zero
    subgradient.
    """
    if a.data.shape != b.data.shape:
        raise DimensionError(
            f"l2_distance: shapes differ, {a.data.shape} vs {b.data.shape}")
    diff = a.data - b.data
    rows = diff.reshape(1, -1) if diff.ndim == 1 else diff.reshape(diff.shape[0], -1)
    norms = np.sqrt((rows * rows).sum(axis=1))
    n = rows.shape[0]
    loss = norms.mean()

    def backward_fn(g):
        safe = np.where(norms > 0, norms, 1.0)
        scale = np.where(norms > 0, 1.0 / safe, 0.0) / n
        grad = (rows * scale[:, None] * g).reshape(a.data.shape)
        return grad, -grad

    return _make("l2_distance", loss, (a, b), backward_fn)


# ---------------------------------------------------------------------------
# backward pass and SGD

def backward(loss):
    """Populate ``grad`` on every requires_grad tensor reachable from ``loss``.

    Repeated calls without zeroing accumulate, matching the usual semantics.
    """
    if loss.data.size != 1:
        raise ContractError(
            f"backward: loss must be scalar, got shape {loss.data.shape}")

    nodes = []
    seen = set()
    stack = [loss]
    while stack:
        t = stack.pop()
        node = t.node
        if node is not None and id(node) not in seen:
            seen.add(id(node))
            nodes.append(node)
            stack.extend(node.inputs)
    nodes.sort(key=lambda n: n.seq, reverse=True)

    # flow gradients through a scratch map so repeated backward calls add
    # exactly one extra unit of gradient per call
    flows = {id(loss): (loss, np.ones_like(loss.data))}
    for node in nodes:
        entry = flows.get(id(node.out))
        if entry is None:
            continue
        grads = node.backward_fn(entry[1])
        for inp, g in zip(node.inputs, grads):
            if g is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in flows:
                flows[key] = (inp, flows[key][1] + g)
            else:
                flows[key] = (inp, g)

    for tensor, g in flows.values():
        if tensor.requires_grad:
            tensor.grad = g if tensor.grad is None else tensor.grad + g


def zero_grads(params):
    for p in params:
        p.grad = None


def sgd_step(params, lr):
    """In-place ``p -= lr * grad`` for each parameter, then clear the grads."""
    if lr <= 0:
        raise ContractError(f"sgd_step: learning rate must be positive, got {lr}")
    params = list(params)
    for p in params:
        if p.grad is None:
            raise ContractError("sgd_step: parameter has no gradient")
    for p in params:
        p.data -= lr * p.grad
        p.grad = None


def assert_finite(tensor, label="tensor"):
    if not np.all(np.isfinite(tensor.data)):
        raise FloatingPointError(f"{label} contains NaN or Inf")
