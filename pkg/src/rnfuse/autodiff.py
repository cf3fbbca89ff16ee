"""Reverse-mode automatic differentiation over numpy arrays.

A small define-by-run tape: every operation returns a :class:`Tensor` holding
its value, the parent tensors, and a vector-Jacobian-product closure.
``backward`` walks the graph in reverse topological order and accumulates
gradients into leaf tensors created with ``requires_grad=True``.

Operations are array-valued (whole batches per node), so the Python overhead
per node is negligible next to the underlying BLAS calls.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("value", "grad", "parents", "vjp", "requires_grad")

    def __init__(self, value, parents=(), vjp=None, requires_grad=False):
        self.value = value if isinstance(value, np.ndarray) else np.asarray(value)
        self.grad = None
        self.parents = parents
        self.vjp = vjp
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad})"

    # operator sugar, used sparingly in loss assembly
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def param(value):
    """Leaf tensor that accumulates a gradient."""
    return Tensor(np.asarray(value), requires_grad=True)


def constant(value):
    return Tensor(np.asarray(value))


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _accumulate(tensor, grad):
    # copy on first write: vjp outputs may alias sibling grads or views
    if tensor.grad is None:
        if grad.shape != tensor.value.shape:
            grad = np.broadcast_to(grad, tensor.value.shape)
        tensor.grad = np.array(grad)
    else:
        np.add(tensor.grad, grad, out=tensor.grad)


def backward(loss):
    """Backpropagate from a scalar-rooted tensor.

    Gradients land in ``.grad`` of every reachable tensor with
    ``requires_grad=True``. Raises ``ValueError`` if the root is not scalar.
    """
    if loss.value.size != 1:
        raise ValueError(f"backward root must be scalar, got shape {loss.value.shape}")

    # iterative topological order (graphs can be a few hundred nodes deep)
    order = []
    seen = {id(loss)}
    stack = [(loss, iter(loss.parents))]
    while stack:
        node, it = stack[-1]
        advanced = False
        for p in it:
            if id(p) not in seen and p.requires_grad and p.vjp is not None:
                seen.add(id(p))
                stack.append((p, iter(p.parents)))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack.pop()

    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node.vjp is None or node.grad is None:
            continue
        for parent, g in zip(node.parents, node.vjp(node.grad)):
            if g is not None and parent.requires_grad:
                _accumulate(parent, g)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)

    def vjp(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)

    return Tensor(a.value + b.value, (a, b), vjp)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)

    def vjp(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape)

    return Tensor(a.value - b.value, (a, b), vjp)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)

    def vjp(g):
        ga = _unbroadcast(g * b.value, a.value.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.value, b.value.shape) if b.requires_grad else None
        return ga, gb

    return Tensor(a.value * b.value, (a, b), vjp)


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.value / b.value

    def vjp(g):
        ga = _unbroadcast(g / b.value, a.value.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.value, b.value.shape) if b.requires_grad else None
        return ga, gb

    return Tensor(out, (a, b), vjp)


def square(a):
    a = _as_tensor(a)

    def vjp(g):
        return (g * (2.0 * a.value),)

    return Tensor(a.value * a.value, (a,), vjp)


def absolute(a):
    a = _as_tensor(a)
    s = np.sign(a.value)

    def vjp(g):
        return (g * s,)

    return Tensor(np.abs(a.value), (a,), vjp)


def maximum0(a):
    """max(x, 0); subgradient 0 at the kink."""
    a = _as_tensor(a)
    mask = a.value > 0.0

    def vjp(g):
        return (g * mask,)

    return Tensor(np.maximum(a.value, 0.0), (a,), vjp)


def clip(a, lo, hi):
    a = _as_tensor(a)
    mask = (a.value > lo) & (a.value < hi)

    def vjp(g):
        return (g * mask,)

    return Tensor(np.clip(a.value, lo, hi), (a,), vjp)


def exp(a):
    a = _as_tensor(a)
    out = np.exp(a.value)

    def vjp(g):
        return (g * out,)

    return Tensor(out, (a,), vjp)


def log(a):
    a = _as_tensor(a)

    def vjp(g):
        return (g / a.value,)

    return Tensor(np.log(a.value), (a,), vjp)


def sigmoid(a):
    a = _as_tensor(a)
    out = _sigmoid_np(a.value)

    def vjp(g):
        return (g * (out * (1.0 - out)),)

    return Tensor(out, (a,), vjp)


def softplus(a, beta=1.0):
    """softplus(beta*x)/beta, numerically stable for large |x|."""
    from . import fastops

    a = _as_tensor(a)
    out, sig = fastops.softplus_pair(np.asarray(a.value, dtype=np.result_type(a.value, np.float32)), beta)

    def vjp(g):
        return (g * sig,)

    return Tensor(out, (a,), vjp)


def _sigmoid_np(z):
    from . import fastops

    return fastops.sigmoid(z)


# ---------------------------------------------------------------------------
# reductions and shaping


def sum_(a, axis=None, keepdims=False):
    a = _as_tensor(a)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.value.shape),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.value.shape),)

    return Tensor(a.value.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def mean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    n = a.value.size if axis is None else a.value.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape):
    a = _as_tensor(a)

    def vjp(g):
        return (g.reshape(a.value.shape),)

    return Tensor(a.value.reshape(shape), (a,), vjp)


def slice_(a, key):
    a = _as_tensor(a)

    def vjp(g):
        out = np.zeros_like(a.value)
        out[key] = g
        return (out,)

    return Tensor(a.value[key], (a,), vjp)


def matmul(a, b, transpose_b=False):
    a, b = _as_tensor(a), _as_tensor(b)
    bv = b.value.T if transpose_b else b.value
    out = a.value @ bv

    def vjp(g):
        ga = g @ bv.T if a.requires_grad else None
        if b.requires_grad:
            gb = g.T @ a.value if transpose_b else a.value.T @ g
        else:
            gb = None
        return ga, gb

    return Tensor(out, (a, b), vjp)


def exclusive_cumprod(a, axis=-1):
    """P_i = prod_{j<i} x_j along ``axis`` (P_0 = 1).

    The backward pass divides by x, so callers must keep entries away
    from exact zero (a 1e-12 floor on 1-alpha is enough in practice).
    """
    a = _as_tensor(a)
    x = a.value
    P = np.cumprod(x, axis=axis)
    P = np.roll(P, 1, axis=axis)
    idx = [slice(None)] * x.ndim
    idx[axis] = 0
    P[tuple(idx)] = 1.0

    def vjp(g):
        s = g * P
        rev = [slice(None)] * x.ndim
        rev[axis] = slice(None, None, -1)
        rcs = np.cumsum(s[tuple(rev)], axis=axis)[tuple(rev)]
        # dx_j = sum_{i>j} g_i P_i / x_j  -> shift the reverse cumsum by one
        shifted = np.roll(rcs, -1, axis=axis)
        idx_last = [slice(None)] * x.ndim
        idx_last[axis] = -1
        shifted[tuple(idx_last)] = 0.0
        return (shifted / x,)

    return Tensor(P, (a,), vjp)


def dot_lights(g, lights):
    """Per-ray dot products grad . light for a constant light stack.

    g: (B, S, 3) tensor of spatial gradients, lights: (B, 3, 3) ndarray whose
    rows are illumination directions. Returns (B, S, 3).
    """
    g = _as_tensor(g)
    L = np.asarray(lights)
    out = np.einsum("bsj,blj->bsl", g.value, L, optimize=True)

    def vjp(up):
        return (np.einsum("bsl,blj->bsj", up, L, optimize=True),)

    return Tensor(out, (g,), vjp)
