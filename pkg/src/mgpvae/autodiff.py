"""Minimal reverse-mode automatic differentiation on numpy arrays.

A :class:`Tensor` wraps an ndarray. Operations on tensors that require
gradients record their inputs and a local backward rule; :meth:`Tensor.backward`
walks the recorded graph in reverse topological order and accumulates
gradients into the leaves. Gradients are accumulated additively, so call
:meth:`Tensor.zero_grad` (or :func:`zero_grads`) between independent passes.
"""
import contextlib

import numpy as np

from .errors import NonScalarRoot, ShapeMismatch

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op")
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.parents = ()
        self.backward_fn = None
        self.op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return not self.parents

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every leaf that requires grad.

        ``grad`` seeds the pass (a cotangent with this tensor's shape); it may
        only be omitted for scalar roots.
        """
        grads = _backprop(self, grad)
        for node in _topo(self):
            if node.is_leaf and node.requires_grad:
                g = grads.get(id(node))
                if g is None:
                    continue
                node.grad = g.copy() if node.grad is None else node.grad + g

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return slice_(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)


def tensor(data, requires_grad=False, dtype=None):
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn, op):
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
        out.op = op
    return out


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _topo(root):
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
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _backprop(root, seed):
    if seed is None:
        if root.size != 1:
            raise NonScalarRoot(f"backward() on a tensor of shape {root.shape} needs an explicit seed")
        seed = np.ones_like(root.data)
    else:
        seed = np.asarray(seed, dtype=root.dtype)
        if seed.shape != root.shape:
            raise ShapeMismatch(f"seed of shape {seed.shape} for root of shape {root.shape}")
    grads = {id(root): seed}
    for node in reversed(_topo(root)):
        g = grads.get(id(node))
        if g is None or node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=parent.dtype)
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    return grads


def grad(root, inputs, seed=None):
    """Gradients of ``root`` w.r.t. ``inputs`` without touching any ``.grad``."""
    grads = _backprop(root, seed)
    return [grads.get(id(x), np.zeros_like(x.data)) for x in inputs]


def vjp(f, z, cotangent):
    """``(df/dz)^T cotangent`` for a differentiable callable ``f``."""
    z = Tensor(np.array(as_tensor(z).data), requires_grad=True)
    out = f(z)
    cotangent = np.asarray(cotangent.data if isinstance(cotangent, Tensor) else cotangent)
    if cotangent.shape != out.shape:
        raise ShapeMismatch(f"cotangent of shape {cotangent.shape} for output of shape {out.shape}")
    if not out.requires_grad:
        return np.zeros_like(z.data)
    return grad(out, [z], seed=cotangent)[0]


def zero_grads(params):
    for p in params:
        p.zero_grad()


# ---------------------------------------------------------------------------
# elementwise and linear ops


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), back, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), back, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), back, "mul")


def matmul(a, b):
    """Matrix product with numpy broadcasting over leading batch axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim == 1:
        return reshape(matmul(reshape(a, (1, a.shape[0])), b), b.shape[:-2] + b.shape[-1:])
    if b.data.ndim == 1:
        return reshape(matmul(a, reshape(b, (b.shape[0], 1))), a.shape[:-1])
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    try:
        out = a.data @ b.data
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from None

    def back(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), back, "matmul")


def affine(x, w, b):
    """``x @ w + b`` for a batch of row vectors."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeMismatch(f"affine {x.shape} @ {w.shape} + {b.shape}")
    x2 = x.data.reshape(-1, x.shape[-1])

    def back(g):
        g2 = g.reshape(-1, w.shape[1])
        gx = (g2 @ w.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if w.requires_grad else None
        gb = g2.sum(axis=0) if b.requires_grad else None
        return gx, gw, gb

    return _make(x.data @ w.data + b.data, (x, w, b), back, "affine")


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0

    def back(g):
        return (g * mask,)

    return _make(np.where(mask, x.data, 0).astype(x.dtype), (x,), back, "relu")


def elu(x):
    """ELU with alpha = 1."""
    x = as_tensor(x)
    pos = x.data > 0
    neg = np.expm1(np.minimum(x.data, 0))
    out = np.where(pos, x.data, neg).astype(x.dtype)

    def back(g):
        return (g * np.where(pos, 1, neg + 1),)

    return _make(out, (x,), back, "elu")


def tanh(x):
    x = as_tensor(x)
    out = np.tanh(x.data)

    def back(g):
        return (g * (1 - out * out),)

    return _make(out, (x,), back, "tanh")


def exp(x):
    x = as_tensor(x)
    out = np.exp(x.data)

    def back(g):
        return (g * out,)

    return _make(out, (x,), back, "exp")


def square(x):
    x = as_tensor(x)

    def back(g):
        return (2 * g * x.data,)

    return _make(x.data * x.data, (x,), back, "square")


def cast(x, dtype):
    x = as_tensor(x)

    def back(g):
        return (g,)

    return _make(x.data.astype(dtype), (x,), back, "cast")


# ---------------------------------------------------------------------------
# shape ops


def reshape(x, shape):
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from None

    def back(g):
        return (g.reshape(x.shape),)

    return _make(out, (x,), back, "reshape")


def transpose(x, axes=None):
    x = as_tensor(x)
    axes = tuple(reversed(range(x.data.ndim))) if axes is None else tuple(axes)
    inverse = np.argsort(axes)

    def back(g):
        return (np.transpose(g, inverse),)

    return _make(np.transpose(x.data, axes), (x,), back, "transpose")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tensors, back, "concat")


def slice_(x, index):
    x = as_tensor(x)
    out = x.data[index]

    def back(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(np.array(out), (x,), back, "slice")


# ---------------------------------------------------------------------------
# reductions and losses; accumulation happens in float64


def sum_(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = np.sum(x.data, axis=axis, keepdims=keepdims, dtype=np.float64)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return _make(out, (x,), back, "sum")


def mean(x, axis=None):
    x = as_tensor(x)
    count = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum_(x, axis=axis), 1.0 / count)


def sum_sq_error(pred, target):
    """Sum of squared differences over all elements."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"{pred.shape} vs {target.shape}")
    diff = pred.data.astype(np.float64) - target.data

    def back(g):
        return 2 * g * diff, -2 * g * diff

    return _make(np.sum(diff * diff), (pred, target), back, "sum_sq_error")


def mean_sq_error(pred, target):
    pred = as_tensor(pred)
    return mul(sum_sq_error(pred, target), 1.0 / pred.size)


def bce_with_logits(logits, target):
    """Mean binary cross-entropy of targets in [0, 1] against sigmoid(logits)."""
    logits, target = as_tensor(logits), as_tensor(target)
    if logits.shape != target.shape:
        raise ShapeMismatch(f"{logits.shape} vs {target.shape}")
    x = logits.data.astype(np.float64)
    y = target.data
    loss = np.maximum(x, 0) - x * y + np.log1p(np.exp(-np.abs(x)))
    n = x.size

    def back(g):
        sig = 0.5 * (1 + np.tanh(0.5 * x))
        return g * (sig - y) / n, -g * x / n

    return _make(np.mean(loss), (logits, target), back, "bce_with_logits")


# ---------------------------------------------------------------------------
# optimisation


def adam_step(params, grads, state, lr, betas=(0.9, 0.999), eps=1e-8):
    """One bias-corrected Adam update, in place on the parameter arrays.

    ``state`` is a dict with ``step`` and per-parameter ``m``/``v`` lists; an
    empty dict initialises it. Returns the updated state.
    """
    if len(params) != len(grads):
        raise ShapeMismatch(f"{len(params)} params vs {len(grads)} grads")
    if not state:
        state.update(step=0, m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params])
    b1, b2 = betas
    state["step"] += 1
    t = state["step"]
    c1 = 1 - b1**t
    c2 = 1 - b2**t
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeMismatch(f"grad {g.shape} vs param {p.shape}")
        g = g.astype(p.dtype, copy=False)
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype, copy=False)
    return state


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.state = {}

    def zero_grad(self):
        zero_grads(self.params)

    def step(self):
        grads = [p.grad for p in self.params]
        adam_step([p.data for p in self.params], grads, self.state, self.lr, self.betas, self.eps)
