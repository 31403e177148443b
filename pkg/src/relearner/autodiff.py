"""A small reverse-mode differentiation engine over float64 numpy arrays.

Each :class:`Tensor` remembers its parents and a closure mapping the upstream
gradient to parent gradients. ``backward`` walks the graph in reverse
topological order and accumulates into ``.grad`` of every tensor that
requires it.
"""

import numpy as np

from . import numerics as nx

ONE_BELOW = np.nextafter(1.0, 0.0)
TINY = np.nextafter(0.0, 1.0)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
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
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, scalar):
        return mul(self, 1.0 / float(scalar))

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)

    def transpose(self, *axes):
        return transpose(self, axes)


def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad)


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward):
    req = any(p.requires_grad for p in parents)
    return Tensor(data, req, parents if req else (), backward if req else None)


def add(a, b):
    a, b = _wrap(a), _wrap(b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), back)


def sub(a, b):
    a, b = _wrap(a), _wrap(b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), back)


def mul(a, b):
    a, b = _wrap(a), _wrap(b)

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), back)


def matmul(a, b):
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = _wrap(a), _wrap(b)

    def back(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), back)


def sum(a, axis=None, keepdims=False):
    a = _wrap(a)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), back)


def mean(a, axis=None, keepdims=False):
    a = _wrap(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis, keepdims), 1.0 / float(count))


def abs(a):
    a = _wrap(a)

    def back(g):
        return (g * np.sign(a.data),)

    return _make(np.abs(a.data), (a,), back)


def reshape(a, shape):
    a = _wrap(a)

    def back(g):
        return (g.reshape(a.shape),)

    return _make(a.data.reshape(shape), (a,), back)


def transpose(a, axes):
    a = _wrap(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def back(g):
        return (np.transpose(g, inv),)

    return _make(np.transpose(a.data, axes), (a,), back)


def broadcast_to(a, shape):
    a = _wrap(a)

    def back(g):
        return (_unbroadcast(g, a.shape),)

    return _make(np.broadcast_to(a.data, shape).copy(), (a,), back)


def concat(items, axis=-1):
    items = [_wrap(t) for t in items]
    sizes = [t.shape[axis] for t in items]
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(np.concatenate([t.data for t in items], axis=axis), tuple(items), back)


def take(a, index, axis):
    """Select positions along ``axis`` (integer index array)."""
    a = _wrap(a)
    index = np.asarray(index)

    def back(g):
        out = np.zeros_like(a.data)
        np.add.at(out, (slice(None),) * (axis % a.ndim) + (index,), g)
        return (out,)

    return _make(np.take(a.data, index, axis=axis), (a,), back)


def gelu(a):
    a = _wrap(a)

    def back(g):
        return (g * nx.gelu_grad(a.data),)

    return _make(nx.gelu(a.data), (a,), back)


def relu(a):
    a = _wrap(a)

    def back(g):
        return (g * (a.data > 0),)

    return _make(nx.relu(a.data), (a,), back)


def tanh(a):
    a = _wrap(a)
    out = np.tanh(a.data)

    def back(g):
        return (g * (1.0 - out * out),)

    return _make(out, (a,), back)


def sigmoid(a):
    a = _wrap(a)
    out = nx.sigmoid(a.data)

    def back(g):
        return (g * out * (1.0 - out),)

    return _make(out, (a,), back)


def bounded_tanh(a):
    """``tanh`` clamped strictly inside (-1, 1) even where it rounds to +-1."""
    a = _wrap(a)
    t = np.tanh(a.data)

    def back(g):
        return (g * (1.0 - t * t),)

    return _make(np.clip(t, -ONE_BELOW, ONE_BELOW), (a,), back)


def bounded_sigmoid(a):
    """``sigmoid`` clamped strictly inside (0, 1) even where it rounds."""
    a = _wrap(a)
    s = nx.sigmoid(a.data)

    def back(g):
        return (g * s * (1.0 - s),)

    return _make(np.clip(s, TINY, ONE_BELOW), (a,), back)


def softmax(a, axis=-1):
    a = _wrap(a)
    out = nx.softmax(a.data, axis=axis)

    def back(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _make(out, (a,), back)


def parameters_grad_check(fn, params, eps=1e-5, seed_grad=None):
    """Analytic vs central finite-difference gradients of ``fn()``.

    ``fn`` returns a Tensor (reduced with ``seed_grad`` when not scalar);
    ``params`` is a dict of leaf tensors. Returns ``{name: (analytic, numeric)}``.
    """
    for p in params.values():
        p.grad = None
    out = fn()
    g0 = np.ones_like(out.data) if seed_grad is None else seed_grad
    out.backward(g0)
    result = {}
    for name, p in params.items():
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = np.sum(fn().data * g0)
            flat[i] = orig - eps
            down = np.sum(fn().data * g0)
            flat[i] = orig
            numeric.reshape(-1)[i] = (up - down) / (2 * eps)
        result[name] = (analytic, numeric)
    return result
