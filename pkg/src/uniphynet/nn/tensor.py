"""Dense tensors with reverse-mode differentiation.

A ``Tensor`` wraps a numpy array. Operations build a graph of closures; calling
``backward`` on a scalar walks it in reverse topological order.
"""
import contextlib
import os

import numpy as np

_PRECISIONS = {"f32": np.float32, "f64": np.float64}
_state = {
    "dtype": _PRECISIONS[os.environ.get("UNIPHYNET_PRECISION", "f32").lower()],
    "grad": True,
    "kinks": None,
}


class ShapeError(ValueError):
    pass


def get_dtype():
    return _state["dtype"]


def set_precision(name):
    """Select the compute precision: 'f32' or 'f64'."""
    try:
        _state["dtype"] = _PRECISIONS[name]
    except KeyError:
        raise ValueError(f"precision must be one of {sorted(_PRECISIONS)}, got {name!r}") from None


@contextlib.contextmanager
def precision(name):
    old = _state["dtype"]
    set_precision(name)
    try:
        yield
    finally:
        _state["dtype"] = old


@contextlib.contextmanager
def no_grad():
    old = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = old


@contextlib.contextmanager
def record_kinks():
    """Collect branch decisions (ReLU masks, max indices) made during forward."""
    old = _state["kinks"]
    log = []
    _state["kinks"] = log
    try:
        yield log
    finally:
        _state["kinks"] = old


def note_kink(decision):
    log = _state["kinks"]
    if log is not None:
        log.append(np.array(decision, copy=True))


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype or get_dtype())
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a seed needs a scalar tensor")
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        self.grad = np.asarray(grad, dtype=self.dtype)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            node._backward(node.grad)
            # free interior gradients as soon as they are consumed
            node.grad = None
            node._backward = None
            node._parents = ()

    # arithmetic sugar
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

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=get_dtype()))


def accumulate(t, g):
    if not t.requires_grad:
        return
    if g.shape != t.data.shape:
        g = unbroadcast(g, t.data.shape)
    if t.grad is None:
        t.grad = np.array(g, dtype=t.dtype, copy=True)
    else:
        t.grad = t.grad + g


def unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def make(data, parents, backward):
    """Wrap an op result, attaching ``backward`` when any parent needs grad."""
    out = Tensor(data, dtype=data.dtype)
    if _state["grad"] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        accumulate(a, g)
        accumulate(b, g)

    return make(a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        accumulate(a, g)
        accumulate(b, -g)

    return make(a.data - b.data, (a, b), backward)


def mul(a, b):
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        c = np.asarray(b, dtype=a.dtype)

        def backward_const(g):
            accumulate(a, g * c)

        return make(a.data * c, (a,), backward_const)

    def backward(g):
        accumulate(a, g * b.data)
        accumulate(b, g * a.data)

    return make(a.data * b.data, (a, b), backward)


def matmul(a, b):
    """Batched matrix product over the last two axes."""
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            accumulate(a, g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            accumulate(b, np.swapaxes(a.data, -1, -2) @ g)

    return make(a.data @ b.data, (a, b), backward)


def reshape(a, shape):
    old = a.shape

    def backward(g):
        accumulate(a, g.reshape(old))

    return make(a.data.reshape(shape), (a,), backward)


def transpose(a, axes):
    axes = tuple(axes) if axes else tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)

    def backward(g):
        accumulate(a, g.transpose(inv))

    return make(np.ascontiguousarray(a.data.transpose(axes)), (a,), backward)


def getitem(a, idx):
    def backward(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        accumulate(a, full)

    return make(np.array(a.data[idx], copy=True), (a,), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    nd = len(ref)
    axis = axis % nd
    for t in tensors[1:]:
        if t.ndim != nd or any(t.shape[i] != ref[i] for i in range(nd) if i != axis):
            raise ShapeError(f"concat: incompatible shapes {ref} and {t.shape} along axis {axis}")
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            sl = [slice(None)] * nd
            sl[axis] = slice(lo, hi)
            accumulate(t, g[tuple(sl)])

    return make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def tsum(a, axis=None, keepdims=False):
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        accumulate(a, np.broadcast_to(g, a.shape))

    return make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), backward)


def mean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis, keepdims), 1.0 / float(n))
