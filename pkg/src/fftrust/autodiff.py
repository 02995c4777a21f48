"""Tape-based reverse-mode differentiation over dense float64 arrays.

Every operation appends a node to an implicit, append-only tape: each
:class:`Tensor` receives a monotonically increasing id at creation, and the
inputs of a node always carry smaller ids than the node itself.  Sorting the
reachable nodes by descending id therefore yields a valid reverse
topological order without an explicit graph walk.

Broadcasting is deliberately narrow.  Binary elementwise operations accept
operands of identical shape, a scalar operand, or an operand whose shape is
a suffix of the other's (trailing-axis broadcasting).  Anything richer must
go through :func:`broadcast_to`, which carries its own gradient rule.
"""

import itertools

import numpy as np

from .exceptions import ContractError, DimensionError, DomainError

__all__ = [
    "Tensor",
    "tensor",
    "constant",
    "make_op",
    "backward",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "relu",
    "tanh",
    "log",
    "exp",
    "square",
    "sqrt",
    "xlogx",
    "clip",
    "softmax",
    "log_softmax",
    "elementwise",
    "sum",
    "mean",
    "reshape",
    "transpose",
    "take",
    "gather_last",
    "broadcast_to",
    "finite_difference_check",
]

_next_id = itertools.count()


class Tensor:
    """Dense float64 array with an optional gradient slot.

    Parameters
    ----------
    data : array-like
        Values; copied into a contiguous float64 array.
    requires_grad : bool
        Whether :func:`backward` should populate ``grad`` for this leaf.
    """

    __slots__ = ("data", "grad", "requires_grad", "id", "op", "_parents", "_backward")

    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False):
        self.data = np.array(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.id = next(_next_id)
        self.op = "leaf"
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad)


def constant(data):
    """Wrap ``data`` as a tensor that never receives gradient."""
    if isinstance(data, Tensor):
        return data
    return Tensor(data)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def make_op(data, parents, backward_fn, op):
    """Record a new node on the tape.

    ``backward_fn`` maps the upstream gradient (an array shaped like
    ``data``) to a tuple with one gradient array (or ``None``) per parent.
    """
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.id = next(_next_id)
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``grad`` of every reachable leaf.

    Leaf gradients are added to any existing ``grad``; call
    :meth:`Tensor.zero_grad` (the optimizer does) to reset them.
    """
    if not isinstance(loss, Tensor) or loss.data.size != 1 or loss.data.ndim > 1:
        shape = getattr(loss, "shape", None)
        raise ContractError(f"backward() needs a scalar loss tensor, got shape {shape}")
    if not loss.requires_grad:
        return

    nodes = {}
    stack = [loss]
    while stack:
        node = stack.pop()
        if node.id in nodes:
            continue
        nodes[node.id] = node
        stack.extend(p for p in node._parents if p.requires_grad and p.id not in nodes)

    grads = {loss.id: np.ones_like(loss.data)}
    for node_id in sorted(nodes, reverse=True):
        node = nodes[node_id]
        g = grads.pop(node_id, None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent.id in grads:
                grads[parent.id] = grads[parent.id] + pg
            else:
                grads[parent.id] = pg


# -- broadcasting helpers ---------------------------------------------------

def _check_broadcast(a_shape, b_shape, op):
    if a_shape == b_shape or a_shape == () or b_shape == ():
        return
    if len(a_shape) == 1 and a_shape[0] == 1 or len(b_shape) == 1 and b_shape[0] == 1:
        return
    short, long_ = (a_shape, b_shape) if len(a_shape) < len(b_shape) else (b_shape, a_shape)
    if len(short) < len(long_) and long_[len(long_) - len(short):] == short:
        return
    raise DimensionError(
        f"{op}: shapes {a_shape} and {b_shape} are not broadcast-compatible "
        "(only equal, scalar or trailing-suffix shapes are allowed)"
    )


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    if len(shape) == 0 or shape == (1,) and g.shape != (1,):
        return np.asarray(g.sum()).reshape(shape)
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead)))


# -- binary elementwise ------------------------------------------------------

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.shape, b.shape, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_op(a.data + b.data, (a, b), bw, "add")


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.shape, b.shape, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_op(a.data - b.data, (a, b), bw, "sub")


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.shape, b.shape, "mul")

    def bw(g):
        return (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        )

    return make_op(a.data * b.data, (a, b), bw, "mul")


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.shape, b.shape, "div")
    if np.any(b.data == 0):
        raise DomainError("div: division by zero")
    out = a.data / b.data

    def bw(g):
        return (
            _unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None,
        )

    return make_op(out, (a, b), bw, "div")


# -- unary elementwise -------------------------------------------------------

def neg(a):
    a = _as_tensor(a)
    return make_op(-a.data, (a,), lambda g: (-g,), "neg")


def relu(a):
    a = _as_tensor(a)
    mask = a.data > 0
    return make_op(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def tanh(a):
    a = _as_tensor(a)
    out = np.tanh(a.data)
    return make_op(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def log(a):
    a = _as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log: input must be strictly positive")
    return make_op(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def exp(a):
    a = _as_tensor(a)
    out = np.exp(a.data)
    return make_op(out, (a,), lambda g: (g * out,), "exp")


def square(a):
    a = _as_tensor(a)
    return make_op(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def sqrt(a):
    a = _as_tensor(a)
    if np.any(a.data < 0):
        raise DomainError("sqrt: input must be nonnegative")
    out = np.sqrt(a.data)

    def bw(g):
        with np.errstate(divide="ignore"):
            return (np.where(out > 0, g / (2.0 * np.where(out > 0, out, 1.0)), 0.0),)

    return make_op(out, (a,), bw, "sqrt")


def xlogx(a):
    """``x * log(x)`` with the convention ``0 * log 0 = 0``.

    The derivative at exactly zero is taken as 0 (the one-sided limit is
    infinite).
    """
    a = _as_tensor(a)
    if np.any(a.data < 0):
        raise DomainError("xlogx: input must be nonnegative")
    pos = a.data > 0
    safe = np.where(pos, a.data, 1.0)
    out = np.where(pos, a.data * np.log(safe), 0.0)
    return make_op(out, (a,), lambda g: (np.where(pos, g * (np.log(safe) + 1.0), 0.0),), "xlogx")


def clip(a, lo=None, hi=None):
    """Clamp values; gradient is zero wherever the clamp is active."""
    a = _as_tensor(a)
    lo_v = -np.inf if lo is None else lo
    hi_v = np.inf if hi is None else hi
    inside = (a.data >= lo_v) & (a.data <= hi_v)
    return make_op(np.clip(a.data, lo_v, hi_v), (a,), lambda g: (g * inside,), "clip")


_UNARY = {"relu": relu, "tanh": tanh, "log": log, "exp": exp, "square": square,
          "neg": neg, "sqrt": sqrt}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op, *args):
    """Dispatch an elementwise operation by name."""
    if op in _UNARY:
        if len(args) != 1:
            raise ContractError(f"{op} takes one argument, got {len(args)}")
        return _UNARY[op](args[0])
    if op in _BINARY:
        if len(args) != 2:
            raise ContractError(f"{op} takes two arguments, got {len(args)}")
        return _BINARY[op](*args)
    raise ContractError(f"unknown elementwise op {op!r}")


# -- softmax family ----------------------------------------------------------

def softmax(z, axis=-1):
    z = _as_tensor(z)
    shifted = z.data - z.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_op(out, (z,), bw, "softmax")


def log_softmax(z, axis=-1):
    z = _as_tensor(z)
    shifted = z.data - z.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def bw(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return make_op(out, (z,), bw, "log_softmax")


# -- linear algebra ----------------------------------------------------------

def matmul(a, b):
    """Matrix product.

    ``a`` may carry leading batch axes; ``b`` is either a plain matrix
    shared across the batch or has exactly the same leading axes as ``a``.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions differ for shapes {a.shape} and {b.shape}")
    if b.ndim > 2 and b.shape[:-2] != a.shape[:-2]:
        raise DimensionError(f"matmul: batch axes differ for shapes {a.shape} and {b.shape}")

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return make_op(a.data @ b.data, (a, b), bw, "matmul")


# -- reductions and shape ops ------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy naming
    a = _as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_op(np.asarray(out), (a,), bw, "sum")


def mean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return mul(sum(a, axis=axes, keepdims=keepdims), 1.0 / count)


def reshape(a, shape):
    a = _as_tensor(a)
    return make_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None):
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return make_op(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),), "transpose")


def take(a, indices, axis=0):
    """Select entries along ``axis``; repeated indices accumulate gradient."""
    a = _as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)

    def bw(g):
        full = np.zeros_like(a.data)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        return (full,)

    return make_op(np.take(a.data, idx, axis=axis), (a,), bw, "take")


def gather_last(a, index):
    """``out[...] = a[..., index[...]]`` for an integer array ``index``."""
    a = _as_tensor(a)
    idx = np.asarray(index, dtype=np.intp)
    if idx.shape != a.shape[:-1]:
        raise DimensionError(f"gather_last: index shape {idx.shape} does not match {a.shape[:-1]}")
    out = np.take_along_axis(a.data, idx[..., None], axis=-1)[..., 0]

    def bw(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx[..., None], g[..., None], axis=-1)
        return (full,)

    return make_op(out, (a,), bw, "gather")


def broadcast_to(a, shape):
    """Explicit numpy-style broadcast; the gradient sums over expanded axes."""
    a = _as_tensor(a)
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError as exc:
        raise DimensionError(f"broadcast_to: cannot broadcast {a.shape} to {shape}") from exc
    lead = len(shape) - a.ndim
    expanded = tuple(range(lead)) + tuple(
        lead + i for i, n in enumerate(a.shape) if n == 1 and shape[lead + i] != 1
    )

    def bw(g):
        return (g.sum(axis=expanded, keepdims=True).reshape(a.shape) if expanded else g,)

    return make_op(out.copy(), (a,), bw, "broadcast")


# -- verification ------------------------------------------------------------

def finite_difference_check(fn, params, eps=1e-5):
    """Compare tape gradients with central finite differences.

    ``fn`` is a zero-argument callable that rebuilds the scalar loss from the
    current values of ``params``.  Returns the maximum over every parameter
    entry of ``|analytic - numeric| / max(1, |analytic|)``.
    """
    for p in params:
        p.zero_grad()
    backward(fn())
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = fn().item()
            flat[i] = orig - eps
            down = fn().item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * eps)
            a = ga.reshape(-1)[i]
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    for p in params:
        p.zero_grad()
    return worst
