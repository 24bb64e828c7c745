"""Dense float64 tensors with a define-by-run reverse-mode tape.

A :class:`Tape` is activated with ``with Tape() as tape:``; every op whose
inputs include a tensor with ``requires_grad`` is appended to the active tape
together with a closure mapping the output cotangent to input cotangents.
``tape.backward(loss)`` walks the recorded nodes in exact reverse order,
sums contributions for tensors used more than once, stores the totals on the
leaves' ``.grad`` and resets the tape.

Outside a tape ops evaluate eagerly without recording anything, which is how
inference runs.
"""

import threading

import numpy as np

from ..errors import ContractError, DimensionError, NonFiniteError

_state = threading.local()


def _tape_stack():
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = _state.stack = []
    return stack


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "is_leaf", "__weakref__")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite entries in tensor {name or ''}".strip())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self.is_leaf = True

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def T(self):
        return swap_last(self)

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self):
        return len(self.data)

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

    def __getitem__(self, index):
        return take(self, index)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("kind", "inputs", "output", "vjp")

    def __init__(self, kind, inputs, output, vjp):
        self.kind = kind
        self.inputs = inputs
        self.output = output
        self.vjp = vjp


class Tape:
    """Ordered record of differentiable ops for one forward pass."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def record(self, kind, inputs, output, vjp):
        self.nodes.append(_Node(kind, inputs, output, vjp))

    def reset(self):
        self.nodes = []

    def backward(self, loss):
        """Return ``{leaf: gradient array}`` for every reachable leaf.

        Also stores each gradient on ``leaf.grad`` (overwriting) and clears
        the tape.
        """
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            raise ContractError("loss does not depend on any tensor requiring grad")
        cot = {id(loss): np.ones_like(loss.data)}
        leaves = {}
        if loss.is_leaf:
            leaves[id(loss)] = loss
        for node in reversed(self.nodes):
            g = cot.pop(id(node.output), None)
            if g is None:
                continue
            grads = node.vjp(g)
            for inp, gi in zip(node.inputs, grads):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in cot:
                    cot[key] = cot[key] + gi
                else:
                    cot[key] = gi
                if inp.is_leaf:
                    leaves[key] = inp
        out = {}
        for key, leaf in leaves.items():
            g = cot.get(key)
            if g is None:
                g = np.zeros_like(leaf.data)
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient for {leaf.name or 'tensor'}")
            leaf.grad = g
            out[leaf] = g
        self.reset()
        return out


def _result(kind, data, inputs, vjp):
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{kind} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.is_leaf = True
    out.requires_grad = False
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.is_leaf = False
        tape.record(kind, inputs, out, vjp)
    return out


def _sum_to(g, shape):
    if g.shape == shape:
        return g
    return np.sum(g).reshape(shape) if len(shape) else np.sum(g)


def _check_binary(kind, a, b):
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    raise DimensionError(f"{kind}: shapes {a.shape} and {b.shape} are not same-shape or scalar")


# elementwise binary -----------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_binary("add", a, b)
    return _result("add", a.data + b.data, (a, b),
                   lambda g: (_sum_to(g, a.shape), _sum_to(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_binary("sub", a, b)
    return _result("sub", a.data - b.data, (a, b),
                   lambda g: (_sum_to(g, a.shape), _sum_to(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_binary("mul", a, b)
    return _result("mul", a.data * b.data, (a, b),
                   lambda g: (_sum_to(g * b.data, a.shape), _sum_to(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_binary("div", a, b)
    if np.any(b.data == 0):
        from ..errors import NumericDomainError
        raise NumericDomainError("division by zero")
    q = a.data / b.data
    return _result("div", q, (a, b),
                   lambda g: (_sum_to(g / b.data, a.shape), _sum_to(-g * q / b.data, b.shape)))


def neg(a):
    return _result("neg", -a.data, (a,), lambda g: (-g,))


# elementwise unary ------------------------------------------------------------

def relu(x):
    mask = x.data > 0
    return _result("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def tanh(x):
    y = np.tanh(x.data)
    return _result("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x):
    y = _stable_sigmoid(x.data)
    return _result("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def _stable_sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def exp(x):
    y = np.exp(x.data)
    return _result("exp", y, (x,), lambda g: (g * y,))


def log(x):
    if np.any(x.data <= 0):
        from ..errors import NumericDomainError
        raise NumericDomainError("log of a nonpositive value")
    return _result("log", np.log(x.data), (x,), lambda g: (g / x.data,))


def sqrt(x):
    if np.any(x.data < 0):
        from ..errors import NumericDomainError
        raise NumericDomainError("sqrt of a negative value")
    y = np.sqrt(x.data)
    if np.any(y == 0):
        from ..errors import NumericDomainError
        raise NumericDomainError("sqrt gradient undefined at 0")
    return _result("sqrt", y, (x,), lambda g: (g * 0.5 / y,))


def thresholded_sqrt(x, eps):
    """sqrt(x) where x > eps, exactly 0 elsewhere (zero gradient there)."""
    live = x.data > eps
    y = np.where(live, np.sqrt(np.where(live, x.data, 1.0)), 0.0)
    safe = np.where(live, y, 1.0)
    return _result("thresholded_sqrt", y, (x,), lambda g: (np.where(live, g * 0.5 / safe, 0.0),))


def power(x, p):
    y = x.data ** p
    return _result("power", y, (x,), lambda g: (g * p * x.data ** (p - 1),))


def clamp(x, lo=None, hi=None):
    y = np.clip(x.data, lo, hi)
    live = np.ones_like(y, dtype=bool)
    if lo is not None:
        live &= x.data >= lo
    if hi is not None:
        live &= x.data <= hi
    return _result("clamp", y, (x,), lambda g: (g * live,))


# reductions and shape ops -----------------------------------------------------

def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    y = np.sum(x.data, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result("sum", np.asarray(y, dtype=np.float64), (x,), vjp)


def mean(x, axis=None, keepdims=False):
    n = x.size if axis is None else x.shape[axis]
    return sum(x, axis=axis, keepdims=keepdims) * (1.0 / n)


def reshape(x, shape):
    return _result("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def swap_last(x):
    return _result("swap_last", np.swapaxes(x.data, -1, -2).copy(), (x,),
                   lambda g: (np.swapaxes(g, -1, -2),))


def broadcast_to(x, shape):
    """Explicit broadcast; the backward pass sums over the expanded axes."""
    y = np.broadcast_to(x.data, shape).copy()
    lead = len(shape) - x.ndim
    axes = tuple(range(lead)) + tuple(
        i + lead for i, d in enumerate(x.shape) if d == 1 and shape[i + lead] != 1)

    def vjp(g):
        return (np.sum(g, axis=axes, keepdims=True).reshape(x.shape) if axes else g,)

    return _result("broadcast_to", y, (x,), vjp)


def take(x, index):
    y = np.array(x.data[index], dtype=np.float64)

    def vjp(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _result("take", y, (x,), vjp)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    y = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result("concat", y, tuple(tensors), vjp)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    y = np.stack([t.data for t in tensors], axis=axis)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _result("stack", y, tuple(tensors), vjp)


# linear algebra ---------------------------------------------------------------

def matmul(a, b):
    """Matrix product.

    Supports ``(m,k) @ (k,n)``, batched ``(...,m,k) @ (k,n)`` with a shared
    right operand, and ``(...,m,k) @ (...,k,n)`` with identical batch dims.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs matrices, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    if b.ndim == 2:
        m, k = a.shape[-2:]
        flat = a.data.reshape(-1, k)
        y = (flat @ b.data).reshape(a.shape[:-1] + (b.shape[1],))

        def vjp(g):
            g2 = g.reshape(-1, g.shape[-1])
            return (g @ b.data.T, flat.T @ g2)

        return _result("matmul", y, (a, b), vjp)
    if a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul batch dims differ: {a.shape} @ {b.shape}")
    y = np.matmul(a.data, b.data)

    def vjp(g):
        return (np.matmul(g, np.swapaxes(b.data, -1, -2)),
                np.matmul(np.swapaxes(a.data, -1, -2), g))

    return _result("matmul", y, (a, b), vjp)


# attention primitives ---------------------------------------------------------

def softmax(x, axis=-1):
    z = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def vjp(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return _result("softmax", y, (x,), vjp)


def softmax_rows(x):
    """Row-wise softmax of a matrix, computed with max subtraction."""
    if x.ndim != 2:
        raise DimensionError(f"softmax_rows expects a matrix, got {x.shape}")
    return softmax(x, axis=-1)


def log_softmax(x, axis=-1):
    z = x.data - np.max(x.data, axis=axis, keepdims=True)
    lse = np.log(np.sum(np.exp(z), axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def vjp(g):
        return (g - p * np.sum(g, axis=axis, keepdims=True),)

    return _result("log_softmax", y, (x,), vjp)
