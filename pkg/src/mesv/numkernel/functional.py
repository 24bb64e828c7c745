"""Composite differentiable ops built from the tape primitives."""

import numpy as np

from ..errors import ContractError, DimensionError, EmptyInputError
from . import tensor as T
from .tensor import Tensor, as_tensor

STD_EPS = 1e-8

_UNARY = {"relu": T.relu, "tanh": T.tanh, "sigmoid": T.sigmoid, "exp": T.exp, "log": T.log}
_BINARY = {"add": T.add, "mul": T.mul, "sub": T.sub}


def elementwise(op, *args):
    """Dispatch ``op`` by name over tensor arguments."""
    if op in _UNARY:
        (x,) = args
        return _UNARY[op](as_tensor(x))
    if op in _BINARY:
        a, b = args
        return _BINARY[op](a, b)
    raise ContractError(f"unknown elementwise op {op!r}")


def linear(x, weight, bias=None):
    """``x @ weight + bias`` over the last axis of ``x`` (any leading dims)."""
    x = as_tensor(x)
    if x.ndim == 1:
        y = T.reshape(T.matmul(T.reshape(x, (1, x.shape[0])), weight), (weight.shape[1],))
    else:
        y = T.matmul(x, weight)
    if bias is not None:
        y = y + T.broadcast_to(bias, y.shape)
    return y


def mean_std_over_time(m, weights=None, eps=STD_EPS):
    """Weighted mean and standard deviation along the last (time) axis.

    ``m`` has shape ``(..., C, T)``; ``weights`` has shape ``(..., T)`` and must
    be nonnegative and sum to one. Variances at or below ``eps`` yield a
    standard deviation of exactly 0.
    """
    m = as_tensor(m)
    if m.shape[-1] == 0:
        raise EmptyInputError("mean/std over an empty time axis")
    if weights is None:
        mu = T.mean(m, axis=-1)
        second = T.mean(m * m, axis=-1)
    else:
        weights = as_tensor(weights)
        if weights.shape != m.shape[:-2] + m.shape[-1:]:
            raise DimensionError(f"weights {weights.shape} do not match frames {m.shape}")
        w = weights.data
        if np.any(w < 0) or np.any(np.abs(np.sum(w, axis=-1) - 1.0) > 1e-9):
            raise ContractError("attention weights must be nonnegative and sum to 1")
        wb = T.broadcast_to(T.reshape(weights, weights.shape[:-1] + (1, weights.shape[-1])), m.shape)
        mu = T.sum(m * wb, axis=-1)
        second = T.sum(m * m * wb, axis=-1)
    var = second - mu * mu
    return mu, T.thresholded_sqrt(var, eps)


def sq_norm(x, axis=-1):
    return T.sum(x * x, axis=axis)


def l2_normalize(x, axis=-1):
    """Scale vectors along ``axis`` to unit length."""
    x = as_tensor(x)
    norms = np.sqrt(np.sum(x.data * x.data, axis=axis))
    if np.any(norms == 0):
        raise ContractError("cannot normalize a zero vector")
    n = T.sqrt(sq_norm(x, axis=axis))
    shape = list(x.shape)
    shape[axis] = 1
    return x / T.broadcast_to(T.reshape(n, tuple(shape)), x.shape)


def cosine(a, b):
    """Cosine similarity along the last axis; batched over leading dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"cosine of shapes {a.shape} and {b.shape}")
    na = np.sum(a.data * a.data, axis=-1)
    nb = np.sum(b.data * b.data, axis=-1)
    if np.any(na == 0) or np.any(nb == 0):
        raise ContractError("cosine similarity of a zero vector")
    dot = T.sum(a * b, axis=-1)
    return dot / T.sqrt(sq_norm(a) * sq_norm(b))


def parameter(data, name=None):
    return Tensor(data, requires_grad=True, name=name)
