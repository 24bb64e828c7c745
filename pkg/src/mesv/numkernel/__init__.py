"""Dense tensors, reverse-mode tape and small linear-algebra kernels."""

from .functional import (
    cosine,
    elementwise,
    l2_normalize,
    linear,
    mean_std_over_time,
    parameter,
)
from .linalg import cholesky, cholesky_solve, spd_inverse, spd_logdet, sym_eig_jacobi
from .tensor import Tape, Tensor, as_tensor, matmul, softmax, softmax_rows


def tape_backward(tape, loss):
    """Backpropagate ``loss`` through ``tape``; see :meth:`Tape.backward`."""
    return tape.backward(loss)


__all__ = [
    "Tape", "Tensor", "as_tensor", "cholesky", "cholesky_solve", "cosine",
    "elementwise", "l2_normalize", "linear", "matmul", "mean_std_over_time",
    "parameter", "softmax", "softmax_rows", "spd_inverse", "spd_logdet",
    "sym_eig_jacobi", "tape_backward",
]
