"""Embedding-level mixup on the test branch of trial batches."""

import numpy as np

from ..errors import ContractError, DimensionError
from ..numkernel.tensor import as_tensor


def mixup_embeddings(q1, y1, q2, y2, beta):
    """``(beta * q1 + (1 - beta) * q2, (y1, y2, beta))``.

    The loss on the mixed embedding is ``beta * L(y1) + (1 - beta) * L(y2)``.
    Works on arrays and tensors alike.
    """
    if not 0.0 <= beta <= 1.0:
        raise ContractError(f"mixup weight must lie in [0, 1], got {beta}")
    a, b = as_tensor(q1), as_tensor(q2)
    if a.shape != b.shape:
        raise DimensionError(f"mixup of embeddings shaped {a.shape} and {b.shape}")
    mixed = a * beta + b * (1.0 - beta)
    if not (hasattr(q1, "requires_grad") or hasattr(q2, "requires_grad")):
        mixed = mixed.data
    return mixed, (y1, y2, beta)


def mixing_matrices(S, U, rate, psi, rng):
    """Per-utterance-column ``S x S`` row-stochastic mixing matrices.

    Row ``l`` of matrix ``m`` mixes test embedding ``(l, m)`` with the
    embedding of a different speaker ``l'`` at the same index ``m``, with
    probability ``rate`` and weight ``beta ~ Beta(psi, psi)`` on ``l``. The
    same row doubles as the soft label over enrollment speakers. Every row
    consumes the same number of draws whatever the outcome.
    """
    if not 0.0 <= rate <= 1.0:
        raise ContractError(f"mixup rate must lie in [0, 1], got {rate}")
    mats = np.zeros((U, S, S))
    for m in range(U):
        for l in range(S):
            use = rng.random() < rate
            other = int(rng.integers(S - 1))
            beta = rng.beta(psi, psi)
            other += other >= l
            if use:
                mats[m, l, l] = beta
                mats[m, l, other] += 1.0 - beta
            else:
                mats[m, l, l] = 1.0
    return mats
