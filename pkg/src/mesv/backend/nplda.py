"""Neural PLDA: the PLDA quadratic scorer re-parametrized as trainable tensors."""

from dataclasses import dataclass

import numpy as np

from ..numkernel import tensor as T
from ..numkernel.functional import l2_normalize, linear
from ..numkernel.tensor import Tensor, as_tensor


@dataclass
class NpldaModel:
    """Two affine layers (centering + LDA, then PLDA centering) and ``P``, ``Q``.

    When ``length_norm`` is set, unit-length normalization sits between the
    two affine layers, mirroring the PLDA preprocessing pipeline.
    """

    params: dict
    length_norm: bool = False

    def parameters(self):
        return list(self.params.values())


def nplda_init_from_plda(plda):
    pre = plda.preproc
    d_in = plda.dim if pre is None else pre.mean.shape[0]
    if pre is None:
        w1, b1 = np.eye(d_in), np.zeros(d_in)
        length_norm = False
    else:
        w1 = np.eye(d_in) if pre.lda is None else pre.lda.copy()
        b1 = -(pre.mean @ w1)
        length_norm = pre.length_norm
    P, Q = plda.scoring_matrices()
    raw = {
        "affine1.weight": w1,
        "affine1.bias": b1,
        "affine2.weight": np.eye(plda.dim),
        "affine2.bias": -plda.mu.copy(),
        "P": P.copy(),
        "Q": Q.copy(),
    }
    params = {k: Tensor(v, requires_grad=True, name=f"nplda.{k}") for k, v in raw.items()}
    return NpldaModel(params=params, length_norm=length_norm)


def nplda_transform(model, x):
    p = model.params
    h = linear(as_tensor(x), p["affine1.weight"], p["affine1.bias"])
    if model.length_norm:
        h = l2_normalize(h, axis=-1)
    return linear(h, p["affine2.weight"], p["affine2.bias"])


def nplda_score(model, enroll_mean, test):
    """Quadratic score ``x^T Q x + y^T Q y + 2 x^T P y`` on transformed inputs.

    Inputs may be single vectors or row-aligned batches.
    """
    x = nplda_transform(model, enroll_mean)
    y = nplda_transform(model, test)
    P, Q = model.params["P"], model.params["Q"]
    if x.ndim == 1:
        x = T.reshape(x, (1, x.shape[0]))
        y = T.reshape(y, (1, y.shape[0]))
        single = True
    else:
        single = False
    s = (T.sum(T.matmul(x, Q) * x, axis=-1) + T.sum(T.matmul(y, Q) * y, axis=-1)
         + 2.0 * T.sum(T.matmul(x, P) * y, axis=-1))
    return T.reshape(s, ()) if single else s
