"""Attention back-end for multi-enrollment trials.

Enrollment embeddings ``E`` (K x D) pass through multi-head scaled-dot
self-attention with a residual connection, are pooled into one speaker vector
by multi-head feed-forward attention, compared with the test embedding by
cosine similarity and mapped to a probability by a scalar logistic
regression. All functions accept extra leading batch axes.
"""

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ContractError
from ..numkernel import tensor as T
from ..numkernel.functional import cosine
from ..numkernel.tensor import Tensor, as_tensor


@dataclass(frozen=True)
class AttentionConfig:
    dim: int = 32
    sdsa_heads: int = 4
    ffsa_heads: int = 4
    ffsa_hidden: int = 64

    def __post_init__(self):
        if self.sdsa_heads < 1 or self.dim % self.sdsa_heads:
            raise ConfigError(f"{self.sdsa_heads} SDSA heads do not divide D={self.dim}")
        if self.ffsa_heads < 1 or self.dim % self.ffsa_heads:
            raise ConfigError(f"{self.ffsa_heads} FFSA heads do not divide D={self.dim}")


def init_attention(cfg, rng, mode="uniform"):
    """Uniform(+-1/sqrt(fan_in)) projections, calibration a=1, b=0.

    ``mode="mean"`` additionally zeroes ``W^O`` and the FFSA scoring vectors,
    so the untrained back-end aggregates by a plain mean (cosine-mean scoring)
    while every other weight keeps its random draw.
    """
    if mode not in ("uniform", "mean"):
        raise ConfigError(f"unknown attention init {mode!r}")
    d, d2, hid = cfg.dim, cfg.ffsa_heads, cfg.ffsa_hidden
    sub = d // d2

    def u(shape, fan_in):
        b = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-b, b, size=shape)

    raw = {
        "sdsa.wq": u((d, d), d),
        "sdsa.wk": u((d, d), d),
        "sdsa.wv": u((d, d), d),
        "sdsa.wo": u((d, d), d),
        "ffsa.w": u((d2, hid, sub), sub),
        "ffsa.v": u((d2, hid), hid),
        "cal.a": np.ones(()),
        "cal.b": np.zeros(()),
    }
    if mode == "mean":
        raw["sdsa.wo"][:] = 0.0
        raw["ffsa.v"][:] = 0.0
    params = {k: Tensor(v, requires_grad=True, name=k) for k, v in raw.items()}
    params["center"] = Tensor(np.zeros(d), name="center")
    return params


def set_center(params, vectors):
    """Fix the (non-trainable) centering vector to the mean of ``vectors``."""
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or len(vectors) == 0:
        raise ContractError("centering needs a non-empty 2-D array of embeddings")
    params["center"] = Tensor(vectors.mean(axis=0), name="center")
    return params


def center_embeddings(x, params):
    """Subtract the back-end's fixed centering vector, if it has one."""
    x = as_tensor(x)
    if "center" not in params:
        return x
    c = params["center"]
    if c.shape != x.shape[-1:]:
        raise ContractError(f"center of shape {c.shape} for embeddings of dim {x.shape[-1]}")
    return x - T.broadcast_to(c, x.shape)


def sdsa_forward(E, params, heads):
    """``Concat(H_1..H_d1) W^O + E`` with ``H_i = softmax(Q_i K_i^T / sqrt(D/d1)) V_i``.

    Head ``i`` uses columns ``i*D/d1 .. (i+1)*D/d1`` of the stacked query,
    key and value projections.
    """
    E = as_tensor(E)
    if E.shape[-2] < 1:
        raise ContractError("attention needs at least one enrollment embedding")
    d = E.shape[-1]
    if d % heads:
        raise ConfigError(f"{heads} heads do not divide D={d}")
    sub = d // heads
    q = T.matmul(E, params["sdsa.wq"])
    k = T.matmul(E, params["sdsa.wk"])
    v = T.matmul(E, params["sdsa.wv"])
    scale = 1.0 / math.sqrt(sub)
    outs = []
    for i in range(heads):
        cols = slice(i * sub, (i + 1) * sub)
        qi, ki, vi = q[..., cols], k[..., cols], v[..., cols]
        logits = T.matmul(qi, T.swap_last(ki)) * scale
        outs.append(T.matmul(T.softmax(logits, axis=-1), vi))
    heads_out = outs[0] if heads == 1 else T.concat(outs, axis=-1)
    return T.matmul(heads_out, params["sdsa.wo"]) + E


def ffsa_weights(H, params, head):
    """Attention weights over the K rows for one FFSA head."""
    H = as_tensor(H)
    w = params["ffsa.w"][head]
    v = params["ffsa.v"][head]
    sub = w.shape[1]
    Hj = H[..., head * sub:(head + 1) * sub]
    hidden = T.tanh(T.matmul(Hj, T.swap_last(w)))
    logits = T.matmul(hidden, T.reshape(v, (v.shape[0], 1)))
    return T.softmax(T.reshape(logits, logits.shape[:-1]), axis=-1), Hj


def ffsa_aggregate(H, params, heads):
    """Pool ``H`` (..., K, D) into one vector per item: ``Concat(h_1..h_d2)``."""
    H = as_tensor(H)
    d = H.shape[-1]
    if d % heads or params["ffsa.w"].shape[0] != heads:
        raise ConfigError(f"{heads} FFSA heads incompatible with D={d}")
    parts = []
    for j in range(heads):
        alpha, Hj = ffsa_weights(H, params, j)
        row = T.reshape(alpha, alpha.shape[:-1] + (1, alpha.shape[-1]))
        hj = T.matmul(row, Hj)
        parts.append(T.reshape(hj, hj.shape[:-2] + (hj.shape[-1],)))
    return parts[0] if heads == 1 else T.concat(parts, axis=-1)


def cosine_score(q, h):
    return cosine(q, h)


def calibrate_lr(score, a, b):
    """``1 / (1 + exp(-a * score - b))``."""
    return T.sigmoid(as_tensor(a) * as_tensor(score) + as_tensor(b))


def aggregate(E, params, cfg):
    return ffsa_aggregate(sdsa_forward(E, params, cfg.sdsa_heads), params, cfg.ffsa_heads)


def attention_score(E, q, params, cfg):
    """Raw cosine and calibrated probability for enrollment ``E`` and test ``q``.

    Both sides are first shifted by the back-end's centering vector.
    """
    h = aggregate(center_embeddings(E, params), params, cfg)
    cos = cosine_score(center_embeddings(q, params), h)
    return cos, calibrate_lr(cos, params["cal.a"], params["cal.b"])
