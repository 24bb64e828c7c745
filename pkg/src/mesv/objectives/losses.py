"""Training losses over tape tensors.

Trial-level losses take a :class:`TrialBatchScores`; labels may be soft
(values in [0, 1]) so that mixup targets ``beta * y1 + (1 - beta) * y2``
flow through the same code, which is exact because every loss here is linear
in the labels.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import ContractError
from ..numkernel import tensor as T
from ..numkernel.tensor import as_tensor

PROB_CLAMP = 1e-12


@dataclass
class TrialBatchScores:
    """Flat per-trial scores with labels and the (l, m, n) cell indices.

    ``scores`` holds calibrated probabilities (or raw scores for metrics);
    ``test_speaker``/``test_utt``/``enroll_speaker`` are the l, m and n
    indices and are only needed by the attention GE2E loss.
    """

    scores: object
    labels: np.ndarray
    test_speaker: Optional[np.ndarray] = None
    test_utt: Optional[np.ndarray] = None
    enroll_speaker: Optional[np.ndarray] = None

    def __post_init__(self):
        self.scores = as_tensor(self.scores)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.scores.shape != self.labels.shape:
            raise ContractError(f"{self.scores.shape} scores vs {self.labels.shape} labels")
        if np.any((self.labels < 0) | (self.labels > 1)):
            raise ContractError("labels must lie in [0, 1]")


@dataclass(frozen=True)
class FocalConfig:
    alpha: float = 0.75
    gamma: float = 2.0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0 or self.gamma < 0:
            raise ContractError(f"invalid focal config alpha={self.alpha}, gamma={self.gamma}")


@dataclass(frozen=True)
class AmSoftmaxConfig:
    scale: float = 30.0
    margin: float = 0.2

    def __post_init__(self):
        if self.scale <= 0 or self.margin < 0:
            raise ContractError(f"invalid AM-softmax config s={self.scale}, m={self.margin}")


def _as_rows(x, targets):
    x = as_tensor(x)
    targets = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    if x.ndim == 1:
        x = T.reshape(x, (1, x.shape[0]))
    if len(targets) != x.shape[0] or np.any(targets < 0) or np.any(targets >= x.shape[1]):
        raise ContractError("class targets out of range or misaligned with rows")
    return x, targets


def softmax_ce(logits, targets, weights=None):
    """Mean cross-entropy of ``logits`` (rows) against integer class targets.

    The logits are the inner products ``w_j^T e``, i.e. ``|w_j||e| cos theta_j``.
    Optional per-row ``weights`` scale each row's term before averaging.
    """
    logits, targets = _as_rows(logits, targets)
    logp = T.log_softmax(logits, axis=-1)
    picked = logp[np.arange(len(targets)), targets]
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != picked.shape:
            raise ContractError(f"{weights.shape} row weights for {picked.shape} rows")
        picked = picked * weights
    return -T.mean(picked)


def am_softmax(cosines, targets, cfg=AmSoftmaxConfig(), weights=None):
    """Additive-margin softmax: subtract ``m`` from the target cosine, scale by ``s``."""
    cosines, targets = _as_rows(cosines, targets)
    margin = np.zeros(cosines.shape)
    margin[np.arange(len(targets)), targets] = cfg.margin
    return softmax_ce((cosines - margin) * cfg.scale, targets, weights)


def _clamped(p):
    return T.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP)


def bce(batch):
    """Summed binary cross-entropy on calibrated probabilities."""
    p = _clamped(batch.scores)
    y = batch.labels
    return -T.sum(T.log(p) * y + T.log(1.0 - p) * (1.0 - y))


def focal(batch, cfg=FocalConfig()):
    """Summed binary focal loss on calibrated probabilities."""
    p = _clamped(batch.scores)
    y = batch.labels
    q = 1.0 - p
    pos = T.power(q, cfg.gamma) * T.log(p) * (cfg.alpha * y)
    neg = T.power(p, cfg.gamma) * T.log(q) * ((1.0 - cfg.alpha) * (1.0 - y))
    return -T.sum(pos + neg)


def _cell_grid(batch):
    if batch.test_speaker is None or batch.test_utt is None or batch.enroll_speaker is None:
        raise ContractError("attention GE2E needs (l, m, n) indices for every trial")
    l = np.asarray(batch.test_speaker)
    m = np.asarray(batch.test_utt)
    n = np.asarray(batch.enroll_speaker)
    rows = sorted(set(zip(l.tolist(), m.tolist())))
    speakers = sorted(set(n.tolist()))
    row_of = {r: i for i, r in enumerate(rows)}
    col_of = {s: j for j, s in enumerate(speakers)}
    grid = -np.ones((len(rows), len(speakers)), dtype=np.int64)
    for k, (li, mi, ni) in enumerate(zip(l.tolist(), m.tolist(), n.tolist())):
        r, c = row_of[(li, mi)], col_of[ni]
        if grid[r, c] >= 0:
            raise ContractError(f"duplicate cell (l={li}, m={mi}, n={ni})")
        grid[r, c] = k
    missing = np.argwhere(grid < 0)
    if len(missing):
        r, c = missing[0]
        raise ContractError(f"missing cell (l, m)={rows[r]}, n={speakers[c]}")
    return grid


def age2e(batch):
    """Attention GE2E: per test (l, m), softmax over all enrollment speakers n.

    ``-sum_{l,m} log(exp P(q_lm, h_lm) / sum_n exp P(q_lm, h_nm))``; soft labels
    spread the target over speakers.
    """
    grid = _cell_grid(batch)
    mat = batch.scores[grid]
    target = batch.labels[grid]
    return -T.sum(T.log_softmax(mat, axis=-1) * target)


def combined(batch, lam=0.6, focal_cfg=FocalConfig()):
    """``lam * age2e + (1 - lam) * focal``."""
    if not 0.0 <= lam <= 1.0:
        raise ContractError(f"loss weight must lie in [0, 1], got {lam}")
    if lam == 1.0:
        return age2e(batch)
    if lam == 0.0:
        return focal(batch, focal_cfg)
    return age2e(batch) * lam + focal(batch, focal_cfg) * (1.0 - lam)


def soft_detection_rates(scores, labels, eta, delta):
    """Sigmoid-count miss and false-alarm rates at threshold ``eta``."""
    s = as_tensor(scores)
    y = np.asarray(labels, dtype=np.float64)
    accept = T.sigmoid((s - eta) * delta)
    p_miss = T.sum((1.0 - accept) * y) * (1.0 / y.sum())
    p_fa = T.sum(accept * (1.0 - y)) * (1.0 / (1.0 - y).sum())
    return p_miss, p_fa


def soft_dcf_grid(scores, n_uniform=32):
    """Observed scores, midpoints between distinct scores, and a uniform sweep."""
    s = np.unique(np.asarray(scores, dtype=np.float64))
    mids = 0.5 * (s[1:] + s[:-1])
    uni = np.linspace(s[0], s[-1], n_uniform)
    return np.unique(np.concatenate([s, mids, uni]))


def adcf_soft(scores, labels, beta, delta, grid=None):
    """Differentiable detection cost: ``min_eta P_miss^soft + beta * P_fa^soft``.

    The minimizing threshold is found on ``grid`` and held fixed, so the
    gradient flows through the scores only.
    """
    s = as_tensor(scores)
    y = np.asarray(labels, dtype=np.float64)
    if delta <= 0:
        raise ContractError("warping factor must be positive")
    if not (np.any(y == 1) and np.any(y == 0)):
        raise ContractError("soft detection cost needs both target and non-target trials")
    grid = soft_dcf_grid(s.data) if grid is None else np.asarray(grid, dtype=np.float64)
    z = delta * (s.data[None, :] - grid[:, None])
    acc = T._stable_sigmoid(z)
    costs = ((1.0 - acc) @ y) / y.sum() + beta * ((acc @ (1.0 - y)) / (1.0 - y).sum())
    eta = float(grid[int(np.argmin(costs))])
    p_miss, p_fa = soft_detection_rates(s, y, eta, delta)
    return p_miss + p_fa * beta
