"""Detection metrics: EER, minimum DCF and DET operating points.

A trial is accepted when its score is at or above the threshold.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError


@dataclass(frozen=True)
class DcfConfig:
    c_miss: float = 1.0
    c_fa: float = 1.0
    p_target: float = 0.01
    delta: float = 100.0

    def __post_init__(self):
        if not 0.0 < self.p_target < 1.0:
            raise ContractError(f"target prior must lie in (0, 1), got {self.p_target}")
        if self.c_miss < 0 or self.c_fa < 0 or self.delta <= 0:
            raise ContractError("costs must be nonnegative and delta positive")


def dcf_beta(cfg):
    """``C_fa (1 - P_target) / (C_miss P_target)``."""
    if not 0.0 < cfg.p_target < 1.0:
        raise ContractError(f"target prior must lie in (0, 1), got {cfg.p_target}")
    return cfg.c_fa * (1.0 - cfg.p_target) / (cfg.c_miss * cfg.p_target)


def _check(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ContractError(f"{scores.shape} scores vs {labels.shape} labels")
    if not np.all((labels == 0) | (labels == 1)):
        raise ContractError("labels must be 0 or 1")
    if not (np.any(labels == 1) and np.any(labels == 0)):
        raise ContractError("metric needs both target and non-target trials")
    return scores, labels.astype(bool)


def operating_counts(scores, labels):
    """Miss and false-alarm counts at every distinct threshold.

    Entry ``i < k`` uses the ``i``-th smallest distinct score as threshold;
    the last entry rejects every trial. Returns ``(miss, fa, n_pos, n_neg)``.
    """
    scores, pos = _check(scores, labels)
    values, inverse = np.unique(scores, return_inverse=True)
    pos_at = np.bincount(inverse, weights=pos, minlength=len(values))
    neg_at = np.bincount(inverse, weights=~pos, minlength=len(values))
    miss = np.concatenate([[0.0], np.cumsum(pos_at)])
    n_neg = float(neg_at.sum())
    fa = n_neg - np.concatenate([[0.0], np.cumsum(neg_at)])
    return miss, fa, float(pos_at.sum()), n_neg


def det_curve(scores, labels):
    """``(p_fa, p_miss)`` at every operating point, from accept-all to reject-all."""
    miss, fa, n_pos, n_neg = operating_counts(scores, labels)
    return fa / n_neg, miss / n_pos


def min_dcf(scores, labels, beta):
    """``min_eta P_miss(eta) + beta * P_fa(eta)`` over all step-function thresholds."""
    miss, fa, n_pos, n_neg = operating_counts(scores, labels)
    return float(np.min(miss / n_pos + beta * (fa / n_neg)))


def eer(scores, labels):
    """Equal error rate, linearly interpolated where ``P_miss - P_fa`` changes sign."""
    p_fa, p_miss = det_curve(scores, labels)
    d = p_miss - p_fa
    i = int(np.argmax(d >= 0))
    if d[i] == 0:
        return float(p_miss[i])
    a0, a1 = p_miss[i - 1], p_miss[i]
    b0, b1 = p_fa[i - 1], p_fa[i]
    t = (b0 - a0) / ((a1 - a0) - (b1 - b0))
    return float(a0 + t * (a1 - a0))
