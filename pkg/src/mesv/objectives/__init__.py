"""Training losses and evaluation metrics."""

from .losses import (
    AmSoftmaxConfig,
    FocalConfig,
    TrialBatchScores,
    adcf_soft,
    age2e,
    am_softmax,
    bce,
    combined,
    focal,
    soft_dcf_grid,
    soft_detection_rates,
    softmax_ce,
)
from .metrics import DcfConfig, dcf_beta, det_curve, eer, min_dcf, operating_counts
