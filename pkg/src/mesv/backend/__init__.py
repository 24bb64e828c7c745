"""Scoring back-ends: cosine, Gaussian PLDA, neural PLDA and the attention back-end."""

from .attention import (
    AttentionConfig,
    aggregate,
    attention_score,
    calibrate_lr,
    center_embeddings,
    cosine_score,
    ffsa_aggregate,
    init_attention,
    sdsa_forward,
    set_center,
)
from .nplda import NpldaModel, nplda_init_from_plda, nplda_score, nplda_transform
from .plda import PldaModel, plda_fit_em, plda_loglik, plda_score, plda_score_multi, scoring_matrices
from .preprocess import Preprocessor, fit_lda, fit_preprocessor, preprocess
from .scoring import (
    BACKENDS,
    AttentionBackend,
    CosineConcatBackend,
    CosineMeanBackend,
    NpldaBackend,
    PldaBackend,
    score_trial,
    score_trials,
)
