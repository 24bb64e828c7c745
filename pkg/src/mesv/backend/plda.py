"""Gaussian PLDA: EM training with known speaker labels and pairwise scoring.

Model: ``e = mu + F w + eps`` with ``w ~ N(0, I_R)`` shared by all utterances
of a speaker and ``eps ~ N(0, Sigma)`` per utterance.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import ContractError, DecompositionError
from ..numkernel.linalg import cholesky, cholesky_solve, spd_inverse, spd_logdet, sym_eig_jacobi
from .preprocess import Preprocessor, scatter_matrices

EIG_FLOOR = 1e-8


@dataclass
class PldaModel:
    mu: np.ndarray
    F: np.ndarray
    Sigma: np.ndarray
    preproc: Optional[Preprocessor] = None
    loglik: list = field(default_factory=list)
    _PQ: Optional[tuple] = field(default=None, repr=False, compare=False)

    @property
    def dim(self):
        return self.mu.shape[0]

    @property
    def rank(self):
        return self.F.shape[1]

    def scoring_matrices(self):
        if self._PQ is None:
            self._PQ = scoring_matrices(self.F, self.Sigma)
        return self._PQ


def scoring_matrices(F, Sigma):
    """``(P, Q)`` of the pairwise quadratic score for loading ``F`` and residual ``Sigma``."""
    s_ac = F @ F.T
    s_tot = s_ac + Sigma
    tot_inv_ac = cholesky_solve(s_tot, s_ac)
    m = s_tot - s_ac @ tot_inv_ac
    m_inv = spd_inverse(0.5 * (m + m.T))
    p = tot_inv_ac @ m_inv
    q = spd_inverse(s_tot) - m_inv
    return 0.5 * (p + p.T), 0.5 * (q + q.T)


def quadratic_score(P, Q, x, y):
    """``x^T Q x + y^T Q y + 2 x^T P y``, batched over leading axes."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return (np.sum((x @ Q) * x, axis=-1) + np.sum((y @ Q) * y, axis=-1)
            + 2.0 * np.sum((x @ P) * y, axis=-1))


def plda_score(model, e_i, e_j):
    """Pairwise score of two preprocessed embeddings."""
    P, Q = model.scoring_matrices()
    return quadratic_score(P, Q, np.asarray(e_i) - model.mu, np.asarray(e_j) - model.mu)


def plda_score_multi(model, enrollment, test):
    """Score the mean of preprocessed enrollment vectors against ``test``."""
    enrollment = np.asarray(enrollment, dtype=np.float64)
    if enrollment.ndim == 1:
        enrollment = enrollment[None, :]
    if len(enrollment) == 0:
        raise ContractError("empty enrollment set")
    return plda_score(model, enrollment.mean(axis=0), test)


def _floor_spd(s):
    s = 0.5 * (s + s.T)
    try:
        cholesky(s)
        return s
    except DecompositionError:
        w, v = sym_eig_jacobi(s)
        return (v * np.maximum(w, EIG_FLOOR)) @ v.T


def _initial_params(x, labels, rank):
    within, between = scatter_matrices(x, labels)
    w, v = sym_eig_jacobi(between)
    F = v[:, :rank] * np.sqrt(np.maximum(w[:rank], EIG_FLOOR))
    return F, _floor_spd(within + EIG_FLOOR * np.eye(x.shape[1]))


class _Stats:
    """Per-speaker sufficient statistics of centered data."""

    def __init__(self, x, labels):
        self.n_total, self.dim = x.shape
        speakers, inverse = np.unique(labels, return_inverse=True)
        self.counts = np.bincount(inverse).astype(np.float64)
        self.sums = np.zeros((len(speakers), self.dim))
        np.add.at(self.sums, inverse, x)
        self.scatter = x.T @ x


def _e_step(stats, F, Sigma):
    """Posterior moments of the speaker factors and the data log-likelihood."""
    rank = F.shape[1]
    low_s = cholesky(Sigma)
    fts = cholesky_solve(Sigma, F, factor=low_s).T  # F^T Sigma^-1
    ftsf = 0.5 * (fts @ F + (fts @ F).T)
    b = stats.sums @ fts.T  # rows: F^T Sigma^-1 sum_i x_i
    means = np.zeros((len(stats.counts), rank))
    acc_ww = np.zeros((rank, rank))
    logdet_sigma = spd_logdet(Sigma, factor=low_s)
    ll = -0.5 * (stats.n_total * stats.dim * math.log(2 * math.pi)
                 + stats.n_total * logdet_sigma
                 + float(np.sum(cholesky_solve(Sigma, stats.scatter, factor=low_s).diagonal())))
    for n in np.unique(stats.counts):
        idx = np.flatnonzero(stats.counts == n)
        prec = np.eye(rank) + n * ftsf
        low_p = cholesky(prec)
        cov = spd_inverse(prec)
        m = cholesky_solve(prec, b[idx].T, factor=low_p).T
        means[idx] = m
        acc_ww += n * (len(idx) * cov + m.T @ m)
        ll -= 0.5 * (len(idx) * spd_logdet(prec, factor=low_p) - float(np.sum(b[idx] * m)))
    return means, acc_ww, ll


def plda_loglik(x, labels, mu, F, Sigma):
    """Marginal log-likelihood of labelled data under the PLDA model."""
    stats = _Stats(np.asarray(x, dtype=np.float64) - mu, np.asarray(labels))
    return _e_step(stats, F, Sigma)[2]


def plda_fit_em(x, labels, rank, iters=10, preproc=None, init=None):
    """Fit ``(mu, F, Sigma)`` by EM with known speaker labels.

    ``x`` holds preprocessed embeddings (rows). ``model.loglik`` records the
    data log-likelihood before each M-step and after the last one, so it has
    ``iters + 1`` entries and is non-decreasing.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    if len(np.unique(labels)) < 2:
        raise ContractError("PLDA needs at least two speakers")
    if not 1 <= rank <= x.shape[1]:
        raise ContractError(f"PLDA rank {rank} outside [1, {x.shape[1]}]")
    mu = x.mean(axis=0)
    xc = x - mu
    stats = _Stats(xc, labels)
    F, Sigma = _initial_params(xc, labels, rank) if init is None else init
    history = []
    for _ in range(iters):
        means, acc_ww, ll = _e_step(stats, F, Sigma)
        history.append(ll)
        cross = stats.sums.T @ means  # sum_s S_s w_s^T
        F = cholesky_solve(acc_ww, cross.T).T
        Sigma = _floor_spd((stats.scatter - F @ cross.T) / stats.n_total)
    history.append(_e_step(stats, F, Sigma)[2])
    return PldaModel(mu=mu, F=F, Sigma=Sigma, preproc=preproc, loglik=history)
