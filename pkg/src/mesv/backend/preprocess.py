"""Embedding preprocessing: centering, LDA projection and length normalization."""

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from ..errors import ContractError, DecompositionError
from ..numkernel.linalg import cholesky, solve_lower, solve_upper, sym_eig_jacobi
from ..records import EmbeddingRecord, speaker_labels, stack_vectors


@dataclass
class Preprocessor:
    mean: np.ndarray
    lda: Optional[np.ndarray] = None
    length_norm: bool = False

    @property
    def out_dim(self):
        return self.mean.shape[0] if self.lda is None else self.lda.shape[1]

    def transform(self, x):
        x = np.asarray(x, dtype=np.float64) - self.mean
        if self.lda is not None:
            x = x @ self.lda
        if self.length_norm:
            norms = np.linalg.norm(x, axis=-1, keepdims=True)
            if np.any(norms == 0):
                raise ContractError("length normalization of a zero vector")
            x = x / norms
        return x


def scatter_matrices(x, labels):
    """Within- and between-speaker scatter, both normalized by sample count."""
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=0)
    d = x.shape[1]
    within = np.zeros((d, d))
    between = np.zeros((d, d))
    for lab in np.unique(labels):
        xs = x[labels == lab]
        ms = xs.mean(axis=0)
        r = xs - ms
        within += r.T @ r
        dm = ms - mu
        between += len(xs) * np.outer(dm, dm)
    return within / len(x), between / len(x)


def fit_lda(x, labels, out_dim):
    """Projection onto the top generalized between/within scatter directions.

    Columns ``w`` satisfy ``w^T S_w w = 1``. A singular within-scatter is
    regularized by ``1e-6 * trace / D`` on the diagonal.
    """
    if len(np.unique(labels)) < 2:
        raise ContractError("LDA needs at least two speakers")
    within, between = scatter_matrices(x, labels)
    d = within.shape[0]
    if not 1 <= out_dim <= d:
        raise ContractError(f"LDA dimension {out_dim} outside [1, {d}]")
    try:
        low = cholesky(within)
    except DecompositionError:
        lam = 1e-6 * np.trace(within) / d
        low = cholesky(within + max(lam, 1e-300) * np.eye(d))
    tmp = solve_lower(low, between)
    whitened = solve_lower(low, tmp.T)
    whitened = 0.5 * (whitened + whitened.T)
    _, vecs = sym_eig_jacobi(whitened)
    # directions back in the input space: L^{-T} u
    return solve_upper(low.T, vecs[:, :out_dim])


def fit_preprocessor(x, labels=None, lda_dim=None, length_norm=False):
    x = np.asarray(x, dtype=np.float64)
    pre = Preprocessor(mean=x.mean(axis=0), length_norm=length_norm)
    if lda_dim is not None:
        if labels is None:
            raise ContractError("LDA needs speaker labels")
        pre.lda = fit_lda(x - pre.mean, np.asarray(labels), lda_dim)
    return pre


def preprocess(records, center=True, lda_dim=None, length_norm=False, fitted=None):
    """Apply (and if needed fit) the preprocessing pipeline to records.

    Returns ``(records', preprocessor)``.
    """
    x = stack_vectors(records)
    if fitted is None:
        labels, _ = speaker_labels(records)
        fitted = fit_preprocessor(x, labels, lda_dim=lda_dim, length_norm=length_norm)
        if not center:
            fitted.mean = np.zeros_like(fitted.mean)
    y = fitted.transform(x)
    out = [replace(r, vector=v) for r, v in zip(records, y)]
    return out, fitted


__all__ = ["EmbeddingRecord", "Preprocessor", "fit_lda", "fit_preprocessor", "preprocess",
           "scatter_matrices"]
