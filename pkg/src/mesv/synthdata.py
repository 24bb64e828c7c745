"""Synthetic corpora with known ground truth, and brute-force reference oracles."""

from dataclasses import dataclass

import numpy as np

from .encoder import FeatureSequence
from .errors import ContractError
from .records import EmbeddingRecord


@dataclass
class GenerativeSpec:
    mu: np.ndarray
    F: np.ndarray
    Sigma: np.ndarray
    n_speakers: int
    n_utts: int
    seed: int = 0

    @property
    def dim(self):
        return self.mu.shape[0]

    @property
    def rank(self):
        return self.F.shape[1]


def make_generative_spec(dim=8, rank=4, n_speakers=50, n_utts=10, seed=0,
                         loading_scale=1.0, noise_scale=1.0):
    """Random PLDA parameters: Gaussian ``mu``/``F`` and a random SPD ``Sigma``."""
    if not 1 <= rank <= dim:
        raise ContractError(f"rank {rank} outside [1, {dim}]")
    rng = np.random.default_rng([seed, 17])
    mu = rng.normal(size=dim)
    F = loading_scale * rng.normal(size=(dim, rank))
    a = rng.normal(size=(dim, dim)) / np.sqrt(dim)
    Sigma = noise_scale * (a @ a.T + 0.5 * np.eye(dim))
    return GenerativeSpec(mu, F, Sigma, n_speakers, n_utts, seed)


def gen_plda_embeddings(spec):
    """Draw ``e = mu + F w + eps`` with one ``w`` per speaker."""
    rng = np.random.default_rng(spec.seed)
    chol = np.linalg.cholesky(spec.Sigma)
    out = []
    for s in range(spec.n_speakers):
        w = rng.normal(size=spec.rank)
        eps = rng.normal(size=(spec.n_utts, spec.dim)) @ chol.T
        vecs = spec.mu + spec.F @ w + eps
        for u, v in enumerate(vecs):
            out.append(EmbeddingRecord(f"spk{s:04d}", f"spk{s:04d}-u{u:03d}", v))
    return out


def oracle_llr(spec, e_i, e_j):
    """Same-vs-different speaker statistic under the true model.

    Evaluated from the dense joint Gaussian of the pair: twice the
    log-likelihood ratio with its constant removed, i.e.
    ``z_i^T S^-1 z_i + z_j^T S^-1 z_j - [z_i; z_j]^T C^-1 [z_i; z_j]`` where
    ``S`` is the total and ``C`` the same-speaker joint covariance.
    """
    zi = np.asarray(e_i, dtype=np.float64) - spec.mu
    zj = np.asarray(e_j, dtype=np.float64) - spec.mu
    ac = spec.F @ spec.F.T
    tot = ac + spec.Sigma
    joint = np.block([[tot, ac], [ac, tot]])
    z = np.concatenate([zi, zj], axis=-1)
    same = np.sum(z * np.linalg.solve(joint, z.T).T, axis=-1)
    diff = (np.sum(zi * np.linalg.solve(tot, zi.T).T, axis=-1)
            + np.sum(zj * np.linalg.solve(tot, zj.T).T, axis=-1))
    return diff - same


@dataclass
class FeatureCorpusSpec:
    n_speakers: int = 50
    utts_per_speaker: int = 10
    feat_dim: int = 23
    speaker_scale: float = 1.0
    noise_scale: float = 1.0
    n_genres: int = 3
    genre_scale: float = 1.0
    min_frames: int = 30
    max_frames: int = 50
    first_speaker: int = 0
    seed: int = 0

    def __post_init__(self):
        if min(self.speaker_scale, self.noise_scale, self.genre_scale) < 0:
            raise ContractError("corpus scales must be nonnegative")
        if self.n_genres < 1 or self.min_frames > self.max_frames:
            raise ContractError("need at least one genre and a valid frame range")


def genre_offsets(spec):
    rng = np.random.default_rng([spec.seed, 0])
    return spec.genre_scale * rng.normal(size=(spec.n_genres, spec.feat_dim))


def gen_feature_corpus(spec):
    """Frames = speaker mean + utterance genre offset + speaker-shaped noise.

    Speaker ``s`` depends only on ``(seed, s)``, so corpora built from the same
    seed with disjoint ``first_speaker`` ranges share genres but not speakers.
    """
    offsets = genre_offsets(spec)
    out = []
    for local in range(spec.n_speakers):
        s = spec.first_speaker + local
        rng = np.random.default_rng([spec.seed, 1, s])
        mean = spec.speaker_scale * rng.normal(size=spec.feat_dim)
        spread = np.exp(0.3 * rng.normal(size=spec.feat_dim))
        sid = f"spk{s:04d}"
        for u in range(spec.utts_per_speaker):
            g = int(rng.integers(spec.n_genres))
            n = int(rng.integers(spec.min_frames, spec.max_frames + 1))
            noise = spec.noise_scale * spread[:, None] * rng.normal(size=(spec.feat_dim, n))
            frames = mean[:, None] + offsets[g][:, None] + noise
            out.append(FeatureSequence(frames, local, sid, f"{sid}-u{u:03d}", genre=g))
    return out


def oracle_eer_dcf(scores, labels, beta):
    """Exhaustive threshold sweep, independent of :mod:`mesv.objectives.metrics`.

    Thresholds are every score, every midpoint between neighbouring sorted
    scores, and points below and above all scores. The EER is the mean of the
    two error rates where they are closest.
    """
    scores = [float(s) for s in np.ravel(scores)]
    labels = [int(y) for y in np.ravel(labels)]
    n_pos = sum(1 for y in labels if y == 1)
    n_neg = sum(1 for y in labels if y == 0)
    if n_pos == 0 or n_neg == 0 or n_pos + n_neg != len(labels):
        raise ContractError("oracle needs binary labels with both classes present")
    ordered = sorted(scores)
    cands = [ordered[0] - 1.0, ordered[-1] + 1.0] + ordered
    cands += [0.5 * (a + b) for a, b in zip(ordered, ordered[1:])]
    best_cost = None
    best_gap = None
    eer = None
    for eta in cands:
        miss = sum(1 for s, y in zip(scores, labels) if y == 1 and s < eta)
        fa = sum(1 for s, y in zip(scores, labels) if y == 0 and s >= eta)
        cost = miss / n_pos + beta * (fa / n_neg)
        if best_cost is None or cost < best_cost:
            best_cost = cost
        gap = abs(miss / n_pos - fa / n_neg)
        if best_gap is None or gap < best_gap:
            best_gap = gap
            eer = 0.5 * (miss / n_pos + fa / n_neg)
    return eer, best_cost
