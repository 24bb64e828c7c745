import numpy as np
import pytest
from dataclasses import replace
from numpy.testing import assert_allclose, assert_array_equal

from mesv.backend.plda import quadratic_score, scoring_matrices
from mesv.errors import ContractError
from mesv.numkernel.functional import cosine
from mesv.objectives import eer, min_dcf
from mesv.records import stack_vectors
from mesv.synthdata import (FeatureCorpusSpec, GenerativeSpec, gen_feature_corpus,
                            gen_plda_embeddings, make_generative_spec, oracle_eer_dcf, oracle_llr)


def test_identity_model_gives_white_samples():
    dim = 8
    spec = GenerativeSpec(np.arange(dim, dtype=float), np.zeros((dim, 2)), np.eye(dim), 1000, 10, seed=3)
    x = stack_vectors(gen_plda_embeddings(spec))
    assert x.shape == (10_000, dim)
    assert np.max(np.abs(x.mean(axis=0) - spec.mu)) < 5 / np.sqrt(10_000)
    assert np.max(np.abs(np.cov(x.T) - np.eye(dim))) < 5 * np.sqrt(2 / 10_000)


def test_generators_are_pure():
    spec = make_generative_spec(6, 2, 7, 3, seed=9)
    a, b = gen_plda_embeddings(spec), gen_plda_embeddings(spec)
    assert [r.utterance_id for r in a] == [r.utterance_id for r in b]
    assert stack_vectors(a).tobytes() == stack_vectors(b).tobytes()
    fs = FeatureCorpusSpec(n_speakers=3, utts_per_speaker=2, seed=5)
    c, d = gen_feature_corpus(fs), gen_feature_corpus(fs)
    assert all(np.array_equal(p.frames, q.frames) and p.genre == q.genre for p, q in zip(c, d))


@pytest.mark.parametrize("seed", range(3))
def test_total_covariance_matches_model(seed):
    spec = make_generative_spec(8, 4, 500, 20, seed=seed)
    x = stack_vectors(gen_plda_embeddings(spec))
    true = spec.F @ spec.F.T + spec.Sigma
    assert np.linalg.norm(np.cov(x.T, bias=True) - true) < 0.10 * np.linalg.norm(true)


def test_oracle_symmetry_zero_and_closed_form(rng):
    spec = make_generative_spec(6, 3, 10, 2, seed=1)
    a, b = rng.normal(size=(2, 15, 6))
    assert_allclose(oracle_llr(spec, a, b), oracle_llr(spec, b, a), atol=1e-10)
    assert oracle_llr(spec, spec.mu, spec.mu) == pytest.approx(0.0, abs=1e-12)
    # the dense joint-Gaussian route equals the P/Q quadratic form up to rounding
    P, Q = scoring_matrices(spec.F, spec.Sigma)
    assert_allclose(oracle_llr(spec, a, b), quadratic_score(P, Q, a - spec.mu, b - spec.mu), atol=1e-9)


def test_oracle_beats_cosine():
    spec = make_generative_spec(8, 4, 60, 6, seed=2)
    recs = gen_plda_embeddings(spec)
    x = stack_vectors(recs)
    spk = np.array([r.speaker_id for r in recs])
    i, j = np.triu_indices(len(recs), k=1)
    labels = (spk[i] == spk[j]).astype(int)
    oracle = eer(oracle_llr(spec, x[i], x[j]), labels)
    cos = eer(cosine(x[i], x[j]).data, labels)
    centered = eer(cosine(x[i] - spec.mu, x[j] - spec.mu).data, labels)
    assert oracle < min(cos, centered)


def test_noise_free_single_genre_frames_identical():
    spec = FeatureCorpusSpec(n_speakers=3, utts_per_speaker=4, noise_scale=0.0, n_genres=1, seed=2)
    corpus = gen_feature_corpus(spec)
    for s in range(3):
        utts = [c.frames for c in corpus if c.speaker_label == s]
        first = utts[0][:, 0]
        for f in utts:
            assert_array_equal(f, np.broadcast_to(first[:, None], f.shape))


def test_genre_offsets_shift_utterances():
    spec = FeatureCorpusSpec(n_speakers=1, utts_per_speaker=30, noise_scale=0.0, n_genres=3,
                             genre_scale=1.0, seed=6)
    corpus = gen_feature_corpus(spec)
    means = {}
    for c in corpus:
        means.setdefault(c.genre, c.frames[:, 0])
    assert len(means) == 3
    a, b, c = means.values()
    assert np.linalg.norm(a - b) > 0.5 and np.linalg.norm(a - c) > 0.5


def test_disjoint_speaker_ranges_share_genres():
    base = FeatureCorpusSpec(n_speakers=4, utts_per_speaker=2, seed=1)
    train = gen_feature_corpus(base)
    held = gen_feature_corpus(replace(base, n_speakers=2, first_speaker=4))
    assert {c.speaker_id for c in train}.isdisjoint({c.speaker_id for c in held})
    assert [c.speaker_label for c in held[:2]] == [0, 0]


def test_oracle_eer_dcf_examples():
    assert oracle_eer_dcf([0.9, 0.8, 0.2], [1, 1, 0], 99) == (0.0, 0.0)
    _, dcf = oracle_eer_dcf([0.9, 0.8, 0.85, 0.1], [1, 1, 0, 0], 99)
    assert dcf == 0.5 == min_dcf([0.9, 0.8, 0.85, 0.1], [1, 1, 0, 0], 99)
    with pytest.raises(ContractError):
        oracle_eer_dcf([0.1, 0.2], [0, 0], 1.0)


def test_spec_validation():
    with pytest.raises(ContractError):
        make_generative_spec(4, 5)
    with pytest.raises(ContractError):
        FeatureCorpusSpec(noise_scale=-1.0)
    with pytest.raises(ContractError):
        FeatureCorpusSpec(n_genres=0)
