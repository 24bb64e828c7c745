"""Trial scoring across all back-ends.

Each back-end exposes ``score_many(enrollments, tests)`` taking a list of
``K_i x D`` enrollment matrices and a matching ``N x D`` test matrix, and
returning ``(scores, probabilities)`` where probabilities may be ``None``.
"""

from collections import defaultdict

import numpy as np

from ..encoder import encode
from ..errors import ContractError, EmptyModelError
from ..numkernel.functional import cosine
from ..records import ScoredTrial, TrialPair
from .attention import AttentionConfig, attention_score
from .nplda import nplda_score
from .plda import plda_score

BACKENDS = ("cosine-mean", "cosine-concat", "plda", "nplda", "attention")


def _check_enrollments(enrollments):
    for e in enrollments:
        if len(e) == 0:
            raise ContractError("empty enrollment set")


class CosineMeanBackend:
    kind = "cosine-mean"

    def score_many(self, enrollments, tests):
        _check_enrollments(enrollments)
        means = np.stack([np.asarray(e, dtype=np.float64).mean(axis=0) for e in enrollments])
        return cosine(means, np.asarray(tests, dtype=np.float64)).data, None


class CosineConcatBackend:
    """Encode the time-concatenation of all enrollment feature sequences."""

    kind = "cosine-concat"
    needs_features = True

    def __init__(self, encoder_cfg, encoder_params):
        self.cfg = encoder_cfg
        self.params = encoder_params

    def score_features(self, enroll_frames, test_frames):
        if not enroll_frames:
            raise ContractError("empty enrollment set")
        joined = np.concatenate(enroll_frames, axis=1)
        e = encode(joined, self.cfg, self.params)
        q = encode(test_frames, self.cfg, self.params)
        return float(cosine(e, q).data)


class PldaBackend:
    kind = "plda"

    def __init__(self, model):
        if model.preproc is None:
            raise EmptyModelError("PLDA model has no preprocessing stage")
        self.model = model

    def score_many(self, enrollments, tests):
        _check_enrollments(enrollments)
        pre = self.model.preproc
        means = np.stack([pre.transform(e).mean(axis=0) for e in enrollments])
        return plda_score(self.model, means, pre.transform(tests)), None


class NpldaBackend:
    kind = "nplda"

    def __init__(self, model):
        self.model = model

    def score_many(self, enrollments, tests):
        _check_enrollments(enrollments)
        means = np.stack([np.asarray(e, dtype=np.float64).mean(axis=0) for e in enrollments])
        return nplda_score(self.model, means, np.asarray(tests, dtype=np.float64)).data, None


class AttentionBackend:
    kind = "attention"

    def __init__(self, params, cfg=None):
        if not params:
            raise EmptyModelError("attention back-end has no parameters")
        self.params = params
        self.cfg = cfg or AttentionConfig(dim=params["sdsa.wq"].shape[0],
                                          ffsa_heads=params["ffsa.w"].shape[0],
                                          ffsa_hidden=params["ffsa.w"].shape[1])

    def score_many(self, enrollments, tests):
        """Score trials grouped by enrollment count, one batched pass per group."""
        _check_enrollments(enrollments)
        tests = np.asarray(tests, dtype=np.float64)
        scores = np.empty(len(enrollments))
        probs = np.empty(len(enrollments))
        groups = defaultdict(list)
        for i, e in enumerate(enrollments):
            groups[len(e)].append(i)
        for _, idx in sorted(groups.items()):
            E = np.stack([np.asarray(enrollments[i], dtype=np.float64) for i in idx])
            cos, prob = attention_score(E, tests[idx], self.params, self.cfg)
            scores[idx] = cos.data
            probs[idx] = prob.data
        return scores, probs


def score_trial(backend, enrollment, test):
    """Score one trial given enrollment records and the test record."""
    if len(enrollment) == 0:
        raise ContractError("empty enrollment set")
    E = np.stack([np.asarray(r.vector, dtype=np.float64) for r in enrollment])
    q = np.asarray(test.vector, dtype=np.float64)[None, :]
    scores, probs = backend.score_many([E], q)
    trial = TrialPair(tuple(r.utterance_id for r in enrollment), test.utterance_id,
                      int(enrollment[0].speaker_id == test.speaker_id))
    return ScoredTrial(trial, float(scores[0]), None if probs is None else float(probs[0]))


def score_trials(backend, trials, vectors):
    """Score :class:`TrialPair` objects against an ``{utterance_id: vector}`` map."""
    if not trials:
        return []
    enrollments = [np.stack([vectors[u] for u in t.enroll_ids]) for t in trials]
    tests = np.stack([vectors[t.test_id] for t in trials])
    scores, probs = backend.score_many(enrollments, tests)
    if probs is None:
        probs = [None] * len(trials)
    return [ScoredTrial(t, float(s), None if p is None else float(p))
            for t, s, p in zip(trials, scores, probs)]
