"""Mini-batch trial sampling for back-end and joint training, and eval trial lists."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError, SamplingError
from ..records import TrialPair


@dataclass
class TrialBatchPlan:
    """S speakers x U utterances and every (test, enrollment-speaker) cell.

    Cell ``(l, m, n)`` tests utterance ``m`` of speaker ``l`` against the
    enrollment set made of speaker ``n``'s utterances other than index ``m``.
    """

    speakers: list
    utterances: list
    cells: list = field(default_factory=list)

    @property
    def S(self):
        return len(self.speakers)

    @property
    def U(self):
        return len(self.utterances[0]) if self.utterances else 0

    @property
    def positives(self):
        return sum(1 for c in self.cells if c[3])

    @property
    def negatives(self):
        return len(self.cells) - self.positives

    def enroll_index(self, m):
        return tuple(j for j in range(self.U) if j != m)


def build_cells(S, U):
    """``(l, m, n, label)`` for every test utterance and enrollment speaker."""
    if U < 2:
        raise ContractError("trial batches need at least two utterances per speaker")
    return [(l, m, n, int(l == n)) for l in range(S) for m in range(U) for n in range(S)]


def sample_trial_batch(corpus, S, U, rng):
    """Pick S distinct speakers with U distinct utterances each.

    ``corpus`` maps speaker id to a sequence of utterance keys.
    """
    if S < 2:
        raise SamplingError("a trial batch needs at least two speakers")
    eligible = sorted(spk for spk, utts in corpus.items() if len(utts) >= U)
    if len(eligible) < S:
        raise SamplingError(f"only {len(eligible)} speakers have >= {U} utterances, need {S}")
    chosen = [eligible[i] for i in rng.choice(len(eligible), size=S, replace=False)]
    utts = []
    for spk in chosen:
        pool = corpus[spk]
        utts.append([pool[i] for i in rng.choice(len(pool), size=U, replace=False)])
    return TrialBatchPlan(chosen, utts, build_cells(S, U))


def build_eval_trials(corpus, enroll_counts, rng):
    """Trials for every test utterance against every speaker's enrollment set.

    ``enroll_counts`` is cycled over the (test, claimed speaker) pairs; target
    enrollment sets never contain the test utterance.
    """
    counts = list(np.atleast_1d(enroll_counts))
    speakers = sorted(corpus)
    trials = []
    i = 0
    for l in speakers:
        for test in corpus[l]:
            for n in speakers:
                k = int(counts[i % len(counts)])
                i += 1
                pool = [u for u in corpus[n] if u != test]
                if len(pool) < k:
                    raise SamplingError(f"speaker {n} has {len(pool)} enrollment candidates, need {k}")
                pick = sorted(rng.choice(len(pool), size=k, replace=False))
                trials.append(TrialPair(tuple(pool[j] for j in pick), test, int(l == n)))
    return trials
