"""Record types passed between the back-ends, metrics and file formats."""

from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass
class EmbeddingRecord:
    speaker_id: str
    utterance_id: str
    vector: np.ndarray


@dataclass(frozen=True)
class TrialPair:
    enroll_ids: tuple
    test_id: str
    label: int

    @property
    def num_enroll(self):
        return len(self.enroll_ids)


@dataclass
class ScoredTrial:
    trial: TrialPair
    score: float
    probability: Optional[float] = None


def stack_vectors(records):
    return np.stack([np.asarray(r.vector, dtype=np.float64) for r in records])


def speaker_labels(records):
    """Integer labels in order of first appearance, plus the id list."""
    index = {}
    labels = []
    for r in records:
        labels.append(index.setdefault(r.speaker_id, len(index)))
    return np.array(labels, dtype=np.int64), list(index)
