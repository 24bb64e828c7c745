"""Desk-scale comparison of back-ends on a synthetic multi-genre corpus."""

from collections import OrderedDict
from dataclasses import dataclass, field, replace

import numpy as np

from ..backend.attention import AttentionConfig
from ..backend.scoring import AttentionBackend, CosineMeanBackend, score_trials
from ..encoder import EncoderConfig
from ..objectives.metrics import eer
from ..records import EmbeddingRecord
from ..synthdata import FeatureCorpusSpec, gen_feature_corpus
from .sampling import build_eval_trials
from .train import FinetuneConfig, PretrainConfig, embed_corpus, finetune_joint, pretrain_encoder


def desk_pretrain_config(**overrides):
    """Encoder pretraining settings used for the desk-scale comparison."""
    return replace(PretrainConfig(lr=3e-3), **overrides)


def desk_finetune_config(**overrides):
    """Back-end and joint training settings used for the desk-scale comparison."""
    return replace(FinetuneConfig(lr=4e-3, epochs=50, backend_init="mean"), **overrides)


@dataclass
class DeskExperiment:
    train_speakers: int = 50
    eval_speakers: int = 20
    utts_per_speaker: int = 10
    n_genres: int = 3
    genre_scale: float = 2.0
    speaker_scale: float = 1.0
    noise_scale: float = 3.0
    min_frames: int = 15
    max_frames: int = 90
    enroll_counts: tuple = (1, 4)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    pretrain: PretrainConfig = field(default_factory=desk_pretrain_config)
    finetune: FinetuneConfig = field(default_factory=desk_finetune_config)

    def corpora(self, seed):
        base = FeatureCorpusSpec(n_speakers=self.train_speakers,
                                 utts_per_speaker=self.utts_per_speaker,
                                 feat_dim=self.encoder.feat_dim, n_genres=self.n_genres,
                                 genre_scale=self.genre_scale, speaker_scale=self.speaker_scale,
                                 noise_scale=self.noise_scale, min_frames=self.min_frames,
                                 max_frames=self.max_frames, seed=seed)
        train = gen_feature_corpus(base)
        held = gen_feature_corpus(replace(base, n_speakers=self.eval_speakers,
                                          first_speaker=self.train_speakers))
        return train, held


def _eval(backend, records, trials):
    vectors = {r.utterance_id: r.vector for r in records}
    scored = score_trials(backend, trials, vectors)
    return np.array([s.score for s in scored]), np.array([s.trial.label for s in scored])


def run_desk_experiment(exp, seed):
    """EER of cosine-mean (raw and centered), frozen-encoder attention and joint fine-tuning.

    Returns ``{system: {K: eer}}`` for every enrollment count in ``exp``.
    """
    train, held = exp.corpora(seed)
    enc_cfg = replace(exp.encoder, n_classes=exp.train_speakers)
    pre = pretrain_encoder(train, enc_cfg, replace(exp.pretrain, seed=seed))
    att_cfg = AttentionConfig(dim=enc_cfg.embedding_dim)
    frozen = finetune_joint(pre.params, enc_cfg, train,
                            replace(exp.finetune, seed=seed, freeze_encoder=True), att_cfg)
    joint = finetune_joint(pre.params, enc_cfg, train,
                           replace(exp.finetune, seed=seed, freeze_encoder=False), att_cfg)
    corpus_ids = OrderedDict()
    for s in held:
        corpus_ids.setdefault(s.speaker_id, []).append(s.utterance_id)
    pre_emb = embed_corpus(held, enc_cfg, pre.params)
    joint_emb = embed_corpus(held, enc_cfg, joint.params)
    center = frozen.backend["center"].data
    centered = [EmbeddingRecord(r.speaker_id, r.utterance_id, r.vector - center) for r in pre_emb]
    systems = {
        "cosine": (CosineMeanBackend(), pre_emb),
        "cosine-centered": (CosineMeanBackend(), centered),
        "attention": (AttentionBackend(frozen.backend, att_cfg), pre_emb),
        "e2e": (AttentionBackend(joint.backend, att_cfg), joint_emb),
    }
    out = {name: {} for name in systems}
    for k in exp.enroll_counts:
        trials = build_eval_trials(corpus_ids, k, np.random.default_rng([seed, 7, k]))
        for name, (backend, records) in systems.items():
            scores, labels = _eval(backend, records, trials)
            out[name][k] = eer(scores, labels)
    return out
