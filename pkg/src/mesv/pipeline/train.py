"""Two-stage training: encoder classification pretraining, then trial-based fine-tuning.

Each run draws from independent random streams derived from its seed
(parameter init, sampling/cropping, mixup), so enabling a feature that only
touches one stream never perturbs the others.
"""

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..backend.attention import (AttentionConfig, aggregate, calibrate_lr, center_embeddings,
                                 init_attention, set_center)
from ..backend.nplda import nplda_score
from ..encoder import class_scores, encode, init_encoder
from ..errors import ConfigError, NonFiniteError, SamplingError
from ..numkernel import tensor as T
from ..numkernel.functional import l2_normalize
from ..numkernel.tensor import Tape, Tensor
from ..objectives.losses import (AmSoftmaxConfig, FocalConfig, TrialBatchScores, adcf_soft,
                                 am_softmax, bce, combined, softmax_ce)
from ..objectives.metrics import DcfConfig, dcf_beta
from ..records import EmbeddingRecord
from .mixup import mixing_matrices
from .optim import OptimizerState, lr_schedule, optimizer_step
from .sampling import sample_trial_batch

STREAM_INIT, STREAM_SAMPLE, STREAM_MIX = 0, 1, 2


def stream(seed, which):
    return np.random.default_rng([seed, which])


@dataclass
class PretrainConfig:
    epochs: int = 30
    batch_size: int = 32
    loss: str = "softmax"
    am_scale: float = 30.0
    am_margin: float = 0.2
    optimizer: str = "adamw"
    lr: float = 1e-3
    momentum: float = 0.9
    beta1: float = 0.99
    beta2: float = 0.999
    weight_decay: float = 1e-4
    schedule: str = "cosine-restarts"
    restart_period: float = 3.0
    restart_factor: float = 2.0
    lr_min: float = 0.0
    mixup: bool = False
    mixup_psi: float = 1.0
    mixup_fixed_beta: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if self.loss not in ("softmax", "am-softmax"):
            raise ConfigError(f"unknown classification loss {self.loss!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch size >= 1")


@dataclass
class FinetuneConfig:
    epochs: int = 20
    batches_per_epoch: int = 0
    S: int = 8
    U: int = 4
    optimizer: str = "sgd"
    lr: float = 1e-4
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0
    schedule: str = "exp"
    decay: float = 0.95
    lam: float = 0.6
    focal_alpha: float = 0.75
    focal_gamma: float = 2.0
    mixup_rate: float = 0.5
    mixup_psi: float = 1.0
    freeze_encoder: bool = False
    backend_init: str = "uniform"
    seed: int = 0

    def __post_init__(self):
        if self.U < 2 or self.S < 2:
            raise ConfigError("trial batches need S >= 2 speakers and U >= 2 utterances")
        if self.epochs < 0 or self.batches_per_epoch < 0:
            raise ConfigError("epochs and batches per epoch must be nonnegative")


@dataclass
class NpldaTrainConfig:
    epochs: int = 10
    batches_per_epoch: int = 0
    S: int = 8
    U: int = 4
    loss: str = "bce"
    p_target: float = 0.05
    delta: float = 20.0
    optimizer: str = "adamw"
    lr: float = 1e-3
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0
    schedule: str = "exp"
    decay: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if self.loss not in ("bce", "adcf"):
            raise ConfigError(f"unknown NPLDA loss {self.loss!r}")


@dataclass
class TrainResult:
    params: dict
    history: list = field(default_factory=list)
    backend: Optional[dict] = None


def _optimizer(cfg):
    return OptimizerState(kind=cfg.optimizer, lr=cfg.lr, momentum=cfg.momentum,
                          beta1=cfg.beta1, beta2=cfg.beta2, weight_decay=cfg.weight_decay)


def _named_grads(grads, params):
    out = {}
    for name, p in params.items():
        g = grads.get(p)
        if g is not None:
            out[name] = g
    return out


def _check_loss(loss, epoch, step):
    if not np.isfinite(loss):
        raise NonFiniteError(f"training diverged: loss {loss} at epoch {epoch}, step {step}")


def copy_params(params):
    return OrderedDict((k, Tensor(p.data.copy(), requires_grad=p.requires_grad, name=k))
                       for k, p in params.items())


# stage 1 ------------------------------------------------------------------------

def _class_loss(scores, y1, y2, beta, cfg):
    if cfg.loss == "softmax":
        return softmax_ce(scores, y1, beta) + softmax_ce(scores, y2, 1.0 - beta)
    am = AmSoftmaxConfig(cfg.am_scale, cfg.am_margin)
    return am_softmax(scores, y1, am, beta) + am_softmax(scores, y2, am, 1.0 - beta)


def _crop_batch(corpus, idx, rng):
    length = min(corpus[i].num_frames for i in idx)
    out = []
    for i in idx:
        frames = corpus[i].frames
        start = int(rng.integers(frames.shape[1] - length + 1))
        out.append(frames[:, start:start + length])
    return np.stack(out)


def pretrain_encoder(corpus, enc_cfg, cfg, params=None, on_epoch=None):
    """Speaker-classification training of the encoder on labeled feature sequences.

    Each batch is cropped to its shortest member at random offsets. With
    ``cfg.mixup`` every item is mixed with a random batch partner; a fixed
    ``mixup_fixed_beta`` replaces the Beta draws.
    """
    if not corpus:
        raise SamplingError("empty training corpus")
    labels = np.array([s.speaker_label for s in corpus])
    if labels.min() < 0 or labels.max() >= enc_cfg.n_classes:
        raise ConfigError(f"speaker labels exceed the {enc_cfg.n_classes}-way classifier")
    params = init_encoder(enc_cfg, stream(cfg.seed, STREAM_INIT)) if params is None \
        else copy_params(params)
    rng = stream(cfg.seed, STREAM_SAMPLE)
    mix_rng = stream(cfg.seed, STREAM_MIX)
    opt = _optimizer(cfg)
    factor = cfg.restart_factor if cfg.schedule == "cosine-restarts" else 0.95
    history = []
    n = len(corpus)
    n_batches = (n + cfg.batch_size - 1) // cfg.batch_size
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        tot_loss, correct = 0.0, 0
        for b in range(n_batches):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            frac = epoch + b / n_batches if cfg.schedule == "cosine-restarts" else epoch
            lr = lr_schedule(cfg.schedule, frac, cfg.lr, factor=factor,
                             period=cfg.restart_period, lr_min=cfg.lr_min)
            x = _crop_batch(corpus, idx, rng)
            y1 = labels[idx]
            if cfg.mixup:
                partner = mix_rng.permutation(len(idx))
                draws = mix_rng.beta(cfg.mixup_psi, cfg.mixup_psi, size=len(idx))
                beta = draws if cfg.mixup_fixed_beta is None else np.full(len(idx), cfg.mixup_fixed_beta)
                x = beta[:, None, None] * x + (1.0 - beta)[:, None, None] * x[partner]
                y2 = y1[partner]
            else:
                beta = np.ones(len(idx))
                y2 = y1
            with Tape() as tape:
                emb = encode(x, enc_cfg, params)
                scores = class_scores(emb, enc_cfg, params, cfg.loss)
                loss = _class_loss(scores, y1, y2, beta, cfg)
            _check_loss(loss.item(), epoch, b)
            grads = tape.backward(loss)
            optimizer_step(opt, params, _named_grads(grads, params), lr)
            tot_loss += loss.item() * len(idx)
            correct += int(np.sum(np.argmax(scores.data, axis=1) == y1))
        row = {"epoch": epoch, "loss": tot_loss / n, "accuracy": correct / n, "lr": lr}
        history.append(row)
        if on_epoch is not None:
            on_epoch(row, params)
    return TrainResult(params, history)


# stage 2 ------------------------------------------------------------------------

def _by_speaker(keys_and_speakers):
    groups = OrderedDict()
    for key, spk in keys_and_speakers:
        groups.setdefault(spk, []).append(key)
    return groups


def trial_batch_loss(grid, params, att_cfg, mix, lam, focal_cfg):
    """Combined loss for one S x U batch of embeddings ``grid`` (S, U, D).

    The enrollment set of cell ``(l, m, n)`` is speaker ``n``'s embeddings
    without index ``m``; ``mix`` (U, S, S) mixes test embeddings and supplies
    the soft labels. Embeddings are shifted by the back-end's fixed center
    first. Returns the loss and the flat trial batch.
    """
    S, U, _ = grid.shape
    grid = center_embeddings(grid, params)
    others = np.array([[j for j in range(U) if j != m] for m in range(U)])
    spk_idx = np.broadcast_to(np.arange(S)[None, :, None], (U, S, U - 1))
    utt_idx = np.broadcast_to(others[:, None, :], (U, S, U - 1))
    E = grid[spk_idx, utt_idx]
    h = aggregate(E, params, att_cfg)
    q = grid[np.broadcast_to(np.arange(S)[None, :], (U, S)),
             np.broadcast_to(np.arange(U)[:, None], (U, S))]
    q = T.matmul(Tensor(mix), q)
    cos = T.matmul(l2_normalize(q, axis=-1), T.swap_last(l2_normalize(h, axis=-1)))
    prob = calibrate_lr(cos, params["cal.a"], params["cal.b"])
    m_idx, l_idx, n_idx = np.meshgrid(np.arange(U), np.arange(S), np.arange(S), indexing="ij")
    batch = TrialBatchScores(T.reshape(prob, (U * S * S,)), mix.reshape(-1),
                             l_idx.reshape(-1), m_idx.reshape(-1), n_idx.reshape(-1))
    return combined(batch, lam, focal_cfg), batch


class _TrialLoop:
    """Shared epoch/batch bookkeeping for trial-based training."""

    def __init__(self, groups, cfg):
        self.groups = groups
        self.cfg = cfg
        self.rng = stream(cfg.seed, STREAM_SAMPLE)
        self.n_batches = cfg.batches_per_epoch or max(1, len(groups) // cfg.S)

    def lr(self, epoch):
        return lr_schedule(self.cfg.schedule, epoch, self.cfg.lr, factor=self.cfg.decay)

    def plans(self):
        for _ in range(self.n_batches):
            yield sample_trial_batch(self.groups, self.cfg.S, self.cfg.U, self.rng)


def train_attention_backend(records, att_cfg, cfg, params=None, on_epoch=None):
    """Attention back-end training on fixed embeddings (``EmbeddingRecord`` list)."""
    vectors = {r.utterance_id: np.asarray(r.vector, dtype=np.float64) for r in records}
    groups = _by_speaker((r.utterance_id, r.speaker_id) for r in records)
    if params is None:
        params = init_attention(att_cfg, stream(cfg.seed, STREAM_INIT), cfg.backend_init)
        set_center(params, [r.vector for r in records])
    else:
        params = copy_params(params)
    mix_rng = stream(cfg.seed, STREAM_MIX)
    focal_cfg = FocalConfig(cfg.focal_alpha, cfg.focal_gamma)
    opt = _optimizer(cfg)
    loop = _TrialLoop(groups, cfg)
    history = []
    for epoch in range(cfg.epochs):
        lr = loop.lr(epoch)
        losses = []
        for step, plan in enumerate(loop.plans()):
            grid = np.stack([[vectors[u] for u in row] for row in plan.utterances])
            mix = mixing_matrices(plan.S, plan.U, cfg.mixup_rate, cfg.mixup_psi, mix_rng)
            with Tape() as tape:
                loss, _ = trial_batch_loss(Tensor(grid), params, att_cfg, mix, cfg.lam, focal_cfg)
            _check_loss(loss.item(), epoch, step)
            optimizer_step(opt, params, _named_grads(tape.backward(loss), params), lr)
            losses.append(loss.item())
        row = {"epoch": epoch, "loss": float(np.mean(losses)), "lr": lr}
        history.append(row)
        if on_epoch is not None:
            on_epoch(row, params)
    return TrainResult(params, history)


def embed_corpus(corpus, enc_cfg, params):
    """One full-length forward pass per sequence, as ``EmbeddingRecord`` objects."""
    return [EmbeddingRecord(s.speaker_id, s.utterance_id, encode(s.frames, enc_cfg, params).data)
            for s in corpus]


def finetune_joint(encoder_params, enc_cfg, corpus, cfg, att_cfg=None, backend_params=None,
                   on_epoch=None):
    """Stage-2 training of the encoder and a fresh attention back-end on trial batches.

    With ``cfg.freeze_encoder`` the encoder runs once per utterance and only
    the back-end is trained, exactly as :func:`train_attention_backend` on
    those embeddings. Returns a result whose ``params`` are the encoder's and
    ``backend`` the attention parameters.
    """
    att_cfg = att_cfg or AttentionConfig(dim=enc_cfg.embedding_dim)
    if att_cfg.dim != enc_cfg.embedding_dim:
        raise ConfigError(f"back-end dim {att_cfg.dim} != embedding dim {enc_cfg.embedding_dim}")
    if cfg.freeze_encoder:
        records = embed_corpus(corpus, enc_cfg, encoder_params)
        res = train_attention_backend(records, att_cfg, cfg, backend_params, on_epoch)
        return TrainResult(encoder_params, res.history, res.params)
    enc = copy_params(encoder_params)
    if backend_params is None:
        back = init_attention(att_cfg, stream(cfg.seed, STREAM_INIT), cfg.backend_init)
        set_center(back, [r.vector for r in embed_corpus(corpus, enc_cfg, encoder_params)])
    else:
        back = copy_params(backend_params)
    everything = OrderedDict(list(enc.items()) + list(back.items()))
    frames = {s.utterance_id: s.frames for s in corpus}
    groups = _by_speaker((s.utterance_id, s.speaker_id) for s in corpus)
    mix_rng = stream(cfg.seed, STREAM_MIX)
    focal_cfg = FocalConfig(cfg.focal_alpha, cfg.focal_gamma)
    opt = _optimizer(cfg)
    loop = _TrialLoop(groups, cfg)
    history = []
    for epoch in range(cfg.epochs):
        lr = loop.lr(epoch)
        losses = []
        for step, plan in enumerate(loop.plans()):
            mix = mixing_matrices(plan.S, plan.U, cfg.mixup_rate, cfg.mixup_psi, mix_rng)
            with Tape() as tape:
                embs = [encode(frames[u], enc_cfg, enc) for row in plan.utterances for u in row]
                grid = T.reshape(T.stack(embs), (plan.S, plan.U, enc_cfg.embedding_dim))
                loss, _ = trial_batch_loss(grid, back, att_cfg, mix, cfg.lam, focal_cfg)
            _check_loss(loss.item(), epoch, step)
            optimizer_step(opt, everything, _named_grads(tape.backward(loss), everything), lr)
            losses.append(loss.item())
        row = {"epoch": epoch, "loss": float(np.mean(losses)), "lr": lr}
        history.append(row)
        if on_epoch is not None:
            on_epoch(row, everything)
    return TrainResult(enc, history, back)


def train_nplda(model, records, cfg):
    """Discriminative NPLDA training on trial batches of fixed embeddings.

    Enrollment vectors are the mean of the U-1 other utterances; ``bce`` uses
    ``sigmoid(score)`` as the target probability, ``adcf`` the soft detection
    cost at ``cfg.p_target``.
    """
    vectors = {r.utterance_id: np.asarray(r.vector, dtype=np.float64) for r in records}
    groups = _by_speaker((r.utterance_id, r.speaker_id) for r in records)
    params = model.params
    opt = _optimizer(cfg)
    loop = _TrialLoop(groups, cfg)
    beta = dcf_beta(DcfConfig(p_target=cfg.p_target))
    history = []
    for epoch in range(cfg.epochs):
        lr = loop.lr(epoch)
        losses = []
        for step, plan in enumerate(loop.plans()):
            grid = np.stack([[vectors[u] for u in row] for row in plan.utterances])
            S, U = plan.S, plan.U
            enroll, test, labels = [], [], []
            for l, m, n, y in plan.cells:
                enroll.append(grid[n, list(plan.enroll_index(m))].mean(axis=0))
                test.append(grid[l, m])
                labels.append(y)
            labels = np.array(labels, dtype=np.float64)
            with Tape() as tape:
                s = nplda_score(model, np.stack(enroll), np.stack(test))
                if cfg.loss == "bce":
                    loss = bce(TrialBatchScores(T.sigmoid(s), labels)) * (1.0 / len(labels))
                else:
                    loss = adcf_soft(s, labels, beta, cfg.delta)
            _check_loss(loss.item(), epoch, step)
            optimizer_step(opt, params, _named_grads(tape.backward(loss), params), lr)
            losses.append(loss.item())
        history.append({"epoch": epoch, "loss": float(np.mean(losses)), "lr": lr})
    return TrainResult(params, history)
