"""Toy TDNN speaker encoder.

Frames are laid out channels x time. Every op accepts optional leading batch
dimensions, so a batch of equal-length sequences ``(B, C, T)`` is encoded in
one pass and yields the same embeddings as encoding the items one by one.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, LengthError
from .numkernel import tensor as T
from .numkernel.functional import l2_normalize, linear, mean_std_over_time
from .numkernel.tensor import Tensor, as_tensor

DEFAULT_LAYERS = (((-2, -1, 0, 1, 2), 64), ((-3, 0, 3), 64))


@dataclass(frozen=True)
class EncoderConfig:
    feat_dim: int = 23
    layers: tuple = DEFAULT_LAYERS
    pooling: str = "sp"
    asp_hidden: int = 32
    use_se: bool = False
    se_ratio: int = 4
    embedding_dim: int = 32
    fc_dims: tuple = ()
    n_classes: int = 50

    def __post_init__(self):
        if self.pooling not in ("sp", "asp"):
            raise ConfigError(f"pooling must be 'sp' or 'asp', got {self.pooling!r}")
        if not self.layers:
            raise ConfigError("encoder needs at least one TDNN layer")
        for offsets, channels in self.layers:
            if not offsets or any(b <= a for a, b in zip(offsets, offsets[1:])):
                raise ConfigError(f"context offsets must be strictly increasing: {offsets}")
            if self.use_se and (self.se_ratio < 1 or channels % self.se_ratio):
                raise ConfigError(f"SE ratio {self.se_ratio} does not divide {channels} channels")

    @property
    def channels(self):
        return self.layers[-1][1]

    @property
    def total_context(self):
        return 1 + sum(max(o) - min(o) for o, _ in self.layers)


@dataclass
class FeatureSequence:
    frames: np.ndarray
    speaker_label: int
    speaker_id: str = ""
    utterance_id: str = ""
    genre: int = field(default=0, compare=False)

    @property
    def num_frames(self):
        return self.frames.shape[1]


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_encoder(cfg, rng):
    """Random encoder and classifier-head parameters, keyed by name."""
    p = {}
    c_in = cfg.feat_dim
    for i, (offsets, c_out) in enumerate(cfg.layers):
        fan = c_in * len(offsets)
        p[f"tdnn{i}.weight"] = _uniform(rng, (fan, c_out), fan)
        p[f"tdnn{i}.bias"] = _uniform(rng, (c_out,), fan)
        if cfg.use_se:
            hid = c_out // cfg.se_ratio
            p[f"se{i}.w1"] = _uniform(rng, (c_out, hid), c_out)
            p[f"se{i}.b1"] = np.zeros(hid)
            p[f"se{i}.w2"] = _uniform(rng, (hid, c_out), hid)
            p[f"se{i}.b2"] = np.zeros(c_out)
        c_in = c_out
    if cfg.pooling == "asp":
        p["asp.w"] = _uniform(rng, (c_in, cfg.asp_hidden), c_in)
        p["asp.b"] = np.zeros(cfg.asp_hidden)
        p["asp.v"] = _uniform(rng, (cfg.asp_hidden,), cfg.asp_hidden)
        p["asp.k"] = np.zeros(())
    dims = [2 * c_in, cfg.embedding_dim, *cfg.fc_dims]
    for j in range(len(dims) - 1):
        p[f"fc{j + 1}.weight"] = _uniform(rng, (dims[j], dims[j + 1]), dims[j])
        p[f"fc{j + 1}.bias"] = _uniform(rng, (dims[j + 1],), dims[j])
    p["head.weight"] = _uniform(rng, (dims[-1], cfg.n_classes), dims[-1])
    p["head.bias"] = np.zeros(cfg.n_classes)
    return {k: Tensor(v, requires_grad=True, name=k) for k, v in p.items()}


def context_splice(x, offsets):
    """Stack frames at the given offsets along channels (valid mode, no padding).

    Output column ``t`` holds input frames ``t - min(offsets) + o`` for each
    offset ``o``, blocked offset-major.
    """
    x = as_tensor(x)
    lo, hi = min(offsets), max(offsets)
    span = hi - lo
    n = x.shape[-1]
    if n <= span:
        raise LengthError(f"{n} frames cannot cover a context span of {span + 1}")
    out_len = n - span
    pieces = [x[..., :, o - lo:o - lo + out_len] for o in offsets]
    return pieces[0] if len(pieces) == 1 else T.concat(pieces, axis=-2)


def tdnn_layer(x, offsets, weight, bias):
    """ReLU(weight^T splice(x) + bias) for every output frame."""
    spliced = context_splice(x, offsets)
    if spliced.shape[-2] != weight.shape[0]:
        raise ContractError(
            f"weight expects {weight.shape[0]} spliced channels, got {spliced.shape[-2]}")
    frames = T.swap_last(spliced)
    return T.swap_last(T.relu(linear(frames, weight, bias)))


def stats_pool(m):
    mu, sd = mean_std_over_time(m)
    return T.concat([mu, sd], axis=-1)


def attention_weights(m, w, b, v, k):
    frames = T.swap_last(as_tensor(m))
    hidden = T.tanh(linear(frames, w, b))
    logits = T.matmul(hidden, T.reshape(v, (v.shape[0], 1)))
    logits = T.reshape(logits, logits.shape[:-1]) + k
    return T.softmax(logits, axis=-1)


def attentive_stats_pool(m, w, b, v, k):
    """Concat of the attention-weighted mean and standard deviation over time."""
    alpha = attention_weights(m, w, b, v, k)
    mu, sd = mean_std_over_time(m, alpha)
    return T.concat([mu, sd], axis=-1)


def se_block(m, w1, b1, w2, b2):
    """Squeeze-and-excitation: rescale each channel by a sigmoid gate."""
    m = as_tensor(m)
    z = T.mean(m, axis=-1)
    gate = T.sigmoid(linear(T.relu(linear(z, w1, b1)), w2, b2))
    gate = T.reshape(gate, gate.shape + (1,))
    return m * T.broadcast_to(gate, m.shape)


def frame_features(x, cfg, params):
    h = as_tensor(x)
    if h.shape[-2] != cfg.feat_dim:
        raise ContractError(f"expected {cfg.feat_dim} feature channels, got {h.shape[-2]}")
    if h.shape[-1] < cfg.total_context:
        raise LengthError(f"{h.shape[-1]} frames is shorter than the encoder context "
                          f"{cfg.total_context}")
    for i, (offsets, _) in enumerate(cfg.layers):
        h = tdnn_layer(h, offsets, params[f"tdnn{i}.weight"], params[f"tdnn{i}.bias"])
        if cfg.use_se:
            h = se_block(h, params[f"se{i}.w1"], params[f"se{i}.b1"],
                         params[f"se{i}.w2"], params[f"se{i}.b2"])
    return h


def pool(h, cfg, params):
    if cfg.pooling == "asp":
        return attentive_stats_pool(h, params["asp.w"], params["asp.b"],
                                    params["asp.v"], params["asp.k"])
    return stats_pool(h)


def encode(x, cfg, params):
    """Speaker embedding(s): the first fully connected layer's output."""
    pooled = pool(frame_features(x, cfg, params), cfg, params)
    return linear(pooled, params["fc1.weight"], params["fc1.bias"])


def encode_many(sequences, cfg, params):
    """Embeddings for sequences of any lengths, one forward pass each."""
    return [encode(seq, cfg, params) for seq in sequences]


def class_scores(embedding, cfg, params, loss="softmax"):
    """Classifier-head outputs.

    ``softmax`` returns logits; ``am-softmax`` returns cosines between the
    normalized head input and normalized class weight columns.
    """
    h = embedding
    for j in range(len(cfg.fc_dims)):
        h = linear(T.relu(h), params[f"fc{j + 2}.weight"], params[f"fc{j + 2}.bias"])
    if loss == "softmax":
        return linear(T.relu(h), params["head.weight"], params["head.bias"])
    if loss == "am-softmax":
        return T.matmul(l2_normalize(h, axis=-1), l2_normalize(params["head.weight"], axis=0))
    raise ConfigError(f"unknown classification loss {loss!r}")


def mixup_features(x1, y1, x2, y2, beta):
    """Convex combination of two feature sequences cropped to the shorter one.

    Returns ``(mixed, (y1, y2, beta))``; the loss on ``mixed`` is
    ``beta * L(mixed, y1) + (1 - beta) * L(mixed, y2)``.
    """
    if not 0.0 <= beta <= 1.0:
        raise ContractError(f"mixup weight must lie in [0, 1], got {beta}")
    x1, x2 = np.asarray(x1, dtype=np.float64), np.asarray(x2, dtype=np.float64)
    if x1.shape[:-1] != x2.shape[:-1]:
        raise ContractError(f"mixup of incompatible shapes {x1.shape} and {x2.shape}")
    n = min(x1.shape[-1], x2.shape[-1])
    mixed = beta * x1[..., :n] + (1.0 - beta) * x2[..., :n]
    return mixed, (y1, y2, beta)
