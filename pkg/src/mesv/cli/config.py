"""Flat ``key = value`` run configuration with typed defaults."""

import hashlib
from collections import OrderedDict

from ..errors import ConfigError

# Every tunable of a run with its default; the value's type fixes how text is parsed.
DEFAULTS = OrderedDict([
    ("seed", 0),
    # synthetic corpus
    ("train_speakers", 50),
    ("eval_speakers", 20),
    ("utts_per_speaker", 10),
    ("feat_dim", 23),
    ("n_genres", 3),
    ("genre_scale", 2.0),
    ("speaker_scale", 1.0),
    ("noise_scale", 3.0),
    ("min_frames", 15),
    ("max_frames", 90),
    ("eval_enroll_counts", "1,2,3,4,5"),
    # encoder
    ("tdnn_channels", 64),
    ("pooling", "sp"),
    ("asp_hidden", 32),
    ("use_se", False),
    ("se_ratio", 4),
    ("embedding_dim", 32),
    # stage 1
    ("pretrain_epochs", 30),
    ("pretrain_batch", 32),
    ("pretrain_loss", "softmax"),
    ("am_scale", 30.0),
    ("am_margin", 0.2),
    ("pretrain_optimizer", "adamw"),
    ("pretrain_lr", 3e-3),
    ("pretrain_momentum", 0.9),
    ("pretrain_beta1", 0.99),
    ("pretrain_beta2", 0.999),
    ("pretrain_weight_decay", 1e-4),
    ("pretrain_schedule", "cosine-restarts"),
    ("restart_period", 3.0),
    ("restart_factor", 2.0),
    ("feature_mixup", False),
    ("feature_mixup_psi", 1.0),
    # stage 2
    ("backend", "attention"),
    ("freeze_encoder", False),
    ("finetune_epochs", 50),
    ("batches_per_epoch", 0),
    ("batch_speakers", 8),
    ("batch_utterances", 4),
    ("finetune_optimizer", "sgd"),
    ("finetune_lr", 4e-3),
    ("finetune_momentum", 0.9),
    ("finetune_weight_decay", 0.0),
    ("finetune_schedule", "exp"),
    ("finetune_decay", 0.95),
    ("loss_lambda", 0.6),
    ("focal_alpha", 0.75),
    ("focal_gamma", 2.0),
    ("embedding_mixup_rate", 0.5),
    ("embedding_mixup_psi", 1.0),
    ("backend_init", "mean"),
    ("sdsa_heads", 4),
    ("ffsa_heads", 4),
    ("ffsa_hidden", 64),
    # PLDA / NPLDA
    ("lda_dim", 0),
    ("length_norm", True),
    ("plda_rank", 0),
    ("plda_iters", 10),
    ("nplda_epochs", 10),
    ("nplda_lr", 1e-3),
    ("nplda_loss", "bce"),
    # evaluation
    ("p_target", 0.01),
    ("c_miss", 1.0),
    ("c_fa", 1.0),
    ("checkpoint_every", 0),
])

# Keys that fix tensor shapes; a model is only loadable under the same values.
ARCHITECTURE_KEYS = ("feat_dim", "tdnn_channels", "pooling", "asp_hidden", "use_se", "se_ratio",
                     "embedding_dim", "sdsa_heads", "ffsa_heads", "ffsa_hidden")


def _convert(key, text):
    default = DEFAULTS[key]
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("true", "yes", "1"):
                return True
            if low in ("false", "no", "0"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from exc
    return text


def format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


class RunConfig:
    """Resolved settings: defaults overridden by a config file and the command line."""

    def __init__(self, values=None):
        self.values = OrderedDict(DEFAULTS)
        for k, v in (values or {}).items():
            self.set(k, v)

    def set(self, key, value):
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        self.values[key] = _convert(key, value) if isinstance(value, str) else value

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def parse(cls, text, source="<config>"):
        cfg = cls()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            try:
                cfg.set(key, value)
            except ConfigError as exc:
                raise ConfigError(f"{source}:{lineno}: {exc}") from exc
        return cfg

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            return cls.parse(fh.read(), str(path))

    def dump(self):
        return "".join(f"{k} = {format_value(v)}\n" for k, v in self.values.items())

    def architecture_hash(self):
        text = "".join(f"{k}={format_value(self.values[k])};" for k in ARCHITECTURE_KEYS)
        return hashlib.sha256(text.encode("utf-8")).digest()

    def enroll_counts(self):
        try:
            counts = [int(x) for x in str(self["eval_enroll_counts"]).split(",") if x.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad eval_enroll_counts: {exc}") from exc
        if not counts or min(counts) < 1:
            raise ConfigError("eval_enroll_counts needs positive integers")
        return counts
