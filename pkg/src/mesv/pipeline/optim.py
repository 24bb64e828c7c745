"""SGD with momentum, AdamW, and per-epoch learning-rate schedules."""

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, NonFiniteError


@dataclass
class OptimizerState:
    kind: str = "sgd"
    lr: float = 1e-4
    momentum: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.kind not in ("sgd", "adamw"):
            raise ConfigError(f"unknown optimizer {self.kind!r}")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")
        self.step_count = 0
        self.buffers = {}


def optimizer_step(state, params, grads, lr=None):
    """Update ``params`` (name -> Tensor) in place from ``grads`` (name -> array)."""
    lr = state.lr if lr is None else lr
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.sum(~np.isfinite(g)))
            raise NonFiniteError(f"training aborted: {bad} non-finite gradient entries in {name}")
    state.step_count += 1
    t = state.step_count
    for name in sorted(grads):
        p = params[name]
        g = np.asarray(grads[name], dtype=np.float64)
        w = p.data
        if state.kind == "sgd":
            if state.weight_decay:
                g = g + state.weight_decay * w
            if state.momentum:
                buf = state.buffers.get(name)
                buf = g.copy() if buf is None else state.momentum * buf + g
                state.buffers[name] = buf
                g = buf
            p.data = w - lr * g
        else:
            m, v = state.buffers.get(name, (np.zeros_like(w), np.zeros_like(w)))
            w = w - lr * state.weight_decay * w
            m = state.beta1 * m + (1.0 - state.beta1) * g
            v = state.beta2 * v + (1.0 - state.beta2) * g * g
            state.buffers[name] = (m, v)
            m_hat = m / (1.0 - state.beta1 ** t)
            v_hat = v / (1.0 - state.beta2 ** t)
            p.data = w - lr * m_hat / (np.sqrt(v_hat) + state.eps)


def lr_schedule(kind, epoch, lr0, factor=0.95, period=1, lr_min=0.0):
    """Learning rate for a (possibly fractional) epoch.

    ``step``: ``lr0 * factor ** floor(epoch / period)``; ``exp``:
    ``lr0 * factor ** epoch``; ``cosine-restarts``: cosine from ``lr0`` down
    to ``lr_min`` over cycles of ``period`` epochs, each cycle ``factor``
    times longer than the previous one.
    """
    if epoch < 0:
        raise ConfigError("epoch must be nonnegative")
    if kind == "constant":
        return lr0
    if kind == "step":
        return lr0 * factor ** math.floor(epoch / period)
    if kind == "exp":
        return lr0 * factor ** epoch
    if kind == "cosine-restarts":
        start, length = 0.0, float(period)
        while epoch >= start + length:
            start += length
            length *= factor
        frac = (epoch - start) / length
        return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * frac))
    raise ConfigError(f"unknown schedule {kind!r}")
