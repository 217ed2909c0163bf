"""Adam with decoupled weight decay, global-norm clipping, warmup + cosine."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError, NumericalError


@dataclass
class AdamConfig:
    lr: float = 6e-4
    betas: tuple = (0.9, 0.95)
    eps: float = 1e-8
    weight_decay: float = 0.1
    grad_clip: float = 1.0
    warmup_tokens: int = 512 * 20
    final_tokens: int = 2 * 500000 * 30
    lr_floor: float = 0.1  # cosine ends at this fraction of peak lr
    lr_decay: bool = True


@dataclass
class OptimizerState:
    config: AdamConfig
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    tokens: int = 0


def lr_at(config: AdamConfig, tokens: int) -> float:
    """Learning rate after ``tokens`` target tokens have been processed."""
    if not config.lr_decay:
        return config.lr
    if tokens < config.warmup_tokens:
        return config.lr * tokens / max(1, config.warmup_tokens)
    span = max(1, config.final_tokens - config.warmup_tokens)
    progress = min(1.0, (tokens - config.warmup_tokens) / span)
    floor = config.lr_floor
    return config.lr * (floor + (1.0 - floor) * 0.5 * (1.0 + math.cos(math.pi * progress)))


def global_norm(grads) -> float:
    return math.sqrt(sum(float(np.vdot(g, g)) for g in grads))


def adam_step(params: dict, grads: dict, state: OptimizerState, tokens: int,
              no_decay: frozenset = frozenset(), lr_scale: dict | None = None) -> dict:
    """Update ``params`` (name -> Tensor) in place from ``grads`` (name -> array).

    ``tokens`` is the number of target tokens in this batch; it advances the
    schedule before the learning rate is read. ``lr_scale`` maps parameter
    names to learning-rate multipliers. Returns step diagnostics.
    """
    cfg = state.config
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, parameter {params[name].shape}")
        if not np.isfinite(g).all():
            raise NumericalError(f"non-finite gradient in {name}; step refused")
    norm = global_norm(grads.values())
    scale = cfg.grad_clip / norm if cfg.grad_clip and norm > cfg.grad_clip else 1.0
    state.tokens += int(tokens)
    state.step += 1
    lr = lr_at(cfg, state.tokens)
    b1, b2 = cfg.betas
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, g in grads.items():
        p = params[name]
        if scale != 1.0:
            g = g * np.asarray(scale, dtype=g.dtype)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.m[name] = m.astype(p.data.dtype, copy=False)
        state.v[name] = v.astype(p.data.dtype, copy=False)
        update = (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        plr = lr * lr_scale.get(name, 1.0) if lr_scale else lr
        data = p.data
        if cfg.weight_decay and name not in no_decay:
            data = data - plr * cfg.weight_decay * data
        p.data = (data - plr * update).astype(p.data.dtype, copy=False)
    return {"lr": lr, "grad_norm": norm, "clip_scale": scale}


class Adam:
    """Thin stateful wrapper around :func:`adam_step`."""

    def __init__(self, params: dict, config: AdamConfig | None = None, no_decay=()):
        self.params = params
        self.state = OptimizerState(config or AdamConfig())
        self.no_decay = frozenset(no_decay)

    def step(self, tokens: int) -> dict:
        grads = {}
        for name, p in self.params.items():
            grads[name] = p.grad if p.grad is not None else np.zeros_like(p.data)
        return adam_step(self.params, grads, self.state, tokens, self.no_decay)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None
