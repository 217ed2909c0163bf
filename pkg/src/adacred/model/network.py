"""Spatial/temporal transformer with credit-based token gating.

Each timestep contributes one token group ``[prev action, return-to-go,
patch_1..patch_n]``. At depth ``l`` the group passes a spatial layer, is
pooled into ``g^l_t``, interleaved with the pure-state tokens ``h^{l-1}_t``
and fed through a causal temporal layer whose odd-position outputs become
``h^l``. Before every layer a credit head scores the incoming tokens and a
straight-through Gumbel-sigmoid turns the scores into 0/1 gates that
multiply the tokens in place (positions are kept, content is zeroed).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError, DimensionError, ParameterError, RangeError
from ..numerics import functional as F
from ..numerics.tensor import Tensor, as_tensor, concat, no_grad, reshape, stack
from .config import ModelConfig
from .layers import Block, ConvEncoder, CreditHead, Linear, Module, param


# -- token plumbing -----------------------------------------------------------

def patchify(obs: np.ndarray, patch: int) -> np.ndarray:
    """(..., C, H, W) -> (..., n, C*patch*patch), patches in row-major order."""
    *lead, c, h, w = obs.shape
    if h % patch or w % patch:
        raise DimensionError(f"image {h}x{w} not divisible by patch {patch}")
    gh, gw = h // patch, w // patch
    x = obs.reshape(*lead, c, gh, patch, gw, patch)
    k = len(lead)
    x = x.transpose(*range(k), k + 1, k + 3, k, k + 2, k + 4)
    return x.reshape(*lead, gh * gw, c * patch * patch)


def unpatchify(patches: np.ndarray, c: int, h: int, w: int, patch: int) -> np.ndarray:
    *lead, n, _ = patches.shape
    gh, gw = h // patch, w // patch
    k = len(lead)
    x = patches.reshape(*lead, gh, gw, c, patch, patch)
    x = x.transpose(*range(k), k + 2, k, k + 3, k + 1, k + 4)
    return x.reshape(*lead, c, h, w)


def gumbel_sigmoid(scores, tau: float = 1.0, training: bool = False, rng=None) -> Tensor:
    """Binary gates from keep probabilities.

    Training: logistic noise (a difference of two Gumbels) is added to the
    logit, the result is squashed at temperature ``tau`` and hard-thresholded
    at 0.5; the backward pass sees the soft sigmoid. Eval: ``scores >= 0.5``.
    """
    if tau <= 0:
        raise ParameterError(f"temperature must be positive, got {tau}")
    scores = as_tensor(scores)
    if not training:
        return Tensor((scores.data >= 0.5).astype(scores.dtype))
    if rng is None:
        raise ContractError("training-mode gating needs an rng")
    u = rng.random(scores.shape)
    noise = (np.log(u + 1e-20) - np.log1p(-u + 1e-20)).astype(scores.dtype)
    soft = ((F.logit(scores) + noise) * (1.0 / tau)).sigmoid()
    return F.straight_through(soft.data >= 0.5, soft)


def interleave(g: Tensor, h: Tensor) -> Tensor:
    """(B, T, D) x2 -> (B, 2T, D) ordered g_1, h_1, g_2, h_2, ..."""
    b, t, d = g.shape
    return reshape(stack([g, h], axis=2), (b, 2 * t, d))


def causal_allowed(valid: np.ndarray) -> np.ndarray:
    """(B, S) validity -> (B, 1, S, S) attention permission.

    Causal and blind to padded keys; the diagonal is always allowed so a
    padded query still has a well-defined softmax.
    """
    s = valid.shape[1]
    tri = np.tril(np.ones((s, s), dtype=bool))
    allowed = tri[None] & valid[:, None, :]
    allowed |= np.eye(s, dtype=bool)[None]
    return allowed[:, None]


# -- activation statistics ----------------------------------------------------

@dataclass
class LayerGate:
    kind: str            # "spatial" or "temporal"
    layer: int
    dim: int             # embedding width of the gated tokens
    active: Tensor       # differentiable count of kept tokens
    total: float         # tokens at valid positions
    mask: Tensor | None = None

    @property
    def ratio(self) -> float:
        return float(self.active.data) / self.total if self.total else 1.0


@dataclass
class MaskState:
    gates: list = field(default_factory=list)

    def of(self, kind: str) -> list:
        return [g for g in self.gates if g.kind == kind]

    def ratios(self) -> dict:
        return {f"{g.kind}{g.layer}": g.ratio for g in self.gates}


# -- the network ---------------------------------------------------------------

class SpatialLayer(Module):
    def __init__(self, rng, cfg: ModelConfig):
        self.block = Block(rng, cfg.spatial_dim, cfg.spatial_heads, cfg.mlp_ratio, cfg.dropout)
        self.credit = CreditHead(rng, cfg.spatial_dim, cfg.credit_bias)
        self.pool = Linear(rng, cfg.n_tokens * cfg.spatial_dim, cfg.temporal_dim)


class TemporalLayer(Module):
    def __init__(self, rng, cfg: ModelConfig):
        self.block = Block(rng, cfg.temporal_dim, cfg.temporal_heads, cfg.mlp_ratio, cfg.dropout)
        self.credit = CreditHead(rng, cfg.temporal_dim, cfg.credit_bias)


class AdaCredModel(Module):
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        ds, dt = cfg.spatial_dim, cfg.temporal_dim
        self.action_embed = param(rng.normal(0.0, 0.02, (cfg.n_actions + 1, ds)))
        self.rtg_embed = Linear(rng, 1, ds)
        self.patch_embed = Linear(rng, cfg.patch_dim, ds)
        self.patch_pos = param(rng.normal(0.0, 0.02, (cfg.n_patches, ds)))
        self.temporal_pos = param(rng.normal(0.0, 0.02, (cfg.ctx_len, dt)))
        self.state_encoder = ConvEncoder(rng, cfg.channels, cfg.conv_channels, cfg.conv_out_hw, dt)
        self.spatial = [SpatialLayer(rng, cfg) for _ in range(cfg.layers)]
        self.temporal = [TemporalLayer(rng, cfg) for _ in range(cfg.layers)]
        self.head = Linear(rng, dt, cfg.n_actions)
        self.stage_completed = 0

    def credit_parameters(self) -> set:
        return {n for n in self.parameters() if ".credit." in n}

    def no_decay_parameters(self) -> set:
        """Biases, layer-norm affines and embedding tables skip weight decay."""
        out = set()
        for n in self.parameters():
            leaf = n.rsplit(".", 1)[-1]
            if leaf in ("bias", "gain") or n in ("action_embed", "patch_pos", "temporal_pos"):
                out.add(n)
        return out

    # -- components ----------------------------------------------------------
    def embed_oar(self, prev_actions, rtg, obs) -> Tensor:
        """(B, T) ids, (B, T) returns, (B, T, C, H, W) frames -> (B, T, n+2, Ds)."""
        cfg = self.cfg
        prev_actions = np.asarray(prev_actions, dtype=np.int64)
        if prev_actions.min() < 0 or prev_actions.max() > cfg.n_actions:
            raise RangeError(f"action ids must lie in [0, {cfg.n_actions}] (start id included)")
        a = F.embedding(self.action_embed, prev_actions)[:, :, None, :]
        r = np.asarray(rtg, dtype=self.action_embed.dtype)[..., None, None] * cfg.rtg_scale
        r = self.rtg_embed(r)
        patches = self.patch_embed(patchify(np.asarray(obs, dtype=self.action_embed.dtype), cfg.patch))
        return concat([a, r, patches + self.patch_pos], axis=2)

    def pool_group(self, tokens, t, layer: int = 0) -> Tensor:
        """Concatenate one group's tokens, project, add ``e_temporal[t]``.

        ``tokens`` is (..., n+2, Ds) for a single step ``t``.
        """
        if not 0 <= t < self.cfg.ctx_len:
            raise RangeError(f"step {t} outside context of length {self.cfg.ctx_len}")
        tokens = as_tensor(tokens)
        flat = reshape(tokens, tokens.shape[:-2] + (-1,))
        return self.spatial[layer].pool(flat) + self.temporal_pos[t]

    def conv_state_embed(self, obs, t) -> Tensor:
        """(C, H, W) or (N, C, H, W) frame at step ``t`` -> (Dt,) or (N, Dt)."""
        cfg = self.cfg
        if not 0 <= t < cfg.ctx_len:
            raise RangeError(f"step {t} outside context of length {cfg.ctx_len}")
        obs = np.asarray(obs, dtype=self.action_embed.dtype)
        single = obs.ndim == 3
        if obs.shape[-3:] != (cfg.channels, cfg.height, cfg.width):
            raise DimensionError(f"frame shape {obs.shape[-3:]} != config "
                                 f"{(cfg.channels, cfg.height, cfg.width)}")
        h = self.state_encoder(obs[None] if single else obs) + self.temporal_pos[t]
        return h[0] if single else h

    def decode_action(self, h) -> Tensor:
        return self.head(h)

    def spatial_layer_forward(self, layer: int, tokens: Tensor, valid: np.ndarray, *,
                              training=False, rng=None, force_ones=False, mask=None):
        """Gate the patch tokens of every group, then run the spatial block.

        ``mask`` (B, T, n) overrides the credit head. Returns the new tokens
        and the layer's gate record.
        """
        cfg = self.cfg
        sl = self.spatial[layer]
        b, t, n_tok, ds = tokens.shape
        n_valid = float(valid.sum())
        total = n_valid * n_tok
        if force_ones:
            gate = LayerGate("spatial", layer, ds, Tensor(np.float64(total)), total)
            x = tokens
        else:
            if mask is None:
                scores = sl.credit(tokens[:, :, 2:, :])
                mask = gumbel_sigmoid(scores, cfg.tau, training, rng)
            mask = as_tensor(mask)
            ones = Tensor(np.ones((b, t, 2), dtype=mask.dtype))
            full = concat([ones, mask], axis=2)
            x = tokens * reshape(full, (b, t, n_tok, 1))
            active = (mask * valid[..., None].astype(mask.dtype)).sum() + 2.0 * n_valid
            gate = LayerGate("spatial", layer, ds, active, total, mask)
        y = sl.block(reshape(x, (b * t, n_tok, ds)), None, rng, training)
        return reshape(y, (b, t, n_tok, ds)), gate

    def temporal_layer_forward(self, layer: int, seq: Tensor, valid: np.ndarray, *,
                               training=False, rng=None, force_ones=False, mask=None):
        """Gate the interleaved (B, 2T, Dt) sequence and run the causal block.

        Returns (Y_out, h tokens from odd positions, gate record).
        """
        cfg = self.cfg
        tl = self.temporal[layer]
        b, s, dt = seq.shape
        if s % 2:
            raise ContractError("temporal input must interleave g and h tokens")
        valid2 = np.repeat(valid, 2, axis=1)
        total = float(valid2.sum())
        if force_ones:
            gate = LayerGate("temporal", layer, dt, Tensor(np.float64(total)), total)
            x = seq
        else:
            if mask is None:
                if cfg.exempt_h:
                    m_g = gumbel_sigmoid(tl.credit(seq[:, 0::2, :]), cfg.tau, training, rng)
                    mask = interleave(reshape(m_g, m_g.shape + (1,)),
                                      Tensor(np.ones(m_g.shape + (1,), dtype=m_g.dtype)))
                    mask = reshape(mask, (b, s))
                else:
                    mask = gumbel_sigmoid(tl.credit(seq), cfg.tau, training, rng)
            mask = as_tensor(mask)
            x = seq * reshape(mask, (b, s, 1))
            active = (mask * valid2.astype(mask.dtype)).sum()
            gate = LayerGate("temporal", layer, dt, active, total, mask)
        y = tl.block(x, causal_allowed(valid2), rng, training)
        return y, y[:, 1::2, :], gate

    # -- full pass -----------------------------------------------------------
    def forward(self, obs, prev_actions, rtg, valid=None, *, training=False, rng=None,
                force_ones=False, masks=None):
        """Logits (B, T, K) for every step plus the gate statistics.

        ``masks`` may hold ``{"spatial": [...], "temporal": [...]}`` per-layer
        arrays that replace the credit heads (used for fixed-mask checks).
        """
        cfg = self.cfg
        obs = np.asarray(obs)
        b, t = obs.shape[:2]
        if t > cfg.ctx_len:
            raise DimensionError(f"sequence of {t} steps exceeds context {cfg.ctx_len}")
        if obs.shape[2:] != (cfg.channels, cfg.height, cfg.width):
            raise DimensionError(f"frame shape {obs.shape[2:]} != config "
                                 f"{(cfg.channels, cfg.height, cfg.width)}")
        if training and rng is None and (cfg.dropout > 0 or not force_ones):
            raise ContractError("training forward needs an rng")
        valid = np.ones((b, t), dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
        masks = masks or {}
        state = MaskState()
        tokens = self.embed_oar(prev_actions, rtg, obs)
        pos = self.temporal_pos[:t]
        frames = obs.reshape((b * t,) + obs.shape[2:]).astype(self.action_embed.dtype)
        h = reshape(self.state_encoder(frames), (b, t, cfg.temporal_dim)) + pos
        for l in range(cfg.layers):
            sm = masks.get("spatial", [None] * cfg.layers)[l]
            tm = masks.get("temporal", [None] * cfg.layers)[l]
            tokens, sg = self.spatial_layer_forward(l, tokens, valid, training=training, rng=rng,
                                                    force_ones=force_ones, mask=sm)
            g = self.spatial[l].pool(reshape(tokens, (b, t, -1))) + pos
            _, h, tg = self.temporal_layer_forward(l, interleave(g, h), valid, training=training,
                                                   rng=rng, force_ones=force_ones, mask=tm)
            state.gates += [sg, tg]
        return self.decode_action(h), state

    __call__ = forward

    def act(self, obs, prev_actions, rtg, valid=None, force_ones: bool = False) -> np.ndarray:
        """Greedy action at the last position of each sequence (eval mode)."""
        with no_grad():
            logits, _ = self.forward(obs, prev_actions, rtg, valid, force_ones=force_ones)
        return logits.data[:, -1].argmax(axis=-1)
