"""Parameter containers and transformer building blocks."""

from __future__ import annotations

import math

import numpy as np

from ..numerics import functional as F
from ..numerics.tensor import Tensor, linear, matmul, reshape, transpose

NEG_INF = -1e9


class Module:
    """Parameters are ``Tensor`` attributes with ``requires_grad``; children nest."""

    def named_parameters(self, prefix: str = ""):
        for key, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                yield prefix + key, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{prefix}{key}.")
            elif isinstance(val, list) and val and isinstance(val[0], Module):
                for i, m in enumerate(val):
                    yield from m.named_parameters(f"{prefix}{key}.{i}.")

    def parameters(self) -> dict:
        return dict(self.named_parameters())

    def n_params(self) -> int:
        return sum(p.size for p in self.parameters().values())


def param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


class Linear(Module):
    def __init__(self, rng, n_in: int, n_out: int, bias: bool = True, std: float = 0.02):
        self.weight = param(rng.normal(0.0, std, (n_in, n_out)))
        self.bias = param(np.zeros(n_out)) if bias else None

    def __call__(self, x):
        return linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gain = param(np.ones(dim))
        self.bias = param(np.zeros(dim))

    def __call__(self, x):
        return F.layer_norm(x, self.gain, self.bias)


class MultiHeadAttention(Module):
    def __init__(self, rng, dim: int, heads: int, dropout: float = 0.0):
        self.heads = heads
        self.dropout = dropout
        self.qkv = Linear(rng, dim, 3 * dim)
        self.proj = Linear(rng, dim, dim)

    def __call__(self, x, allowed=None, rng=None, training=False):
        """``x`` is (N, S, D); ``allowed`` broadcasts to (N, 1, S, S), True where i may attend j."""
        n, s, d = x.shape
        h = self.heads
        qkv = reshape(self.qkv(x), (n, s, 3, h, d // h))
        qkv = transpose(qkv, (2, 0, 3, 1, 4))           # (3, N, H, S, dh)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = matmul(q, transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(d // h))
        if allowed is not None:
            scores = scores + np.where(allowed, 0.0, NEG_INF).astype(scores.dtype)
        att = F.dropout(F.softmax(scores, axis=-1), self.dropout, rng, training)
        y = transpose(matmul(att, v), (0, 2, 1, 3))
        return self.proj(reshape(y, (n, s, d)))


class MLP(Module):
    def __init__(self, rng, dim: int, ratio: int):
        self.fc = Linear(rng, dim, ratio * dim)
        self.out = Linear(rng, ratio * dim, dim)

    def __call__(self, x):
        return self.out(F.gelu(self.fc(x)))


class Block(Module):
    """Pre-norm transformer layer: attention then MLP, both residual."""

    def __init__(self, rng, dim: int, heads: int, mlp_ratio: int, dropout: float):
        self.dropout = dropout
        self.ln1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(rng, dim, heads, dropout)
        self.ln2 = LayerNorm(dim)
        self.mlp = MLP(rng, dim, mlp_ratio)

    def __call__(self, x, allowed=None, rng=None, training=False):
        x = x + F.dropout(self.attn(self.ln1(x), allowed, rng, training), self.dropout, rng, training)
        return x + F.dropout(self.mlp(self.ln2(x)), self.dropout, rng, training)


class CreditHead(Module):
    """Token embedding -> keep logit; ``sigmoid`` of it is the keep probability.

    Inputs are standardized first (no learned affine) so every layer's head
    sees unit-scale features regardless of the residual stream's magnitude.
    """

    def __init__(self, rng, dim: int, bias: float):
        self.fc = Linear(rng, dim, max(1, dim // 4), std=1.0 / math.sqrt(dim))
        self.out = Linear(rng, max(1, dim // 4), 1)
        self.out.bias.data[:] = bias
        self._unit = (Tensor(np.ones(dim)), Tensor(np.zeros(dim)))

    def logits(self, x):
        z = self.out(F.gelu(self.fc(F.layer_norm(x, *self._unit))))
        return reshape(z, z.shape[:-1])

    def __call__(self, x):
        return self.logits(x).sigmoid()


class ConvEncoder(Module):
    """Stride-2 3x3 convolutions with GELU, flattened and projected."""

    def __init__(self, rng, in_ch: int, channels, out_hw, out_dim: int):
        self.convs = []
        c = in_ch
        for co in channels:
            self.convs.append(_Conv(rng, c, co))
            c = co
        self.fc = Linear(rng, c * out_hw[0] * out_hw[1], out_dim)

    def __call__(self, x):
        """``x`` is (N, C, H, W) -> (N, out_dim)."""
        for conv in self.convs:
            x = F.gelu(F.conv2d(x, conv.weight, conv.bias, stride=2))
        return self.fc(reshape(x, (x.shape[0], -1)))


class _Conv(Module):
    def __init__(self, rng, c_in, c_out, k=3):
        fan_in = c_in * k * k
        self.weight = param(rng.normal(0.0, 1.0 / math.sqrt(fan_in), (c_out, c_in, k, k)))
        self.bias = param(np.zeros(c_out))
