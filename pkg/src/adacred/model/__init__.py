"""Transformer policy with spatial and temporal token crediting."""

from .checkpoint import load_arrays, load_model, save_arrays, save_model
from .config import PRESETS, ModelConfig, preset
from .layers import Block, ConvEncoder, CreditHead, LayerNorm, Linear, Module, MultiHeadAttention
from .network import (AdaCredModel, LayerGate, MaskState, causal_allowed, gumbel_sigmoid,
                      interleave, patchify, unpatchify)

__all__ = [
    "AdaCredModel", "Block", "ConvEncoder", "CreditHead", "LayerGate", "LayerNorm", "Linear",
    "MaskState", "ModelConfig", "Module", "MultiHeadAttention", "PRESETS", "causal_allowed",
    "gumbel_sigmoid", "interleave", "load_arrays", "load_model", "patchify", "preset",
    "save_arrays", "save_model", "unpatchify",
]
