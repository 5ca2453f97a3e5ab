"""Attention decoders.

One decoder class serves both directions; direction is realized purely
through the self-attention mask and the token order handed to it. The
reverse-direction decoder supports both published realizations:

* ``reversed_input``: tokens arrive reversed, left (lower-triangular)
  self-attention mask;
* ``right_mask``: tokens stay in forward order, right (upper-triangular)
  self-attention mask.

The two differ only in which positional index each token receives, so
with positional encodings disabled they are numerically interchangeable
(up to row order).
"""

import math

import numpy as np

from .. import numerics as nx
from ..errors import UsageError
from ..numerics import Tensor
from .layers import FeedForward, LayerNorm, Linear, Module, MultiHeadAttention
from .layers import sinusoidal_encoding


class DecoderLayer(Module):
    def __init__(self, d_model, heads, d_ffn, activation, rng, dtype):
        self.ln_self = LayerNorm(d_model, dtype)
        self.self_attn = MultiHeadAttention(d_model, heads, rng, dtype)
        self.ln_cross = LayerNorm(d_model, dtype)
        self.cross_attn = MultiHeadAttention(d_model, heads, rng, dtype)
        self.ln_ffn = LayerNorm(d_model, dtype)
        self.ffn = FeedForward(d_model, d_ffn, activation, rng, dtype)

    def __call__(self, x, memory, self_mask, cross_mask):
        h = self.ln_self(x)
        x = x + self.self_attn(h, h, self_mask)
        x = x + self.cross_attn(self.ln_cross(x), memory, cross_mask)
        return x + self.ffn(self.ln_ffn(x))


class Decoder(Module):
    def __init__(self, cfg, n_layers, rng, dtype):
        self.embed = Tensor(
            rng.normal(0.0, cfg.d_model**-0.5, size=(cfg.vocab, cfg.d_model)).astype(
                dtype
            ),
            requires_grad=True,
        )
        self.layers = [
            DecoderLayer(cfg.d_model, cfg.heads, cfg.d_ffn, cfg.activation, rng, dtype)
            for _ in range(n_layers)
        ]
        self.ln_final = LayerNorm(cfg.d_model, dtype)
        self.out = Linear(cfg.d_model, cfg.vocab, rng, dtype)
        self.d_model = cfg.d_model
        self.vocab = cfg.vocab
        self.pos_enc = cfg.pos_enc
        self.dtype = dtype

    def __call__(self, memory: Tensor, tokens, self_mask: np.ndarray) -> Tensor:
        """Teacher-forced pass: log-distributions per input position."""
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.vocab):
            raise UsageError(f"token id outside vocabulary of size {self.vocab}")
        x = nx.embedding(self.embed, tokens) * math.sqrt(self.d_model)
        if self.pos_enc:
            x = x + Tensor(sinusoidal_encoding(len(tokens), self.d_model, self.dtype))
        cross = np.ones((len(tokens), memory.data.shape[0]), dtype=bool)
        for layer in self.layers:
            x = layer(x, memory, self_mask, cross)
        return nx.log_softmax(self.out(self.ln_final(x)))
