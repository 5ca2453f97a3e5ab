"""Shared encoder: conv subsampling plus chunk-masked attention blocks.

Streaming behavior comes entirely from the chunk attention mask; there
is no cache-based incremental path. The conformer variant uses a causal
depthwise convolution and layer-norm in the conv module, so the
causality probes hold for both encoder kinds.
"""

import numpy as np

from .. import numerics as nx
from ..errors import UsageError
from ..numerics import Tensor
from . import masks
from .layers import FeedForward, LayerNorm, Linear, Module, MultiHeadAttention
from .layers import sinusoidal_encoding

MIN_FRAMES = 7  # two valid stride-2 3x3 convs need at least 7 rows


def subsampled_length(t: int) -> int:
    if t < MIN_FRAMES:
        raise UsageError(
            f"input has {t} frames; subsampling needs at least {MIN_FRAMES}"
        )
    t1 = (t - 3) // 2 + 1
    return (t1 - 3) // 2 + 1


class Subsampler(Module):
    """Two valid 3x3 stride-2 convolutions, then a projection to d_model."""

    def __init__(self, feat_dim, d_model, activation, rng, dtype):
        if feat_dim < MIN_FRAMES:
            raise UsageError(f"feature dim {feat_dim} too small, need >= {MIN_FRAMES}")
        self.conv1_w = nx.Tensor(
            rng.normal(0.0, 0.1, size=(d_model, 1, 3, 3)).astype(dtype),
            requires_grad=True,
        )
        self.conv1_b = nx.Tensor(np.zeros(d_model, dtype=dtype), requires_grad=True)
        self.conv2_w = nx.Tensor(
            rng.normal(0.0, 0.1 / np.sqrt(d_model), size=(d_model, d_model, 3, 3)).astype(dtype),
            requires_grad=True,
        )
        self.conv2_b = nx.Tensor(np.zeros(d_model, dtype=dtype), requires_grad=True)
        f_out = subsampled_length(feat_dim)  # same arithmetic on the freq axis
        self.proj = Linear(d_model * f_out, d_model, rng, dtype)
        self.act = nx.ACTIVATIONS[activation]
        self.d_model = d_model

    def __call__(self, features: np.ndarray) -> Tensor:
        t_out = subsampled_length(features.shape[0])
        x = Tensor(features[None, :, :])  # (1, T, F)
        x = self.act(nx.conv2d_stride2(x, self.conv1_w, self.conv1_b))
        x = self.act(nx.conv2d_stride2(x, self.conv2_w, self.conv2_b))
        f_out = x.data.shape[2]
        x = x.transpose(1, 0, 2).reshape(t_out, self.d_model * f_out)
        return self.proj(x)


class TransformerEncoderLayer(Module):
    def __init__(self, d_model, heads, d_ffn, activation, rng, dtype):
        self.ln_attn = LayerNorm(d_model, dtype)
        self.attn = MultiHeadAttention(d_model, heads, rng, dtype)
        self.ln_ffn = LayerNorm(d_model, dtype)
        self.ffn = FeedForward(d_model, d_ffn, activation, rng, dtype)

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        h = self.ln_attn(x)
        x = x + self.attn(h, h, mask)
        return x + self.ffn(self.ln_ffn(x))


class ConformerEncoderLayer(Module):
    """Macaron block: 1/2 ffn, self-attention, conv module, 1/2 ffn."""

    def __init__(self, d_model, heads, d_ffn, kernel, rng, dtype):
        self.ln_ffn1 = LayerNorm(d_model, dtype)
        self.ffn1 = FeedForward(d_model, d_ffn, "swish", rng, dtype)
        self.ln_attn = LayerNorm(d_model, dtype)
        self.attn = MultiHeadAttention(d_model, heads, rng, dtype)
        self.ln_conv = LayerNorm(d_model, dtype)
        self.conv_pw1 = Linear(d_model, 2 * d_model, rng, dtype)
        self.conv_dw_w = nx.Tensor(
            rng.normal(0.0, 1.0 / np.sqrt(kernel), size=(d_model, kernel)).astype(dtype),
            requires_grad=True,
        )
        self.conv_dw_b = nx.Tensor(np.zeros(d_model, dtype=dtype), requires_grad=True)
        self.conv_norm = LayerNorm(d_model, dtype)
        self.conv_pw2 = Linear(d_model, d_model, rng, dtype)
        self.ln_ffn2 = LayerNorm(d_model, dtype)
        self.ffn2 = FeedForward(d_model, d_ffn, "swish", rng, dtype)
        self.ln_out = LayerNorm(d_model, dtype)
        self.d_model = d_model

    def _conv(self, x: Tensor) -> Tensor:
        h = self.conv_pw1(x)  # (T, 2d)
        value = nx.slice_cols(h, 0, self.d_model)
        gate = nx.slice_cols(h, self.d_model, 2 * self.d_model)
        h = nx.mul(value, nx.sigmoid(gate))
        h = nx.causal_conv1d(h, self.conv_dw_w, self.conv_dw_b)
        h = self.conv_norm(h)
        return self.conv_pw2(nx.swish(h))

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        x = x + 0.5 * self.ffn1(self.ln_ffn1(x))
        h = self.ln_attn(x)
        x = x + self.attn(h, h, mask)
        x = x + self._conv(self.ln_conv(x))
        x = x + 0.5 * self.ffn2(self.ln_ffn2(x))
        return self.ln_out(x)


class Encoder(Module):
    def __init__(self, cfg, rng, dtype):
        self.subsampler = Subsampler(cfg.feat_dim, cfg.d_model, cfg.activation, rng, dtype)
        if cfg.encoder_kind == "transformer":
            self.layers = [
                TransformerEncoderLayer(
                    cfg.d_model, cfg.heads, cfg.d_ffn, cfg.activation, rng, dtype
                )
                for _ in range(cfg.encoder_layers)
            ]
        elif cfg.encoder_kind == "conformer":
            self.layers = [
                ConformerEncoderLayer(
                    cfg.d_model, cfg.heads, cfg.d_ffn, cfg.conv_kernel, rng, dtype
                )
                for _ in range(cfg.encoder_layers)
            ]
        else:
            raise UsageError(f"unknown encoder kind {cfg.encoder_kind!r}")
        self.ln_final = LayerNorm(cfg.d_model, dtype)
        self.pos_enc = cfg.pos_enc
        self.d_model = cfg.d_model
        self.dtype = dtype

    def __call__(self, features: np.ndarray, chunk_size: int | None = None) -> Tensor:
        x = self.subsampler(np.asarray(features, dtype=self.dtype))
        t_out = x.data.shape[0]
        if self.pos_enc:
            x = x + Tensor(sinusoidal_encoding(t_out, self.d_model, self.dtype))
        mask = (
            masks.full_mask(t_out)
            if chunk_size is None or chunk_size >= t_out
            else masks.build_chunk_mask(t_out, chunk_size)
        )
        for layer in self.layers:
            x = layer(x, mask)
        return self.ln_final(x)
