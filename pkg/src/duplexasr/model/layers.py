"""Building blocks shared by the encoder and the attention decoders."""

import math

import numpy as np

from .. import numerics as nx
from ..errors import UsageError
from ..numerics import Tensor


class Module:
    """Minimal parameter container; attribute order fixes parameter names."""

    def named_parameters(self, prefix: str = ""):
        for attr, value in self.__dict__.items():
            name = f"{prefix}{attr}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item

    def parameter_count(self) -> int:
        return sum(p.data.size for _, p in self.named_parameters())


def _xavier(rng, fan_in, fan_out, shape, dtype):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(
        rng.uniform(-limit, limit, size=shape).astype(dtype), requires_grad=True
    )


class Linear(Module):
    def __init__(self, d_in, d_out, rng, dtype):
        self.w = _xavier(rng, d_in, d_out, (d_in, d_out), dtype)
        self.b = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.w + self.b


class LayerNorm(Module):
    def __init__(self, d, dtype, eps: float = 1e-5):
        self.gain = Tensor(np.ones(d, dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return nx.layer_norm(x, self.gain, self.bias, self.eps)


def sinusoidal_encoding(length: int, d_model: int, dtype) -> np.ndarray:
    """Absolute sinusoidal positions, (length, d_model)."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    half = np.arange(0, d_model, 2, dtype=np.float64)
    freq = np.exp(-math.log(10000.0) * half / d_model)
    pe = np.zeros((length, d_model), dtype=np.float64)
    pe[:, 0::2] = np.sin(pos * freq)
    pe[:, 1::2] = np.cos(pos * freq)
    return pe.astype(dtype)


class MultiHeadAttention(Module):
    def __init__(self, d_model, heads, rng, dtype):
        if d_model % heads != 0:
            raise UsageError(f"d_model {d_model} not divisible by {heads} heads")
        self.wq = Linear(d_model, d_model, rng, dtype)
        self.wk = Linear(d_model, d_model, rng, dtype)
        self.wv = Linear(d_model, d_model, rng, dtype)
        self.wo = Linear(d_model, d_model, rng, dtype)
        self.heads = heads
        self.d_head = d_model // heads

    def __call__(self, query: Tensor, memory: Tensor, mask: np.ndarray) -> Tensor:
        lq = query.data.shape[0]
        lk = memory.data.shape[0]
        q = self._split(self.wq(query), lq)
        k = self._split(self.wk(memory), lk)
        v = self._split(self.wv(memory), lk)
        out = nx.masked_attention(q, k, v, mask)  # (H, Lq, d_head)
        out = out.transpose(1, 0, 2).reshape(lq, self.heads * self.d_head)
        return self.wo(out)

    def _split(self, x: Tensor, length: int) -> Tensor:
        return x.reshape(length, self.heads, self.d_head).transpose(1, 0, 2)


class FeedForward(Module):
    def __init__(self, d_model, d_ffn, activation, rng, dtype):
        self.lin1 = Linear(d_model, d_ffn, rng, dtype)
        self.lin2 = Linear(d_ffn, d_model, rng, dtype)
        self.act = nx.ACTIVATIONS[activation]

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(self.act(self.lin1(x)))
