"""Dense tensors with reverse-mode automatic differentiation.

Every layer downstream (subsampling, attention blocks, decoders, losses)
is assembled from the ops in this module. Three constraints shape the
design:

* numpy arrays are the storage; double precision is the reference
  precision for oracle and gradient tests, single precision is available
  for training speed (pick the dtype when creating parameters/inputs).
* a ``Graph`` records ops in creation order and the backward pass walks
  the record exactly once, in reverse creation order. Ops performed
  while no graph is active are plain numpy calls (inference mode).
* nothing in this module draws ambient randomness; anything stochastic
  takes an explicit ``numpy.random.Generator`` (see ``rng_for``).
"""

import hashlib
import math

import numpy as np

from .errors import UsageError

NEG_INF = float("-inf")


def rng_for(seed: int, *tags) -> np.random.Generator:
    """Derive an independent, reproducible generator from a master seed.

    The stream depends only on ``(seed, tags)``, so consumers cannot
    perturb each other's randomness by drawing in a different order.
    """
    digest = hashlib.sha256(repr((int(seed),) + tags).encode()).digest()
    key = int.from_bytes(digest[:16], "little")
    return np.random.Generator(np.random.Philox(key=key))


class Tensor:
    """A dense array plus the bookkeeping needed by the tape."""

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    # arithmetic sugar; all routed through the recorded ops below
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(as_tensor(other, self.dtype), -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


class Graph:
    """Op tape. Node order is creation order; backward walks it reversed."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _GRAPHS.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _GRAPHS.pop()
        assert popped is self
        return False

    def backward(self, loss: Tensor) -> dict:
        """Accumulate d(loss)/d(tensor) for every recorded tensor.

        Returns a mapping ``Tensor -> numpy array``. Tensors not on a
        path to ``loss`` are absent from the map.
        """
        if loss.data.size != 1:
            raise UsageError("backward requires a scalar loss")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        by_id = {id(loss): loss}
        for out, inputs, backward_fn in reversed(self.nodes):
            gout = grads.get(id(out))
            if gout is None:
                continue
            for t, g in zip(inputs, backward_fn(gout)):
                if g is None or not t.requires_grad:
                    continue
                tid = id(t)
                if tid in grads:
                    grads[tid] = grads[tid] + g
                else:
                    grads[tid] = g
                    by_id[tid] = t
        return {by_id[tid]: g for tid, g in grads.items()}


_GRAPHS: list[Graph] = []


def backward(graph: Graph, loss: Tensor) -> dict:
    return graph.backward(loss)


def _emit(out_data, inputs, backward_fn) -> Tensor:
    out = Tensor(out_data)
    if _GRAPHS and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _GRAPHS[-1].nodes.append((out, tuple(inputs), backward_fn))
    return out


def custom_op(out_data, inputs, backward_fn) -> Tensor:
    """Record an op with a hand-written backward rule."""
    return _emit(out_data, inputs, backward_fn)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _emit(a.data + b.data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _emit(a.data * b.data, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    return _emit(a.data * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return _emit(np.matmul(a.data, b.data), (a, b), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape
    return _emit(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.data.ndim)))
    inv = np.argsort(axes)
    return _emit(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _emit(np.concatenate([t.data for t in tensors], axis=axis), tensors, bwd)


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.data.shape

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _emit(a.data.sum(axis=axis, keepdims=keepdims), (a,), bwd)


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.data.shape
    n = a.data.size if axis is None else shape[axis]

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape) / n,)

    return _emit(a.data.mean(axis=axis, keepdims=keepdims), (a,), bwd)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _emit(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _emit(np.log(a.data), (a,), lambda g: (g / a.data,))


def relu(a: Tensor) -> Tensor:
    keep = a.data > 0
    return _emit(np.where(keep, a.data, 0.0), (a,), lambda g: (g * keep,))


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))
    return _emit(out, (a,), lambda g: (g * out * (1.0 - out),))


def swish(a: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-a.data))
    out = a.data * s
    return _emit(out, (a,), lambda g: (g * (s + out * (1.0 - s)),))


def gelu(a: Tensor) -> Tensor:
    # tanh approximation; smooth everywhere, which keeps finite-difference
    # gradient checks clean
    c = math.sqrt(2.0 / math.pi)
    x = a.data
    inner = c * (x + 0.044715 * x**3)
    t = np.tanh(inner)

    def bwd(g):
        dinner = c * (1.0 + 3 * 0.044715 * x**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _emit(0.5 * x * (1.0 + t), (a,), bwd)


ACTIVATIONS = {"relu": relu, "gelu": gelu, "swish": swish}


def embedding(weight: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.data.shape[0]):
        raise UsageError(f"token id out of range [0, {weight.data.shape[0]})")

    def bwd(g):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, ids, g)
        return (gw,)

    return _emit(weight.data[ids], (weight,), bwd)


def take_rows(a: Tensor, ids) -> Tensor:
    """out[i] = a[i, ids[i]] for a 2-D tensor."""
    ids = np.asarray(ids, dtype=np.int64)
    rows = np.arange(a.data.shape[0])

    def bwd(g):
        ga = np.zeros_like(a.data)
        ga[rows, ids] = g
        return (ga,)

    return _emit(a.data[rows, ids], (a,), bwd)


def flip_rows(a: Tensor) -> Tensor:
    """Reverse the first axis."""
    return _emit(a.data[::-1].copy(), (a,), lambda g: (g[::-1].copy(),))


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous column slice of a 2-D tensor."""

    def bwd(g):
        ga = np.zeros_like(a.data)
        ga[:, start:stop] = g
        return (ga,)

    return _emit(a.data[:, start:stop], (a,), bwd)


# ---------------------------------------------------------------------------
# normalization / softmax family
# ---------------------------------------------------------------------------


def log_sum_exp(v) -> float:
    """log sum exp of a vector, max-shifted; -inf iff all entries are -inf."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise UsageError("log_sum_exp of an empty vector")
    m = v.max()
    if m == NEG_INF:
        return NEG_INF
    return float(m + math.log(np.exp(v - m).sum()))


def softmax(x, axis: int = -1):
    """Max-shifted softmax. Accepts a Tensor (recorded) or a numpy array."""
    if isinstance(x, Tensor):
        m = x.data.max(axis=axis, keepdims=True)
        e = np.exp(x.data - m)
        p = e / e.sum(axis=axis, keepdims=True)

        def bwd(g):
            dot = (g * p).sum(axis=axis, keepdims=True)
            return (p * (g - dot),)

        return _emit(p, (x,), bwd)
    x = np.asarray(x, dtype=np.float64)
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    m = x.data.max(axis=axis, keepdims=True)
    shifted = x.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def bwd(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _emit(out, (x,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise UsageError(
            f"layer_norm gain/bias must have length {d}, "
            f"got {gain.data.shape} and {bias.data.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv

    def bwd(g):
        dy = g * gain.data
        dx = inv * (
            dy
            - dy.mean(axis=-1, keepdims=True)
            - y * (dy * y).mean(axis=-1, keepdims=True)
        )
        axes = tuple(range(x.data.ndim - 1))
        return dx, (g * y).sum(axis=axes), g.sum(axis=axes)

    return _emit(y * gain.data + bias.data, (x, gain, bias), bwd)


def masked_softmax(scores: Tensor, mask: np.ndarray) -> Tensor:
    """Softmax over the last axis restricted to ``mask``-true positions.

    Masked positions get weight exactly 0; a fully masked row yields an
    all-zero row (never happens under valid decoding masks, but must not
    produce NaN).
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != scores.data.shape[-mask.ndim:]:
        raise UsageError(
            f"mask shape {mask.shape} does not match scores {scores.data.shape}"
        )
    filled = np.where(mask, scores.data, NEG_INF)
    m = filled.max(axis=-1, keepdims=True)
    m = np.where(np.isneginf(m), 0.0, m)
    e = np.exp(filled - m)
    z = e.sum(axis=-1, keepdims=True)
    p = e / np.where(z == 0.0, 1.0, z)

    def bwd(g):
        dot = (g * p).sum(axis=-1, keepdims=True)
        return (p * (g - dot),)

    return _emit(p, (scores,), bwd)


def masked_attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray) -> Tensor:
    """Scaled dot-product attention gated by a boolean (query, key) mask.

    Shapes: (L, d) or (heads, L, d) for q/k/v, mask (L_q, L_k).
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (q.data.shape[-2], k.data.shape[-2]):
        raise UsageError(
            f"mask shape {mask.shape} != (query_len, key_len) "
            f"({q.data.shape[-2]}, {k.data.shape[-2]})"
        )
    dk = q.data.shape[-1]
    scores = scale(matmul(q, transpose(k, _swap_last(k))), 1.0 / math.sqrt(dk))
    weights = masked_softmax(scores, mask)
    return matmul(weights, v)


def _swap_last(t: Tensor):
    axes = list(range(t.data.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


# ---------------------------------------------------------------------------
# convolutions used by the encoder front-end
# ---------------------------------------------------------------------------


def conv2d_stride2(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Valid 3x3 convolution with stride 2 on a (C_in, T, F) tensor."""
    _, t, f = x.data.shape
    if t < 3 or f < 3:
        raise UsageError(f"conv2d_stride2 needs at least 3x3 input, got {t}x{f}")
    wins = np.lib.stride_tricks.sliding_window_view(x.data, (3, 3), axis=(1, 2))
    wins = wins[:, ::2, ::2]  # (C_in, T', F', 3, 3)
    out = np.einsum("cijhw,ochw->oij", wins, w.data, optimize=True)
    out = out + b.data[:, None, None]
    tp, fp = out.shape[1], out.shape[2]

    def bwd(g):
        gw = np.einsum("cijhw,oij->ochw", wins, g, optimize=True)
        gb = g.sum(axis=(1, 2))
        gx = np.zeros_like(x.data)
        for h in range(3):
            for ww in range(3):
                contrib = np.tensordot(w.data[:, :, h, ww], g, axes=(0, 0))
                gx[:, h : h + 2 * tp - 1 : 2, ww : ww + 2 * fp - 1 : 2] += contrib
        return gx, gw, gb

    return _emit(out, (x, w, b), bwd)


def causal_conv1d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Depthwise causal convolution along time: x (T, C), w (C, K), b (C)."""
    t, c = x.data.shape
    k = w.data.shape[1]
    padded = np.concatenate([np.zeros((k - 1, c), dtype=x.data.dtype), x.data])
    wins = np.lib.stride_tricks.sliding_window_view(padded, k, axis=0)  # (T, C, K)
    out = np.einsum("tck,ck->tc", wins, w.data, optimize=True) + b.data

    def bwd(g):
        gw = np.einsum("tck,tc->ck", wins, g, optimize=True)
        gb = g.sum(axis=0)
        gxp = np.zeros_like(padded)
        for kk in range(k):
            gxp[kk : kk + t] += g * w.data[:, kk]
        return gxp[k - 1 :], gw, gb

    return _emit(out, (x, w, b), bwd)
