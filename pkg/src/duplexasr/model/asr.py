"""Full model: shared encoder, CTC head, and two attention decoders."""

from dataclasses import dataclass, fields

import numpy as np

from .. import numerics as nx
from ..errors import UsageError
from ..frontend import eos_id, sos_id
from ..numerics import Tensor, rng_for
from . import masks
from .decoder import Decoder
from .encoder import Encoder
from .layers import Linear, Module

L2R = "l2r"
R2L = "r2l"


@dataclass
class ChunkPolicy:
    """How much right context the encoder may see during training.

    ``dynamic`` redraws per batch: full context with probability
    ``full_context_prob``, otherwise a chunk size uniform on
    [1, max_chunk]. Chunk sizes count subsampled frames.
    """

    mode: str = "dynamic"  # full | fixed | dynamic
    chunk_size: int = 16
    full_context_prob: float = 0.5
    max_chunk: int = 25

    def validate(self):
        if self.mode not in ("full", "fixed", "dynamic"):
            raise UsageError(f"unknown chunk mode {self.mode!r}")
        if self.chunk_size < 1 or self.max_chunk < 1:
            raise UsageError("chunk sizes must be >= 1")
        if not 0.0 <= self.full_context_prob <= 1.0:
            raise UsageError("full_context_prob must lie in [0, 1]")
        return self

    def draw(self, rng) -> int | None:
        """Chunk size for one batch; None means full context."""
        self.validate()
        if self.mode == "full":
            return None
        if self.mode == "fixed":
            return self.chunk_size
        if rng.random() < self.full_context_prob:
            return None
        return int(rng.integers(1, self.max_chunk + 1))


@dataclass
class ModelConfig:
    vocab: int = 8
    feat_dim: int = 8
    d_model: int = 256
    heads: int = 4
    d_ffn: int = 2048
    encoder_layers: int = 12
    encoder_kind: str = "transformer"  # or "conformer"
    conv_kernel: int = 8
    decoder_layers_l2r: int = 3
    decoder_layers_r2l: int = 3
    activation: str = "relu"
    pos_enc: bool = True
    r2l_impl: str = "right_mask"  # or "reversed_input"
    precision: str = "double"  # or "single"

    def validate(self):
        if self.vocab < 4:
            raise UsageError("vocab must be >= 4 (blank, sos, eos, one real token)")
        if self.d_model % self.heads != 0:
            raise UsageError("d_model must be divisible by heads")
        if self.encoder_layers < 1 or self.heads < 1:
            raise UsageError("encoder_layers and heads must be >= 1")
        if self.decoder_layers_l2r < 0 or self.decoder_layers_r2l < 0:
            raise UsageError("decoder layer counts must be >= 0")
        if self.encoder_kind not in ("transformer", "conformer"):
            raise UsageError(f"unknown encoder kind {self.encoder_kind!r}")
        if self.r2l_impl not in ("right_mask", "reversed_input"):
            raise UsageError(f"unknown r2l implementation {self.r2l_impl!r}")
        if self.activation not in nx.ACTIVATIONS:
            raise UsageError(f"unknown activation {self.activation!r}")
        if self.precision not in ("double", "single"):
            raise UsageError("precision must be 'double' or 'single'")
        return self

    @property
    def dtype(self):
        return np.float64 if self.precision == "double" else np.float32

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name not in d:
                continue
            raw = d[f.name]
            if f.type == "bool" or isinstance(f.default, bool):
                kwargs[f.name] = raw in (True, "True", "true", "1")
            elif isinstance(f.default, int):
                kwargs[f.name] = int(raw)
            else:
                kwargs[f.name] = str(raw)
        return cls(**kwargs).validate()


def build_decoder_io(tokens, direction: str, vocab: int):
    """(decoder input, scoring targets) for one direction.

    Reverse-direction data always lives in reversed coordinates:
    input ``[sos] + reversed(y)``, targets ``reversed(y) + [eos]``.
    """
    tokens = list(tokens)
    if direction == R2L:
        tokens = tokens[::-1]
    elif direction != L2R:
        raise UsageError(f"unknown decoder direction {direction!r}")
    return [sos_id(vocab)] + tokens, tokens + [eos_id(vocab)]


class Model(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        dtype = cfg.dtype
        rng = rng_for(seed, "model-init")
        self.encoder = Encoder(cfg, rng, dtype)
        self.ctc_head = Linear(cfg.d_model, cfg.vocab, rng, dtype)
        self.dec_l2r = (
            Decoder(cfg, cfg.decoder_layers_l2r, rng, dtype)
            if cfg.decoder_layers_l2r > 0
            else None
        )
        self.dec_r2l = (
            Decoder(cfg, cfg.decoder_layers_r2l, rng, dtype)
            if cfg.decoder_layers_r2l > 0
            else None
        )

    # Module.named_parameters walks self.__dict__; keep cfg out of it
    def named_parameters(self, prefix: str = ""):
        for attr in ("encoder", "ctc_head", "dec_l2r", "dec_r2l"):
            member = getattr(self, attr)
            if member is not None:
                yield from member.named_parameters(f"{prefix}{attr}.")

    def parameters(self) -> dict:
        return dict(self.named_parameters())

    def encode(self, features: np.ndarray, chunk_size: int | None = None) -> Tensor:
        """Encoder states for one utterance; None chunk size = full context."""
        return self.encoder(features, chunk_size)

    def ctc_log_probs(self, enc: Tensor) -> Tensor:
        return nx.log_softmax(self.ctc_head(enc))

    def decoder(self, direction: str) -> Decoder:
        dec = self.dec_l2r if direction == L2R else self.dec_r2l
        if dec is None:
            raise UsageError(f"model has no {direction} decoder")
        return dec

    def decoder_forward(self, enc: Tensor, tokens_in, direction: str) -> Tensor:
        """Teacher-forced log-probs, rows aligned with ``build_decoder_io`` targets.

        ``tokens_in`` is ``[sos] + y`` for the forward decoder and
        ``[sos] + reversed(y)`` for the reverse one. With the
        ``right_mask`` realization the reverse decoder internally keeps
        the natural token order and an upper-triangular mask; rows are
        flipped back so callers see reversed-coordinate alignment either
        way.
        """
        tokens_in = np.asarray(tokens_in, dtype=np.int64)
        m = len(tokens_in)
        if direction == L2R:
            return self.decoder(L2R)(enc, tokens_in, masks.build_left_mask(m))
        if direction != R2L:
            raise UsageError(f"unknown decoder direction {direction!r}")
        if self.cfg.r2l_impl == "reversed_input":
            return self.decoder(R2L)(enc, tokens_in, masks.build_left_mask(m))
        out = self.decoder(R2L)(enc, tokens_in[::-1], masks.build_right_mask(m))
        return nx.flip_rows(out)

    def score_sequence(self, enc: Tensor, tokens, direction: str) -> float:
        """Sum of teacher-forced log-probs of ``tokens`` plus end symbol."""
        tin, tout = build_decoder_io(tokens, direction, self.cfg.vocab)
        log_probs = self.decoder_forward(enc, tin, direction)
        return float(nx.take_rows(log_probs, tout).data.sum())
