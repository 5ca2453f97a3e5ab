from .asr import L2R, R2L, ChunkPolicy, Model, ModelConfig, build_decoder_io
from .checkpoint import load_checkpoint, save_checkpoint
from .masks import build_chunk_mask, build_left_mask, build_right_mask, full_mask

__all__ = [
    "L2R",
    "R2L",
    "ChunkPolicy",
    "Model",
    "ModelConfig",
    "build_decoder_io",
    "build_chunk_mask",
    "build_left_mask",
    "build_right_mask",
    "full_mask",
    "load_checkpoint",
    "save_checkpoint",
]
