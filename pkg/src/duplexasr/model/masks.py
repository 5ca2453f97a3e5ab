"""Boolean self-attention visibility masks (True = may attend)."""

import numpy as np

from ..errors import UsageError


def build_left_mask(length: int) -> np.ndarray:
    """Each position sees itself and everything to its left."""
    if length < 1:
        raise UsageError("mask length must be >= 1")
    idx = np.arange(length)
    return idx[None, :] <= idx[:, None]


def build_right_mask(length: int) -> np.ndarray:
    """Each position sees itself and everything to its right."""
    if length < 1:
        raise UsageError("mask length must be >= 1")
    idx = np.arange(length)
    return idx[None, :] >= idx[:, None]


def build_chunk_mask(length: int, chunk_size: int) -> np.ndarray:
    """Full visibility inside and before a frame's own chunk, none after."""
    if length < 1 or chunk_size < 1:
        raise UsageError("chunk mask needs length >= 1 and chunk_size >= 1")
    chunk = np.arange(length) // chunk_size
    return chunk[None, :] <= chunk[:, None]


def full_mask(length: int) -> np.ndarray:
    return np.ones((length, length), dtype=bool)
