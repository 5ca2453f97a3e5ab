"""Checkpoint persistence.

Layout: magic ``U2CK``, u32-le version, u32-le config block length and
the config as ``key=value`` text lines, u32-le tensor count, then per
tensor: u16-le name length + name bytes, u8 dtype code (0 = float32,
1 = float64), u8 rank, rank u32-le extents, raw little-endian data.
Training metadata (step, validation loss) travels in the config block.
Round-trips are bit-exact for both dtypes; double payloads are what make
bit-identical training resume possible.
"""

import struct

import numpy as np

from ..errors import IngestError, UsageError

CHECKPOINT_MAGIC = b"U2CK"
CHECKPOINT_VERSION = 1

_DTYPE_CODES = {0: "<f4", 1: "<f8"}
_CODE_FOR = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def save_checkpoint(path: str, tensors: dict, meta: dict) -> None:
    config_blob = "".join(f"{k}={v}\n" for k, v in meta.items()).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(config_blob)))
        f.write(config_blob)
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.asarray(arr)
            if arr.dtype not in _CODE_FOR:
                raise UsageError(f"{name}: unsupported checkpoint dtype {arr.dtype}")
            encoded = name.encode()
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<BB", _CODE_FOR[arr.dtype], arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())


def load_checkpoint(path: str) -> tuple:
    """Returns ``(tensors, meta)``; order of tensors is preserved."""
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise IngestError(f"cannot read checkpoint {path}: {e}") from e
    if blob[:4] != CHECKPOINT_MAGIC:
        raise IngestError(f"{path}: bad magic, not a checkpoint")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != CHECKPOINT_VERSION:
        raise IngestError(f"{path}: unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack("<I", blob[8:12])
    pos = 12
    meta = {}
    for line in blob[pos : pos + cfg_len].decode().splitlines():
        if line:
            k, _, v = line.partition("=")
            meta[k] = v
    pos += cfg_len
    (count,) = struct.unpack("<I", blob[pos : pos + 4])
    pos += 4
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", blob[pos : pos + 2])
        pos += 2
        name = blob[pos : pos + name_len].decode()
        pos += name_len
        code, ndim = struct.unpack("<BB", blob[pos : pos + 2])
        pos += 2
        shape = struct.unpack(f"<{ndim}I", blob[pos : pos + 4 * ndim])
        pos += 4 * ndim
        if code not in _DTYPE_CODES:
            raise IngestError(f"{path}: tensor {name} has unknown dtype code {code}")
        dt = np.dtype(_DTYPE_CODES[code])
        n_bytes = dt.itemsize * int(np.prod(shape, dtype=np.int64)) if ndim else dt.itemsize
        data = np.frombuffer(blob[pos : pos + n_bytes], dtype=dt)
        pos += n_bytes
        tensors[name] = data.reshape(shape).copy()
    return tensors, meta
