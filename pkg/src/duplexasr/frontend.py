"""Corpus ingestion, synthetic-task generation, and spectral augmentation.

The artifact consumes precomputed feature matrices; there is no audio
I/O here. On-disk formats:

* feature file: magic ``U2FT``, u32-le frame count T, u32-le feature
  dim F, then T*F float32 little-endian values, row-major.
* manifest: one record per line, tab-separated:
  ``utterance-id<TAB>feature-file-path<TAB>space-separated token ids``.
  Relative feature paths are resolved against the manifest's directory.
"""

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import IngestError, UsageError

FEATURE_MAGIC = b"U2FT"

# reserved token ids: blank is always 0, sos/eos are the two ids below
# the vocabulary size (annotations may only use 1 .. vocab-3)
BLANK = 0


def sos_id(vocab: int) -> int:
    return vocab - 2


def eos_id(vocab: int) -> int:
    return vocab - 1


@dataclass
class Utterance:
    id: str
    features: np.ndarray  # (T, F) float32
    tokens: list  # annotation ids, no sos/eos


@dataclass
class SpecSubConfig:
    t_max: int = 30
    t_min: int = 0
    n_max: int = 3

    def validate(self):
        if not (0 <= self.t_min <= self.t_max) or self.n_max < 0:
            raise UsageError(f"bad SpecSub config: {self}")


@dataclass
class SpecAugConfig:
    f_max: int = 10
    num_f_masks: int = 2
    t_mask_max: int = 50
    num_t_masks: int = 2
    fill_value: float = 0.0

    def validate(self, feat_dim: int):
        if min(self.f_max, self.num_f_masks, self.t_mask_max, self.num_t_masks) < 0:
            raise UsageError(f"bad SpecAugment config: {self}")
        if self.f_max > feat_dim:
            raise UsageError(
                f"frequency mask width {self.f_max} exceeds feature dim {feat_dim}"
            )


def uniform_int(rng: np.random.Generator, lo: int, hi: int) -> int:
    """Integer uniform draw inclusive of both endpoints."""
    return int(rng.integers(lo, hi + 1))


def spec_sub(
    features: np.ndarray, cfg: SpecSubConfig, rng: np.random.Generator
) -> np.ndarray:
    """Randomly substitute time spans with spans from earlier positions.

    Draw order per substitution: span width, target start t, source
    start t' <= t. The source span is snapshotted before the write, so
    an overlapping copy uses pre-write values. A width larger than the
    utterance skips that substitution (short-utterance guard).
    """
    cfg.validate()
    out = np.array(features, copy=True)
    t_total = out.shape[0]
    n = uniform_int(rng, 0, cfg.n_max)
    for _ in range(n):
        dt = uniform_int(rng, cfg.t_min, cfg.t_max)
        if dt > t_total:
            continue
        t = uniform_int(rng, 0, t_total - dt)
        src = uniform_int(rng, 0, t)
        out[t : t + dt] = out[src : src + dt].copy()
    return out


def spec_augment(
    features: np.ndarray, cfg: SpecAugConfig, rng: np.random.Generator
) -> np.ndarray:
    """Zero random frequency bands, then random time spans."""
    out = np.array(features, copy=True)
    t_total, f_total = out.shape
    cfg.validate(f_total)
    for _ in range(cfg.num_f_masks):
        width = uniform_int(rng, 0, cfg.f_max)
        start = uniform_int(rng, 0, f_total - width)
        out[:, start : start + width] = cfg.fill_value
    for _ in range(cfg.num_t_masks):
        width = uniform_int(rng, 0, cfg.t_mask_max)
        if width > t_total:
            continue
        start = uniform_int(rng, 0, t_total - width)
        out[start : start + width, :] = cfg.fill_value
    return out


# ---------------------------------------------------------------------------
# feature file + manifest I/O
# ---------------------------------------------------------------------------


def write_features(path: str, features: np.ndarray) -> None:
    arr = np.ascontiguousarray(features, dtype=np.float32)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise UsageError(f"features must be a (T>=1, F) matrix, got {arr.shape}")
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
        f.write(arr.tobytes())


def read_features(path: str) -> np.ndarray:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise IngestError(f"cannot read feature file {path}: {e}") from e
    if blob[:4] != FEATURE_MAGIC:
        raise IngestError(f"{path}: bad magic, not a feature file")
    t_total, f_total = struct.unpack("<II", blob[4:12])
    payload = blob[12:]
    if len(payload) != 4 * t_total * f_total:
        raise IngestError(
            f"{path}: payload is {len(payload)} bytes, header says "
            f"{t_total}x{f_total} float32"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(t_total, f_total).copy()


def save_manifest(path: str, utterances: list, feature_dir: str) -> None:
    """Write feature files into ``feature_dir`` and a manifest referencing them."""
    os.makedirs(feature_dir, exist_ok=True)
    manifest_dir = os.path.dirname(os.path.abspath(path))
    lines = []
    for utt in utterances:
        feat_path = os.path.join(feature_dir, f"{utt.id}.feat")
        write_features(feat_path, utt.features)
        rel = os.path.relpath(feat_path, manifest_dir)
        lines.append(f"{utt.id}\t{rel}\t{' '.join(str(t) for t in utt.tokens)}\n")
    with open(path, "w") as f:
        f.writelines(lines)


def load_manifest(path: str, vocab: int | None = None) -> list:
    """Load utterances in manifest order, validating ids and dimensions."""
    try:
        with open(path) as f:
            lines = f.readlines()
    except OSError as e:
        raise IngestError(f"cannot read manifest {path}: {e}") from e
    base = os.path.dirname(os.path.abspath(path))
    utterances = []
    feat_dim = None
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\n")
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise IngestError(f"{path}:{lineno}: expected 3 tab-separated fields")
        utt_id, feat_path, token_field = parts
        if not os.path.isabs(feat_path):
            feat_path = os.path.join(base, feat_path)
        try:
            features = read_features(feat_path)
        except IngestError as e:
            raise IngestError(f"utterance {utt_id}: {e}") from e
        if feat_dim is None:
            feat_dim = features.shape[1]
        elif features.shape[1] != feat_dim:
            raise IngestError(
                f"utterance {utt_id}: feature dim {features.shape[1]} "
                f"does not match corpus dim {feat_dim}"
            )
        tokens = [int(t) for t in token_field.split()] if token_field else []
        for t in tokens:
            if t < 1 or (vocab is not None and t >= sos_id(vocab)):
                raise IngestError(
                    f"utterance {utt_id}: token id {t} outside the annotation "
                    f"range [1, {sos_id(vocab) if vocab else '...'})"
                )
        utterances.append(Utterance(id=utt_id, features=features, tokens=tokens))
    return utterances


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------

TEMPLATE_FRAMES = 8
PAD_FRAMES = 4


@dataclass
class SynthConfig:
    n_utts: int = 100
    vocab: int = 8
    feat_dim: int = 8
    t_min: int = 20
    t_max: int = 100
    noise: float = 0.1


def token_template(token: int, feat_dim: int, seed: int) -> np.ndarray:
    """Deterministic per-token feature pattern (TEMPLATE_FRAMES x F)."""
    from .numerics import rng_for

    rng = rng_for(seed, "template", token)
    return rng.normal(0.0, 1.0, size=(TEMPLATE_FRAMES, feat_dim)).astype(np.float32)


def generate_synthetic_corpus(
    n_utts: int,
    vocab: int,
    t_range: tuple,
    rng: np.random.Generator,
    feat_dim: int = 8,
    noise: float = 0.1,
    template_seed: int = 0,
) -> list:
    """Render random token sequences as concatenated per-token templates.

    Each utterance is ``n`` templates plus PAD_FRAMES trailing frames and
    additive seeded noise: T = 8n + 4 frames, which after the encoder's
    4x subsampling leaves 2n frames, enough for any CTC target of length
    n (including all-repeat worst cases).
    """
    if vocab < 4:
        raise UsageError("vocab must be >= 4 (blank, sos, eos, one real token)")
    t_lo, t_hi = t_range
    max_tokens = (t_hi - PAD_FRAMES) // TEMPLATE_FRAMES
    min_tokens = max(1, (t_lo - PAD_FRAMES + TEMPLATE_FRAMES - 1) // TEMPLATE_FRAMES)
    if max_tokens < 1 or min_tokens > max_tokens:
        raise UsageError(
            f"t_range {t_range} cannot fit any utterance: one token needs "
            f"{TEMPLATE_FRAMES + PAD_FRAMES} frames"
        )
    n_real = sos_id(vocab) - 1
    utterances = []
    for i in range(n_utts):
        n_tokens = uniform_int(rng, min_tokens, max_tokens)
        tokens = [uniform_int(rng, 1, n_real) for _ in range(n_tokens)]
        pieces = [token_template(t, feat_dim, template_seed) for t in tokens]
        pieces.append(np.zeros((PAD_FRAMES, feat_dim), dtype=np.float32))
        feats = np.concatenate(pieces, axis=0)
        feats = feats + rng.normal(0.0, noise, size=feats.shape).astype(np.float32)
        utterances.append(
            Utterance(id=f"utt{i:05d}", features=feats.astype(np.float32), tokens=tokens)
        )
    return utterances
