"""Two-pass decoding and scoring.

First pass: frame-synchronous CTC prefix beam search (the search state
advances one frame at a time, so feeding frames incrementally or all at
once is bit-identical). Second pass: the n-best prefixes are re-ranked
by a fused score

    s_final = ctc_weight * s_ctc + w_fwd * s_l2r + w_rev * s_r2l

with (w_fwd, w_rev) = (1 - reverse_weight, reverse_weight) when both
decoders participate. Single-decoder modes give the present decoder
weight 1. ``ctc_weight == 1`` is the documented boundary where the
second pass is trusted not at all: decoder terms are zeroed and the
first-pass ranking stands.

An autoregressive beam-search mode over either decoder is included for
ablations, plus edit-distance scoring.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import UsageError
from .kernels import levenshtein, log_add, prefix_beam_step
from .model import L2R, R2L
from .numerics import Tensor

NEG_INF = float("-inf")

MODES = ("ctc_greedy", "ctc_prefix_beam", "attention_rescore", "ar_beam_l2r", "ar_beam_r2l")


@dataclass
class Hypothesis:
    tokens: tuple
    s_ctc: float = 0.0
    s_l2r: float = 0.0
    s_r2l: float = 0.0
    s_final: float = 0.0


@dataclass
class DecodeConfig:
    mode: str = "attention_rescore"
    beam: int = 10
    ctc_weight: float = 0.5
    reverse_weight: float = 0.3
    chunk: int | None = None  # None = full context
    use_decoders: str = "both"  # both | l2r_only | r2l_only
    max_len: int = 0  # 0 = derive from encoder length

    def validate(self):
        if self.mode not in MODES:
            raise UsageError(f"unknown decode mode {self.mode!r}")
        if self.beam < 1:
            raise UsageError("beam must be >= 1")
        if not (0.0 <= self.ctc_weight <= 1.0 and 0.0 <= self.reverse_weight <= 1.0):
            raise UsageError("decode weights must lie in [0, 1]")
        if self.use_decoders not in ("both", "l2r_only", "r2l_only"):
            raise UsageError(f"unknown use_decoders {self.use_decoders!r}")
        return self


class PrefixBeamSearch:
    """Streaming CTC prefix beam search over one utterance."""

    def __init__(self, beam: int, blank: int = 0):
        self.beam = beam
        self.blank = blank
        self.beams = [((), 0.0, NEG_INF)]  # prefix, log p_blank, log p_nonblank

    def step(self, frame_log_probs) -> None:
        self.beams = prefix_beam_step(
            self.beams, np.asarray(frame_log_probs, dtype=np.float64), self.beam, self.blank
        )

    def hypotheses(self) -> list:
        return [
            Hypothesis(tokens=prefix, s_ctc=log_add(pb, pnb))
            for prefix, pb, pnb in self.beams
        ]


def ctc_prefix_beam_search(log_probs: np.ndarray, beam: int, blank: int = 0) -> list:
    search = PrefixBeamSearch(beam, blank)
    for row in np.asarray(log_probs, dtype=np.float64):
        search.step(row)
    return search.hypotheses()


def ctc_greedy(log_probs: np.ndarray, blank: int = 0) -> Hypothesis:
    """Best per-frame symbols, collapsed; score is the argmax path score."""
    log_probs = np.asarray(log_probs)
    path = log_probs.argmax(axis=-1)
    score = float(log_probs[np.arange(len(path)), path].sum())
    tokens = []
    prev = -1
    for p in path:
        if p != prev and p != blank:
            tokens.append(int(p))
        prev = p
    return Hypothesis(tokens=tuple(tokens), s_ctc=score, s_final=score)


def fusion_weights(cfg: DecodeConfig) -> tuple:
    """(w_l2r, w_r2l) applied on top of ctc_weight * s_ctc."""
    if cfg.ctc_weight == 1.0:
        return 0.0, 0.0
    if cfg.use_decoders == "both":
        return 1.0 - cfg.reverse_weight, cfg.reverse_weight
    if cfg.use_decoders == "l2r_only":
        return 1.0, 0.0
    return 0.0, 1.0


def rescore(hyps: list, enc: Tensor, model, cfg: DecodeConfig) -> list:
    """Re-rank first-pass hypotheses by the fused two-decoder score.

    Pure selection: the returned sequences are exactly the input n-best,
    sorted by ``s_final`` (ties broken lexicographically by tokens).
    """
    if not hyps:
        raise UsageError("rescore needs a non-empty n-best list")
    cfg.validate()
    w_fwd, w_rev = fusion_weights(cfg)
    out = []
    for hyp in hyps:
        s_fwd = model.score_sequence(enc, hyp.tokens, L2R) if w_fwd != 0.0 else 0.0
        s_rev = model.score_sequence(enc, hyp.tokens, R2L) if w_rev != 0.0 else 0.0
        s_final = cfg.ctc_weight * hyp.s_ctc + w_fwd * s_fwd + w_rev * s_rev
        out.append(replace(hyp, s_l2r=s_fwd, s_r2l=s_rev, s_final=s_final))
    out.sort(key=lambda h: (-h.s_final, h.tokens))
    return out


def ar_beam_search(model, enc: Tensor, direction: str, beam: int, max_len: int = 0) -> Hypothesis:
    """Autoregressive beam search over one decoder.

    Live hypotheses are ranked by raw log-prob; finished ones (end
    symbol emitted, or length cap reached) by log-prob divided by the
    emitted token count + 1. The reverse decoder searches in reversed
    coordinates and the result is un-reversed before returning.
    """
    vocab = model.cfg.vocab
    sos, eos = vocab - 2, vocab - 1
    if max_len <= 0:
        max_len = 2 * enc.data.shape[0] + 5
    # the search runs in the decoder's own coordinates; for the reverse
    # decoder that means the growing sequence is the reversed transcript
    live = [((), 0.0)]
    done = []  # (normalized score, raw score, sequence)
    while live:
        candidates = []
        for seq, score in live:
            row = model.decoder_forward(enc, [sos] + list(seq), direction).data[-1]
            finished = score + float(row[eos])
            done.append((finished / (len(seq) + 1), finished, seq))
            if len(seq) < max_len:
                for tok in range(1, vocab - 2):  # blank/sos/eos never emitted
                    candidates.append((seq + (tok,), score + float(row[tok])))
        candidates.sort(key=lambda c: (-c[1], c[0]))
        live = candidates[: beam]
    done.sort(key=lambda d: (-d[0], d[2]))
    norm, raw, seq = done[0]
    tokens = tuple(reversed(seq)) if direction == R2L else seq
    hyp = Hypothesis(tokens=tokens, s_final=norm)
    if direction == L2R:
        hyp.s_l2r = raw
    else:
        hyp.s_r2l = raw
    return hyp


# ---------------------------------------------------------------------------
# error-rate scoring
# ---------------------------------------------------------------------------


def cer(ref, hyp) -> float:
    """Edit distance over reference length; empty-vs-empty is 0."""
    ref = list(ref)
    hyp = list(hyp)
    if not ref:
        return float(len(hyp))  # insertions over a unit reference, flagged upstream
    return levenshtein(ref, hyp) / len(ref)


def corpus_cer(pairs) -> tuple:
    """Total edits over total reference length, plus empty-ref flags.

    ``pairs`` yields (utterance id, ref tokens, hyp tokens). Returns
    (rate, total_edits, total_ref_len, flagged_ids).
    """
    edits = 0
    ref_len = 0
    flagged = []
    for utt_id, ref, hyp in pairs:
        ref = list(ref)
        hyp = list(hyp)
        if not ref:
            flagged.append(utt_id)
        edits += levenshtein(ref, hyp)
        ref_len += len(ref)
    rate = edits / ref_len if ref_len else (0.0 if edits == 0 else math.inf)
    return rate, edits, ref_len, flagged


# ---------------------------------------------------------------------------
# one-utterance driver
# ---------------------------------------------------------------------------


def decode_utterance(model, features: np.ndarray, cfg: DecodeConfig) -> tuple:
    """Returns (chosen Hypothesis, n-best list or None)."""
    cfg.validate()
    enc = model.encode(features, cfg.chunk)
    if cfg.mode in ("ar_beam_l2r", "ar_beam_r2l"):
        direction = L2R if cfg.mode == "ar_beam_l2r" else R2L
        return ar_beam_search(model, enc, direction, cfg.beam, cfg.max_len), None
    log_probs = model.ctc_log_probs(enc).data
    if cfg.mode == "ctc_greedy":
        return ctc_greedy(log_probs), None
    nbest = ctc_prefix_beam_search(log_probs, cfg.beam)
    if cfg.mode == "ctc_prefix_beam":
        nbest = [replace(h, s_final=cfg.ctc_weight * h.s_ctc) for h in nbest]
        return nbest[0], nbest
    rescored = rescore(nbest, enc, model, cfg)
    return rescored[0], rescored
