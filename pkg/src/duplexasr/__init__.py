"""duplexasr: a desk-scale unified streaming/non-streaming ASR lab.

Joint CTC + bidirectional attention-decoder training on top of a small
reverse-mode autodiff core, chunk-masked streaming encoding, and
two-pass decoding (CTC prefix beam search + bidirectional rescoring).
"""

__version__ = "0.1.0"
