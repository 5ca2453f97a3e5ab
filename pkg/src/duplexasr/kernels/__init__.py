"""Hot kernels with a compiled fast path and a pure-Python fallback.

The compiled extension (built from ``_hotpath.pyx``, see setup.py) is
preferred when importable; set ``DUPLEXASR_PURE=1`` to force the
fallback. Both backends produce bit-identical results.
"""

import os

from . import pure

if os.environ.get("DUPLEXASR_PURE"):
    _impl = pure
else:
    try:
        from . import _hotpath as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = pure

BACKEND = "compiled" if _impl is not pure else "pure"

log_add = _impl.log_add
ctc_forward_backward = _impl.ctc_forward_backward
prefix_beam_step = _impl.prefix_beam_step
levenshtein = _impl.levenshtein

__all__ = [
    "BACKEND",
    "log_add",
    "ctc_forward_backward",
    "prefix_beam_step",
    "levenshtein",
    "pure",
]
