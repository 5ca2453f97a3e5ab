"""Training objectives: exact CTC, label-smoothed decoder CE, joint loss.

Convention fixed across the package: blank id is 0, sos/eos are the two
top vocabulary ids. Per-batch reduction: CTC is averaged over
utterances, decoder CE over target tokens (this choice affects what the
CTC weight means and is therefore pinned here, not left to callers).
"""

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import UsageError
from .kernels import ctc_forward_backward
from .numerics import Tensor


@dataclass
class LossWeights:
    ctc_weight: float = 0.3  # blend between CTC and decoder CE
    reverse_weight: float = 0.3  # share of the reverse decoder inside the CE term

    def validate(self):
        if not (0.0 <= self.ctc_weight <= 1.0 and 0.0 <= self.reverse_weight <= 1.0):
            raise UsageError(f"loss weights must lie in [0, 1]: {self}")
        return self


@dataclass
class LossBreakdown:
    l_ctc: float
    l_l2r: float
    l_r2l: float
    l_combined: float


def ctc_loss(log_probs, target, blank: int = 0):
    """Negative log-likelihood of all alignments collapsing to ``target``.

    Accepts a Tensor (recorded on the tape) or a plain array (returns a
    float). Unsatisfiable targets give +inf and a zero gradient; callers
    decide whether to skip or abort.
    """
    if isinstance(log_probs, Tensor):
        value, grad = ctc_forward_backward(
            np.asarray(log_probs.data, dtype=np.float64), np.asarray(target), blank
        )
        grad = grad.astype(log_probs.data.dtype)
        return nx.custom_op(
            np.asarray(value, dtype=log_probs.data.dtype),
            (log_probs,),
            lambda g: (g * grad,),
        )
    value, _ = ctc_forward_backward(np.asarray(log_probs, dtype=np.float64), target, blank)
    return value


def ctc_loss_grad(log_probs: np.ndarray, target, blank: int = 0) -> np.ndarray:
    _, grad = ctc_forward_backward(np.asarray(log_probs, dtype=np.float64), target, blank)
    return grad


def ctc_min_frames(target) -> int:
    """Frames required for a satisfiable alignment (repeats need a blank)."""
    target = list(target)
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def aed_loss(decoder_log_probs, target_out, smoothing: float = 0.1):
    """Mean over positions of label-smoothed cross-entropy.

    The smoothed reference distribution puts ``1 - smoothing`` on the
    target and spreads ``smoothing`` uniformly over the other V-1
    classes; ``smoothing=0`` is plain NLL.
    """
    target_out = np.asarray(target_out, dtype=np.int64)
    is_tensor = isinstance(decoder_log_probs, Tensor)
    data = decoder_log_probs.data if is_tensor else np.asarray(decoder_log_probs)
    if data.shape[0] != len(target_out):
        raise UsageError(
            f"decoder rows {data.shape[0]} != target length {len(target_out)}"
        )
    v = data.shape[1]
    off = smoothing / (v - 1)
    on = 1.0 - smoothing
    if is_tensor:
        picked = nx.take_rows(decoder_log_probs, target_out)
        row_sums = decoder_log_probs.sum(axis=-1)
        per_pos = picked * (-(on - off)) + row_sums * (-off)
        return per_pos.mean()
    picked = data[np.arange(len(target_out)), target_out]
    return float((-(on - off) * picked - off * data.sum(axis=-1)).mean())


def combined_loss(l_ctc, l_l2r, l_r2l, weights: LossWeights) -> LossBreakdown:
    """Blend the three objectives; also usable on Tensors via ``combine``."""
    lam = weights.validate().ctc_weight
    alpha = weights.reverse_weight
    total = lam * l_ctc + (1.0 - lam) * ((1.0 - alpha) * l_l2r + alpha * l_r2l)
    return LossBreakdown(float(l_ctc), float(l_l2r), float(l_r2l), float(total))


def combine(l_ctc: Tensor, l_l2r: Tensor, l_r2l: Tensor, weights: LossWeights) -> Tensor:
    lam = weights.validate().ctc_weight
    alpha = weights.reverse_weight
    aed = l_l2r * (1.0 - alpha) + l_r2l * alpha
    return l_ctc * lam + aed * (1.0 - lam)
