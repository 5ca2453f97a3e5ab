"""Training loop: Adam with warmup, dynamic chunks, checkpoint averaging.

Determinism contract: the whole trajectory is a function of (seed,
config, corpus). Batch order, chunk draws, and augmentation randomness
are all derived from (seed, step), never from a shared mutable stream,
which is also what makes a resumed run bit-identical to an
uninterrupted one.
"""

import math
import os
import sys
from dataclasses import dataclass

import numpy as np

from .errors import IngestError, UsageError
from .frontend import SpecAugConfig, SpecSubConfig, spec_augment, spec_sub
from .loss import LossBreakdown, LossWeights, aed_loss, combine, ctc_loss, ctc_min_frames
from .model import L2R, R2L, ChunkPolicy, Model, build_decoder_io
from .model.checkpoint import load_checkpoint, save_checkpoint
from .model.encoder import subsampled_length
from .numerics import Graph, Tensor, rng_for


class TrainingDiverged(Exception):
    """Non-finite loss; carries the offending step and breakdown."""


@dataclass
class TrainConfig:
    base_lr: float = 1.0
    warmup_steps: int = 500  # reference recipe uses 25000; desk scale is smaller
    max_steps: int = 1000
    batch_size: int = 8
    seed: int = 0
    ctc_weight: float = 0.3
    reverse_weight: float = 0.3
    label_smoothing: float = 0.1
    grad_clip: float = 5.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    adam_eps: float = 1e-9
    save_every: int = 200
    average_top_k: int = 5  # reference recipe averages 30
    val_fraction: float = 0.1
    use_spec_sub: bool = True
    use_spec_augment: bool = True

    def validate(self):
        if self.warmup_steps < 1 or self.max_steps < 1 or self.batch_size < 1:
            raise UsageError("warmup_steps, max_steps, batch_size must be >= 1")
        if self.average_top_k < 1 or self.save_every < 1:
            raise UsageError("average_top_k and save_every must be >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise UsageError("val_fraction must lie in [0, 1)")
        LossWeights(self.ctc_weight, self.reverse_weight).validate()
        return self

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.ctc_weight, self.reverse_weight)


def lr_at(step: int, base_lr: float, warmup_steps: int, d_model: int) -> float:
    """Inverse-square-root schedule with a linear warmup ramp."""
    if step < 1:
        raise UsageError("lr_at is defined for steps >= 1")
    return (
        base_lr
        * d_model**-0.5
        * min(step**-0.5, step * warmup_steps**-1.5)
    )


class Adam:
    def __init__(self, params: dict, cfg: TrainConfig):
        self.params = params
        self.beta1 = cfg.adam_beta1
        self.beta2 = cfg.adam_beta2
        self.eps = cfg.adam_eps
        self.clip = cfg.grad_clip
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self, grads: dict, lr: float) -> None:
        """One update; ``grads`` maps Tensor -> array (missing = zero)."""
        self.t += 1
        gs = {
            name: grads.get(p, np.zeros_like(p.data))
            for name, p in self.params.items()
        }
        if self.clip > 0:
            norm = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in gs.values()))
            if norm > self.clip:
                factor = self.clip / norm
                gs = {name: g * factor for name, g in gs.items()}
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = gs[name].astype(p.data.dtype)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_tensors(self) -> dict:
        out = {"opt.t": np.array([float(self.t)])}
        for name in self.params:
            out[f"opt.m.{name}"] = self.m[name]
            out[f"opt.v.{name}"] = self.v[name]
        return out

    def load_state(self, tensors: dict) -> None:
        self.t = int(tensors["opt.t"][0])
        for name, p in self.params.items():
            self.m[name] = tensors[f"opt.m.{name}"].astype(p.data.dtype).reshape(p.data.shape)
            self.v[name] = tensors[f"opt.v.{name}"].astype(p.data.dtype).reshape(p.data.shape)


def batch_indices(n_utts: int, batch_size: int, step: int, seed: int) -> np.ndarray:
    """Utterance indices for one step; shuffled once per epoch."""
    steps_per_epoch = max(1, n_utts // batch_size)
    epoch = (step - 1) // steps_per_epoch
    pos = ((step - 1) % steps_per_epoch) * batch_size
    perm = rng_for(seed, "shuffle", epoch).permutation(n_utts)
    return perm[pos : pos + batch_size]


def split_corpus(n_utts: int, val_fraction: float, seed: int) -> tuple:
    """(train indices, validation indices); tiny corpora validate on train."""
    n_val = int(n_utts * val_fraction)
    if n_val == 0:
        idx = np.arange(n_utts)
        return idx, idx
    chosen = rng_for(seed, "valsplit").choice(n_utts, size=n_val, replace=False)
    val = np.sort(chosen)
    train = np.setdiff1d(np.arange(n_utts), val)
    return train, val


def _utterance_losses(model, utt, chunk_size, smoothing):
    """(ctc term or None, (l2r mean, n positions), (r2l mean, n)) as Tensors."""
    enc = model.encode(utt.features, chunk_size)
    ctc_term = None
    t_out = subsampled_length(utt.features.shape[0])
    if ctc_min_frames(utt.tokens) <= t_out:
        ctc_term = ctc_loss(model.ctc_log_probs(enc), utt.tokens)
    aed = {}
    for direction, dec in ((L2R, model.dec_l2r), (R2L, model.dec_r2l)):
        if dec is None:
            aed[direction] = None
            continue
        tin, tout = build_decoder_io(utt.tokens, direction, model.cfg.vocab)
        log_probs = model.decoder_forward(enc, tin, direction)
        aed[direction] = (aed_loss(log_probs, tout, smoothing), len(tout))
    return ctc_term, aed[L2R], aed[R2L]


def _reduce(terms: list, zero: Tensor) -> Tensor:
    if not terms:
        return zero
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total


def train_step(
    model: Model,
    batch: list,
    optimizer: Adam,
    cfg: TrainConfig,
    step: int,
    chunk_size: int | None,
    augment: bool = True,
    specsub_cfg: SpecSubConfig | None = None,
    specaug_cfg: SpecAugConfig | None = None,
) -> LossBreakdown:
    """One Adam update on the batch-combined loss; returns the breakdown.

    CTC averages over utterances (unsatisfiable targets are skipped with
    a warning), decoder CE over target tokens.
    """
    dtype = model.cfg.dtype
    zero = Tensor(np.asarray(0.0, dtype=dtype))
    ctc_terms = []
    aed_terms = {L2R: [], R2L: []}
    aed_tokens = {L2R: 0, R2L: 0}
    with Graph() as graph:
        for utt in batch:
            features = utt.features
            if augment:
                rng = rng_for(cfg.seed, "augment", step, utt.id)
                if cfg.use_spec_sub:
                    features = spec_sub(features, specsub_cfg or SpecSubConfig(), rng)
                if cfg.use_spec_augment:
                    features = spec_augment(features, specaug_cfg or SpecAugConfig(), rng)
            work = utt.__class__(id=utt.id, features=features, tokens=utt.tokens)
            ctc_term, l2r, r2l = _utterance_losses(model, work, chunk_size, cfg.label_smoothing)
            if ctc_term is None:
                print(
                    f"warning: step {step}: utterance {utt.id} has no satisfiable "
                    "alignment, skipping its CTC term",
                    file=sys.stderr,
                )
            else:
                ctc_terms.append(ctc_term)
            for direction, pair in ((L2R, l2r), (R2L, r2l)):
                if pair is not None:
                    mean_loss, n_tok = pair
                    aed_terms[direction].append(mean_loss * float(n_tok))
                    aed_tokens[direction] += n_tok
        l_ctc = _reduce(ctc_terms, zero) * (1.0 / max(1, len(ctc_terms)))
        l_l2r = _reduce(aed_terms[L2R], zero) * (1.0 / max(1, aed_tokens[L2R]))
        l_r2l = _reduce(aed_terms[R2L], zero) * (1.0 / max(1, aed_tokens[R2L]))
        total = combine(l_ctc, l_l2r, l_r2l, cfg.weights)
        breakdown = LossBreakdown(l_ctc.item(), l_l2r.item(), l_r2l.item(), total.item())
        if not math.isfinite(breakdown.l_combined):
            raise TrainingDiverged(f"non-finite loss at step {step}: {breakdown}")
        grads = graph.backward(total)
    optimizer.step(grads, lr_at(step, cfg.base_lr, cfg.warmup_steps, model.cfg.d_model))
    return breakdown


def validation_loss(model: Model, utterances: list, cfg: TrainConfig) -> float:
    """Combined loss with training weights: full context, no augmentation."""
    ctc_vals = []
    aed_sums = {L2R: 0.0, R2L: 0.0}
    aed_tokens = {L2R: 0, R2L: 0}
    for utt in utterances:
        ctc_term, l2r, r2l = _utterance_losses(model, utt, None, cfg.label_smoothing)
        if ctc_term is not None:
            ctc_vals.append(ctc_term.item())
        for direction, pair in ((L2R, l2r), (R2L, r2l)):
            if pair is not None:
                aed_sums[direction] += pair[0].item() * pair[1]
                aed_tokens[direction] += pair[1]
    l_ctc = sum(ctc_vals) / max(1, len(ctc_vals))
    l_l2r = aed_sums[L2R] / max(1, aed_tokens[L2R])
    l_r2l = aed_sums[R2L] / max(1, aed_tokens[R2L])
    lam, alpha = cfg.ctc_weight, cfg.reverse_weight
    return lam * l_ctc + (1.0 - lam) * ((1.0 - alpha) * l_l2r + alpha * l_r2l)


# ---------------------------------------------------------------------------
# checkpoint management
# ---------------------------------------------------------------------------


def checkpoint_tensors(model: Model, optimizer: Adam | None) -> dict:
    tensors = {name: p.data for name, p in model.parameters().items()}
    if optimizer is not None:
        tensors.update(optimizer.state_tensors())
    return tensors


def write_checkpoint(path, model, optimizer, step, val_loss) -> None:
    meta = {k: v for k, v in model.cfg.to_dict().items()}
    meta["step"] = step
    meta["validation_loss"] = repr(float(val_loss))
    save_checkpoint(path, checkpoint_tensors(model, optimizer), meta)


def load_model_from_checkpoint(path: str) -> tuple:
    """(model, meta, raw tensors). Optimizer state stays in the raw dict."""
    from .model.asr import ModelConfig

    tensors, meta = load_checkpoint(path)
    cfg = ModelConfig.from_dict(meta)
    model = Model(cfg, seed=0)
    for name, p in model.parameters().items():
        if name not in tensors:
            raise IngestError(f"checkpoint {path} is missing parameter {name}")
        arr = tensors[name]
        if tuple(arr.shape) != tuple(p.data.shape):
            raise IngestError(
                f"checkpoint {path}: parameter {name} has shape {arr.shape}, "
                f"model expects {p.data.shape}"
            )
        p.data = arr.astype(cfg.dtype)
    return model, meta, tensors


def select_top_k(entries: list, k: int) -> list:
    """Paths of the k best validation losses; ties go to the later step.

    ``entries`` holds (path, validation_loss, step) triples. Fewer than
    k entries is allowed (all are used, with a warning).
    """
    if not entries:
        raise UsageError("no checkpoints to select from")
    if len(entries) < k:
        print(
            f"warning: only {len(entries)} checkpoints available, averaging all",
            file=sys.stderr,
        )
    ranked = sorted(entries, key=lambda e: (e[1], -e[2]))
    return [path for path, _, _ in ranked[:k]]


def average_checkpoints(paths: list) -> tuple:
    """Element-wise mean of model parameters; optimizer state is dropped."""
    if not paths:
        raise UsageError("average_checkpoints needs at least one path")
    acc = None
    meta0 = None
    dtypes = {}
    for path in paths:
        tensors, meta = load_checkpoint(path)
        tensors = {k: v for k, v in tensors.items() if not k.startswith("opt.")}
        if acc is None:
            acc = {k: v.astype(np.float64) for k, v in tensors.items()}
            dtypes = {k: v.dtype for k, v in tensors.items()}
            meta0 = meta
            continue
        if set(tensors) != set(acc):
            raise UsageError(f"{path}: parameter names do not match the first checkpoint")
        for name, arr in tensors.items():
            if arr.shape != acc[name].shape:
                raise UsageError(
                    f"{path}: parameter {name} has shape {arr.shape}, "
                    f"expected {acc[name].shape}"
                )
            acc[name] += arr.astype(np.float64)
    averaged = {k: (v / len(paths)).astype(dtypes[k]) for k, v in acc.items()}
    return averaged, meta0


# ---------------------------------------------------------------------------
# full run
# ---------------------------------------------------------------------------


def run_training(
    model: Model,
    corpus: list,
    cfg: TrainConfig,
    policy: ChunkPolicy,
    run_dir: str,
    specsub_cfg: SpecSubConfig | None = None,
    specaug_cfg: SpecAugConfig | None = None,
    resume_from: str | None = None,
    log_stream=None,
) -> dict:
    """Train, checkpoint on a cadence, and write the averaged model.

    Returns {"checkpoints": [(path, val_loss, step)], "final": path,
    "averaged": path, "log": path}.
    """
    cfg.validate()
    policy.validate()
    os.makedirs(os.path.join(run_dir, "checkpoints"), exist_ok=True)
    train_idx, val_idx = split_corpus(len(corpus), cfg.val_fraction, cfg.seed)
    train_set = [corpus[i] for i in train_idx]
    val_set = [corpus[i] for i in val_idx]
    optimizer = Adam(model.parameters(), cfg)
    start_step = 1
    if resume_from is not None:
        _, meta, raw = load_model_from_checkpoint(resume_from)
        for name, p in model.parameters().items():
            p.data = raw[name].astype(model.cfg.dtype)
        optimizer.load_state(raw)
        start_step = int(meta["step"]) + 1
        if start_step > cfg.max_steps:
            raise UsageError(
                f"checkpoint is already at step {meta['step']}, "
                f"nothing to resume below max_steps={cfg.max_steps}"
            )

    log_path = os.path.join(run_dir, "train.log")
    entries = []
    mode = "a" if resume_from is not None else "w"
    with open(log_path, mode) as log:
        for step in range(start_step, cfg.max_steps + 1):
            chunk = policy.draw(rng_for(cfg.seed, "chunk", step))
            idx = batch_indices(len(train_set), cfg.batch_size, step, cfg.seed)
            batch = [train_set[i] for i in idx]
            breakdown = train_step(
                model, batch, optimizer, cfg, step, chunk,
                augment=True, specsub_cfg=specsub_cfg, specaug_cfg=specaug_cfg,
            )
            lr = lr_at(step, cfg.base_lr, cfg.warmup_steps, model.cfg.d_model)
            line = (
                f"step={step} lr={lr:.8g} l_ctc={breakdown.l_ctc:.6f} "
                f"l_l2r={breakdown.l_l2r:.6f} l_r2l={breakdown.l_r2l:.6f} "
                f"l_combined={breakdown.l_combined:.6f}"
            )
            log.write(line + "\n")
            if log_stream is not None and (step % 50 == 0 or step == cfg.max_steps):
                print(line, file=log_stream)
            if step % cfg.save_every == 0 or step == cfg.max_steps:
                val = validation_loss(model, val_set, cfg)
                path = os.path.join(run_dir, "checkpoints", f"step-{step:06d}.ckpt")
                write_checkpoint(path, model, optimizer, step, val)
                entries.append((path, val, step))

    top = select_top_k(entries, cfg.average_top_k)
    averaged, meta = average_checkpoints(top)
    avg_path = os.path.join(run_dir, "checkpoints", f"avg-top{len(top)}.ckpt")
    meta = dict(meta)
    meta["averaged_from"] = ",".join(os.path.basename(p) for p in top)
    save_checkpoint(avg_path, averaged, meta)
    return {
        "checkpoints": entries,
        "final": entries[-1][0],
        "averaged": avg_path,
        "log": log_path,
    }
