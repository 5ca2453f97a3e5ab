"""Pure-Python hot kernels.

The compiled twin lives in ``_hotpath.pyx``; either backend may be
selected at import (see ``__init__``). The two implementations perform
the same floating-point operations in the same order, so their results
are compared bit-for-bit in the test suite. Keep them in lockstep.
"""

import math

import numpy as np

NEG_INF = float("-inf")


def log_add(a: float, b: float) -> float:
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a < b:
        a, b = b, a
    return a + math.log1p(math.exp(b - a))


def ctc_forward_backward(log_probs: np.ndarray, labels, blank: int = 0):
    """Negative log-likelihood of ``labels`` plus its gradient.

    ``log_probs`` is a (T, V) matrix of per-frame log-distributions; the
    loss marginalizes all blank-augmented alignments that collapse to
    ``labels`` via the usual forward-backward recursion over the
    blank-extended label sequence. Returns ``(nll, grad)`` where grad is
    d(nll)/d(log_probs); for an unreachable target the loss is +inf and
    the gradient is all zeros.
    """
    lp = np.asarray(log_probs, dtype=np.float64).tolist()
    labels = [int(x) for x in labels]
    t_len = len(lp)
    v = len(lp[0])
    s_len = 2 * len(labels) + 1
    ext = [blank] * s_len
    for i, lab in enumerate(labels):
        ext[2 * i + 1] = lab

    alpha = [[NEG_INF] * s_len for _ in range(t_len)]
    alpha[0][0] = lp[0][ext[0]]
    if s_len > 1:
        alpha[0][1] = lp[0][ext[1]]
    for t in range(1, t_len):
        prev = alpha[t - 1]
        cur = alpha[t]
        row = lp[t]
        for s in range(s_len):
            a = prev[s]
            if s >= 1:
                a = log_add(a, prev[s - 1])
            if s >= 2 and ext[s] != blank and ext[s] != ext[s - 2]:
                a = log_add(a, prev[s - 2])
            cur[s] = a + row[ext[s]]

    log_z = alpha[t_len - 1][s_len - 1]
    if s_len > 1:
        log_z = log_add(log_z, alpha[t_len - 1][s_len - 2])
    grad = np.zeros((t_len, v), dtype=np.float64)
    if log_z == NEG_INF:
        return math.inf, grad

    beta = [[NEG_INF] * s_len for _ in range(t_len)]
    beta[t_len - 1][s_len - 1] = lp[t_len - 1][ext[s_len - 1]]
    if s_len > 1:
        beta[t_len - 1][s_len - 2] = lp[t_len - 1][ext[s_len - 2]]
    for t in range(t_len - 2, -1, -1):
        nxt = beta[t + 1]
        cur = beta[t]
        row = lp[t]
        for s in range(s_len):
            b = nxt[s]
            if s + 1 < s_len:
                b = log_add(b, nxt[s + 1])
            if s + 2 < s_len and ext[s + 2] != blank and ext[s + 2] != ext[s]:
                b = log_add(b, nxt[s + 2])
            cur[s] = b + row[ext[s]]

    # posterior of symbol k at frame t; emission at t is counted by both
    # alpha and beta, subtract one copy
    occ = [NEG_INF] * v
    for t in range(t_len):
        for k in range(v):
            occ[k] = NEG_INF
        arow = alpha[t]
        brow = beta[t]
        for s in range(s_len):
            occ[ext[s]] = log_add(occ[ext[s]], arow[s] + brow[s])
        row = lp[t]
        for k in range(v):
            if occ[k] != NEG_INF:
                # mirror C exp(): overflow saturates to inf instead of raising
                # (reachable only on non-finite/diverged inputs)
                try:
                    grad[t, k] = -math.exp(occ[k] - row[k] - log_z)
                except OverflowError:
                    grad[t, k] = -math.inf
    return -log_z, grad


def prefix_beam_step(beams, row, beam_size: int, blank: int = 0):
    """Advance CTC prefix beam search by one frame.

    ``beams`` is a list of ``(prefix_tuple, log_p_blank, log_p_nonblank)``
    entries; ``row`` the frame's V log-probs. Returns the updated list,
    sorted by total prefix probability (ties broken lexicographically by
    token ids, which also puts shorter prefixes first) and pruned to
    ``beam_size``.
    """
    row = [float(x) for x in row]
    v = len(row)
    nxt: dict = {}

    def bump(key, slot, value):
        # -inf carries no mass; skipping it keeps unreachable prefixes
        # out of the beam entirely
        if value == NEG_INF:
            return
        entry = nxt.get(key)
        if entry is None:
            entry = [NEG_INF, NEG_INF]
            nxt[key] = entry
        entry[slot] = log_add(entry[slot], value)

    for prefix, pb, pnb in beams:
        p_tot = log_add(pb, pnb)
        bump(prefix, 0, p_tot + row[blank])
        last = prefix[-1] if prefix else -1
        for c in range(v):
            if c == blank:
                continue
            lp = row[c]
            if c == last:
                # repeated symbol: only a blank-ending path may grow the
                # prefix; a nonblank-ending path collapses onto itself
                bump(prefix + (c,), 1, pb + lp)
                bump(prefix, 1, pnb + lp)
            else:
                bump(prefix + (c,), 1, p_tot + lp)
    items = sorted(
        nxt.items(), key=lambda kv: (-log_add(kv[1][0], kv[1][1]), kv[0])
    )
    return [(p, e[0], e[1]) for p, e in items[:beam_size]]


def levenshtein(a, b) -> int:
    """Edit distance (substitution/insertion/deletion, unit costs)."""
    a = list(a)
    b = list(b)
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[len(b)]
