# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels.

Must stay operation-for-operation equivalent to ``pure.py``: the test
suite asserts bit-identical outputs between the two backends.
"""

from libc.math cimport exp, log1p, INFINITY

import numpy as np

NEG_INF = float("-inf")


cdef inline double c_log_add(double a, double b) noexcept:
    cdef double tmp
    if a == -INFINITY:
        return b
    if b == -INFINITY:
        return a
    if a < b:
        tmp = a
        a = b
        b = tmp
    return a + log1p(exp(b - a))


def log_add(double a, double b):
    return c_log_add(a, b)


def ctc_forward_backward(log_probs, labels, int blank=0):
    """Negative log-likelihood of ``labels`` plus its gradient.

    See ``pure.ctc_forward_backward`` for the contract.
    """
    cdef double[:, ::1] lp = np.ascontiguousarray(log_probs, dtype=np.float64)
    cdef long[::1] lab = np.ascontiguousarray(labels, dtype=np.int64).reshape(-1)
    cdef int t_len = lp.shape[0]
    cdef int v = lp.shape[1]
    cdef int l_len = lab.shape[0]
    cdef int s_len = 2 * l_len + 1
    cdef int t, s, k

    ext_arr = np.full(s_len, blank, dtype=np.int64)
    cdef long[::1] ext = ext_arr
    for s in range(l_len):
        ext[2 * s + 1] = lab[s]

    alpha_arr = np.full((t_len, s_len), -INFINITY, dtype=np.float64)
    cdef double[:, ::1] alpha = alpha_arr
    cdef double a, b
    alpha[0, 0] = lp[0, ext[0]]
    if s_len > 1:
        alpha[0, 1] = lp[0, ext[1]]
    for t in range(1, t_len):
        for s in range(s_len):
            a = alpha[t - 1, s]
            if s >= 1:
                a = c_log_add(a, alpha[t - 1, s - 1])
            if s >= 2 and ext[s] != blank and ext[s] != ext[s - 2]:
                a = c_log_add(a, alpha[t - 1, s - 2])
            alpha[t, s] = a + lp[t, ext[s]]

    cdef double log_z = alpha[t_len - 1, s_len - 1]
    if s_len > 1:
        log_z = c_log_add(log_z, alpha[t_len - 1, s_len - 2])
    grad_arr = np.zeros((t_len, v), dtype=np.float64)
    cdef double[:, ::1] grad = grad_arr
    if log_z == -INFINITY:
        return float("inf"), grad_arr

    beta_arr = np.full((t_len, s_len), -INFINITY, dtype=np.float64)
    cdef double[:, ::1] beta = beta_arr
    beta[t_len - 1, s_len - 1] = lp[t_len - 1, ext[s_len - 1]]
    if s_len > 1:
        beta[t_len - 1, s_len - 2] = lp[t_len - 1, ext[s_len - 2]]
    for t in range(t_len - 2, -1, -1):
        for s in range(s_len):
            b = beta[t + 1, s]
            if s + 1 < s_len:
                b = c_log_add(b, beta[t + 1, s + 1])
            if s + 2 < s_len and ext[s + 2] != blank and ext[s + 2] != ext[s]:
                b = c_log_add(b, beta[t + 1, s + 2])
            beta[t, s] = b + lp[t, ext[s]]

    occ_arr = np.empty(v, dtype=np.float64)
    cdef double[::1] occ = occ_arr
    for t in range(t_len):
        for k in range(v):
            occ[k] = -INFINITY
        for s in range(s_len):
            occ[ext[s]] = c_log_add(occ[ext[s]], alpha[t, s] + beta[t, s])
        for k in range(v):
            if occ[k] != -INFINITY:
                grad[t, k] = -exp(occ[k] - lp[t, k] - log_z)
    return -log_z, grad_arr


cdef inline void _bump(dict nxt, tuple key, int slot, double value):
    # -inf carries no mass; skipping it keeps unreachable prefixes
    # out of the beam entirely
    cdef list entry
    if value == -INFINITY:
        return
    entry = <list> nxt.get(key)
    if entry is None:
        entry = [NEG_INF, NEG_INF]
        nxt[key] = entry
    entry[slot] = c_log_add(<double> entry[slot], value)


def prefix_beam_step(list beams, row, int beam_size, int blank=0):
    """Advance CTC prefix beam search by one frame.

    See ``pure.prefix_beam_step`` for the contract.
    """
    cdef double[::1] r = np.ascontiguousarray(row, dtype=np.float64)
    cdef int v = r.shape[0]
    cdef int c, last
    cdef double pb, pnb, p_tot, lp
    cdef dict nxt = {}
    cdef tuple prefix

    for prefix, pb_o, pnb_o in beams:
        pb = pb_o
        pnb = pnb_o
        p_tot = c_log_add(pb, pnb)
        _bump(nxt, prefix, 0, p_tot + r[blank])
        last = <int> prefix[len(prefix) - 1] if len(prefix) > 0 else -1
        for c in range(v):
            if c == blank:
                continue
            lp = r[c]
            if c == last:
                # repeated symbol: only a blank-ending path may grow the
                # prefix; a nonblank-ending path collapses onto itself
                _bump(nxt, prefix + (c,), 1, pb + lp)
                _bump(nxt, prefix, 1, pnb + lp)
            else:
                _bump(nxt, prefix + (c,), 1, p_tot + lp)
    items = sorted(
        nxt.items(),
        key=lambda kv: (-c_log_add(kv[1][0], kv[1][1]), kv[0]),
    )
    return [(p, e[0], e[1]) for p, e in items[:beam_size]]


def levenshtein(a, b):
    """Edit distance (substitution/insertion/deletion, unit costs)."""
    cdef long[::1] x = np.asarray(list(a), dtype=np.int64).reshape(-1)
    cdef long[::1] y = np.asarray(list(b), dtype=np.int64).reshape(-1)
    cdef int n = x.shape[0]
    cdef int m = y.shape[0]
    cdef int i, j, sub, best
    if n < m:
        x, y = y, x
        n, m = m, n
    prev_arr = np.arange(m + 1, dtype=np.int64)
    cur_arr = np.zeros(m + 1, dtype=np.int64)
    cdef long[::1] prev = prev_arr
    cdef long[::1] cur = cur_arr
    for i in range(1, n + 1):
        cur[0] = i
        for j in range(1, m + 1):
            sub = prev[j - 1] + (0 if x[i - 1] == y[j - 1] else 1)
            best = prev[j] + 1
            if cur[j - 1] + 1 < best:
                best = cur[j - 1] + 1
            if sub < best:
                best = sub
            cur[j] = best
        prev, cur = cur, prev
    return int(prev[m])
