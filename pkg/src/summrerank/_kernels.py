"""Hot inner loops, compiled with numba when available.

Every kernel exists twice: a ``*_nb`` version decorated with ``@njit`` and a
``*_np`` version written with plain numpy.  The public names (``lcs_length``,
``mean_pool`` ...) are bound to one of them at import time.  Set
``SUMMRERANK_DISABLE_NUMBA=1`` to force the numpy path (useful for debugging
and for the parity tests); if numba cannot be imported the numpy path is used
silently.
"""

from __future__ import annotations

import os

import numpy as np

_DISABLED = os.environ.get("SUMMRERANK_DISABLE_NUMBA", "").strip().lower() in {
    "1",
    "true",
    "yes",
    "on",
}

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


USE_NUMBA = NUMBA_AVAILABLE and not _DISABLED


# ---------------------------------------------------------------------------
# longest common subsequence
# ---------------------------------------------------------------------------


@njit(cache=True)
def lcs_length_nb(a, b):
    n = a.shape[0]
    m = b.shape[0]
    if n == 0 or m == 0:
        return 0
    prev = np.zeros(m + 1, dtype=np.int64)
    cur = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        ai = a[i - 1]
        for j in range(1, m + 1):
            if ai == b[j - 1]:
                cur[j] = prev[j - 1] + 1
            elif prev[j] >= cur[j - 1]:
                cur[j] = prev[j]
            else:
                cur[j] = cur[j - 1]
        for j in range(m + 1):
            prev[j] = cur[j]
    return prev[m]


def lcs_length_np(a, b):
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if a.size == 0 or b.size == 0:
        return 0
    prev = np.zeros(b.size + 1, dtype=np.int64)
    for ai in a:
        match = (b == ai).astype(np.int64)
        # a row of the LCS table is the running max of max(up, diag + match)
        row = np.maximum(prev[1:], prev[:-1] + match)
        prev[1:] = np.maximum.accumulate(row)
    return int(prev[-1])


# ---------------------------------------------------------------------------
# segment mean pooling (CSR layout: tokens[offsets[s]:offsets[s+1]])
# ---------------------------------------------------------------------------


@njit(cache=True)
def mean_pool_nb(table, tokens, offsets):
    n_seg = offsets.shape[0] - 1
    d = table.shape[1]
    out = np.zeros((n_seg, d), dtype=table.dtype)
    for s in range(n_seg):
        lo = offsets[s]
        hi = offsets[s + 1]
        if hi == lo:
            continue
        for t in range(lo, hi):
            row = tokens[t]
            for c in range(d):
                out[s, c] += table[row, c]
        inv = 1.0 / (hi - lo)
        for c in range(d):
            out[s, c] *= inv
    return out


def mean_pool_np(table, tokens, offsets):
    n_seg = offsets.shape[0] - 1
    out = np.zeros((n_seg, table.shape[1]), dtype=table.dtype)
    lengths = np.diff(offsets)
    nonempty = lengths > 0
    if tokens.size:
        sums = np.add.reduceat(table[tokens], offsets[:-1][nonempty], axis=0)
        out[nonempty] = sums / lengths[nonempty, None]
    return out


@njit(cache=True)
def mean_pool_backward_nb(grad_out, tokens, offsets, grad_table):
    n_seg = offsets.shape[0] - 1
    d = grad_out.shape[1]
    for s in range(n_seg):
        lo = offsets[s]
        hi = offsets[s + 1]
        if hi == lo:
            continue
        inv = 1.0 / (hi - lo)
        for t in range(lo, hi):
            row = tokens[t]
            for c in range(d):
                grad_table[row, c] += grad_out[s, c] * inv


def mean_pool_backward_np(grad_out, tokens, offsets, grad_table):
    lengths = np.diff(offsets)
    seg = np.repeat(np.arange(lengths.size), lengths)
    if seg.size == 0:
        return
    scaled = grad_out[seg] / lengths[seg, None]
    np.add.at(grad_table, tokens, scaled)


# ---------------------------------------------------------------------------
# pairwise hinge of the ranking loss; inputs already sorted by quality desc
# ---------------------------------------------------------------------------


@njit(cache=True)
def rank_hinge_nb(scores, qualities, lam):
    m = scores.shape[0]
    total = 0.0
    g_s = np.zeros(m)
    g_q = np.zeros(m)
    for i in range(m):
        for j in range(i + 1, m):
            arg = scores[j] - scores[i] + lam * (qualities[i] - qualities[j])
            if arg > 0.0:
                total += arg
                g_s[j] += 1.0
                g_s[i] -= 1.0
                g_q[i] += lam
                g_q[j] -= lam
    return total, g_s, g_q


def rank_hinge_np(scores, qualities, lam):
    scores = np.asarray(scores, dtype=np.float64)
    qualities = np.asarray(qualities, dtype=np.float64)
    m = scores.shape[0]
    arg = scores[None, :] - scores[:, None] + lam * (qualities[:, None] - qualities[None, :])
    active = np.triu(arg > 0.0, k=1)
    total = float(arg[active].sum()) if m > 1 else 0.0
    a = active.astype(np.float64)
    g_s = a.sum(axis=0) - a.sum(axis=1)
    g_q = lam * (a.sum(axis=1) - a.sum(axis=0))
    return total, g_s, g_q


# ---------------------------------------------------------------------------
# pairwise concordance counts for a ranked pool
# ---------------------------------------------------------------------------


@njit(cache=True)
def pair_counts_nb(order, lexical, semantic):
    # returns correct, lexical_wins, relevant, false_pos, total
    m = order.shape[0]
    out = np.zeros(5, dtype=np.int64)
    for x in range(m):
        a = order[x]
        for y in range(x + 1, m):
            b = order[y]
            out[4] += 1
            lex_gt = lexical[a] > lexical[b]
            lex_lt = lexical[a] < lexical[b]
            sem_gt = semantic[a] > semantic[b]
            sem_lt = semantic[a] < semantic[b]
            if lex_gt:
                out[1] += 1
            if lex_gt and sem_gt:
                out[0] += 1
                out[2] += 1
            elif lex_lt and sem_lt:
                out[2] += 1
            if lex_gt and sem_lt:
                out[3] += 1
    return out


def pair_counts_np(order, lexical, semantic):
    order = np.asarray(order, dtype=np.int64)
    lex = np.asarray(lexical, dtype=np.float64)[order]
    sem = np.asarray(semantic, dtype=np.float64)[order]
    upper = np.triu(np.ones((order.size, order.size), dtype=bool), k=1)
    lex_gt = (lex[:, None] > lex[None, :]) & upper
    lex_lt = (lex[:, None] < lex[None, :]) & upper
    sem_gt = sem[:, None] > sem[None, :]
    sem_lt = sem[:, None] < sem[None, :]
    correct = int((lex_gt & sem_gt).sum())
    return np.array(
        [
            correct,
            int(lex_gt.sum()),
            correct + int((lex_lt & sem_lt).sum()),
            int((lex_gt & sem_lt).sum()),
            int(upper.sum()),
        ],
        dtype=np.int64,
    )


if USE_NUMBA:
    lcs_length = lcs_length_nb
    mean_pool = mean_pool_nb
    mean_pool_backward = mean_pool_backward_nb
    rank_hinge = rank_hinge_nb
    pair_counts = pair_counts_nb
else:
    lcs_length = lcs_length_np
    mean_pool = mean_pool_np
    mean_pool_backward = mean_pool_backward_np
    rank_hinge = rank_hinge_np
    pair_counts = pair_counts_np

__all__ = [
    "NUMBA_AVAILABLE",
    "USE_NUMBA",
    "lcs_length",
    "mean_pool",
    "mean_pool_backward",
    "rank_hinge",
    "pair_counts",
]
