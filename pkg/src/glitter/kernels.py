"""Hot numeric kernels with a numba path and a pure-numpy fallback.

Set ``GLITTER_DISABLE_NUMBA=1`` in the environment to force the numpy
implementations (useful for debugging and for the kernel benchmark).
Both paths are deterministic; they are not guaranteed to agree bit-for-bit
with each other, only to within floating point reassociation.
"""

from __future__ import annotations

import os

import numpy as np

_DISABLED = os.environ.get("GLITTER_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _DISABLED


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def segment_mean_np(table, ids, offsets):
    """Row-mean of ``table[ids[offsets[s]:offsets[s+1]]]`` for every segment s."""
    lengths = np.diff(offsets)
    summed = np.add.reduceat(table[ids], offsets[:-1], axis=0)
    return summed / lengths[:, None]


def segment_mean_grad_np(dout, ids, offsets, n_rows):
    lengths = np.diff(offsets)
    per_token = np.repeat(dout / lengths[:, None], lengths, axis=0)
    grad = np.zeros((n_rows, dout.shape[1]))
    np.add.at(grad, ids, per_token)
    return grad


def topk_rows_np(scores, counts, k):
    n, width = scores.shape
    masked = np.where(np.arange(width)[None, :] < counts[:, None], scores, -np.inf)
    order = np.argsort(-masked, axis=1, kind="stable")[:, :k]
    take = np.minimum(counts, k)
    order = np.where(np.arange(k)[None, :] < take[:, None], order, width)
    order.sort(axis=1)
    order[order == width] = -1
    return order.astype(np.int64)


def softmax_xent_np(logits, targets, inv_tau):
    z = logits * inv_tau
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_q = z - lse
    values = -(targets * log_q).sum(axis=1)
    return values, np.exp(log_q)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

def _segment_mean_loop(table, ids, offsets):
    n = offsets.shape[0] - 1
    d = table.shape[1]
    out = np.zeros((n, d))
    for s in range(n):
        lo = offsets[s]
        hi = offsets[s + 1]
        for j in range(lo, hi):
            row = ids[j]
            for c in range(d):
                out[s, c] += table[row, c]
        inv = 1.0 / (hi - lo)
        for c in range(d):
            out[s, c] *= inv
    return out


def _segment_mean_grad_loop(dout, ids, offsets, n_rows):
    n = offsets.shape[0] - 1
    d = dout.shape[1]
    grad = np.zeros((n_rows, d))
    for s in range(n):
        lo = offsets[s]
        hi = offsets[s + 1]
        inv = 1.0 / (hi - lo)
        for j in range(lo, hi):
            row = ids[j]
            for c in range(d):
                grad[row, c] += dout[s, c] * inv
    return grad


def _topk_rows_loop(scores, counts, k):
    n = scores.shape[0]
    out = np.full((n, k), -1, dtype=np.int64)
    for r in range(n):
        avail = counts[r]
        take = min(k, avail)
        used = np.zeros(avail, dtype=np.bool_)
        for j in range(take):
            best = -1
            for i in range(avail):
                if used[i]:
                    continue
                # strict '>' keeps the lowest index on ties
                if best < 0 or scores[r, i] > scores[r, best]:
                    best = i
            used[best] = True
        j = 0
        for i in range(avail):
            if used[i]:
                out[r, j] = i
                j += 1
    return out


def _softmax_xent_loop(logits, targets, inv_tau):
    n, c = logits.shape
    values = np.empty(n)
    probs = np.empty((n, c))
    for r in range(n):
        m = logits[r, 0] * inv_tau
        for j in range(1, c):
            v = logits[r, j] * inv_tau
            if v > m:
                m = v
        total = 0.0
        for j in range(c):
            total += np.exp(logits[r, j] * inv_tau - m)
        lse = np.log(total)
        acc = 0.0
        for j in range(c):
            log_q = logits[r, j] * inv_tau - m - lse
            probs[r, j] = np.exp(log_q)
            acc -= targets[r, j] * log_q
        values[r] = acc
    return values, probs


if HAVE_NUMBA:
    segment_mean_nb = njit(cache=True)(_segment_mean_loop)
    segment_mean_grad_nb = njit(cache=True)(_segment_mean_grad_loop)
    topk_rows_nb = njit(cache=True)(_topk_rows_loop)
    softmax_xent_nb = njit(cache=True)(_softmax_xent_loop)
else:  # pragma: no cover
    segment_mean_nb = _segment_mean_loop
    segment_mean_grad_nb = _segment_mean_grad_loop
    topk_rows_nb = _topk_rows_loop
    softmax_xent_nb = _softmax_xent_loop


NUMPY_KERNELS = {
    "segment_mean": segment_mean_np,
    "segment_mean_grad": segment_mean_grad_np,
    "topk_rows": topk_rows_np,
    "softmax_xent": softmax_xent_np,
}
NUMBA_KERNELS = {
    "segment_mean": segment_mean_nb,
    "segment_mean_grad": segment_mean_grad_nb,
    "topk_rows": topk_rows_nb,
    "softmax_xent": softmax_xent_nb,
}
ACTIVE = NUMBA_KERNELS if USE_NUMBA else NUMPY_KERNELS


def segment_mean(table: np.ndarray, ids: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    return ACTIVE["segment_mean"](table, ids, offsets)


def segment_mean_grad(dout: np.ndarray, ids: np.ndarray, offsets: np.ndarray, n_rows: int) -> np.ndarray:
    """Adjoint of :func:`segment_mean` with respect to the table."""
    return ACTIVE["segment_mean_grad"](dout, ids, offsets, n_rows)


def topk_rows(scores: np.ndarray, counts: np.ndarray, k: int) -> np.ndarray:
    """Per row, the indices of the ``k`` largest among the first ``counts[r]`` scores.

    Ties go to the lower index. Chosen indices come back in ascending order,
    padded with -1 when a row has fewer than ``k`` entries.
    """
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    counts = np.ascontiguousarray(counts, dtype=np.int64)
    return ACTIVE["topk_rows"](scores, counts, int(k))


def softmax_xent(logits: np.ndarray, targets: np.ndarray, tau: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise ``-sum(target * log softmax(logits / tau))`` and the softmax itself."""
    logits = np.ascontiguousarray(logits, dtype=np.float64)
    targets = np.ascontiguousarray(targets, dtype=np.float64)
    return ACTIVE["softmax_xent"](logits, targets, 1.0 / tau)
