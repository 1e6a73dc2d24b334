"""Numeric inner loops.

Every kernel exists twice: a ``*_numba`` version compiled with
:func:`cfair._backend.njit` and a ``*_numpy`` version built from
vectorised numpy operations. The unsuffixed names are bound to whichever
backend is active. Both versions perform the same floating point
operations in the same order, so results agree bit for bit on IEEE
hardware (the test suite checks this).
"""
import numpy as np

from ._backend import HAVE_NUMBA, njit

FNV_OFFSET = np.uint64(0xCBF29CE484222325)
FNV_PRIME = np.uint64(0x100000001B3)


# -- FNV-1a 64 over a packed byte buffer -----------------------------------

def fnv1a64_numpy(buf, offsets):
    """Hash ``buf[offsets[i]:offsets[i+1]]`` for every i."""
    buf = np.asarray(buf, dtype=np.uint8)
    offsets = np.asarray(offsets, dtype=np.int64)
    n = len(offsets) - 1
    h = np.full(n, FNV_OFFSET, dtype=np.uint64)
    if n == 0:
        return h
    starts = offsets[:-1]
    lengths = offsets[1:] - starts
    longest = int(lengths.max()) if n else 0
    with np.errstate(over="ignore"):
        for j in range(longest):
            live = np.nonzero(lengths > j)[0]
            byte = buf[starts[live] + j].astype(np.uint64)
            h[live] = (h[live] ^ byte) * FNV_PRIME
    return h


@njit
def fnv1a64_numba(buf, offsets):
    n = len(offsets) - 1
    out = np.empty(n, dtype=np.uint64)
    for i in range(n):
        h = np.uint64(0xCBF29CE484222325)
        for j in range(offsets[i], offsets[i + 1]):
            h = (h ^ np.uint64(buf[j])) * np.uint64(0x100000001B3)
        out[i] = h
    return out


# -- interpolated absolute discounting ------------------------------------

def ngram_probs_numpy(targets, contexts, uni_counts, uni_total, vsize, discount, bits,
                      ngram_keys, ngram_counts, ngram_ptr,
                      hist_keys, hist_counts, hist_types, hist_ptr):
    """Conditional probabilities P(target | context) for a batch of positions.

    ``contexts[i, j]`` is the id ``j + 1`` positions before target ``i``.
    Level ``k`` tables (k >= 2) live at ``ngram_ptr[k]:ngram_ptr[k + 1]``
    (likewise for histories), sorted by packed key; ``len(ngram_ptr)`` is
    ``order + 2``. Keys pack the most recent token into the lowest bits.
    """
    targets = np.asarray(targets, dtype=np.int64)
    p = (uni_counts[targets] + 1.0) / (uni_total + vsize)
    order = len(ngram_ptr) - 2
    hk = np.zeros(len(targets), dtype=np.int64)
    for k in range(2, order + 1):
        # extend the history one token further into the past
        hk = hk | (contexts[:, k - 2] << (bits * (k - 2)))
        hs, he = hist_ptr[k], hist_ptr[k + 1]
        hkeys = hist_keys[hs:he]
        if len(hkeys) == 0:
            continue
        pos = np.searchsorted(hkeys, hk)
        pos_c = np.minimum(pos, len(hkeys) - 1)
        found = hkeys[pos_c] == hk
        hc = np.where(found, hist_counts[hs:he][pos_c], 0.0)
        ht = np.where(found, hist_types[hs:he][pos_c], 0.0)
        nk = (hk << bits) | targets
        ns, ne = ngram_ptr[k], ngram_ptr[k + 1]
        nkeys = ngram_keys[ns:ne]
        npos = np.minimum(np.searchsorted(nkeys, nk), len(nkeys) - 1)
        c = np.where(nkeys[npos] == nk, ngram_counts[ns:ne][npos], 0.0)
        live = hc > 0
        dt = discount * ht[live]
        p[live] = (np.maximum(c[live] - discount, 0.0) + dt * p[live]) / hc[live]
    return p


@njit
def _lookup(keys, lo, hi, key):
    i = lo + np.searchsorted(keys[lo:hi], key)
    if i < hi and keys[i] == key:
        return i
    return -1


@njit
def ngram_probs_numba(targets, contexts, uni_counts, uni_total, vsize, discount, bits,
                      ngram_keys, ngram_counts, ngram_ptr,
                      hist_keys, hist_counts, hist_types, hist_ptr):
    n = len(targets)
    order = len(ngram_ptr) - 2
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        t = targets[i]
        p = (uni_counts[t] + 1.0) / (uni_total + vsize)
        hk = np.int64(0)
        for k in range(2, order + 1):
            hk = hk | (contexts[i, k - 2] << (bits * (k - 2)))
            j = _lookup(hist_keys, hist_ptr[k], hist_ptr[k + 1], hk)
            if j < 0 or hist_counts[j] <= 0:
                continue
            hc = hist_counts[j]
            nj = _lookup(ngram_keys, ngram_ptr[k], ngram_ptr[k + 1], (hk << bits) | t)
            c = ngram_counts[nj] if nj >= 0 else 0.0
            dt = discount * hist_types[j]
            p = (max(c - discount, 0.0) + dt * p) / hc
        out[i] = p
    return out


def segment_sums_numpy(values, offsets):
    """Left-to-right sum of ``values[offsets[i]:offsets[i+1]]``."""
    starts = offsets[:-1]
    lengths = offsets[1:] - starts
    out = np.zeros(len(starts))
    for j in range(int(lengths.max()) if len(lengths) else 0):
        live = np.nonzero(lengths > j)[0]
        out[live] += values[starts[live] + j]
    return out


@njit
def segment_sums_numba(values, offsets):
    n = len(offsets) - 1
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for j in range(offsets[i], offsets[i + 1]):
            acc += values[j]
        out[i] = acc
    return out


# -- sparse rows against a 2 x D weight matrix -----------------------------

def _gather(indptr, rows):
    starts = indptr[rows]
    lengths = indptr[rows + 1] - starts
    total = int(lengths.sum())
    row_of = np.repeat(np.arange(len(rows)), lengths)
    first = np.cumsum(lengths) - lengths
    pos = np.arange(total) - np.repeat(first, lengths) + np.repeat(starts, lengths)
    return row_of, pos


def csr_rows_logits_numpy(indptr, indices, data, rows, W, b):
    """Logits ``W @ x + b`` for the CSR rows listed in ``rows``."""
    rows = np.asarray(rows, dtype=np.int64)
    row_of, pos = _gather(indptr, rows)
    cols = indices[pos]
    vals = data[pos]
    out = np.empty((len(rows), 2))
    for r in range(2):
        out[:, r] = np.bincount(row_of, weights=vals * W[r, cols], minlength=len(rows)) + b[r]
    return out


@njit
def csr_rows_logits_numba(indptr, indices, data, rows, W, b):
    n = len(rows)
    out = np.empty((n, 2))
    for i in range(n):
        row = rows[i]
        for r in range(2):
            acc = 0.0
            for j in range(indptr[row], indptr[row + 1]):
                acc += data[j] * W[r, indices[j]]
            out[i, r] = acc + b[r]
    return out


def csr_rows_scatter_numpy(indptr, indices, data, rows, coef, dim):
    """Dense ``(2, dim)`` array holding ``sum_i coef[i, r] * x_rows[i]``."""
    rows = np.asarray(rows, dtype=np.int64)
    row_of, pos = _gather(indptr, rows)
    cols = indices[pos]
    vals = data[pos]
    out = np.empty((2, dim))
    for r in range(2):
        out[r] = np.bincount(cols, weights=vals * coef[row_of, r], minlength=dim)
    return out


@njit
def csr_rows_scatter_numba(indptr, indices, data, rows, coef, dim):
    out = np.zeros((2, dim))
    for i in range(len(rows)):
        row = rows[i]
        for j in range(indptr[row], indptr[row + 1]):
            col = indices[j]
            for r in range(2):
                out[r, col] += data[j] * coef[i, r]
    return out


if HAVE_NUMBA:
    fnv1a64 = fnv1a64_numba
    ngram_probs = ngram_probs_numba
    segment_sums = segment_sums_numba
    csr_rows_logits = csr_rows_logits_numba
    csr_rows_scatter = csr_rows_scatter_numba
else:
    fnv1a64 = fnv1a64_numpy
    ngram_probs = ngram_probs_numpy
    segment_sums = segment_sums_numpy
    csr_rows_logits = csr_rows_logits_numpy
    csr_rows_scatter = csr_rows_scatter_numpy
