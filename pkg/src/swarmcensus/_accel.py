"""Numeric kernels with an optional numba path.

Set ``SWARMCENSUS_NO_NUMBA=1`` to force the pure-numpy implementations.
Both paths are kept importable side by side (``*_numpy`` / ``*_numba``) so
tests and the benchmark can compare them directly.
"""

from __future__ import annotations

import os

import numpy as np

_DISABLED = os.environ.get("SWARMCENSUS_NO_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError("numba disabled by SWARMCENSUS_NO_NUMBA")
    from numba import njit
    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f


JIT_OPTIONS = {"nogil": True, "cache": True}


def ids_to_words(ids) -> np.ndarray:
    """Pack 20-byte ids into an (n, 3) uint64 array ordered like the bytes."""
    if isinstance(ids, (bytes, bytearray)):
        ids = [ids]
    buf = np.zeros((len(ids), 24), dtype=np.uint8)
    if len(ids):
        raw = np.frombuffer(b"".join(bytes(i) for i in ids), dtype=np.uint8)
        buf[:, :20] = raw.reshape(len(ids), 20)
    return buf.view(">u8").astype(np.uint64)


# ---------------------------------------------------------------- k-nearest by XOR

def xor_nearest_numpy(words: np.ndarray, target: np.ndarray, k: int) -> np.ndarray:
    x = words ^ target
    order = np.lexsort((x[:, 2], x[:, 1], x[:, 0]))
    return order[:k].astype(np.int64)


@njit(**JIT_OPTIONS)
def _xor_nearest_jit(words, target, k):
    n = words.shape[0]
    k = min(k, n)
    best = np.empty(k, dtype=np.int64)
    bd = np.empty((k, 3), dtype=np.uint64)
    filled = 0
    for i in range(n):
        d0 = words[i, 0] ^ target[0]
        d1 = words[i, 1] ^ target[1]
        d2 = words[i, 2] ^ target[2]
        # insertion into the sorted top-k buffer
        j = filled
        while j > 0:
            p0 = bd[j - 1, 0]
            p1 = bd[j - 1, 1]
            p2 = bd[j - 1, 2]
            if p0 < d0 or (p0 == d0 and (p1 < d1 or (p1 == d1 and p2 <= d2))):
                break
            j -= 1
        if j >= k:
            continue
        last = filled if filled < k else k - 1
        m = last
        while m > j:
            bd[m, 0] = bd[m - 1, 0]
            bd[m, 1] = bd[m - 1, 1]
            bd[m, 2] = bd[m - 1, 2]
            best[m] = best[m - 1]
            m -= 1
        bd[j, 0] = d0
        bd[j, 1] = d1
        bd[j, 2] = d2
        best[j] = i
        if filled < k:
            filled += 1
    return best[:filled]


def xor_nearest_numba(words: np.ndarray, target: np.ndarray, k: int) -> np.ndarray:
    return _xor_nearest_jit(np.ascontiguousarray(words), np.ascontiguousarray(target), int(k))


def xor_nearest(words: np.ndarray, target: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` rows of ``words`` closest to ``target`` by XOR, nearest first."""
    target = np.asarray(target, dtype=np.uint64).reshape(3)
    if HAVE_NUMBA:
        return xor_nearest_numba(words, target, k)
    return xor_nearest_numpy(words, target, k)


# ---------------------------------------------------------------- BM25 accumulation

def bm25_accumulate_numpy(indptr, post_doc, post_tf, doc_len, term_ids, term_weight,
                          idf, k1, b, avgdl, n_docs):
    scores = np.zeros(n_docs, dtype=np.float64)
    norm = k1 * (1.0 - b + b * doc_len / avgdl)
    for t, w in zip(term_ids, term_weight):
        lo, hi = indptr[t], indptr[t + 1]
        docs = post_doc[lo:hi]
        tf = post_tf[lo:hi]
        scores[docs] += w * idf[t] * (tf * (k1 + 1.0)) / (tf + norm[docs])
    return scores


@njit(**JIT_OPTIONS)
def _bm25_accumulate_jit(indptr, post_doc, post_tf, doc_len, term_ids, term_weight,
                         idf, k1, b, avgdl, n_docs):
    scores = np.zeros(n_docs, dtype=np.float64)
    for q in range(term_ids.shape[0]):
        t = term_ids[q]
        w = term_weight[q] * idf[t]
        for p in range(indptr[t], indptr[t + 1]):
            d = post_doc[p]
            tf = post_tf[p]
            scores[d] += w * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * doc_len[d] / avgdl))
    return scores


def bm25_accumulate_numba(indptr, post_doc, post_tf, doc_len, term_ids, term_weight,
                          idf, k1, b, avgdl, n_docs):
    return _bm25_accumulate_jit(indptr, post_doc, post_tf, doc_len,
                                np.asarray(term_ids, dtype=np.int64),
                                np.asarray(term_weight, dtype=np.float64),
                                idf, float(k1), float(b), float(avgdl), int(n_docs))


def bm25_accumulate(indptr, post_doc, post_tf, doc_len, term_ids, term_weight,
                    idf, k1, b, avgdl, n_docs):
    """Score every document against a query given as (term id, weight) pairs.

    Postings are CSR: documents containing term ``t`` are
    ``post_doc[indptr[t]:indptr[t+1]]`` with frequencies in ``post_tf``.
    """
    fn = bm25_accumulate_numba if HAVE_NUMBA else bm25_accumulate_numpy
    return fn(indptr, post_doc, post_tf, doc_len, term_ids, term_weight, idf, k1, b, avgdl, n_docs)
