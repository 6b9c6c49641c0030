"""Compare the numba and numpy paths of the numeric kernels.

    python3 benchmarks/bench_kernels.py [--nodes N] [--docs N] [--repeat R]

Both paths are called directly, so the env flag does not matter here;
the first numba call (compilation) is excluded from the timings.
"""

import argparse
import random
import time

import numpy as np

from swarmcensus import _accel
from swarmcensus.matcher import analyze, build_index, CatalogEntry


def best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def bench_xor(n_nodes, repeat, rng):
    words = _accel.ids_to_words([rng.randbytes(20) for _ in range(n_nodes)])
    targets = _accel.ids_to_words([rng.randbytes(20) for _ in range(64)])
    paths = {"numpy": _accel.xor_nearest_numpy}
    if _accel.HAVE_NUMBA:
        paths["numba"] = _accel.xor_nearest_numba
        _accel.xor_nearest_numba(words, targets[0], 8)
    ref = [_accel.xor_nearest_numpy(words, t, 8) for t in targets]
    for name, fn in paths.items():
        assert all(np.array_equal(fn(words, t, 8), r) for t, r in zip(targets, ref))
        dt = best_of(lambda: [fn(words, t, 8) for t in targets], repeat)
        print(f"xor k-nearest  {name:6s} {n_nodes:>8d} ids  {dt / len(targets) * 1e6:10.1f} us/query")


def bench_bm25(n_docs, repeat, rng):
    syll = ["ka", "lo", "mi", "ren", "sto", "va", "dre", "qui", "zor", "ath"]
    word = lambda: "".join(rng.choice(syll) for _ in range(rng.randint(2, 4)))
    entries = [CatalogEntry(f"t{i}", " ".join(word() for _ in range(rng.randint(1, 5))))
               for i in range(n_docs)]
    index = build_index(entries)
    queries = [analyze(rng.choice(entries).primary_title) for _ in range(64)]
    prepared = []
    for q in queries:
        ids = np.array([index.terms[t] for t in q if t in index.terms], dtype=np.int64)
        prepared.append((ids, np.ones(len(ids))))
    args = (index.indptr, index.post_doc, index.post_tf, index.doc_len)
    tail = (index.idf, index.params.k1, index.params.b, index.avgdl, index.n_docs)
    paths = {"numpy": _accel.bm25_accumulate_numpy}
    if _accel.HAVE_NUMBA:
        paths["numba"] = _accel.bm25_accumulate_numba
        _accel.bm25_accumulate_numba(*args, *prepared[0], *tail)
    for name, fn in paths.items():
        for ids, w in prepared:
            np.testing.assert_allclose(fn(*args, ids, w, *tail),
                                       _accel.bm25_accumulate_numpy(*args, ids, w, *tail), rtol=1e-12)
        dt = best_of(lambda: [fn(*args, ids, w, *tail) for ids, w in prepared], repeat)
        print(f"bm25 accumulate {name:6s} {n_docs:>7d} docs  {dt / len(prepared) * 1e6:10.1f} us/query")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--nodes", type=int, default=100_000)
    ap.add_argument("--docs", type=int, default=50_000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()
    rng = random.Random(a.seed)
    print(f"numba available: {_accel.HAVE_NUMBA}")
    bench_xor(a.nodes, a.repeat, rng)
    bench_bm25(a.docs, a.repeat, rng)


if __name__ == "__main__":
    main()
