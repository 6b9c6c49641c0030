import os
import random
import subprocess
import sys

import numpy as np
import pytest

from swarmcensus import _accel
from swarmcensus.dht import xor_distance
from swarmcensus.matcher import CatalogEntry, analyze, build_index


def test_ids_to_words_preserves_order():
    rng = random.Random(0)
    ids = [rng.randbytes(20) for _ in range(200)]
    words = _accel.ids_to_words(ids)
    order = np.lexsort((words[:, 2], words[:, 1], words[:, 0]))
    assert [ids[i] for i in order] == sorted(ids)


@pytest.mark.parametrize("n, k", [(1, 8), (5, 8), (100, 8), (1000, 3), (300, 300)])
def test_xor_nearest_paths_agree_with_brute_force(n, k):
    rng = random.Random(n * 31 + k)
    ids = [rng.randbytes(20) for _ in range(n)]
    target = rng.randbytes(20)
    words = _accel.ids_to_words(ids)
    t = _accel.ids_to_words(target)[0]
    oracle = sorted(range(n), key=lambda i: xor_distance(ids[i], target))[:k]
    assert _accel.xor_nearest_numpy(words, t, k).tolist() == oracle
    assert _accel.xor_nearest_numba(words, t, k).tolist() == oracle
    assert _accel.xor_nearest(words, t, k).tolist() == oracle


def test_bm25_paths_agree():
    rng = random.Random(5)
    vocab = ["".join(rng.choice("abcdefgh") for _ in range(rng.randint(3, 10))) for _ in range(200)]
    cat = [CatalogEntry(str(i), " ".join(rng.choice(vocab) for _ in range(rng.randint(1, 6))))
           for i in range(2000)]
    idx = build_index(cat)
    for _ in range(20):
        q = [t for t in analyze(" ".join(rng.choice(vocab) for _ in range(3))) if t in idx.terms]
        term_ids = np.array(sorted({idx.terms[t] for t in q}), dtype=np.int64)
        weights = np.ones(len(term_ids))
        args = (idx.indptr, idx.post_doc, idx.post_tf, idx.doc_len, term_ids, weights, idx.idf,
                1.2, 0.75, idx.avgdl, idx.n_docs)
        np.testing.assert_allclose(_accel.bm25_accumulate_numpy(*args),
                                   _accel.bm25_accumulate_numba(*args), rtol=1e-12, atol=0)


def test_env_flag_selects_numpy_path():
    code = "from swarmcensus import _accel; print(_accel.HAVE_NUMBA)"
    env = dict(os.environ, SWARMCENSUS_NO_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "False"
