import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from cfair import kernels
from cfair._backend import HAVE_NUMBA
from cfair.classifier import FeatureHasher, fnv1a64
from cfair.lm import train_ngram

from conftest import run_numpy_backend
from oracles import fnv1a64 as fnv_oracle

needs_numba = pytest.mark.skipif(not HAVE_NUMBA, reason="numba backend not active")


@pytest.mark.parametrize("data", [b"", b"a", b"b", b"a\x1fb", "ünï".encode(), b"foobar" * 9])
def test_fnv_against_oracle(data):
    assert fnv1a64(data) == fnv_oracle(data)


def test_fnv_known_vectors():
    # published FNV-1a 64 test vectors
    assert fnv_oracle(b"") == 0xCBF29CE484222325
    assert fnv_oracle(b"a") == 0xAF63DC4C8601EC8C
    assert fnv_oracle(b"foobar") == 0x85944171F73967E8


def _packed(strings):
    blobs = [s.encode() for s in strings]
    offsets = np.zeros(len(blobs) + 1, dtype=np.int64)
    np.cumsum([len(b) for b in blobs], out=offsets[1:])
    return np.frombuffer(b"".join(blobs) or b"\0", dtype=np.uint8)[:offsets[-1]], offsets


@needs_numba
def test_fnv_backends_agree():
    words = ["", "a", "ab", "the\x1fcat", "ünïcode"] * 7
    buf, off = _packed(words)
    assert np.array_equal(kernels.fnv1a64_numpy(buf, off), kernels.fnv1a64_numba(buf, off))


@needs_numba
def test_segment_sums_backends_agree():
    rng = np.random.default_rng(0)
    vals = rng.normal(size=1000)
    off = np.r_[0, np.sort(rng.choice(np.arange(1, 1000), size=60, replace=False)), 1000].astype(np.int64)
    a = kernels.segment_sums_numpy(vals, off)
    b = kernels.segment_sums_numba(vals, off)
    assert np.array_equal(a, b)


@needs_numba
def test_csr_backends_agree():
    rng = np.random.default_rng(1)
    lengths = rng.integers(0, 9, size=40)
    indptr = np.r_[0, np.cumsum(lengths)].astype(np.int64)
    indices = rng.integers(0, 64, size=indptr[-1]).astype(np.int64)
    data = rng.integers(1, 4, size=indptr[-1]).astype(np.float64)
    W, b = rng.normal(size=(2, 64)), rng.normal(size=2)
    rows = rng.permutation(40)[:25].astype(np.int64)
    assert np.array_equal(kernels.csr_rows_logits_numpy(indptr, indices, data, rows, W, b),
                          kernels.csr_rows_logits_numba(indptr, indices, data, rows, W, b))
    coef = rng.normal(size=(25, 2))
    assert np.array_equal(kernels.csr_rows_scatter_numpy(indptr, indices, data, rows, coef, 64),
                          kernels.csr_rows_scatter_numba(indptr, indices, data, rows, coef, 64))


@needs_numba
def test_ngram_backends_agree():
    rng = np.random.default_rng(2)
    words = [f"w{i}" for i in range(30)]
    texts = [" ".join(rng.choice(words, size=rng.integers(1, 10))) for _ in range(200)]
    m = train_ngram(texts, order=3)
    toks = [rng.choice(words + ["oov"], size=8).tolist() for _ in range(50)]
    targets = np.concatenate([m.token_ids(t) for t in toks])
    ctx = rng.integers(0, len(m.vocab), size=(len(targets), 2)).astype(np.int64)
    args = (targets, ctx, m.uni_counts, m.uni_total, m.vsize, m.discount, m.bits, m.ngram_keys,
            m.ngram_counts, m.ngram_ptr, m.hist_keys, m.hist_counts, m.hist_types, m.hist_ptr)
    assert np.array_equal(kernels.ngram_probs_numpy(*args), kernels.ngram_probs_numba(*args))


_SNIPPET = """
import json, hashlib
import numpy as np
import cfair
from cfair.lm import train_ngram
from cfair.classifier import TrainConfig, train
from cfair.synth import stereotype_corpus
from cfair.cli import _builtin
from cfair.lexicon import load_lexicon
lex = load_lexicon(_builtin("stereotype_sgts.tsv"))
corpus = stereotype_corpus(120, 3)
lm = train_ngram(corpus, 3)
ll = lm.score_texts([d.text for d in corpus])
params, log = train(corpus, lex, lm, TrainConfig(epochs=3, dim=2**12))
print(json.dumps({"backend": cfair.BACKEND, "ll": ll.tobytes().hex(),
                  "W": hashlib.sha256(params.W.tobytes()).hexdigest(),
                  "loss": [r.loss for r in log.epochs]}))
"""


def test_numpy_fallback_is_bit_identical():
    import subprocess, sys
    fallback = json.loads(run_numpy_backend(_SNIPPET))
    assert fallback["backend"] == "numpy"
    native = json.loads(subprocess.run([sys.executable, "-c", _SNIPPET], capture_output=True, text=True,
                                       check=True).stdout)
    assert native["ll"] == fallback["ll"]
    assert native["W"] == fallback["W"]
    assert native["loss"] == fallback["loss"]


def test_hasher_matches_oracle_indices():
    dim = 2 ** 18
    rows = FeatureHasher(dim).rows([["a", "b"]])
    expected = sorted({fnv_oracle(s.encode()) % dim for s in ("a", "b", "a\x1fb")})
    assert rows.indices.tolist() == expected
    assert rows.data.tolist() == [1.0, 1.0, 1.0]


def test_benchmark_script_runs():
    script = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_kernels.py"
    res = subprocess.run([sys.executable, str(script), "--sentences", "200", "--repeat", "1"],
                         capture_output=True, text=True, timeout=600)
    assert res.returncode == 0, res.stderr
    assert [line.split()[0] for line in res.stdout.splitlines()[-4:-1]] == ["hash", "lm", "train"]
