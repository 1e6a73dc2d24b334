"""Compare the numba kernels with the pure-numpy fallback.

Each backend runs in its own interpreter (the fallback is selected with
CFAIR_DISABLE_NUMBA=1) on the same synthetic workloads:

  hash     feature hashing of unigrams and bigrams
  lm       order-3 n-gram sentence scoring
  train    CLP training epochs on the stereotype fixture

Usage: python benchmarks/bench_kernels.py [--sentences N] [--repeat R]
"""
import argparse
import json
import os
import subprocess
import sys
import time

WORKER = r"""
import json, sys, time
import numpy as np
from cfair import BACKEND
from cfair.classifier import FeatureHasher, TrainConfig, build_training_data, fit
from cfair.cli import _builtin
from cfair.corpus import load_corpus
from cfair.counterfactuals import generate_corpus
from cfair.lexicon import load_lexicon, tokenize
from cfair.lm import train_ngram

n, repeat = int(sys.argv[1]), int(sys.argv[2])
rng = np.random.default_rng(0)
vocab = [f"w{i}" for i in range(2000)]
texts = [" ".join(vocab[j] for j in rng.integers(len(vocab), size=int(rng.integers(5, 25)))) for _ in range(n)]
toks = [tokenize(t) for t in texts]
lm = train_ngram(texts[: n // 2], order=3)
hasher = FeatureHasher(2 ** 18)
lex = load_lexicon(_builtin("stereotype_sgts.tsv"))
corpus = load_corpus(_builtin("stereotype_train.jsonl"))
sets = generate_corpus(corpus, lex, None, "ALL")
config = TrainConfig(epochs=5, dim=2 ** 16)
data = build_training_data(list(corpus), lex, sets, config)

def best(fn):
    fn()  # warm-up, includes any compilation
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)

out = {"backend": BACKEND,
       "hash": best(lambda: hasher.rows(toks)),
       "lm": best(lambda: lm.score_tokens(toks)),
       "train": best(lambda: fit(data, config))}
print(json.dumps(out))
"""


def run(disable: bool, n: int, repeat: int) -> dict:
    env = dict(os.environ)
    env.pop("CFAIR_DISABLE_NUMBA", None)
    if disable:
        env["CFAIR_DISABLE_NUMBA"] = "1"
    res = subprocess.run([sys.executable, "-c", WORKER, str(n), str(repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sentences", type=int, default=50_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    t0 = time.perf_counter()
    fast = run(False, args.sentences, args.repeat)
    slow = run(True, args.sentences, args.repeat)
    if fast["backend"] != "numba":
        print("numba is not importable; both columns use the numpy fallback")
    print(f"{'workload':<10}{'numba s':>10}{'numpy s':>10}{'speedup':>10}")
    for key in ("hash", "lm", "train"):
        print(f"{key:<10}{fast[key]:>10.3f}{slow[key]:>10.3f}{slow[key] / fast[key]:>9.1f}x")
    print(f"({args.sentences} sentences, best of {args.repeat}, total {time.perf_counter() - t0:.0f}s)")


if __name__ == "__main__":
    main()
