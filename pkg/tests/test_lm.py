import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cfair.lm import (CachedScorer, NgramModel, UnigramTableScorer, ngram_log_prob, sentence_log_likelihood,
                      train_ngram)

from oracles import DiscountOracle


@pytest.fixture(scope="module")
def abab():
    return train_ngram(["a b a b"], order=2, discount=0.75)


def test_bigram_counts(abab):
    assert abab.count(("<s>", "a")) == 1
    assert abab.count(("a", "b")) == 2
    assert abab.count(("b", "a")) == 1
    assert abab.count(("b", "b")) == 0
    assert abab.count(("a",)) == 2 and abab.count(("b",)) == 2


def test_worked_probabilities(abab):
    assert abab.prob("a", ["<s>"]) == pytest.approx(0.25 + 0.75 * 3 / 7, abs=1e-12)
    assert abab.prob("a", ["<s>"]) == pytest.approx(0.5714, abs=1e-4)
    assert ngram_log_prob(abab, "a") == pytest.approx(-0.5596, abs=1e-4)
    assert abab.prob("b", ["a"]) == pytest.approx((2 - 0.75 + 0.75 * 3 / 7) / 2, abs=1e-12)
    assert abab.log_prob("b", ["a"]) == pytest.approx(-0.2412, abs=1e-4)
    assert abab.prob("b", ["z"]) == pytest.approx(3 / 7, abs=1e-12)


def test_worked_sentences(abab):
    assert sentence_log_likelihood(abab, "a b") == pytest.approx(-0.8008, abs=1e-4)
    assert sentence_log_likelihood(abab, "a") == pytest.approx(-0.5596, abs=1e-4)
    assert sentence_log_likelihood(abab, "a b", per_token=True) == pytest.approx(-0.8008 / 2, abs=1e-4)


def test_order_one_has_no_history():
    m = train_ngram(["a b a b"], order=1)
    assert m.histories(2) == []
    assert m.prob("a", ["b"]) == m.prob("a") == pytest.approx(3 / 7)


@pytest.mark.parametrize("d", [0.0, 1.0, -0.1, 1.5])
def test_bad_discount(d):
    with pytest.raises(ValueError, match="discount"):
        train_ngram(["a b"], order=2, discount=d)


def test_empty_corpus():
    with pytest.raises(ValueError, match="empty"):
        train_ngram(["", "  !! "])


def test_empty_text_scoring(abab):
    with pytest.raises(ValueError, match="no tokens"):
        abab.score_texts(["..."])


_sent = st.lists(st.sampled_from("abcde"), min_size=1, max_size=7).map(" ".join)


@settings(max_examples=40, deadline=None)
@given(st.lists(_sent, min_size=1, max_size=8), st.integers(1, 3), st.sampled_from([0.1, 0.5, 0.75, 0.9]))
def test_matches_oracle(texts, order, d):
    m = train_ngram(texts, order=order, discount=d)
    oracle = DiscountOracle([t.split() for t in texts], order, d)
    for text in texts[:3] + ["a z b", "e e e"]:
        toks = text.split()
        assert m.score_texts([text])[0] == pytest.approx(oracle.sentence(toks), rel=1e-12, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.lists(_sent, min_size=1, max_size=8), st.integers(1, 3))
def test_distributions_normalize(texts, order):
    m = train_ngram(texts, order=order)
    hists = [()] + [h for k in range(2, order + 1) for h in m.histories(k)]
    for h in hists:
        assert m.distribution(h).sum() == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.lists(_sent, min_size=1, max_size=6), st.lists(st.sampled_from("abcxy"), min_size=1, max_size=6),
       st.randoms(use_true_random=False))
def test_unigram_permutation_invariance(texts, toks, rnd):
    m = train_ngram(texts, order=1)
    shuffled = list(toks)
    rnd.shuffle(shuffled)
    a, b = m.score_tokens([toks, shuffled])
    assert a == pytest.approx(b, rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.lists(_sent, min_size=1, max_size=6))
def test_logliks_nonpositive(texts):
    m = train_ngram(texts, order=3)
    assert (m.score_texts(texts + ["q r s"]) <= 0).all()


def test_deterministic_training():
    texts = ["the cat sat", "the dog ran home", "a cat ran"]
    a, b = train_ngram(texts, 3), train_ngram(texts, 3)
    assert a.fingerprint == b.fingerprint
    for name, _ in NgramModel._ARRAYS:
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_save_load_roundtrip(tmp_path):
    m = train_ngram(["the cat sat", "the dog ran home", "ünïcode wörds"], 3, 0.6)
    p = tmp_path / "lm.bin"
    m.save(p)
    first = p.read_bytes()
    back = NgramModel.load(p)
    assert back.fingerprint == m.fingerprint
    assert back.vocab == m.vocab
    back.save(p)
    assert p.read_bytes() == first


def test_load_rejects_garbage(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"not a model")
    with pytest.raises(ValueError, match="not an n-gram model"):
        NgramModel.load(p)


def test_vocabulary_limit_for_packing():
    # order 3 packs 21 bits per id
    m = train_ngram([" ".join(f"w{i}" for i in range(100))], order=3)
    assert m.bits == 21


def test_unigram_table_scorer():
    s = UnigramTableScorer({"a": 0.5, "b": 0.25}, default=0.1)
    assert s.score_texts(["a b c"])[0] == pytest.approx(math.log(0.5) + math.log(0.25) + math.log(0.1))


def test_cached_scorer_counts():
    base = UnigramTableScorer({"a": 0.5})
    c = CachedScorer(base)
    first = c.score_texts(["a", "a b", "a"])
    again = c.score_texts(["a b"])
    assert first[1] == again[0]
    assert (c.hits, c.misses) == (2, 2)
    assert c.hit_rate == 0.5
    assert c.stats()["entries"] == 2


def test_thousand_sentence_normalization():
    rng = np.random.default_rng(5)
    words = [f"w{i}" for i in range(40)]
    texts = [" ".join(rng.choice(words, size=rng.integers(1, 12))) for _ in range(1000)]
    for order in (1, 2, 3):
        m = train_ngram(texts, order=order)
        for h in [()] + [h for k in range(2, order + 1) for h in m.histories(k)][:400]:
            assert abs(m.distribution(h).sum() - 1.0) < 1e-9
