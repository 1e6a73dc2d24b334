import itertools
import json

import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_lexicon
from cfair.corpus import (Corpus, CorpusError, Document, filter_by_sgt_count, from_texts, load_corpus,
                          load_csv, load_jsonl, split_by_sgt_ratio, stratified_folds, write_jsonl)


def _jsonl(tmp_path, rows):
    p = tmp_path / "c.jsonl"
    p.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    return p


def test_load_three_docs(tmp_path):
    p = _jsonl(tmp_path, [{"id": "a", "text": "x", "label": 1}, {"id": "b", "text": "y", "label": 0},
                          {"id": "c", "text": "z"}])
    c = load_jsonl(p)
    assert len(c) == 3
    assert c.ids == ["a", "b", "c"]
    assert c.get("c").label is None


def test_empty_text(tmp_path):
    with pytest.raises(CorpusError, match="empty text"):
        load_jsonl(_jsonl(tmp_path, [{"id": "a", "text": ""}]))


def test_duplicate_id(tmp_path):
    with pytest.raises(CorpusError, match="duplicate"):
        load_jsonl(_jsonl(tmp_path, [{"id": "a", "text": "x"}, {"id": "a", "text": "y"}]))


def test_bad_label_names_line(tmp_path):
    with pytest.raises(CorpusError, match=":2:"):
        load_jsonl(_jsonl(tmp_path, [{"id": "a", "text": "x"}, {"id": "b", "text": "y", "label": 3}]))


def test_missing_field(tmp_path):
    with pytest.raises(CorpusError, match="text"):
        load_jsonl(_jsonl(tmp_path, [{"id": "a"}]))


def test_csv_roundtrip(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("id,text,label\na,hello there,1\nb,\"quoted, text\",0\n", encoding="utf-8")
    c = load_corpus(p)
    assert [d.text for d in c] == ["hello there", "quoted, text"]
    assert load_csv(p).get("a").label == 1


def test_jsonl_roundtrip(tmp_path):
    c = from_texts(["a b", "c"], [1, 0])
    p = tmp_path / "out.jsonl"
    write_jsonl(c, p)
    back = load_jsonl(p)
    assert [(d.id, d.text, d.label) for d in back] == [(d.id, d.text, d.label) for d in c]


def test_filter_by_sgt_count():
    lex = make_lexicon([("muslim", "religion"), ("women", "gender"), ("men", "gender")])
    c = from_texts(["the muslim man", "women and men", "hello"])
    assert [d.text for d in filter_by_sgt_count(c, lex, 1)] == ["the muslim man"]
    assert [d.text for d in filter_by_sgt_count(c, lex, 0)] == ["hello"]
    assert len(filter_by_sgt_count(Corpus([]), lex, 1)) == 0


def test_filter_counts_man_in_default_lexicon(default_lexicon):
    c = from_texts(["the muslim man"])
    assert len(filter_by_sgt_count(c, default_lexicon, 2)) == 1


def test_split_per_group(default_lexicon):
    c = from_texts([f"the jew {i}" for i in range(5)] + [f"the muslim {i}" for i in range(5)], [0] * 10)
    train, test = split_by_sgt_ratio(c, default_lexicon, 0.8, seed=3)
    def count(corpus, w):
        return sum(w in d.text for d in corpus)
    assert (count(train, "jew"), count(train, "muslim")) == (4, 4)
    assert (count(test, "jew"), count(test, "muslim")) == (1, 1)


def test_split_single_group(default_lexicon):
    c = from_texts([f"the jew {i}" for i in range(10)])
    train, test = split_by_sgt_ratio(c, default_lexicon, 0.8, seed=0)
    assert (len(train), len(test)) == (8, 2)


def test_split_deterministic(default_lexicon):
    c = from_texts([f"the jew {i}" for i in range(7)] + [f"gay {i}" for i in range(6)])
    a = split_by_sgt_ratio(c, default_lexicon, 0.7, seed=11)
    b = split_by_sgt_ratio(c, default_lexicon, 0.7, seed=11)
    assert [x.ids for x in a] == [x.ids for x in b]


_pool = ["the jew", "a muslim", "gay man", "old woman", "nothing here", "white and black"]


@settings(max_examples=150, deadline=None)
@given(st.lists(st.sampled_from(_pool), min_size=1, max_size=80), st.floats(0.05, 0.95), st.integers(0, 10))
def test_split_partitions_and_keeps_ratio(default_lexicon, texts, frac, seed):
    c = from_texts(texts)
    train, test = split_by_sgt_ratio(c, default_lexicon, frac, seed)
    assert sorted(train.ids + test.ids) == sorted(c.ids)
    assert not set(train.ids) & set(test.ids)
    T, N = len(train), len(c)
    if T == 0:
        return
    groups = {}
    for d in c:
        groups.setdefault(frozenset(m.sgt.text for m in d.mentions(default_lexicon)), []).append(d.id)
    train_ids = set(train.ids)
    for key, ids in groups.items():
        n, t = len(ids), sum(i in train_ids for i in ids)
        # floor-plus-remainder allocation keeps every group within 1.5/T of its corpus share
        assert abs(t / T - n / N) < 1.5 / T
        if len(key) == 1 and sum(key <= g for g in groups) == 1 and 1.5 * n <= T:
            assert abs(t / T - n / N) <= 1 / n


def test_folds_spread_positives():
    c = from_texts([f"d{i}" for i in range(10)], [1, 1] + [0] * 8)
    folds = stratified_folds(c, 5, seed=0)
    assert len(folds) == 5
    pos_per_fold = [sum(d.label for d in val) for _, val in folds]
    assert all(len(val) == 2 for _, val in folds)
    assert max(pos_per_fold) <= 1
    assert pos_per_fold.count(1) == 2


@pytest.mark.parametrize("seed", range(20))
def test_folds_match_brute_force(seed):
    # enumerate every placement of the two positives into five slots of two; valid ones use two distinct folds
    layouts = [p for p in itertools.combinations(range(10), 2) if p[0] // 2 != p[1] // 2]
    seen = {frozenset(i // 2 for i in p) for p in layouts}
    c = from_texts([f"d{i}" for i in range(10)], [1, 1] + [0] * 8)
    folds = stratified_folds(c, 5, seed=seed)
    got = frozenset(f for f, (_, val) in enumerate(folds) if any(d.label for d in val))
    assert got in seen


def test_folds_partition():
    c = from_texts([f"d{i}" for i in range(13)], [1] * 5 + [0] * 8)
    for train, val in stratified_folds(c, 3, seed=2):
        assert sorted(train.ids + val.ids) == sorted(c.ids)
    vals = [d for _, val in stratified_folds(c, 3, seed=2) for d in val.ids]
    assert sorted(vals) == sorted(c.ids)


def test_folds_errors():
    c = from_texts(["a", "b", "c", "d"], [1, 1, 0, 0])
    with pytest.raises(CorpusError):
        stratified_folds(c, 1, seed=0)
    with pytest.raises(CorpusError):
        stratified_folds(from_texts(["a", "b", "c"], [1, 1, 1]), 2, seed=0)


def test_document_tokens_and_mentions(default_lexicon):
    d = Document("x", "The Muslim man!", 1)
    assert list(d.tokens) == ["the", "muslim", "man"]
    assert [m.sgt.text for m in d.mentions(default_lexicon)] == ["muslim", "man"]
