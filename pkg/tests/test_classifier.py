import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cfair.classifier import (HATE, NONHATE, ClassifierParams, FeatureVector, TrainConfig, TrainingError,
                              accuracy, build_training_data, clp_gradient, clp_loss, clp_terms, featurize,
                              fit, logits, predict, train)
from cfair.corpus import Document, from_texts
from cfair.counterfactuals import substitute_mention
from cfair.lm import UnigramTableScorer

from oracles import finite_difference_error, random_clp_problem


def _fv(d, dim=1):
    idx = np.array(sorted(d), dtype=np.int64)
    return FeatureVector(idx, np.array([d[i] for i in idx], dtype=np.int64), dim)


@pytest.fixture
def unit_model():
    return ClassifierParams(np.array([[1.0], [-1.0]]), np.zeros(2))


def test_empty_text_features():
    assert featurize("").nnz == 0


def test_ab_features():
    # indices pinned by the pure-Python FNV-1a oracle in tests/oracles.py
    fv = featurize("a b")
    assert fv.indices.tolist() == [126092, 127397, 199057]
    assert fv.counts.tolist() == [1, 1, 1]


def test_masking_identical(default_lexicon):
    a = featurize("the jew ran", sgt_masking=True, lexicon=default_lexicon)
    b = featurize("the muslim ran", sgt_masking=True, lexicon=default_lexicon)
    assert a == b
    assert featurize("the jew ran") != featurize("the muslim ran")


def test_masking_needs_lexicon():
    with pytest.raises(ValueError, match="lexicon"):
        featurize("x", sgt_masking=True)


def test_repeated_tokens_count():
    fv = featurize("a a a", dim=2 ** 18)
    assert sorted(fv.counts.tolist()) == [2, 3]


def test_logits_examples(unit_model):
    assert logits(ClassifierParams.zeros(1), _fv({0: 1})).tolist() == [0.0, 0.0]
    assert logits(unit_model, _fv({0: 1})).tolist() == [1.0, -1.0]
    biased = ClassifierParams(np.array([[1.0], [-1.0]]), np.array([0.3, -0.7]))
    assert logits(biased, _fv({})).tolist() == [0.3, -0.7]


def test_predict_examples(unit_model):
    assert predict(ClassifierParams.zeros(1), _fv({0: 1})) == (0, 0.5)
    label, p = predict(unit_model, _fv({0: 1}))
    assert label == 1 and p == pytest.approx(math.e / (math.e + math.exp(-1)), abs=1e-12)
    assert p == pytest.approx(0.8808, abs=1e-4)
    strong = ClassifierParams(np.array([[-10.0], [10.0]]), np.zeros(2))
    label, p = predict(strong, _fv({0: 1}))
    assert label == 0 and 1 - p == pytest.approx(2.06e-9, rel=1e-2)


def test_logit_columns():
    assert (HATE, NONHATE) == (0, 1)


def test_zero_params_loss():
    batch = [("a", _fv({0: 2}, 3), 1), ("b", _fv({1: 1}, 3), 0)]
    cf = {"a": [_fv({2: 1}, 3)]}
    assert clp_loss(ClassifierParams.zeros(3), batch, cf, lam=1.0) == pytest.approx(math.log(2), abs=1e-15)


def test_worked_loss(unit_model):
    batch = [("x", _fv({0: 1}), 0)]
    cf = {"x": [_fv({})]}
    t = clp_terms(unit_model, batch, cf, lam=0.2)
    assert t.ce == pytest.approx(-math.log(1 - 0.8807970779778823), abs=1e-12)
    assert t.pair == pytest.approx(0.4, abs=1e-15)
    assert t.loss == pytest.approx(2.5269, abs=1e-4)


def test_lambda_zero_is_cross_entropy(unit_model):
    batch = [("x", _fv({0: 1}), 0), ("y", _fv({0: 2}), 1)]
    cf = {"x": [_fv({})], "y": [_fv({0: 1})]}
    assert clp_loss(unit_model, batch, cf, lam=0.0) == clp_loss(unit_model, batch, {}, lam=0.0)
    gw0, gb0 = clp_gradient(unit_model, batch, cf, lam=0.0)
    gw1, gb1 = clp_gradient(unit_model, batch, {}, lam=0.0)
    assert np.array_equal(gw0, gw1) and np.array_equal(gb0, gb1)


def test_bias_gradient_symmetry():
    x = _fv({0: 1, 2: 3}, 4)
    batch = [("a", x, 1), ("b", x, 0), ("c", x, 1), ("d", x, 0)]
    _, gb = clp_gradient(ClassifierParams.zeros(4), batch, {}, lam=0.2)
    assert np.array_equal(gb, np.zeros(2))


def test_raw_sum_mode(unit_model):
    batch = [("x", _fv({0: 1}), 0), ("y", _fv({0: 1}), 0)]
    cf = {"x": [_fv({}), _fv({})]}
    mean = clp_terms(unit_model, batch, cf, lam=1.0)
    raw = clp_terms(unit_model, batch, cf, lam=1.0, raw_sum=True)
    assert mean.pair == pytest.approx(2.0 / 2)
    assert raw.pair == pytest.approx(2.0 * 2)


@pytest.mark.parametrize("seed", range(12))
@pytest.mark.parametrize("lam", [0.0, 0.2, 1.0])
def test_gradient_matches_finite_differences(seed, lam):
    rng = np.random.default_rng(seed)
    params, batch, cf = random_clp_problem(rng, lam)
    assert finite_difference_error(params, batch, cf, lam) < 1e-4


def test_gradient_with_l2():
    rng = np.random.default_rng(99)
    params, batch, cf = random_clp_problem(rng, 0.2)
    assert finite_difference_error(params, batch, cf, 0.2, l2=0.05) < 1e-4


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 5), st.floats(0, 5))
def test_loss_monotone_in_lambda(seed, a, b):
    params, batch, cf = random_clp_problem(np.random.default_rng(seed), 0.0, margin=0.0)
    lo, hi = sorted((a, b))
    assert clp_loss(params, batch, cf, lo) <= clp_loss(params, batch, cf, hi)


@pytest.mark.parametrize("seed", range(5))
def test_full_batch_descent_decreases_loss(seed):
    rng = np.random.default_rng(seed)
    params, batch, cf = random_clp_problem(rng, 0.2, dim=8, max_docs=6)
    prev = clp_loss(params, batch, cf, 0.2)
    for _ in range(10):
        gW, gb = clp_gradient(params, batch, cf, 0.2)
        params.W -= 1e-3 * gW
        params.b -= 1e-3 * gb
        cur = clp_loss(params, batch, cf, 0.2)
        assert cur <= prev + 1e-12
        prev = cur


def test_mask_invariance(default_lexicon):
    d = Document("d", "those gay people are here")
    (m,) = [m for m in d.mentions(default_lexicon) if m.sgt.text == "gay"]
    x = featurize(d.text, sgt_masking=True, lexicon=default_lexicon)
    cfs = [featurize(t, sgt_masking=True, lexicon=default_lexicon)
           for _, t in substitute_mention(d, m, default_lexicon)]
    rng = np.random.default_rng(0)
    params = ClassifierParams(rng.normal(size=(2, x.dim)), rng.normal(size=2), sgt_masking=True)
    z = logits(params, x)
    assert all(np.array_equal(logits(params, c), z) for c in cfs)
    assert clp_terms(params, [("d", x, 1)], {"d": cfs}, lam=1.0).pair == 0.0


def _separable():
    texts = [f"you are vile filth number{i}" for i in range(10)] + [f"have a lovely day number{i}" for i in range(10)]
    return from_texts(texts, [1] * 10 + [0] * 10)


def test_separable_fixture_trains_to_perfect_accuracy(default_lexicon):
    c = _separable()
    params, log = train(c, default_lexicon, None, TrainConfig(lam=0.0, strategy=None, epochs=200, dim=2 ** 12))
    assert accuracy(params, c) == 1.0
    assert log.epochs[-1].loss < log.epochs[0].loss


def test_training_is_deterministic(stereo_lexicon):
    from cfair.synth import stereotype_corpus
    c = stereotype_corpus(80, 2)
    scorer = UnigramTableScorer({})
    cfg = TrainConfig(epochs=4, dim=2 ** 12)
    a, la = train(c, stereo_lexicon, scorer, cfg)
    b, lb = train(c, stereo_lexicon, scorer, cfg)
    assert a.W.tobytes() == b.W.tobytes() and a.b.tobytes() == b.b.tobytes()
    assert [r.loss for r in la.epochs] == [r.loss for r in lb.epochs]


def test_neg_on_unlabeled(default_lexicon):
    c = from_texts(["the gay man"])
    with pytest.raises((TrainingError, ValueError)):
        train(c, default_lexicon, None, TrainConfig(strategy="NEG", epochs=1, dim=64))


def test_neg_pairs_only_nonhate(stereo_lexicon):
    from cfair.synth import stereotype_corpus
    c = stereotype_corpus(60, 1)
    _, log = train(c, stereo_lexicon, None, TrainConfig(strategy="NEG", epochs=2, dim=2 ** 10))
    assert log.n_pairs_hate == 0 and log.n_pairs_nonhate > 0
    assert all(r.pair_loss_hate == 0.0 for r in log.epochs)
    assert all(r.pair_loss_nonhate > 0.0 for r in log.epochs)


def test_counterfactual_rows_unmasked(default_lexicon):
    c = from_texts(["the gay man"], [0])
    d = c[0]
    m = d.mentions(default_lexicon)[0]
    cfg = TrainConfig(sgt_masking=True, strategy=None, dim=2 ** 12)
    from cfair.counterfactuals import generate
    s = generate(d, m, default_lexicon, None, "ALL")
    data = build_training_data(c, default_lexicon, [s], cfg)
    assert data.cf_ptr[-1] == len(default_lexicon) - 1
    assert len({tuple(data.C.vector(i).indices) for i in range(len(data.C))}) > 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_loss_raises(default_lexicon):
    c = _separable()
    with pytest.raises(TrainingError, match="non-finite"):
        train(c, default_lexicon, None, TrainConfig(lam=0.0, strategy=None, epochs=5, learning_rate=1e308,
                                                    dim=2 ** 8))


@pytest.mark.parametrize("suffix", [".json", ".bin"])
def test_model_roundtrip(tmp_path, suffix):
    rng = np.random.default_rng(0)
    params = ClassifierParams(rng.normal(size=(2, 16)), rng.normal(size=2), sgt_masking=True)
    p = tmp_path / f"m{suffix}"
    params.save(p)
    back = ClassifierParams.load(p)
    assert np.array_equal(back.W, params.W) and np.array_equal(back.b, params.b) and back.sgt_masking


def test_model_version_checked(tmp_path):
    p = tmp_path / "m.json"
    p.write_text('{"version": 99, "D": 1, "masking": false, "W": [[0], [0]], "b": [0, 0]}')
    with pytest.raises(ValueError, match="version"):
        ClassifierParams.load(p)


def test_train_config_defaults_and_mapping():
    cfg = TrainConfig()
    assert cfg.lam == 0.2
    assert TrainConfig.from_dict({"lambda": 1.5}).lam == 1.5
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError, match="unknown"):
        TrainConfig.from_dict({"lr": 1})
    with pytest.raises(ValueError):
        TrainConfig(lam=-1)


def test_training_log_csv(tmp_path, stereo_lexicon):
    from cfair.synth import stereotype_corpus
    _, log = train(stereotype_corpus(30, 0), stereo_lexicon, None, TrainConfig(strategy="ALL", epochs=3, dim=256))
    p = tmp_path / "log.csv"
    log.write_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "epoch,loss,ce_loss,pair_loss"
    assert len(lines) == 4
    assert 0 < log.summary()["pair_share"] < 1


def test_fit_empty():
    from cfair.classifier import TrainingData, SparseRows
    empty = SparseRows(np.zeros(1, np.int64), np.zeros(0, np.int64), np.zeros(0), 4)
    with pytest.raises(TrainingError, match="no training"):
        fit(TrainingData(empty, np.zeros(0, np.int64), empty, np.zeros(1, np.int64), np.zeros(0)),
            TrainConfig(dim=4))
