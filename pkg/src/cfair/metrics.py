"""Counterfactual token fairness and per-SGT group fairness statistics."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .classifier import ClassifierParams, FeatureHasher, featurize_corpus, predict_corpus
from .corpus import Document
from .counterfactuals import CounterfactualSet
from .lexicon import SgtLexicon

REPORT_COLUMNS = ["model", "strategy", "lambda", "accuracy", "f1", "ctf_absdiff", "ctf_cosine",
                  "std_tp", "std_tn", "std_fpr"]


def _pair_logits(params: ClassifierParams, cfsets: Sequence[CounterfactualSet], lexicon):
    """Logits of each original and of each of its counterfactuals."""
    sets = [s for s in cfsets if s.entries]
    if not sets:
        raise ValueError("no counterfactual pairs: every set is empty")
    hasher = FeatureHasher(params.dim)
    orig = featurize_corpus(params, [s.doc for s in sets], lexicon, hasher).logits(params.W, params.b)
    texts = [e.text for s in sets for e in s.entries]
    cf = featurize_corpus(params, texts, lexicon, hasher).logits(params.W, params.b)
    owner = np.repeat(np.arange(len(sets)), [len(s.entries) for s in sets])
    return orig, cf, owner


def ctf_absdiff(params: ClassifierParams, cfsets: Sequence[CounterfactualSet], lexicon: SgtLexicon | None = None,
                raw_sum: bool = False) -> float:
    """Mean (or, with ``raw_sum``, total) L1 distance between paired logits."""
    orig, cf, owner = _pair_logits(params, cfsets, lexicon)
    dist = np.abs(orig[owner] - cf).sum(axis=1)
    return float(dist.sum() if raw_sum else dist.mean())


def cosine_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cosine; zero vs zero counts as 1, zero vs nonzero as 0."""
    sa = (a * a).sum(axis=1)
    sb = (b * b).sum(axis=1)
    out = np.zeros(len(a))
    both = (sa > 0) & (sb > 0)
    out[both] = (a[both] * b[both]).sum(axis=1) / np.sqrt(sa[both] * sb[both])
    out[(a == b).all(axis=1)] = 1.0
    return np.clip(out, -1.0, 1.0)


def ctf_cosine(params: ClassifierParams, cfsets: Sequence[CounterfactualSet], lexicon: SgtLexicon | None = None) -> float:
    """Average over sentences of the average cosine between paired logits."""
    orig, cf, owner = _pair_logits(params, cfsets, lexicon)
    cos = cosine_rows(orig[owner], cf)
    per_sentence = np.bincount(owner, weights=cos) / np.bincount(owner)
    return float(per_sentence.mean())


@dataclass
class SgtRates:
    support: int
    n_hate: int
    n_nonhate: int
    tp_rate: Optional[float]
    tn_rate: Optional[float]
    fpr: Optional[float]

    def to_json(self) -> dict:
        return {"support": self.support, "n_hate": self.n_hate, "n_nonhate": self.n_nonhate,
                "tp_rate": self.tp_rate, "tn_rate": self.tn_rate, "fpr": self.fpr}


def _rate(num, den):
    return num / den if den else None


def rates_from_predictions(docs: Sequence[Document], pred: np.ndarray, lexicon: SgtLexicon,
                           assume_nonhate: bool = False) -> dict[str, SgtRates]:
    tally: dict[str, list[int]] = {}  # surface -> [tp, fn, tn, fp]
    for d, p in zip(docs, pred):
        label = 0 if assume_nonhate else d.label
        if label is None:
            raise ValueError(f"document {d.id!r} is unlabeled")
        for surface in sorted({m.sgt.text for m in d.mentions(lexicon)}):
            t = tally.setdefault(surface, [0, 0, 0, 0])
            if label == 1:
                t[0 if p == 1 else 1] += 1
            else:
                t[3 if p == 1 else 2] += 1
    out = {}
    for surface in sorted(tally):
        tp, fn, tn, fp = tally[surface]
        out[surface] = SgtRates(tp + fn + tn + fp, tp + fn, tn + fp,
                                _rate(tp, tp + fn), _rate(tn, tn + fp), _rate(fp, fp + tn))
    return out


def per_sgt_rates(params: ClassifierParams, test: Iterable[Document], lexicon: SgtLexicon) -> dict[str, SgtRates]:
    """TP/TN/FP rates per SGT; a document counts for every SGT it mentions."""
    docs = list(test)
    for d in docs:
        if d.label is None:
            raise ValueError(f"document {d.id!r} is unlabeled")
    return rates_from_predictions(docs, predict_corpus(params, docs, lexicon), lexicon)


def population_std(values: Sequence[Optional[float]]) -> Optional[float]:
    vals = [v for v in values if v is not None]
    if len(vals) < 2:
        return None
    return float(np.std(vals))


def classification_report(params: ClassifierParams, test: Iterable[Document],
                          lexicon: SgtLexicon | None = None) -> tuple[float, float]:
    """Accuracy and positive-class (hate) F1."""
    docs = list(test)
    if not docs:
        raise ValueError("empty test set")
    y = np.array([d.label for d in docs])
    if any(v is None for v in y):
        raise ValueError("classification report needs labeled documents")
    pred = predict_corpus(params, docs, lexicon)
    return accuracy_f1(y.astype(np.int64), pred)


def accuracy_f1(y: np.ndarray, pred: np.ndarray) -> tuple[float, float]:
    tp = int(((pred == 1) & (y == 1)).sum())
    fp = int(((pred == 1) & (y == 0)).sum())
    fn = int(((pred == 0) & (y == 1)).sum())
    acc = float((pred == y).mean())
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return acc, f1


@dataclass
class FairnessReport:
    ctf_absdiff: Optional[float]
    ctf_cosine: Optional[float]
    per_sgt: dict[str, SgtRates]
    fpr_per_sgt: dict[str, SgtRates]
    std_tp: Optional[float]
    std_tn: Optional[float]
    std_fpr: Optional[float]
    accuracy: Optional[float]
    f1: Optional[float]
    zero_support: list[str] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "ctf_absdiff": self.ctf_absdiff,
            "ctf_cosine": self.ctf_cosine,
            "std_tp": self.std_tp,
            "std_tn": self.std_tn,
            "std_fpr": self.std_fpr,
            "accuracy": self.accuracy,
            "f1": self.f1,
            "per_sgt": {k: v.to_json() for k, v in self.per_sgt.items()},
            "fpr_per_sgt": {k: v.to_json() for k, v in self.fpr_per_sgt.items()},
            "zero_support": self.zero_support,
            "metadata": self.metadata,
        }

    def csv_row(self, model: str = "", strategy: str = "", lam: float | None = None) -> dict:
        return {"model": model, "strategy": strategy, "lambda": lam, "accuracy": self.accuracy,
                "f1": self.f1, "ctf_absdiff": self.ctf_absdiff, "ctf_cosine": self.ctf_cosine,
                "std_tp": self.std_tp, "std_tn": self.std_tn, "std_fpr": self.std_fpr}


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def rows_to_csv(rows: Sequence[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def equality_of_odds_report(params: ClassifierParams, test: Sequence[Document], perturbed: Sequence[Document],
                            fpr_corpus: Sequence[Document], lexicon: SgtLexicon,
                            cfsets: Sequence[CounterfactualSet] | None = None) -> FairnessReport:
    """Group fairness over test + perturbed data, FPR spread on an assumed non-hate corpus."""
    test = list(test)
    group_docs = test + list(perturbed)
    for d in group_docs:
        if d.label is None:
            raise ValueError(f"document {d.id!r} is unlabeled")
    per_sgt = rates_from_predictions(group_docs, predict_corpus(params, group_docs, lexicon), lexicon)
    fpr_docs = list(fpr_corpus)
    fpr_rates = rates_from_predictions(fpr_docs, predict_corpus(params, fpr_docs, lexicon), lexicon,
                                       assume_nonhate=True)
    seen = set(per_sgt) | set(fpr_rates)
    zero = [s for s in lexicon.surfaces if s not in seen]
    acc = f1 = None
    if test:
        acc, f1 = classification_report(params, test, lexicon)
    ctf_a = ctf_c = None
    if cfsets and any(s.entries for s in cfsets):
        ctf_a = ctf_absdiff(params, cfsets, lexicon)
        ctf_c = ctf_cosine(params, cfsets, lexicon)
    return FairnessReport(
        ctf_absdiff=ctf_a, ctf_cosine=ctf_c, per_sgt=per_sgt, fpr_per_sgt=fpr_rates,
        std_tp=population_std([r.tp_rate for r in per_sgt.values()]),
        std_tn=population_std([r.tn_rate for r in per_sgt.values()]),
        std_fpr=population_std([r.fpr for r in fpr_rates.values()]),
        accuracy=acc, f1=f1, zero_support=zero,
        metadata={"std": "population", "sgt_weighting": "unweighted",
                  "n_test": len(test), "n_perturbed": len(group_docs) - len(test), "n_fpr": len(fpr_docs)},
    )
