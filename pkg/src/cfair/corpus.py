"""Labeled text collections, SGT-aware splits and stratified folds."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Optional, Sequence

import numpy as np

from .lexicon import SgtLexicon, SgtMention, detect_in_tokens, tokenize


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class Document:
    id: str
    text: str
    label: Optional[int] = None
    tokens: tuple[str, ...] = field(default=None, compare=False, repr=False)
    _mentions: dict = field(default_factory=dict, compare=False, repr=False, init=False)

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise CorpusError("document id must be a non-empty string")
        if not isinstance(self.text, str) or not self.text:
            raise CorpusError(f"document {self.id!r}: empty text")
        if self.label is not None and self.label not in (0, 1):
            raise CorpusError(f"document {self.id!r}: label must be 0 or 1, got {self.label!r}")
        if self.tokens is None:
            object.__setattr__(self, "tokens", tuple(tokenize(self.text)))

    def mentions(self, lexicon: SgtLexicon) -> list[SgtMention]:
        found = self._mentions.get(lexicon)
        if found is None:
            found = self._mentions[lexicon] = detect_in_tokens(self.tokens, lexicon)
        return list(found)


class Corpus(Sequence):
    """Ordered, immutable collection of documents with unique ids."""

    def __init__(self, docs: Iterable[Document], source: str = "<memory>", loaded_at: str | None = None):
        self.docs = tuple(docs)
        self.source = source
        self.loaded_at = loaded_at or datetime.now(timezone.utc).isoformat()
        self._index = {}
        for i, d in enumerate(self.docs):
            if d.id in self._index:
                raise CorpusError(f"duplicate document id {d.id!r}")
            self._index[d.id] = i

    def __len__(self):
        return len(self.docs)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return Corpus(self.docs[i], self.source, self.loaded_at)
        return self.docs[i]

    def __iter__(self):
        return iter(self.docs)

    def __repr__(self):
        return f"Corpus({len(self)} docs from {self.source})"

    def get(self, doc_id: str) -> Document:
        return self.docs[self._index[doc_id]]

    @property
    def ids(self) -> list[str]:
        return [d.id for d in self.docs]

    @property
    def labeled(self) -> bool:
        return all(d.label is not None for d in self.docs)

    def derive(self, docs: Iterable[Document]) -> "Corpus":
        return Corpus(docs, self.source, self.loaded_at)


def from_texts(texts: Sequence[str], labels: Sequence[int] | None = None, prefix: str = "d") -> Corpus:
    labels = labels if labels is not None else [None] * len(texts)
    return Corpus(Document(f"{prefix}{i}", t, lab) for i, (t, lab) in enumerate(zip(texts, labels)))


def _parse_label(raw, where):
    if raw is None or raw == "":
        return None
    if isinstance(raw, bool):
        raise CorpusError(f"{where}: label must be 0 or 1, got {raw!r}")
    try:
        value = int(raw)
    except (TypeError, ValueError):
        raise CorpusError(f"{where}: label must be 0 or 1, got {raw!r}") from None
    if value not in (0, 1) or (isinstance(raw, float) and raw != value):
        raise CorpusError(f"{where}: label must be 0 or 1, got {raw!r}")
    return value


def _make_doc(doc_id, text, label, where):
    if not isinstance(doc_id, str):
        raise CorpusError(f"{where}: field 'id' must be a string")
    if not isinstance(text, str):
        raise CorpusError(f"{where}: field 'text' must be a string")
    try:
        return Document(doc_id, text, _parse_label(label, where))
    except CorpusError as e:
        raise CorpusError(f"{where}: {e}") from None


def _finish(docs, path):
    seen = set()
    for where, d in docs:
        if d.id in seen:
            raise CorpusError(f"{where}: duplicate id {d.id!r}")
        seen.add(d.id)
    return Corpus([d for _, d in docs], source=str(path))


def load_jsonl(path) -> Corpus:
    docs = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"{where}: malformed JSON ({e.msg})") from None
            if not isinstance(obj, dict):
                raise CorpusError(f"{where}: expected a JSON object")
            for name in ("id", "text"):
                if name not in obj:
                    raise CorpusError(f"{where}: missing required field {name!r}")
            docs.append((where, _make_doc(obj["id"], obj["text"], obj.get("label"), where)))
    return _finish(docs, path)


def load_csv(path) -> Corpus:
    docs = []
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        missing = {"id", "text"} - set(reader.fieldnames or ())
        if missing:
            raise CorpusError(f"{path}: missing column(s) {sorted(missing)}")
        for row in reader:
            where = f"{path}:{reader.line_num}"
            docs.append((where, _make_doc(row["id"], row["text"], row.get("label"), where)))
    return _finish(docs, path)


def load_corpus(path) -> Corpus:
    return load_csv(path) if str(path).lower().endswith(".csv") else load_jsonl(path)


def write_jsonl(corpus: Iterable[Document], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for d in corpus:
            obj = {"id": d.id, "text": d.text}
            if d.label is not None:
                obj["label"] = d.label
            f.write(json.dumps(obj, ensure_ascii=False) + "\n")


def filter_by_sgt_count(corpus: Corpus, lexicon: SgtLexicon, k: int) -> Corpus:
    if k < 0:
        raise ValueError("k must be >= 0")
    return corpus.derive(d for d in corpus if len(d.mentions(lexicon)) == k)


def _group_key(doc: Document, lexicon: SgtLexicon) -> str:
    return "|".join(sorted({m.sgt.text for m in doc.mentions(lexicon)}))


def split_by_sgt_ratio(corpus: Corpus, lexicon: SgtLexicon, train_fraction: float,
                       seed: int) -> tuple[Corpus, Corpus]:
    """Split so every SGT-set group keeps (close to) ``train_fraction`` in train.

    Each group gets ``floor(n * fraction)`` training documents; the
    leftover needed to reach ``round(N * fraction)`` goes one each to the
    groups with a fractional share, largest groups first, then by key.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    if len(corpus) == 0:
        raise CorpusError("cannot split an empty corpus")
    groups: dict[str, list[int]] = {}
    for i, d in enumerate(corpus):
        groups.setdefault(_group_key(d, lexicon), []).append(i)

    rng = np.random.default_rng(seed)
    keys = sorted(groups)
    quota = {}
    fractional = []
    for key in keys:
        exact = len(groups[key]) * train_fraction
        base = math.floor(exact + 1e-9)
        quota[key] = base
        if exact - base > 1e-9:
            fractional.append(key)
    target = math.floor(len(corpus) * train_fraction + 0.5)
    leftover = target - sum(quota.values())
    fractional.sort(key=lambda k: (-len(groups[k]), k))
    for key in fractional[:max(leftover, 0)]:
        quota[key] += 1

    train_idx, test_idx = [], []
    for key in keys:
        members = np.array(groups[key])
        rng.shuffle(members)
        train_idx.extend(members[:quota[key]].tolist())
        test_idx.extend(members[quota[key]:].tolist())
    train_idx.sort()
    test_idx.sort()
    return (corpus.derive(corpus[i] for i in train_idx),
            corpus.derive(corpus[i] for i in test_idx))


def stratified_folds(corpus: Corpus, n_folds: int, seed: int) -> list[tuple[Corpus, Corpus]]:
    """Label-stratified ``(train, validation)`` pairs that partition the corpus."""
    if n_folds < 2:
        raise CorpusError("n_folds must be >= 2")
    if n_folds > len(corpus):
        raise CorpusError(f"{n_folds} folds for {len(corpus)} documents")
    if not corpus.labeled:
        raise CorpusError("stratified folds need every document labeled")
    rng = np.random.default_rng(seed)
    order = []
    for label in (1, 0):
        members = np.array([i for i, d in enumerate(corpus) if d.label == label], dtype=np.int64)
        if len(members) < 2:
            raise CorpusError(f"label {label} has {len(members)} documents; stratification needs at least 2")
        rng.shuffle(members)
        order.extend(members.tolist())
    fold_of = np.empty(len(corpus), dtype=np.int64)
    fold_of[order] = np.arange(len(order)) % n_folds
    out = []
    for f in range(n_folds):
        out.append((corpus.derive(d for i, d in enumerate(corpus) if fold_of[i] != f),
                    corpus.derive(d for i, d in enumerate(corpus) if fold_of[i] == f)))
    return out
