"""Two-logit hashed-feature classifier trained with counterfactual logit pairing.

Logit column 0 scores the hate class and column 1 the non-hate class;
dataset labels use 1 = hate, 0 = non-hate.

Objective for a batch B (mean mode)::

    1/|B| sum_i [ CE(softmax(g(x_i)), y_i) + lam/m_i sum_j |g(x_i) - g(x'_ij)|_1 ] + l2/2 |W|^2

with ``g(x) = W x + b``. Its gradient w.r.t. W is accumulated from sparse
rows: ``(softmax - onehot) x`` for the cross-entropy part and
``lam * sign(g(x) - g(x')) (x - x')`` for each pair, using sign(0) = 0.
"""
from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from . import kernels
from .corpus import Corpus, Document
from .counterfactuals import CounterfactualSet, GenerateOptions, Strategy, generate_corpus
from .lexicon import SgtLexicon, detect_in_tokens, tokenize

HATE, NONHATE = 0, 1
MASK_TOKEN = "<sgt>"
DEFAULT_DIM = 2 ** 18
MODEL_VERSION = 1
_BIN_MAGIC = b"CFAIRMDL"


class TrainingError(RuntimeError):
    pass


def label_column(label: int) -> int:
    return HATE if label == 1 else NONHATE


# -- features -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FeatureVector:
    indices: np.ndarray
    counts: np.ndarray
    dim: int

    def __eq__(self, other):
        if not isinstance(other, FeatureVector):
            return NotImplemented
        return (self.dim == other.dim and np.array_equal(self.indices, other.indices)
                and np.array_equal(self.counts, other.counts))

    __hash__ = None

    def __post_init__(self):
        if len(self.indices) and (self.indices.min() < 0 or self.indices.max() >= self.dim):
            raise ValueError("feature index out of range")

    @property
    def nnz(self) -> int:
        return len(self.indices)

    def to_dict(self) -> dict[int, int]:
        return {int(i): int(c) for i, c in zip(self.indices, self.counts)}

    def dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.indices] = self.counts
        return out


def fnv1a64(data: bytes) -> int:
    return int(kernels.fnv1a64(np.frombuffer(data, dtype=np.uint8), np.array([0, len(data)]))[0])


def mask_tokens(tokens: Sequence[str], lexicon: SgtLexicon) -> list[str]:
    out = list(tokens)
    for m in reversed(detect_in_tokens(tokens, lexicon)):
        out[m.start:m.end] = [MASK_TOKEN]
    return out


def feature_strings(tokens: Sequence[str]) -> list[str]:
    return list(tokens) + [a + "\x1f" + b for a, b in zip(tokens, tokens[1:])]


class FeatureHasher:
    """Unigram + bigram FNV-1a hashing with a per-instance string cache."""

    def __init__(self, dim: int = DEFAULT_DIM):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = int(dim)
        self._cache: dict[str, int] = {}

    def _hash_new(self, strings):
        blobs = [s.encode("utf-8") for s in strings]
        offsets = np.zeros(len(blobs) + 1, dtype=np.int64)
        np.cumsum([len(b) for b in blobs], out=offsets[1:])
        buf = np.frombuffer(b"".join(blobs), dtype=np.uint8) if offsets[-1] else np.zeros(0, np.uint8)
        hashes = kernels.fnv1a64(buf, offsets) % np.uint64(self.dim)
        self._cache.update(zip(strings, hashes.astype(np.int64).tolist()))

    def rows(self, token_lists: Sequence[Sequence[str]]) -> "SparseRows":
        feats = [feature_strings(t) for t in token_lists]
        cache = self._cache
        new = list(dict.fromkeys(s for f in feats for s in f if s not in cache))
        if new:
            self._hash_new(new)
        indptr = [0]
        indices, data = [], []
        for f in feats:
            idx, cnt = np.unique(np.array([cache[s] for s in f], dtype=np.int64), return_counts=True)
            indices.append(idx)
            data.append(cnt.astype(np.float64))
            indptr.append(indptr[-1] + len(idx))
        return SparseRows(np.array(indptr, dtype=np.int64),
                          np.concatenate(indices) if indices else np.zeros(0, np.int64),
                          np.concatenate(data) if data else np.zeros(0),
                          self.dim)


def featurize_tokens(tokens, dim=DEFAULT_DIM, sgt_masking=False, lexicon=None, hasher=None) -> FeatureVector:
    if sgt_masking:
        if lexicon is None:
            raise ValueError("SGT masking needs a lexicon")
        tokens = mask_tokens(tokens, lexicon)
    hasher = hasher or FeatureHasher(dim)
    return hasher.rows([tokens]).vector(0)


def featurize(text: str, dim: int = DEFAULT_DIM, sgt_masking: bool = False,
              lexicon: SgtLexicon | None = None) -> FeatureVector:
    """Hashed unigram and bigram counts of ``text``."""
    return featurize_tokens(tokenize(text), dim, sgt_masking, lexicon)


@dataclass
class SparseRows:
    """CSR block of feature rows sharing one dimension."""
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    dim: int

    def __len__(self):
        return len(self.indptr) - 1

    @classmethod
    def from_vectors(cls, vectors: Sequence[FeatureVector], dim: int | None = None) -> "SparseRows":
        if dim is None:
            dim = vectors[0].dim if vectors else DEFAULT_DIM
        for v in vectors:
            if v.dim != dim:
                raise ValueError(f"feature dimension mismatch: {v.dim} != {dim}")
        indptr = np.zeros(len(vectors) + 1, dtype=np.int64)
        np.cumsum([v.nnz for v in vectors], out=indptr[1:])
        indices = np.concatenate([v.indices for v in vectors]).astype(np.int64) if vectors else np.zeros(0, np.int64)
        data = np.concatenate([v.counts for v in vectors]).astype(np.float64) if vectors else np.zeros(0)
        return cls(indptr, indices, data, dim)

    def vector(self, i: int) -> FeatureVector:
        s, e = self.indptr[i], self.indptr[i + 1]
        return FeatureVector(self.indices[s:e].copy(), self.data[s:e].astype(np.int64), self.dim)

    def logits(self, W, b, rows=None) -> np.ndarray:
        rows = np.arange(len(self), dtype=np.int64) if rows is None else np.asarray(rows, dtype=np.int64)
        return kernels.csr_rows_logits(self.indptr, self.indices, self.data, rows, W, b)

    def scatter(self, coef, rows=None) -> np.ndarray:
        rows = np.arange(len(self), dtype=np.int64) if rows is None else np.asarray(rows, dtype=np.int64)
        return kernels.csr_rows_scatter(self.indptr, self.indices, self.data, rows,
                                        np.ascontiguousarray(coef, dtype=np.float64), self.dim)


# -- parameters -----------------------------------------------------------

@dataclass
class ClassifierParams:
    W: np.ndarray
    b: np.ndarray
    sgt_masking: bool = False

    def __post_init__(self):
        self.W = np.ascontiguousarray(self.W, dtype=np.float64)
        self.b = np.ascontiguousarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.W.shape[0] != 2 or self.b.shape != (2,):
            raise ValueError("W must be 2 x D and b of length 2")

    @classmethod
    def zeros(cls, dim: int = DEFAULT_DIM, sgt_masking: bool = False) -> "ClassifierParams":
        return cls(np.zeros((2, dim)), np.zeros(2), sgt_masking)

    @property
    def dim(self) -> int:
        return self.W.shape[1]

    def copy(self) -> "ClassifierParams":
        return ClassifierParams(self.W.copy(), self.b.copy(), self.sgt_masking)

    def all_finite(self) -> bool:
        return bool(np.isfinite(self.W).all() and np.isfinite(self.b).all())

    # -- persistence

    def to_json(self) -> dict:
        return {"version": MODEL_VERSION, "D": self.dim, "masking": self.sgt_masking,
                "W": [self.W[0].tolist(), self.W[1].tolist()], "b": self.b.tolist()}

    @classmethod
    def from_json(cls, obj: Mapping) -> "ClassifierParams":
        if obj.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {obj.get('version')!r}")
        W = np.array(obj["W"], dtype=np.float64)
        if W.shape != (2, int(obj["D"])):
            raise ValueError("model W does not match D")
        return cls(W, np.array(obj["b"], dtype=np.float64), bool(obj["masking"]))

    def save(self, path) -> None:
        path = str(path)
        if path.endswith(".bin"):
            with open(path, "wb") as f:
                f.write(_BIN_MAGIC + struct.pack("<IQB", MODEL_VERSION, self.dim, int(self.sgt_masking)))
                f.write(self.W.astype("<f8").tobytes())
                f.write(self.b.astype("<f8").tobytes())
        else:
            with open(path, "w", encoding="utf-8") as f:
                json.dump(self.to_json(), f)
                f.write("\n")

    @classmethod
    def load(cls, path) -> "ClassifierParams":
        path = str(path)
        if path.endswith(".bin"):
            with open(path, "rb") as f:
                raw = f.read()
            if raw[:8] != _BIN_MAGIC:
                raise ValueError(f"{path}: not a model file")
            version, dim, masking = struct.unpack_from("<IQB", raw, 8)
            if version != MODEL_VERSION:
                raise ValueError(f"{path}: unsupported model version {version}")
            off = 8 + struct.calcsize("<IQB")
            W = np.frombuffer(raw, dtype="<f8", count=2 * dim, offset=off).reshape(2, dim)
            b = np.frombuffer(raw, dtype="<f8", count=2, offset=off + 16 * dim)
            return cls(W.astype(np.float64), b.astype(np.float64), bool(masking))
        with open(path, encoding="utf-8") as f:
            return cls.from_json(json.load(f))


def _as_rows(x, dim) -> SparseRows:
    if isinstance(x, SparseRows):
        rows = x
    elif isinstance(x, FeatureVector):
        rows = SparseRows.from_vectors([x], x.dim)
    else:
        rows = SparseRows.from_vectors(list(x), dim)
    if rows.dim != dim:
        raise ValueError(f"feature dimension {rows.dim} does not match model dimension {dim}")
    return rows


def logits(params: ClassifierParams, x) -> np.ndarray:
    """``W x + b``; a single vector gives shape (2,), many give (n, 2)."""
    out = _as_rows(x, params.dim).logits(params.W, params.b)
    return out[0] if isinstance(x, FeatureVector) else out


def softmax2(z: np.ndarray) -> np.ndarray:
    z = np.atleast_2d(z)
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    return e / e.sum(axis=1, keepdims=True)


def labels_from_logits(z: np.ndarray) -> np.ndarray:
    z = np.atleast_2d(z)
    return (z[:, HATE] > z[:, NONHATE]).astype(np.int64)


def predict(params: ClassifierParams, x) -> tuple[int, float]:
    """Predicted label and its probability; an exact tie predicts non-hate."""
    z = logits(params, x)
    p = softmax2(z)[0]
    label = int(labels_from_logits(z)[0])
    return label, float(p[label_column(label)])


# -- objective ------------------------------------------------------------

@dataclass
class _Terms:
    loss: float
    ce: float
    pair: float
    pair_hate: float
    pair_nonhate: float
    l2: float
    gW: Optional[np.ndarray] = None
    gb: Optional[np.ndarray] = None


def _objective(params, X: SparseRows, y: np.ndarray, rows: np.ndarray, C: SparseRows, cf_ptr: np.ndarray,
               lam: float, l2: float, raw_sum: bool, want_grad: bool) -> _Terms:
    rows = np.asarray(rows, dtype=np.int64)
    n = len(rows)
    z = X.logits(params.W, params.b, rows)
    yb = y[rows]
    cols = np.where(yb == 1, HATE, NONHATE)
    lse = np.logaddexp(z[:, 0], z[:, 1])
    ce_each = lse - z[np.arange(n), cols]
    scale = 1.0 if raw_sum else 1.0 / n

    counts = cf_ptr[rows + 1] - cf_ptr[rows]
    cf_rows = np.concatenate([np.arange(cf_ptr[r], cf_ptr[r + 1]) for r in rows]) if counts.sum() else np.zeros(0, np.int64)
    owner = np.repeat(np.arange(n), counts)
    pair_each = np.zeros(n)
    if lam != 0.0 and len(cf_rows):
        zc = C.logits(params.W, params.b, cf_rows)
        diff = z[owner] - zc
        per_pair = np.abs(diff).sum(axis=1)
        weight = np.ones(len(cf_rows)) if raw_sum else 1.0 / counts[owner]
        pair_each = np.bincount(owner, weights=per_pair * weight, minlength=n)
    else:
        diff = weight = None

    ce = scale * float(ce_each.sum())
    pair = scale * lam * float(pair_each.sum())
    pair_hate = scale * lam * float(pair_each[yb == 1].sum())
    pair_nonhate = scale * lam * float(pair_each[yb != 1].sum())
    l2_term = 0.5 * l2 * float(np.dot(params.W.ravel(), params.W.ravel())) if l2 else 0.0
    terms = _Terms(ce + pair + l2_term, ce, pair, pair_hate, pair_nonhate, l2_term)
    if not want_grad:
        return terms

    probs = softmax2(z)
    onehot = np.zeros_like(probs)
    onehot[np.arange(n), cols] = 1.0
    coef = scale * (probs - onehot)
    terms.gb = coef.sum(axis=0)
    gW = X.scatter(coef, rows)
    if diff is not None:
        sc = np.sign(diff) * (scale * lam * weight)[:, None]
        doc_coef = np.zeros((n, 2))
        doc_coef[:, 0] = np.bincount(owner, weights=sc[:, 0], minlength=n)
        doc_coef[:, 1] = np.bincount(owner, weights=sc[:, 1], minlength=n)
        gW += X.scatter(doc_coef, rows)
        gW -= C.scatter(sc, cf_rows)
    if l2:
        gW += l2 * params.W
    terms.gW = gW
    return terms


def _pack_batch(params, batch, cf_map):
    dim = params.dim
    vectors, labels, cf_vectors, cf_ptr = [], [], [], [0]
    for doc, x, label in batch:
        if label is None:
            raise TrainingError(f"document {getattr(doc, 'id', doc)!r} is unlabeled")
        vectors.append(x)
        labels.append(int(label))
        key = doc.id if isinstance(doc, Document) else doc
        cfs = list(cf_map.get(key, ())) if cf_map else []
        cf_vectors.extend(cfs)
        cf_ptr.append(cf_ptr[-1] + len(cfs))
    X = SparseRows.from_vectors(vectors, dim)
    C = SparseRows.from_vectors(cf_vectors, dim)
    return X, np.array(labels, dtype=np.int64), C, np.array(cf_ptr, dtype=np.int64)


def clp_terms(params, batch, cf_map, lam=0.2, l2=0.0, raw_sum=False, want_grad=False) -> _Terms:
    X, y, C, cf_ptr = _pack_batch(params, batch, cf_map)
    return _objective(params, X, y, np.arange(len(y)), C, cf_ptr, lam, l2, raw_sum, want_grad)


def clp_loss(params: ClassifierParams, batch, cf_map: Mapping, lam: float = 0.2, l2: float = 0.0,
             raw_sum: bool = False) -> float:
    """CLP objective over ``batch`` of ``(doc, features, label)``.

    ``cf_map`` maps a document id to the feature vectors of its counterfactuals.
    """
    return clp_terms(params, batch, cf_map, lam, l2, raw_sum).loss


def clp_gradient(params: ClassifierParams, batch, cf_map: Mapping, lam: float = 0.2, l2: float = 0.0,
                 raw_sum: bool = False) -> tuple[np.ndarray, np.ndarray]:
    t = clp_terms(params, batch, cf_map, lam, l2, raw_sum, want_grad=True)
    return t.gW, t.gb


# -- training -------------------------------------------------------------

@dataclass
class TrainConfig:
    lam: float = 0.2
    learning_rate: float = 0.1
    epochs: int = 50
    batch_size: int = 32
    seed: int = 0
    strategy: Optional[str] = "ACL"
    sgt_masking: bool = False
    l2: float = 1e-6
    dim: int = DEFAULT_DIM
    raw_sum: bool = False

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")
        if self.strategy is not None:
            self.strategy = Strategy.parse(self.strategy).value

    @classmethod
    def from_dict(cls, obj: Mapping) -> "TrainConfig":
        obj = dict(obj)
        if "lambda" in obj:
            obj["lam"] = obj.pop("lambda")
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown training option(s): {', '.join(sorted(unknown))}")
        return cls(**obj)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    ce_loss: float
    pair_loss: float
    pair_loss_hate: float
    pair_loss_nonhate: float

    @property
    def pair_share(self) -> float:
        return self.pair_loss / self.loss if self.loss else 0.0


@dataclass
class TrainLog:
    epochs: list[EpochRecord] = field(default_factory=list)
    n_docs: int = 0
    n_pairs: int = 0
    n_pairs_hate: int = 0
    n_pairs_nonhate: int = 0

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["epoch", "loss", "ce_loss", "pair_loss"])
            for r in self.epochs:
                w.writerow([r.epoch, repr(r.loss), repr(r.ce_loss), repr(r.pair_loss)])

    def summary(self) -> dict:
        last = self.epochs[-1] if self.epochs else None
        return {
            "n_docs": self.n_docs, "n_pairs": self.n_pairs,
            "n_pairs_hate": self.n_pairs_hate, "n_pairs_nonhate": self.n_pairs_nonhate,
            "final_loss": last.loss if last else None,
            "final_pair_loss_hate": last.pair_loss_hate if last else None,
            "final_pair_loss_nonhate": last.pair_loss_nonhate if last else None,
            "pair_share": last.pair_share if last else None,
        }


@dataclass
class TrainingData:
    """Featurized documents plus their counterfactual rows, ready for descent."""
    X: SparseRows
    y: np.ndarray
    C: SparseRows
    cf_ptr: np.ndarray
    cf_labels: np.ndarray


def build_training_data(corpus: Sequence[Document], lexicon: SgtLexicon, cfsets: Sequence[CounterfactualSet] | None,
                        config: TrainConfig, hasher: FeatureHasher | None = None) -> TrainingData:
    docs = list(corpus)
    for d in docs:
        if d.label is None:
            raise TrainingError(f"document {d.id!r} is unlabeled")
    hasher = hasher or FeatureHasher(config.dim)
    toks = [d.tokens for d in docs]
    if config.sgt_masking:
        toks = [mask_tokens(t, lexicon) for t in toks]
    X = hasher.rows(toks)
    by_doc: dict[str, list[str]] = {}
    for s in cfsets or ():
        by_doc.setdefault(s.doc.id, []).extend(e.text for e in s.entries)
    cf_texts, cf_ptr = [], [0]
    for d in docs:
        texts = by_doc.get(d.id, [])
        cf_texts.extend(texts)
        cf_ptr.append(cf_ptr[-1] + len(texts))
    # counterfactual rows are never masked
    C = hasher.rows([tokenize(t) for t in cf_texts])
    y = np.array([d.label for d in docs], dtype=np.int64)
    cf_ptr = np.array(cf_ptr, dtype=np.int64)
    return TrainingData(X, y, C, cf_ptr, np.repeat(y, np.diff(cf_ptr)))


def counterfactuals_for_training(corpus, lexicon, scorer, config: TrainConfig,
                                 options: GenerateOptions | None = None, jobs: int = 1):
    if config.strategy is None:
        return []
    return generate_corpus(corpus, lexicon, scorer, config.strategy, options, jobs=jobs)


def fit(data: TrainingData, config: TrainConfig, init: ClassifierParams | None = None) -> tuple[ClassifierParams, TrainLog]:
    """Mini-batch gradient descent with a seeded shuffle each epoch."""
    params = init.copy() if init is not None else ClassifierParams.zeros(config.dim, config.sgt_masking)
    n = len(data.y)
    if n == 0:
        raise TrainingError("no training documents")
    log = TrainLog(n_docs=n, n_pairs=int(data.cf_ptr[-1]),
                   n_pairs_hate=int((data.cf_labels == 1).sum()),
                   n_pairs_nonhate=int((data.cf_labels != 1).sum()))
    rng = np.random.default_rng(config.seed)
    everything = np.arange(n)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        for s in range(0, n, config.batch_size):
            rows = order[s:s + config.batch_size]
            t = _objective(params, data.X, data.y, rows, data.C, data.cf_ptr,
                           config.lam, config.l2, config.raw_sum, want_grad=True)
            if not math.isfinite(t.loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch starting {s}: "
                                    f"ce={t.ce} pair={t.pair} l2={t.l2}")
            params.W -= config.learning_rate * t.gW
            params.b -= config.learning_rate * t.gb
        full = _objective(params, data.X, data.y, everything, data.C, data.cf_ptr,
                          config.lam, config.l2, config.raw_sum, want_grad=False)
        if not math.isfinite(full.loss) or not params.all_finite():
            raise TrainingError(f"non-finite loss after epoch {epoch}: ce={full.ce} pair={full.pair}")
        log.epochs.append(EpochRecord(epoch, full.loss, full.ce, full.pair, full.pair_hate, full.pair_nonhate))
    return params, log


def train(corpus: Sequence[Document], lexicon: SgtLexicon, scorer, config: TrainConfig,
          options: GenerateOptions | None = None, cfsets: Sequence[CounterfactualSet] | None = None,
          jobs: int = 1) -> tuple[ClassifierParams, TrainLog]:
    """Generate counterfactuals once (unless given), then fit the classifier."""
    docs = list(corpus)
    for d in docs:
        if d.label is None:
            raise TrainingError(f"document {d.id!r} is unlabeled")
    if cfsets is None:
        cfsets = counterfactuals_for_training(docs, lexicon, scorer, config, options, jobs)
    data = build_training_data(docs, lexicon, cfsets, config)
    return fit(data, config)


def featurize_corpus(params: ClassifierParams, docs: Sequence[Document], lexicon: SgtLexicon | None,
                     hasher: FeatureHasher | None = None) -> SparseRows:
    hasher = hasher or FeatureHasher(params.dim)
    toks = [d.tokens if isinstance(d, Document) else tokenize(d) for d in docs]
    if params.sgt_masking:
        toks = [mask_tokens(t, lexicon) for t in toks]
    return hasher.rows(toks)


def predict_corpus(params: ClassifierParams, docs: Sequence, lexicon: SgtLexicon | None = None,
                   hasher: FeatureHasher | None = None) -> np.ndarray:
    """Predicted labels (1 = hate) for documents or raw texts."""
    if not len(docs):
        return np.zeros(0, dtype=np.int64)
    return labels_from_logits(featurize_corpus(params, docs, lexicon, hasher).logits(params.W, params.b))


def accuracy(params: ClassifierParams, corpus: Corpus, lexicon: SgtLexicon | None = None) -> float:
    pred = predict_corpus(params, list(corpus), lexicon)
    y = np.array([d.label for d in corpus])
    return float((pred == y).mean())
