"""Sentence log-likelihood scorers.

:class:`NgramModel` is an interpolated absolute-discounting n-gram model::

    P1(w)   = (c(w) + 1) / (C + |V|)
    Pk(w|h) = (max(c(h w) - d, 0) + d * T(h) * P(k-1)(w|h')) / c(h)   if c(h) > 0
            = P(k-1)(w|h')                                            otherwise

where ``h'`` drops the oldest token of ``h``, ``c(h)`` is the number of
times ``h`` was followed by any token and ``T(h)`` the number of distinct
followers. ``|V|`` counts observed types plus ``<unk>``. Every
conditional distribution sums to one because ``d < 1 <= c(h w)`` for
every observed continuation.

Any object with ``score_texts(texts) -> np.ndarray`` and a ``fingerprint``
string can act as a scorer; :class:`ExternalScorer` talks to a separate
process over line-delimited JSON.
"""
from __future__ import annotations

import hashlib
import json
import math
import queue
import socket
import struct
import subprocess
import threading
import time
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from . import kernels
from .lexicon import tokenize

UNK = "<unk>"
BOS = "<s>"
UNK_ID = 0
BOS_ID = 1
MODEL_FORMAT_VERSION = 1
_LM_MAGIC = b"CFAIRLM\x00"


class ScorerError(RuntimeError):
    pass


class LikelihoodScorer(Protocol):
    fingerprint: str

    def score_texts(self, texts: Sequence[str]) -> np.ndarray: ...


def _texts_of(corpus) -> Iterable[str]:
    for item in corpus:
        yield item if isinstance(item, str) else item.text


class NgramModel:
    def __init__(self, order, discount, vocab, uni_counts, ngram_keys, ngram_counts, ngram_ptr,
                 hist_keys, hist_counts, hist_types, hist_ptr):
        if order < 1:
            raise ValueError("order must be >= 1")
        if not 0.0 < discount < 1.0:
            raise ValueError(f"discount must be strictly inside (0, 1), got {discount}")
        self.order = int(order)
        self.discount = float(discount)
        self.vocab = list(vocab)  # id -> token; 0 is <unk>, 1 is <s>
        self.ids = {t: i for i, t in enumerate(self.vocab)}
        self.uni_counts = np.asarray(uni_counts, dtype=np.float64)
        self.uni_total = float(self.uni_counts.sum())
        self.vsize = float(len(self.vocab) - 1)
        self.bits = 63 // self.order
        self.ngram_keys = np.asarray(ngram_keys, dtype=np.int64)
        self.ngram_counts = np.asarray(ngram_counts, dtype=np.float64)
        self.ngram_ptr = np.asarray(ngram_ptr, dtype=np.int64)
        self.hist_keys = np.asarray(hist_keys, dtype=np.int64)
        self.hist_counts = np.asarray(hist_counts, dtype=np.float64)
        self.hist_types = np.asarray(hist_types, dtype=np.float64)
        self.hist_ptr = np.asarray(hist_ptr, dtype=np.int64)
        self._fingerprint = None

    def __repr__(self):
        return f"NgramModel(order={self.order}, discount={self.discount}, |V|={int(self.vsize)})"

    @property
    def fingerprint(self) -> str:
        if self._fingerprint is None:
            h = hashlib.sha256()
            h.update(f"ngram:{self.order}:{self.discount!r}".encode())
            h.update("\x00".join(self.vocab).encode("utf-8"))
            for arr in (self.uni_counts, self.ngram_keys, self.ngram_counts, self.ngram_ptr,
                        self.hist_keys, self.hist_counts, self.hist_types, self.hist_ptr):
                h.update(np.ascontiguousarray(arr).tobytes())
            self._fingerprint = h.hexdigest()[:16]
        return self._fingerprint

    # -- lookups ---------------------------------------------------------

    def token_ids(self, tokens: Sequence[str]) -> np.ndarray:
        get = self.ids.get
        return np.fromiter((get(t, UNK_ID) for t in tokens), dtype=np.int64, count=len(tokens))

    def _probs(self, targets, contexts):
        return kernels.ngram_probs(
            targets, contexts, self.uni_counts, self.uni_total, self.vsize, self.discount,
            self.bits, self.ngram_keys, self.ngram_counts, self.ngram_ptr,
            self.hist_keys, self.hist_counts, self.hist_types, self.hist_ptr)

    def _context_ids(self, history: Sequence[str]) -> np.ndarray:
        width = self.order - 1
        hist = list(history)[-width:] if width else []
        ids = [BOS_ID if t == BOS else self.ids.get(t, UNK_ID) for t in hist]
        ids = [BOS_ID] * (width - len(ids)) + ids
        return np.array(ids[::-1], dtype=np.int64).reshape(1, width)

    def prob(self, token: str, history: Sequence[str] = ()) -> float:
        target = np.array([self.ids.get(token, UNK_ID)], dtype=np.int64)
        return float(self._probs(target, self._context_ids(history))[0])

    def log_prob(self, token: str, history: Sequence[str] = ()) -> float:
        return math.log(self.prob(token, history))

    def distribution(self, history: Sequence[str] = ()) -> np.ndarray:
        """P(w | history) for every vocabulary id except ``<s>`` (``<unk>`` first)."""
        targets = np.array([UNK_ID] + list(range(2, len(self.vocab))), dtype=np.int64)
        ctx = np.repeat(self._context_ids(history), len(targets), axis=0)
        return self._probs(targets, ctx)

    def count(self, ngram: Sequence[str]) -> int:
        """Training count of a 1..order-gram (``<s>`` allowed in the history)."""
        k = len(ngram)
        if not 1 <= k <= self.order:
            raise ValueError(f"n-gram length must be in 1..{self.order}")
        ids = [BOS_ID if t == BOS else self.ids.get(t, UNK_ID) for t in ngram]
        if k == 1:
            return int(self.uni_counts[ids[0]])
        key = 0
        for i in ids:
            key = (key << self.bits) | i
        keys = self.ngram_keys[self.ngram_ptr[k]:self.ngram_ptr[k + 1]]
        pos = int(np.searchsorted(keys, key))
        if pos < len(keys) and keys[pos] == key:
            return int(self.ngram_counts[self.ngram_ptr[k] + pos])
        return 0

    def histories(self, k: int) -> list[tuple[str, ...]]:
        """Observed order-``k`` histories (``k - 1`` tokens, oldest first)."""
        if k < 2 or k > self.order:
            return []
        mask = (1 << self.bits) - 1
        out = []
        for key in self.hist_keys[self.hist_ptr[k]:self.hist_ptr[k + 1]]:
            key = int(key)
            toks = []
            for _ in range(k - 1):
                toks.append(self.vocab[key & mask])
                key >>= self.bits
            out.append(tuple(reversed(toks)))
        return out

    # -- sentences -------------------------------------------------------

    def score_ids(self, sequences: Sequence[np.ndarray]) -> np.ndarray:
        """Sum of natural-log conditionals for each id sequence."""
        lengths = np.fromiter((len(s) for s in sequences), dtype=np.int64, count=len(sequences))
        if len(sequences) == 0:
            return np.zeros(0)
        if (lengths == 0).any():
            raise ValueError("cannot score an empty token sequence")
        width = self.order - 1
        targets = np.concatenate(sequences)
        offsets = np.zeros(len(sequences) + 1, dtype=np.int64)
        np.cumsum(lengths, out=offsets[1:])
        contexts = np.empty((len(targets), width), dtype=np.int64)
        if width:
            # each sentence is laid out after `width` <s> markers
            padded = np.full(len(targets) + width * len(sequences), BOS_ID, dtype=np.int64)
            tpos = np.arange(len(targets)) + width * np.repeat(np.arange(len(sequences)) + 1, lengths)
            padded[tpos] = targets
            for j in range(width):
                contexts[:, j] = padded[tpos - 1 - j]
        logp = np.log(self._probs(targets, contexts))
        return kernels.segment_sums(logp, offsets)

    def score_tokens(self, token_lists: Sequence[Sequence[str]]) -> np.ndarray:
        return self.score_ids([self.token_ids(t) for t in token_lists])

    def score_texts(self, texts: Sequence[str]) -> np.ndarray:
        token_lists = [tokenize(t) for t in texts]
        for t, toks in zip(texts, token_lists):
            if not toks:
                raise ValueError(f"text has no tokens: {t!r}")
        return self.score_tokens(token_lists)

    # -- persistence -----------------------------------------------------

    _ARRAYS = (("uni_counts", "<f8"), ("ngram_keys", "<i8"), ("ngram_counts", "<f8"), ("ngram_ptr", "<i8"),
               ("hist_keys", "<i8"), ("hist_counts", "<f8"), ("hist_types", "<f8"), ("hist_ptr", "<i8"))

    def save(self, path) -> None:
        """Versioned binary dump: magic, JSON header, little-endian arrays."""
        header = {"version": MODEL_FORMAT_VERSION, "order": self.order, "discount": self.discount,
                  "vocab": self.vocab,
                  "arrays": [[name, len(getattr(self, name))] for name, _ in self._ARRAYS]}
        blob = json.dumps(header, ensure_ascii=False, sort_keys=True).encode("utf-8")
        with open(path, "wb") as f:
            f.write(_LM_MAGIC + struct.pack("<I", len(blob)) + blob)
            for name, dtype in self._ARRAYS:
                f.write(np.ascontiguousarray(getattr(self, name), dtype=dtype).tobytes())

    @classmethod
    def load(cls, path) -> "NgramModel":
        with open(path, "rb") as f:
            raw = f.read()
        if raw[:len(_LM_MAGIC)] != _LM_MAGIC:
            raise ValueError(f"{path}: not an n-gram model file")
        off = len(_LM_MAGIC)
        (hlen,) = struct.unpack_from("<I", raw, off)
        off += 4
        header = json.loads(raw[off:off + hlen].decode("utf-8"))
        off += hlen
        if header.get("version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported n-gram model version {header.get('version')!r}")
        arrays = {}
        for (name, dtype), (hname, n) in zip(cls._ARRAYS, header["arrays"]):
            if name != hname:
                raise ValueError(f"{path}: corrupt header")
            arrays[name] = np.frombuffer(raw, dtype=dtype, count=n, offset=off).copy()
            off += 8 * n
        return cls(header["order"], header["discount"], header["vocab"], **arrays)


def train_ngram(corpus, order: int = 3, discount: float = 0.75, seed: int = 0) -> NgramModel:
    """Count k-grams (k = 1..order) over a corpus or an iterable of texts.

    Counting is deterministic; ``seed`` is accepted for interface symmetry.
    """
    del seed
    if order < 1:
        raise ValueError("order must be >= 1")
    if not 0.0 < discount < 1.0:
        raise ValueError(f"discount must be strictly inside (0, 1), got {discount}")
    token_lists = [tokenize(t) for t in _texts_of(corpus)]
    token_lists = [t for t in token_lists if t]
    if not token_lists:
        raise ValueError("corpus is empty after tokenization")
    types = sorted({tok for toks in token_lists for tok in toks})
    vocab = [UNK, BOS] + types
    bits = 63 // order
    if len(vocab) > (1 << bits):
        raise ValueError(f"vocabulary of {len(vocab)} types is too large for order {order}")
    ids = {t: i for i, t in enumerate(vocab)}

    width = order - 1
    seqs = [np.array([ids[t] for t in toks], dtype=np.int64) for toks in token_lists]
    padded = np.concatenate([np.concatenate([np.full(width, BOS_ID, dtype=np.int64), s]) for s in seqs])
    lengths = np.array([len(s) for s in seqs])
    starts = np.cumsum(lengths + width) - lengths  # padded index of each first real token
    tpos = np.repeat(starts, lengths) + (np.arange(lengths.sum()) - np.repeat(np.cumsum(lengths) - lengths, lengths))
    targets = padded[tpos]

    uni_counts = np.bincount(targets, minlength=len(vocab)).astype(np.float64)
    ngram_keys, ngram_counts, hist_keys, hist_counts, hist_types = [], [], [], [], []
    ngram_ptr = np.zeros(order + 2, dtype=np.int64)
    hist_ptr = np.zeros(order + 2, dtype=np.int64)
    key = targets.copy()
    for k in range(2, order + 1):
        key = key | (padded[tpos - (k - 1)] << (bits * (k - 1)))
        uk, uc = np.unique(key, return_counts=True)
        hk = uk >> bits
        first = np.flatnonzero(np.r_[True, hk[1:] != hk[:-1]])
        ngram_keys.append(uk)
        ngram_counts.append(uc.astype(np.float64))
        hist_keys.append(hk[first])
        hist_counts.append(np.add.reduceat(uc, first).astype(np.float64))
        hist_types.append(np.diff(np.r_[first, len(uk)]).astype(np.float64))
        ngram_ptr[k + 1] = ngram_ptr[k] + len(uk)
        hist_ptr[k + 1] = hist_ptr[k] + len(first)

    def cat(parts, dtype):
        return np.concatenate(parts).astype(dtype) if parts else np.zeros(0, dtype=dtype)

    return NgramModel(order, discount, vocab, uni_counts,
                      cat(ngram_keys, np.int64), cat(ngram_counts, np.float64), ngram_ptr,
                      cat(hist_keys, np.int64), cat(hist_counts, np.float64),
                      cat(hist_types, np.float64), hist_ptr)


def ngram_log_prob(model: NgramModel, token: str, history: Sequence[str] = ()) -> float:
    return model.log_prob(token, history)


def sentence_log_likelihood(scorer, text: str, per_token: bool = False) -> float:
    """Natural-log likelihood of ``text``; optionally averaged per token."""
    n = len(tokenize(text))
    if n == 0:
        raise ValueError(f"text has no tokens: {text!r}")
    value = float(scorer.score_texts([text])[0])
    return value / n if per_token else value


class UnigramTableScorer:
    """Context-free scorer from an explicit token -> probability table.

    Tokens missing from the table get ``default``. Handy for building
    hand-checkable fixtures.
    """

    def __init__(self, probs: Mapping[str, float], default: float = 0.01):
        self.logp = {t: math.log(p) for t, p in probs.items()}
        self.default = math.log(default)
        items = sorted(self.logp.items())
        self.fingerprint = hashlib.sha256(repr((items, default)).encode()).hexdigest()[:16]

    def score_texts(self, texts: Sequence[str]) -> np.ndarray:
        out = np.empty(len(texts))
        for i, text in enumerate(texts):
            toks = tokenize(text)
            if not toks:
                raise ValueError(f"text has no tokens: {text!r}")
            acc = 0.0
            for tok in toks:
                acc += self.logp.get(tok, self.default)
            out[i] = acc
        return out


class CachedScorer:
    """Memoizes ``text -> loglik`` for one underlying scorer."""

    def __init__(self, scorer):
        self.scorer = scorer
        self.fingerprint = scorer.fingerprint
        self.cache: dict[str, float] = {}
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()

    @property
    def hit_rate(self) -> float:
        total = self.hits + self.misses
        return self.hits / total if total else 0.0

    def stats(self) -> dict:
        return {"scorer": self.fingerprint, "hits": self.hits, "misses": self.misses,
                "hit_rate": self.hit_rate, "entries": len(self.cache)}

    def score_texts(self, texts: Sequence[str]) -> np.ndarray:
        with self._lock:
            cache = self.cache
            missing = list(dict.fromkeys(t for t in texts if t not in cache))
            self.misses += len(missing)
            self.hits += len(texts) - len(missing)
        if missing:
            values = self.scorer.score_texts(missing)
            with self._lock:
                cache.update(zip(missing, (float(v) for v in values)))
        return np.array([cache[t] for t in texts], dtype=np.float64)


class ExternalScorer:
    """Client for a line-delimited JSON scoring process.

    Handshake ``hello``/``ready``; each request ``{"type": "score", "id",
    "text"}`` must get exactly one ``{"type": "result", "id", "loglik"}``
    reply, in any order. ``bye`` ends the session.
    """

    def __init__(self, reader, writer, timeout: float = 30.0, name: str = "external", closer=None):
        self._reader = reader
        self._writer = writer
        self.timeout = timeout
        self.fingerprint = "ext:" + hashlib.sha256(name.encode()).hexdigest()[:12]
        self._closer = closer
        self._lines: queue.Queue = queue.Queue()
        self._pump = threading.Thread(target=self._read_loop, daemon=True)
        self._pump.start()
        self._next_id = 0
        self._lock = threading.Lock()
        self._handshake()

    @classmethod
    def spawn(cls, command: Sequence[str], timeout: float = 30.0) -> "ExternalScorer":
        proc = subprocess.Popen(list(command), stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                text=True, encoding="utf-8", bufsize=1)

        def close():
            try:
                proc.stdin.close()
            except OSError:
                pass
            try:
                proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()

        try:
            return cls(proc.stdout, proc.stdin, timeout, name=" ".join(command), closer=close)
        except BaseException:
            proc.kill()
            close()
            raise

    @classmethod
    def connect(cls, host: str, port: int, timeout: float = 30.0) -> "ExternalScorer":
        sock = socket.create_connection((host, port), timeout=timeout)
        sock.settimeout(None)
        f = sock.makefile("rw", encoding="utf-8", newline="\n")

        def close():
            f.close()
            sock.close()

        return cls(f, f, timeout, name=f"{host}:{port}", closer=close)

    def _read_loop(self):
        try:
            for line in self._reader:
                self._lines.put(line)
        except (OSError, ValueError):
            pass
        self._lines.put(None)

    def _send(self, obj):
        self._writer.write(json.dumps(obj, ensure_ascii=False) + "\n")
        self._writer.flush()

    def _recv(self, deadline_left: float):
        try:
            line = self._lines.get(timeout=max(deadline_left, 0.0))
        except queue.Empty:
            raise ScorerError(f"external scorer timed out after {self.timeout} s") from None
        if line is None:
            raise ScorerError("external scorer closed the connection")
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            raise ScorerError(f"protocol violation: not JSON: {line.strip()[:80]!r}") from None
        if not isinstance(obj, dict):
            raise ScorerError(f"protocol violation: expected object, got {line.strip()[:80]!r}")
        return obj

    def _handshake(self):
        self._send({"type": "hello", "version": 1})
        reply = self._recv(self.timeout)
        if reply.get("type") != "ready":
            raise ScorerError(f"protocol violation: expected ready, got {reply!r}")

    def score_batch(self, texts: Sequence[str]) -> list[float]:
        with self._lock:
            base = self._next_id
            self._next_id += len(texts)
            ids = [str(base + i) for i in range(len(texts))]
            slot = {rid: i for i, rid in enumerate(ids)}
            for rid, text in zip(ids, texts):
                self._send({"type": "score", "id": rid, "text": text})
            out: list = [None] * len(texts)
            pending = len(texts)
            deadline = time.monotonic() + self.timeout
            while pending:
                reply = self._recv(deadline - time.monotonic())
                if reply.get("type") != "result":
                    raise ScorerError(f"protocol violation: unexpected message {reply!r}")
                rid = reply.get("id")
                if rid not in slot:
                    raise ScorerError(f"protocol violation: unknown request id {rid!r}")
                i = slot[rid]
                if out[i] is not None:
                    raise ScorerError(f"protocol violation: duplicate result for id {rid!r}")
                value = reply.get("loglik")
                if isinstance(value, bool) or not isinstance(value, (int, float, str)):
                    raise ScorerError(f"protocol violation: bad loglik for id {rid!r}: {value!r}")
                try:
                    value = float(value)
                except ValueError:
                    raise ScorerError(f"protocol violation: bad loglik for id {rid!r}: {value!r}") from None
                if not math.isfinite(value):
                    raise ScorerError(f"non-finite loglik {value!r} for id {rid!r}")
                out[i] = value
                pending -= 1
            return out

    def score_texts(self, texts: Sequence[str]) -> np.ndarray:
        return np.array(self.score_batch(list(texts)), dtype=np.float64)

    def close(self):
        try:
            self._send({"type": "bye"})
        except (OSError, ValueError):
            pass
        if self._closer is not None:
            self._closer()
            self._closer = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def score_batch(scorer: ExternalScorer, texts: Sequence[str]) -> list[float]:
    return scorer.score_batch(texts)
