"""SGT-substituted counterfactuals, strategy filters and rank analytics."""
from __future__ import annotations

import enum
import json
import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .corpus import Corpus, Document
from .lexicon import Sgt, SgtLexicon, SgtMention, tokenize


class Strategy(str, enum.Enum):
    ALL = "ALL"
    ACL = "ACL"
    NEG = "NEG"
    SG = "SG"
    RAND = "RAND"
    GV = "GV"

    @classmethod
    def parse(cls, value) -> "Strategy":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ValueError(f"unknown strategy {value!r}; expected one of "
                             f"{', '.join(s.value for s in cls)}") from None


class GenerationError(ValueError):
    pass


@dataclass(frozen=True)
class CounterfactualEntry:
    surface: str
    category: Optional[str]
    text: str
    loglik: float


@dataclass(frozen=True)
class CounterfactualSet:
    doc: Document
    mention: SgtMention
    original_loglik: float
    entries: tuple[CounterfactualEntry, ...]
    strategy: Strategy

    @property
    def original_text(self) -> str:
        return " ".join(self.doc.tokens)

    def to_json(self) -> dict:
        return {
            "doc_id": self.doc.id,
            "text": self.doc.text,
            "label": self.doc.label,
            "mention_surface": self.mention.sgt.text,
            "mention_start": self.mention.start,
            "mention_end": self.mention.end,
            "strategy": self.strategy.value,
            "original_loglik": _num(self.original_loglik),
            "entries": [{"sgt": e.surface, "text": e.text, "loglik": _num(e.loglik)} for e in self.entries],
        }


def _num(x: float):
    # unscored sets carry NaN, which JSON cannot hold
    return None if math.isnan(x) else x


@dataclass
class GenerateOptions:
    """Knobs for the strategies that need more than a lexicon and a scorer."""
    vocabulary: Sequence[str] = ()
    embeddings: Optional[Mapping[str, np.ndarray]] = None
    seed: int = 0
    k_random: int = 10
    k_similar: int = 10
    per_token: bool = False


# -- substitution ---------------------------------------------------------

def _check_span(doc: Document, mention: SgtMention):
    toks = doc.tokens
    if not (0 <= mention.start < mention.end <= len(toks)) or \
            tuple(toks[mention.start:mention.end]) != mention.sgt.surface:
        raise GenerationError(f"mention {mention.sgt.text!r} at {mention.span} is not valid for doc {doc.id!r}")


def _substitute(tokens, mention, replacement: Sequence[str]) -> str:
    return " ".join((*tokens[:mention.start], *replacement, *tokens[mention.end:]))


def substitute_mention(doc: Document, mention: SgtMention, lexicon: SgtLexicon) -> list[tuple[Sgt, str]]:
    """Replace the mention's span with every other lexicon entry."""
    _check_span(doc, mention)
    toks = doc.tokens
    return [(sgt, _substitute(toks, mention, sgt.surface))
            for sgt in lexicon if sgt.surface != mention.sgt.surface]


# -- embeddings -----------------------------------------------------------

def load_embeddings(path) -> dict[str, np.ndarray]:
    """Read ``word v1 ... vd`` lines; every vector must have the same d."""
    table: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            try:
                vec = np.array([float(v) for v in parts[1:]], dtype=np.float64)
            except ValueError:
                raise GenerationError(f"{path}:{lineno}: non-numeric vector component") from None
            if len(vec) == 0 or (dim is not None and len(vec) != dim):
                raise GenerationError(f"{path}:{lineno}: expected {dim} components, got {len(vec)}")
            dim = len(vec)
            table[parts[0]] = vec
    if not table:
        raise GenerationError(f"{path}: no embeddings")
    return table


def sgt_vector(sgt: Sgt, embeddings: Mapping[str, np.ndarray]) -> np.ndarray:
    missing = [t for t in sgt.surface if t not in embeddings]
    if missing:
        raise GenerationError(f"SGT {sgt.text!r} missing from embedding table ({', '.join(missing)})")
    return np.mean([embeddings[t] for t in sgt.surface], axis=0)


def _cosine(a, b) -> float:
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def most_similar_sgts(original: Sgt, lexicon: SgtLexicon, embeddings, k: int = 10) -> list[Sgt]:
    base = sgt_vector(original, embeddings)
    scored = [(-_cosine(base, sgt_vector(s, embeddings)), s.text, s)
              for s in lexicon if s.surface != original.surface]
    scored.sort(key=lambda t: (t[0], t[1]))
    return [s for _, _, s in scored[:k]]


# -- generation -----------------------------------------------------------

def _random_words(doc: Document, mention: SgtMention, lexicon: SgtLexicon, options: GenerateOptions) -> list[str]:
    banned = set(lexicon.surfaces)
    pool = sorted({w for w in options.vocabulary if w not in banned and tokenize(w) == [w]})
    if len(pool) < options.k_random:
        raise GenerationError(f"vocabulary has {len(pool)} non-SGT words, need {options.k_random}")
    # seeded per (doc, mention) so results do not depend on processing order
    salt = zlib.crc32(f"{doc.id}\x00{mention.start}".encode("utf-8"))
    rng = np.random.default_rng([options.seed, salt])
    picks = rng.choice(len(pool), size=options.k_random, replace=False)
    return [pool[i] for i in picks]


def _candidates(doc, mention, lexicon, strategy, options):
    """(surface tokens, category) pairs to substitute, before likelihood filtering."""
    orig = mention.sgt
    if strategy is Strategy.NEG:
        if doc.label is None:
            raise GenerationError(f"NEG strategy needs a label on doc {doc.id!r}")
        if doc.label == 1:
            return []
    if strategy in (Strategy.ALL, Strategy.ACL, Strategy.NEG):
        return [(s.surface, s.category) for s in lexicon if s.surface != orig.surface]
    if strategy is Strategy.SG:
        return [(s.surface, s.category) for s in lexicon
                if s.surface != orig.surface and s.category == orig.category]
    if strategy is Strategy.GV:
        if options.embeddings is None:
            raise GenerationError("GV strategy needs an embedding table")
        return [(s.surface, s.category)
                for s in most_similar_sgts(orig, lexicon, options.embeddings, options.k_similar)]
    if strategy is Strategy.RAND:
        return [((w,), None) for w in _random_words(doc, mention, lexicon, options)]
    raise ValueError(f"unhandled strategy {strategy}")


def _per_token(values, texts):
    return [v / len(tokenize(t)) for v, t in zip(values, texts)]


def generate_many(items: Sequence[tuple[Document, SgtMention]], lexicon: SgtLexicon, scorer,
                  strategy, options: GenerateOptions | None = None) -> list[CounterfactualSet]:
    """Generate one counterfactual set per ``(doc, mention)`` with a single scoring call."""
    strategy = Strategy.parse(strategy)
    options = options or GenerateOptions()
    plans = []
    texts: list[str] = []
    for doc, mention in items:
        _check_span(doc, mention)
        cands = _candidates(doc, mention, lexicon, strategy, options)
        toks = doc.tokens
        cand_texts = [_substitute(toks, mention, surf) for surf, _ in cands]
        plans.append((doc, mention, cands, len(texts)))
        texts.append(" ".join(toks))
        texts.extend(cand_texts)
    if not texts:
        return []
    if scorer is None:
        # unscored sets are fine for pairing and metrics, not for likelihood filtering
        if strategy is Strategy.ACL:
            raise GenerationError("strategy ACL needs a likelihood scorer")
        values = np.full(len(texts), np.nan)
    else:
        values = np.asarray(scorer.score_texts(texts), dtype=np.float64)
    if options.per_token and scorer is not None:
        values = np.array(_per_token(values, texts))
    out = []
    for doc, mention, cands, at in plans:
        orig_ll = float(values[at])
        entries = []
        for j, (surf, cat) in enumerate(cands):
            ll = float(values[at + 1 + j])
            if strategy is Strategy.ACL and not ll >= orig_ll:
                continue
            entries.append(CounterfactualEntry(" ".join(surf), cat, texts[at + 1 + j], ll))
        out.append(CounterfactualSet(doc, mention, orig_ll, tuple(entries), strategy))
    return out


def generate(doc: Document, mention: SgtMention, lexicon: SgtLexicon, scorer, strategy,
             options: GenerateOptions | None = None) -> CounterfactualSet:
    return generate_many([(doc, mention)], lexicon, scorer, strategy, options)[0]


def generate_corpus(corpus: Iterable[Document], lexicon: SgtLexicon, scorer, strategy,
                    options: GenerateOptions | None = None, jobs: int = 1,
                    chunk_size: int = 2048) -> list[CounterfactualSet]:
    """Counterfactual sets for every mention of every document, in corpus order."""
    items = [(d, m) for d in corpus for m in d.mentions(lexicon)]
    chunks = [items[i:i + chunk_size] for i in range(0, len(items), chunk_size)]
    if jobs <= 1 or len(chunks) <= 1:
        results = [generate_many(c, lexicon, scorer, strategy, options) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda c: generate_many(c, lexicon, scorer, strategy, options), chunks))
    return [s for part in results for s in part]


# -- ranks ----------------------------------------------------------------

def rank_original(cfset: CounterfactualSet) -> int:
    """Competition rank of the original among its counterfactuals (1 = most likely)."""
    if cfset.strategy is not Strategy.ALL:
        raise ValueError(f"rank_original needs an unfiltered (ALL) set, got {cfset.strategy.value}")
    return 1 + sum(1 for e in cfset.entries if e.loglik > cfset.original_loglik)


def top_entry(cfset: CounterfactualSet) -> CounterfactualEntry | None:
    if not cfset.entries:
        return None
    best = max(e.loglik for e in cfset.entries)
    return min((e for e in cfset.entries if e.loglik == best), key=lambda e: e.surface)


@dataclass
class RankReport:
    n_docs: int
    rank_histogram: dict[int, int]
    pct_rank1: float
    pct_rank2_same_category_top: Optional[float]
    n_rank2: int = 0
    ranks: list[int] = field(default_factory=list, repr=False)

    def to_json(self) -> dict:
        return {
            "n_docs": self.n_docs,
            "rank_histogram": {str(k): v for k, v in sorted(self.rank_histogram.items())},
            "pct_rank1": self.pct_rank1,
            "pct_rank2_same_category_top": self.pct_rank2_same_category_top,
            "n_rank2": self.n_rank2,
        }


def rank_report_from_sets(cfsets: Sequence[CounterfactualSet]) -> RankReport:
    ranks = [rank_original(s) for s in cfsets]
    hist: dict[int, int] = {}
    for r in ranks:
        hist[r] = hist.get(r, 0) + 1
    second = [s for s, r in zip(cfsets, ranks) if r == 2]
    same = sum(1 for s in second if top_entry(s).category == s.mention.sgt.category)
    n = len(ranks)
    return RankReport(
        n_docs=n,
        rank_histogram=dict(sorted(hist.items())),
        pct_rank1=100.0 * hist.get(1, 0) / n if n else 0.0,
        pct_rank2_same_category_top=100.0 * same / len(second) if second else None,
        n_rank2=len(second),
        ranks=ranks,
    )


def rank_report(corpus: Iterable[Document], lexicon: SgtLexicon, scorer, per_token: bool = False,
                jobs: int = 1) -> RankReport:
    """Rank statistics over documents that mention exactly one SGT."""
    docs = list(corpus)
    for d in docs:
        n = len(d.mentions(lexicon))
        if n != 1:
            raise GenerationError(f"doc {d.id!r} has {n} SGT mentions; rank report needs exactly one")
    sets = generate_corpus(docs, lexicon, scorer, Strategy.ALL, GenerateOptions(per_token=per_token), jobs=jobs)
    return rank_report_from_sets(sets)


# -- datasets built from substitutions ------------------------------------

def perturb_corpus(corpus: Iterable[Document], lexicon: SgtLexicon) -> Corpus:
    """All single-mention substitutions, each inheriting its source label."""
    docs = []
    for d in corpus:
        for m in d.mentions(lexicon):
            for sgt, text in substitute_mention(d, m, lexicon):
                docs.append(Document(f"{d.id}~{m.start}~{sgt.text}", text, d.label))
    return Corpus(docs, source="perturbed")


def expand_templates(templates: Sequence[str], adjectives, lexicon: SgtLexicon) -> Corpus:
    """Fill ``{ADJ}``/``{SGT}`` templates, e.g. ``"You are a {ADJ} {SGT}"``.

    ``adjectives`` is a sequence of words or a mapping word -> label.
    """
    labelled = adjectives if isinstance(adjectives, Mapping) else {a: None for a in adjectives}
    docs = []
    for ti, tmpl in enumerate(templates):
        for adj, label in labelled.items():
            for sgt in lexicon:
                text = tmpl.replace("{ADJ}", adj).replace("{SGT}", sgt.text)
                docs.append(Document(f"t{ti}:{adj}:{sgt.text}", text, label))
    return Corpus(docs, source="templates")


# -- dumps ----------------------------------------------------------------

def dump_cfsets(cfsets: Iterable[CounterfactualSet], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for s in cfsets:
            f.write(json.dumps(s.to_json(), ensure_ascii=False) + "\n")


def load_cfsets(path, lexicon: SgtLexicon | None = None) -> list[CounterfactualSet]:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                surface = obj["mention_surface"]
                doc = Document(obj["doc_id"], obj["text"], obj.get("label"))
                if lexicon is not None and surface in lexicon:
                    sgt = lexicon[surface]
                else:
                    sgt = Sgt(tuple(surface.split(" ")), "")
                start = obj.get("mention_start")
                if start is None:
                    found = _find(doc.tokens, sgt.surface)
                    if not found:
                        raise GenerationError(f"mention {surface!r} not found in text")
                    start = found[0]
                mention = SgtMention(sgt, int(start), int(start) + len(sgt.surface))
                entries = tuple(
                    CounterfactualEntry(e["sgt"],
                                        lexicon[e["sgt"]].category if lexicon is not None and e["sgt"] in lexicon else None,
                                        e["text"], float(e["loglik"]) if e.get("loglik") is not None else math.nan)
                    for e in obj["entries"])
                out.append(CounterfactualSet(doc, mention, float(obj["original_loglik"]) if obj.get("original_loglik") is not None else math.nan,
                                             entries, Strategy.parse(obj["strategy"])))
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as e:
                raise GenerationError(f"{path}:{lineno}: malformed counterfactual record ({e})") from None
    return out


def _find(tokens, surface):
    n = len(surface)
    return [i for i in range(len(tokens) - n + 1) if tuple(tokens[i:i + n]) == surface]
