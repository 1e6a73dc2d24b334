"""Social group tokens: loading, tokenization and mention detection."""
from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

_EDGE = re.compile(r"^[\W_]+|[\W_]+$")

MAX_SURFACE_TOKENS = 2


class LexiconError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip non-alphanumeric token edges.

    >>> tokenize("Mexicans should GO back!")
    ['mexicans', 'should', 'go', 'back']
    """
    out = []
    for tok in text.lower().split():
        if not (tok[0].isalnum() and tok[-1].isalnum()):
            tok = _EDGE.sub("", tok)
            if not tok:
                continue
        out.append(tok)
    return out


@dataclass(frozen=True)
class SocialCategory:
    id: str
    name: str


@dataclass(frozen=True)
class Sgt:
    surface: tuple[str, ...]
    category: str

    def __post_init__(self):
        if not 1 <= len(self.surface) <= MAX_SURFACE_TOKENS:
            raise LexiconError(f"surface must have 1-{MAX_SURFACE_TOKENS} tokens: {self.surface!r}")
        for tok in self.surface:
            if not tok or tok != tok.lower() or tokenize(tok) != [tok]:
                raise LexiconError(f"invalid surface token {tok!r}")

    @property
    def text(self) -> str:
        return " ".join(self.surface)

    def __str__(self):
        return self.text


@dataclass(frozen=True)
class SgtMention:
    sgt: Sgt
    start: int
    end: int

    @property
    def span(self) -> tuple[int, int]:
        return (self.start, self.end)


class SgtLexicon:
    """An immutable set of SGTs with their social categories."""

    def __init__(self, entries: Iterable[Sgt], categories: Iterable[SocialCategory]):
        self.categories = tuple(categories)
        self.entries = tuple(entries)
        if not self.entries:
            raise LexiconError("lexicon must be non-empty")
        cat_ids = [c.id for c in self.categories]
        if len(set(cat_ids)) != len(cat_ids):
            raise LexiconError("duplicate category id")
        self._categories = {c.id: c for c in self.categories}
        self._by_text: dict[str, Sgt] = {}
        for sgt in self.entries:
            if sgt.text in self._by_text:
                raise LexiconError(f"duplicate surface {sgt.text!r}")
            if sgt.category not in self._categories:
                raise LexiconError(f"unknown category id {sgt.category!r} for {sgt.text!r}")
            self._by_text[sgt.text] = sgt
        self._by_surface = {sgt.surface: sgt for sgt in self.entries}

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __contains__(self, item):
        if isinstance(item, Sgt):
            return self._by_text.get(item.text) == item
        return item in self._by_text

    def __getitem__(self, surface: str) -> Sgt:
        try:
            return self._by_text[surface]
        except KeyError:
            raise KeyError(f"unknown SGT {surface!r}") from None

    @property
    def surfaces(self) -> list[str]:
        return [s.text for s in self.entries]

    def match_at(self, tokens: Sequence[str], i: int) -> Sgt | None:
        for n in range(MAX_SURFACE_TOKENS, 0, -1):
            if i + n <= len(tokens):
                sgt = self._by_surface.get(tuple(tokens[i:i + n]))
                if sgt is not None:
                    return sgt
        return None

    def category(self, sgt: Sgt | str) -> SocialCategory:
        key = sgt.text if isinstance(sgt, Sgt) else sgt
        if key not in self._by_text:
            raise KeyError(f"unknown SGT {key!r}")
        return self._categories[self._by_text[key].category]

    def subset(self, surfaces: Iterable[str]) -> "SgtLexicon":
        keep = set(surfaces)
        return SgtLexicon([s for s in self.entries if s.text in keep], self.categories)


def _read_rows(path, what):
    rows = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
                raise LexiconError(f"{path}:{lineno}: malformed {what} line {line!r}")
            rows.append((lineno, parts[0].strip(), parts[1].strip()))
    return rows


def load_categories(path) -> list[SocialCategory]:
    return [SocialCategory(cid, name) for _, cid, name in _read_rows(path, "category")]


def load_lexicon(path, categories_path=None, *, collapse_repeats=False) -> SgtLexicon:
    """Read a ``surface<TAB>category_id`` file.

    Identical repeated lines are only tolerated with ``collapse_repeats``
    (used for the shipped list, which repeats two terms).
    """
    if categories_path is None:
        categories_path = default_categories_path()
    categories = load_categories(categories_path)
    entries: list[Sgt] = []
    seen: dict[str, str] = {}
    for lineno, surface, cat in _read_rows(path, "lexicon"):
        toks = tuple(surface.split(" "))
        try:
            sgt = Sgt(toks, cat)
        except LexiconError as e:
            raise LexiconError(f"{path}:{lineno}: {e}") from None
        if sgt.text in seen:
            if collapse_repeats and seen[sgt.text] == cat:
                continue
            raise LexiconError(f"{path}:{lineno}: duplicate surface {sgt.text!r}")
        seen[sgt.text] = cat
        entries.append(sgt)
    if not entries:
        raise LexiconError(f"{path}: lexicon must be non-empty")
    try:
        return SgtLexicon(entries, categories)
    except LexiconError as e:
        raise LexiconError(f"{path}: {e}") from None


def default_lexicon_path() -> Path:
    return Path(str(resources.files("cfair") / "data" / "default_sgts.tsv"))


def default_categories_path() -> Path:
    return Path(str(resources.files("cfair") / "data" / "categories.tsv"))


def load_default_lexicon() -> SgtLexicon:
    return load_lexicon(default_lexicon_path(), default_categories_path(), collapse_repeats=True)


def detect_in_tokens(tokens: Sequence[str], lexicon: SgtLexicon) -> list[SgtMention]:
    mentions = []
    i = 0
    while i < len(tokens):
        sgt = lexicon.match_at(tokens, i)
        if sgt is None:
            i += 1
            continue
        n = len(sgt.surface)
        mentions.append(SgtMention(sgt, i, i + n))
        i += n
    return mentions


def detect_sgts(text: str, lexicon: SgtLexicon) -> list[SgtMention]:
    """Longest-match, non-overlapping SGT mentions in token order."""
    return detect_in_tokens(tokenize(text), lexicon)


def category_of(sgt: Sgt | str, lexicon: SgtLexicon) -> SocialCategory:
    return lexicon.category(sgt)
