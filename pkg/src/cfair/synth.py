"""Deterministic synthetic corpora for tests, demos and the lambda sweep.

The stereotype corpus mentions one SGT per post. Explicit posts carry
their label in the content words; ambiguous posts use stereotype framing
whose label depends on which group is named, so SGT identity carries
label signal that counterfactual pairing has to trade off against.
"""
from __future__ import annotations

import numpy as np

from .corpus import Corpus, Document

TARGETED = ("muslim", "jewish", "black", "mexican")
OTHERS = ("christian", "buddhist", "white", "canadian")
STEREOTYPE_SGTS = {
    "muslim": "religion", "jewish": "religion", "christian": "religion", "buddhist": "religion",
    "black": "race", "white": "race", "mexican": "nationality", "canadian": "nationality",
}

_OPENERS = ["honestly", "look", "so", "today", "again", "well", "yesterday", "listen"]
_NOUNS = ["people", "folks", "guys", "families", "neighbors", "workers", "students", "men"]
_HATEFUL = ["are vermin", "are subhuman filth", "should be exterminated", "are disgusting parasites",
            "deserve to die", "are scum", "must be wiped out", "are animals"]
_BENIGN = ["are lovely", "helped me move", "run a great bakery", "are so kind", "joined our club",
           "cooked dinner for us", "are good friends", "won the game"]
_AMBIGUOUS = ["are taking over everything", "keep flooding in", "are behind all of it",
              "always stick together", "are everywhere now", "control too much"]
_CLOSERS = ["", "", "i think", "for sure", "as usual", "apparently", "lol", "right"]


def stereotype_corpus(n: int = 500, seed: int = 0, ambiguous_share: float = 0.4,
                      base_rate_targeted: float = 0.5, base_rate_other: float = 0.2,
                      prefix: str = "s") -> Corpus:
    rng = np.random.default_rng(seed)
    sgts = TARGETED + OTHERS
    docs = []
    for i in range(n):
        sgt = sgts[rng.integers(len(sgts))]
        targeted = sgt in TARGETED
        if rng.random() < ambiguous_share:
            # framing is mostly seen with targeted groups
            if not targeted and rng.random() < 0.5:
                sgt = TARGETED[rng.integers(len(TARGETED))]
                targeted = True
            content = _AMBIGUOUS[rng.integers(len(_AMBIGUOUS))]
            label = int(targeted)
        else:
            label = int(rng.random() < (base_rate_targeted if targeted else base_rate_other))
            pool = _HATEFUL if label else _BENIGN
            content = pool[rng.integers(len(pool))]
        words = [_OPENERS[rng.integers(len(_OPENERS))], "the", sgt, _NOUNS[rng.integers(len(_NOUNS))],
                 content, _CLOSERS[rng.integers(len(_CLOSERS))]]
        docs.append(Document(f"{prefix}{i:04d}", " ".join(w for w in words if w), label))
    return Corpus(docs, source=f"synthetic:stereotype:{seed}")


def stereotype_lexicon_lines() -> list[str]:
    return [f"{s}\t{c}" for s, c in STEREOTYPE_SGTS.items()]


def neutral_corpus(n: int = 200, seed: int = 1, prefix: str = "n") -> Corpus:
    """Non-hateful posts, one SGT each, for false-positive-rate spreads."""
    rng = np.random.default_rng(seed)
    sgts = TARGETED + OTHERS
    docs = []
    for i in range(n):
        sgt = sgts[i % len(sgts)]
        words = [_OPENERS[rng.integers(len(_OPENERS))], "the", sgt, _NOUNS[rng.integers(len(_NOUNS))],
                 _BENIGN[rng.integers(len(_BENIGN))]]
        docs.append(Document(f"{prefix}{i:04d}", " ".join(words), 0))
    return Corpus(docs, source=f"synthetic:neutral:{seed}")
