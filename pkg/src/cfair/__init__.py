"""Counterfactual fairness toolkit for hate-speech classifiers.

Detects social group tokens (SGTs), builds likelihood-filtered
counterfactual sentences, trains a linear classifier with counterfactual
logit pairing and reports counterfactual and group fairness metrics.
"""
__version__ = "0.1.0"

from ._backend import BACKEND, HAVE_NUMBA
from .classifier import (HATE, NONHATE, ClassifierParams, FeatureVector, TrainConfig, TrainLog, TrainingError,
                         clp_gradient, clp_loss, featurize, logits, predict, train)
from .corpus import (Corpus, CorpusError, Document, filter_by_sgt_count, load_corpus, split_by_sgt_ratio,
                     stratified_folds)
from .counterfactuals import (CounterfactualEntry, CounterfactualSet, GenerateOptions, GenerationError,
                              RankReport, Strategy, generate, generate_corpus, rank_report, substitute_mention)
from .lexicon import (LexiconError, SgtLexicon, SgtMention, Sgt, SocialCategory, detect_sgts,
                      load_default_lexicon, load_lexicon, tokenize)
from .lm import CachedScorer, ExternalScorer, NgramModel, ScorerError, UnigramTableScorer, train_ngram
from .metrics import FairnessReport, ctf_absdiff, ctf_cosine, equality_of_odds_report, per_sgt_rates

__all__ = [
    "BACKEND", "HAVE_NUMBA", "HATE", "NONHATE",
    "CachedScorer", "ClassifierParams", "Corpus", "CorpusError", "CounterfactualEntry", "CounterfactualSet",
    "Document", "ExternalScorer", "FairnessReport", "FeatureVector", "GenerateOptions", "GenerationError",
    "LexiconError", "NgramModel", "RankReport", "ScorerError", "Sgt", "SgtLexicon", "SgtMention",
    "SocialCategory", "Strategy", "TrainConfig", "TrainLog", "TrainingError", "UnigramTableScorer",
    "clp_gradient", "clp_loss", "ctf_absdiff", "ctf_cosine", "detect_sgts", "equality_of_odds_report",
    "featurize", "filter_by_sgt_count", "generate", "generate_corpus", "load_corpus", "load_default_lexicon",
    "load_lexicon", "logits", "per_sgt_rates", "predict", "rank_report", "split_by_sgt_ratio",
    "stratified_folds", "substitute_mention", "tokenize", "train", "train_ngram",
]
