"""``cfair`` command-line entry point.

Every command reads one JSON config file. Paths inside it are resolved
relative to the config file; ``builtin:NAME`` names a file shipped in
``cfair/data``. Artifacts land in fixed subdirectories of the output
directory; the only non-deterministic bytes (timestamps, cache counters)
go to ``<out>/<command>.meta.json``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional, Sequence

from . import __version__
from ._backend import BACKEND
from .classifier import ClassifierParams, TrainConfig, TrainingError, build_training_data, fit
from .corpus import Corpus, CorpusError, filter_by_sgt_count, load_corpus
from .counterfactuals import (GenerateOptions, GenerationError, Strategy, dump_cfsets, generate_corpus,
                              load_cfsets, load_embeddings, perturb_corpus, rank_report)
from .lexicon import LexiconError, SgtLexicon, load_default_lexicon, load_lexicon
from .lm import CachedScorer, ExternalScorer, NgramModel, ScorerError, train_ngram
from .metrics import REPORT_COLUMNS, equality_of_odds_report, rows_to_csv

log = logging.getLogger("cfair")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
SWEEP_COLUMNS = ["lambda", "accuracy", "f1", "ctf_absdiff", "ctf_cosine", "std_tp", "std_tn", "std_fpr"]
_PATH_KEYS = ("lexicon", "categories", "corpus", "test", "perturbed", "fpr_corpus", "embeddings",
              "cfsets", "model")
_TOP_KEYS = set(_PATH_KEYS) | {"seed", "output_dir", "strategy", "scorer", "gen_cf", "train", "eval",
                               "lambda_sweep", "rank_report"}


class ConfigError(Exception):
    def __init__(self, fieldname: str, message: str):
        super().__init__(f"config field {fieldname!r}: {message}")
        self.field = fieldname


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- config ---------------------------------------------------------------

@dataclass
class RunConfig:
    command: str
    seed: int
    out: Path
    jobs: int = 1
    paths: dict[str, Path] = field(default_factory=dict)
    builtin_lexicon: Optional[str] = None
    strategy: Optional[str] = "ACL"
    scorer: dict = field(default_factory=dict)
    gen_cf: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: dict = field(default_factory=dict)
    lambdas: list[float] = field(default_factory=list)
    rank_single_only: bool = True
    raw: dict = field(default_factory=dict)

    def path(self, key: str) -> Optional[Path]:
        return self.paths.get(key)


_REQUIRED = {
    "detect": ("lexicon", "corpus"),
    "train-lm": ("corpus",),
    "score": ("corpus",),
    "gen-cf": ("lexicon", "corpus"),
    "rank-report": ("lexicon", "corpus"),
    "train": ("lexicon", "corpus"),
    "eval": ("lexicon", "test"),
    "lambda-sweep": ("lexicon", "corpus"),
}


def _builtin(name: str) -> Path:
    p = Path(str(resources.files("cfair").joinpath("data", name)))
    if not p.is_file():
        raise FileNotFoundError(name)
    return p


def _resolve(key: str, value, base: Path) -> Path:
    if not isinstance(value, str) or not value:
        raise ConfigError(key, "expected a non-empty path string")
    if value.startswith("builtin:"):
        try:
            return _builtin(value[len("builtin:"):])
        except FileNotFoundError:
            raise ConfigError(key, f"no shipped file named {value!r}") from None
    p = Path(value)
    p = p if p.is_absolute() else base / p
    if not p.exists():
        raise ConfigError(key, f"path does not exist: {p}")
    return p


def _section(raw: dict, name: str) -> dict:
    sec = raw.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(name, "expected an object")
    return sec


def load_config(args: argparse.Namespace) -> RunConfig:
    cfg_path = Path(args.config)
    try:
        raw = json.loads(cfg_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError("--config", f"file not found: {cfg_path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError("--config", f"{cfg_path}:{e.lineno}: invalid JSON ({e.msg})") from None
    if not isinstance(raw, dict):
        raise ConfigError("--config", "top level must be a JSON object")
    unknown = sorted(set(raw) - _TOP_KEYS)
    if unknown:
        raise ConfigError(unknown[0], "unknown field")
    base = cfg_path.resolve().parent

    seed = args.seed if args.seed is not None else raw.get("seed")
    if seed is None:
        raise ConfigError("seed", "missing (seed is mandatory)")
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed", "expected a non-negative integer")

    out = args.out if args.out is not None else raw.get("output_dir")
    if out is None:
        raise ConfigError("output_dir", "missing (or pass --out)")
    out = Path(out)
    if args.out is None and not out.is_absolute():
        out = base / out

    cfg = RunConfig(command=args.command, seed=seed, out=out, jobs=args.jobs, raw=raw)

    if args.command == "eval" and "model" not in raw:
        default_model = out / "models" / "model.json"
        raw = dict(raw, model=str(default_model.resolve()))
    for key in _PATH_KEYS:
        if key not in raw or raw[key] is None:
            continue
        if key == "lexicon" and raw[key] == "default":
            cfg.builtin_lexicon = "default"
            continue
        cfg.paths[key] = _resolve(key, raw[key], base)
    for key in _REQUIRED[args.command]:
        if key not in cfg.paths and not (key == "lexicon" and cfg.builtin_lexicon):
            raise ConfigError(key, "missing")
    if args.command == "eval" and "model" not in cfg.paths:
        raise ConfigError("model", "missing")

    strategy = args.strategy if args.strategy is not None else raw.get("strategy", "ACL")
    if strategy is not None and str(strategy).lower() != "none":
        try:
            strategy = Strategy.parse(strategy).value
        except ValueError as e:
            raise ConfigError("strategy", str(e)) from None
    else:
        strategy = None
    cfg.strategy = strategy

    cfg.scorer = dict(_section(raw, "scorer"))
    kind = cfg.scorer.setdefault("kind", "ngram")
    if kind not in ("ngram", "external"):
        raise ConfigError("scorer.kind", f"expected 'ngram' or 'external', got {kind!r}")
    if kind == "external":
        cmd = cfg.scorer.get("command")
        if not isinstance(cmd, list) or not cmd or not all(isinstance(c, str) for c in cmd):
            raise ConfigError("scorer.command", "expected a non-empty list of strings")
    for key in ("model", "train_corpus"):
        if cfg.scorer.get(key) is not None:
            cfg.scorer[key] = _resolve(f"scorer.{key}", cfg.scorer[key], base)

    cfg.gen_cf = _section(raw, "gen_cf")
    train_raw = dict(_section(raw, "train"))
    if "seed" in train_raw:
        raise ConfigError("train.seed", "use the top-level seed")
    if "strategy" in train_raw:
        raise ConfigError("train.strategy", "use the top-level strategy")
    if args.lam is not None:
        train_raw["lambda"] = args.lam
    try:
        cfg.train = TrainConfig.from_dict({**train_raw, "seed": seed, "strategy": strategy})
    except (TypeError, ValueError) as e:
        raise ConfigError("train", str(e)) from None

    cfg.eval = _section(raw, "eval")
    rr = _section(raw, "rank_report")
    cfg.rank_single_only = bool(rr.get("single_sgt_only", True))
    if args.command == "lambda-sweep":
        lambdas = args.lambdas if args.lambdas is not None else _section(raw, "lambda_sweep").get("lambdas")
        if lambdas is None:
            raise ConfigError("lambda_sweep.lambdas", "missing (or pass --lambdas)")
        if isinstance(lambdas, str):
            lambdas = [x for x in lambdas.split(",") if x.strip()]
        try:
            lambdas = [float(x) for x in lambdas]
        except (TypeError, ValueError):
            raise ConfigError("lambda_sweep.lambdas", "expected a list of numbers") from None
        if not lambdas:
            raise ConfigError("lambda_sweep.lambdas", "empty list")
        if any(x < 0 for x in lambdas):
            raise ConfigError("lambda_sweep.lambdas", "values must be >= 0")
        cfg.lambdas = lambdas
    return cfg


# -- shared loaders -------------------------------------------------------

class _Context:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self._lexicon: Optional[SgtLexicon] = None
        self._scorer = None
        self._closers = []
        self.meta: dict[str, Any] = {}

    def lexicon(self) -> SgtLexicon:
        if self._lexicon is None:
            if self.cfg.builtin_lexicon:
                self._lexicon = load_default_lexicon()
            else:
                self._lexicon = load_lexicon(self.cfg.path("lexicon"), self.cfg.path("categories"))
        return self._lexicon

    def corpus(self, key: str = "corpus") -> Corpus:
        return load_corpus(self.cfg.path(key))

    def language_model(self) -> NgramModel:
        sc = self.cfg.scorer
        if sc.get("model") is not None:
            return NgramModel.load(sc["model"])
        src = sc.get("train_corpus") or self.cfg.path("corpus")
        if src is None:
            raise ConfigError("scorer.train_corpus", "missing (no corpus to train the language model on)")
        return train_ngram(load_corpus(src), order=int(sc.get("order", 3)),
                           discount=float(sc.get("discount", 0.75)))

    def scorer(self):
        if self._scorer is None:
            sc = self.cfg.scorer
            if sc["kind"] == "external":
                ext = ExternalScorer.spawn(sc["command"], timeout=float(sc.get("timeout", 30.0)))
                self._closers.append(ext.close)
                base = ext
            else:
                base = self.language_model()
            self._scorer = CachedScorer(base)
        return self._scorer

    def options(self, docs: Sequence) -> GenerateOptions:
        g = self.cfg.gen_cf
        emb = None
        if self.cfg.path("embeddings") is not None:
            emb = load_embeddings(self.cfg.path("embeddings"))
        vocab = sorted({t for d in docs for t in d.tokens})
        return GenerateOptions(vocabulary=vocab, embeddings=emb, seed=self.cfg.seed,
                               k_random=int(g.get("k_random", 10)), k_similar=int(g.get("k_similar", 10)),
                               per_token=bool(self.cfg.scorer.get("per_token", False)))

    def close(self):
        for c in self._closers:
            c()
        if self._scorer is not None:
            self.meta["scorer_cache"] = self._scorer.stats()


def _subdir(cfg: RunConfig, name: str) -> Path:
    d = cfg.out / name
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False, allow_nan=False) + "\n",
                    encoding="utf-8")


def _write_text(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(text)


# -- commands -------------------------------------------------------------

def cmd_detect(ctx: _Context) -> list[Path]:
    lex = ctx.lexicon()
    corpus = ctx.corpus()
    path = _subdir(ctx.cfg, "mentions") / "mentions.jsonl"
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for d in corpus:
            ms = [{"sgt": m.sgt.text, "category": m.sgt.category, "start": m.start, "end": m.end}
                  for m in d.mentions(lex)]
            f.write(json.dumps({"doc_id": d.id, "mentions": ms}, ensure_ascii=False) + "\n")
    return [path]


def cmd_train_lm(ctx: _Context) -> list[Path]:
    model = ctx.language_model()
    path = _subdir(ctx.cfg, "models") / "lm.bin"
    model.save(path)
    ctx.meta["lm_fingerprint"] = model.fingerprint
    return [path]


def cmd_score(ctx: _Context) -> list[Path]:
    corpus = ctx.corpus()
    scorer = ctx.scorer()
    values = scorer.score_texts([" ".join(d.tokens) for d in corpus])
    if ctx.cfg.scorer.get("per_token", False):
        values = [v / max(len(d.tokens), 1) for v, d in zip(values, corpus)]
    rows = [{"doc_id": d.id, "loglik": float(v)} for d, v in zip(corpus, values)]
    path = _subdir(ctx.cfg, "scores") / "scores.csv"
    _write_text(path, rows_to_csv(rows, ["doc_id", "loglik"]))
    return [path]


def cmd_gen_cf(ctx: _Context) -> list[Path]:
    if ctx.cfg.strategy is None:
        raise ConfigError("strategy", "gen-cf needs a strategy")
    lex = ctx.lexicon()
    corpus = ctx.corpus()
    sets = generate_corpus(corpus, lex, ctx.scorer(), ctx.cfg.strategy, ctx.options(corpus), jobs=ctx.cfg.jobs)
    path = _subdir(ctx.cfg, "cfsets") / f"cfsets_{ctx.cfg.strategy}.jsonl"
    dump_cfsets(sets, path)
    ctx.meta["n_sets"] = len(sets)
    return [path]


def cmd_rank_report(ctx: _Context) -> list[Path]:
    lex = ctx.lexicon()
    corpus = ctx.corpus()
    if ctx.cfg.rank_single_only:
        kept = filter_by_sgt_count(corpus, lex, 1)
        ctx.meta["n_filtered_out"] = len(corpus) - len(kept)
        corpus = kept
    if not len(corpus):
        raise GenerationError("no documents with exactly one SGT mention")
    report = rank_report(corpus, lex, ctx.scorer(), per_token=bool(ctx.cfg.scorer.get("per_token", False)),
                         jobs=ctx.cfg.jobs)
    path = _subdir(ctx.cfg, "reports") / "rank_report.json"
    _write_json(path, report.to_json())
    return [path]


def _training_sets(ctx: _Context, corpus: Corpus):
    cfg = ctx.cfg
    if cfg.strategy is None:
        return []
    if cfg.path("cfsets") is not None and cfg.command in ("train", "lambda-sweep"):
        return load_cfsets(cfg.path("cfsets"), ctx.lexicon())
    # only the likelihood filter needs scores
    scorer = ctx.scorer() if cfg.strategy == Strategy.ACL.value else None
    return generate_corpus(corpus, ctx.lexicon(), scorer, cfg.strategy, ctx.options(corpus), jobs=cfg.jobs)


def _fit(ctx: _Context, corpus: Corpus, sets, config: TrainConfig):
    data = build_training_data(list(corpus), ctx.lexicon(), sets, config)
    return fit(data, config)


def cmd_train(ctx: _Context) -> list[Path]:
    corpus = ctx.corpus()
    sets = _training_sets(ctx, corpus)
    params, tlog = _fit(ctx, corpus, sets, ctx.cfg.train)
    d = _subdir(ctx.cfg, "models")
    model_path, log_path, summary_path = d / "model.json", d / "train_log.csv", d / "train_summary.json"
    params.save(model_path)
    tlog.write_csv(log_path)
    _write_json(summary_path, {"config": ctx.cfg.train.to_dict(), **tlog.summary(),
                               "epochs": [{"epoch": r.epoch, "loss": r.loss, "ce_loss": r.ce_loss,
                                           "pair_loss": r.pair_loss, "pair_loss_hate": r.pair_loss_hate,
                                           "pair_loss_nonhate": r.pair_loss_nonhate,
                                           "pair_share": r.pair_share} for r in tlog.epochs]})
    return [model_path, log_path, summary_path]


class _EvalData:
    """Test-side inputs shared by every model evaluated in one run."""

    def __init__(self, ctx: _Context, test: Corpus):
        cfg, lex = ctx.cfg, ctx.lexicon()
        self.test = test
        if cfg.path("perturbed") is not None:
            self.perturbed = load_corpus(cfg.path("perturbed"))
        elif cfg.eval.get("perturb", True):
            self.perturbed = perturb_corpus(test, lex)
        else:
            self.perturbed = Corpus([])
        self.fpr = load_corpus(cfg.path("fpr_corpus")) if cfg.path("fpr_corpus") is not None else Corpus([])
        if cfg.path("cfsets") is not None and cfg.command == "eval":
            self.cfsets = load_cfsets(cfg.path("cfsets"), lex)
        else:
            # every substitution of every test mention; logits do not need likelihoods
            self.cfsets = generate_corpus(test, lex, None, Strategy.ALL, GenerateOptions(), jobs=cfg.jobs)


def _evaluate(ctx: _Context, params: ClassifierParams, data: _EvalData):
    return equality_of_odds_report(params, data.test, data.perturbed, data.fpr, ctx.lexicon(), data.cfsets)


def cmd_eval(ctx: _Context) -> list[Path]:
    cfg = ctx.cfg
    params = ClassifierParams.load(cfg.path("model"))
    data = _EvalData(ctx, load_corpus(cfg.path("test")))
    report = _evaluate(ctx, params, data)
    d = _subdir(cfg, "reports")
    json_path, csv_path = d / "fairness.json", d / "fairness.csv"
    _write_json(json_path, report.to_json())
    row = report.csv_row(model=cfg.path("model").name, strategy=cfg.strategy or "none", lam=cfg.train.lam)
    _write_text(csv_path, rows_to_csv([row], REPORT_COLUMNS))
    return [json_path, csv_path]


def cmd_lambda_sweep(ctx: _Context) -> list[Path]:
    cfg = ctx.cfg
    corpus = ctx.corpus()
    sets = _training_sets(ctx, corpus)
    test = load_corpus(cfg.path("test")) if cfg.path("test") is not None else corpus
    data = _EvalData(ctx, test)
    rows = []
    base = cfg.train.to_dict()
    for lam in cfg.lambdas:
        config = TrainConfig.from_dict({**base, "lambda": lam})
        params, _ = _fit(ctx, corpus, sets, config)
        rep = _evaluate(ctx, params, data)
        rows.append({"lambda": lam, **{k: v for k, v in rep.csv_row().items() if k in SWEEP_COLUMNS[1:]}})
        log.info("lambda=%s accuracy=%s ctf_absdiff=%s", lam, rep.accuracy, rep.ctf_absdiff)
    path = _subdir(cfg, "reports") / "lambda_sweep.csv"
    _write_text(path, rows_to_csv(rows, SWEEP_COLUMNS))
    return [path]


COMMANDS = {
    "detect": cmd_detect,
    "train-lm": cmd_train_lm,
    "score": cmd_score,
    "gen-cf": cmd_gen_cf,
    "rank-report": cmd_rank_report,
    "train": cmd_train,
    "eval": cmd_eval,
    "lambda-sweep": cmd_lambda_sweep,
}


# -- entry point ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, metavar="PATH", help="JSON run configuration")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides output_dir)")
    common.add_argument("--seed", type=int, metavar="INT", help="overrides the config seed")
    common.add_argument("--jobs", type=int, default=1, metavar="INT", help="worker cap (outputs do not depend on it)")
    common.add_argument("--lambda", dest="lam", type=float, metavar="REAL", help="overrides train.lambda")
    common.add_argument("--strategy", metavar="NAME", help="ALL, ACL, NEG, SG, RAND, GV or none")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = _Parser(prog="cfair", description="Counterfactual fairness toolkit for text classifiers.")
    parser.add_argument("--version", action="version", version=f"cfair {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND", parser_class=_Parser)
    helps = {
        "detect": "find SGT mentions", "train-lm": "fit the n-gram language model",
        "score": "sentence log-likelihoods", "gen-cf": "generate counterfactual sets",
        "rank-report": "rank originals among their counterfactuals", "train": "train the classifier",
        "eval": "fairness report for a trained model", "lambda-sweep": "train and evaluate over several lambdas",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common], help=helps[name])
        if name == "lambda-sweep":
            p.add_argument("--lambdas", metavar="LIST", help="comma-separated lambdas (overrides lambda_sweep.lambdas)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if not hasattr(args, "lambdas"):
        args.lambdas = None
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="cfair: %(message)s", stream=sys.stderr)
    if args.jobs < 1:
        print("cfair: error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    started = time.time()
    ctx = None
    try:
        cfg = load_config(args)
        cfg.out.mkdir(parents=True, exist_ok=True)
        ctx = _Context(cfg)
        outputs = COMMANDS[args.command](ctx)
    except ConfigError as e:
        print(f"cfair: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (LexiconError, CorpusError, GenerationError, ScorerError, TrainingError,
            OSError, ValueError) as e:
        print(f"cfair: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    finally:
        if ctx is not None:
            ctx.close()
    meta = {
        "command": args.command, "argv": list(argv) if argv is not None else sys.argv[1:],
        "version": __version__, "backend": BACKEND, "jobs": args.jobs, "seed": cfg.seed,
        "started_at": time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime(started)),
        "elapsed_s": round(time.time() - started, 3),
        "outputs": [str(p) for p in outputs], **ctx.meta,
    }
    _write_json(cfg.out / f"{args.command}.meta.json", meta)
    return EXIT_OK


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
