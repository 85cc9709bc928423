"""Command-line entry point: ``topicrank <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from . import corpus as corpus_mod
from .corpus import CorpusError
from .embeddings import (
    CacheMiss,
    CacheProvider,
    EmbeddingError,
    EmbeddingProviderConfig,
    SyntheticProvider,
    make_provider,
    read_pairs,
    write_embedding_cache,
)
from .evaluation import EvaluationError, MetricReport, evaluate, format_table, read_report, write_report
from .matching import export_kernel_heatmaps, write_heatmap_csv
from .pipeline import (
    MODEL_NAMES,
    Pipeline,
    RunConfig,
    StageError,
    load_config,
    run_pipeline,
    topic_training_docs,
)
from .profiles import (
    ProfileError,
    build_profiles,
    export_profile_scatter,
    histories_from_corpus,
    read_profiles,
    write_profiles,
    write_scatter,
)
from .ranker import CheckpointError, NumericError, load_head, rank, ranking_fn, save_head, train, write_train_log
from .synthetic import SyntheticSpec, SyntheticSpecError, generate_synthetic
from .topics import (
    TopicModelConfig,
    TopicModelError,
    coherence,
    load_model,
    save_model,
    sweep_topic_count,
    train_lda,
    write_sweep,
)

logger = logging.getLogger("topicrank")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

DATA_ERRORS = (
    CorpusError, TopicModelError, ProfileError, EmbeddingError, CacheMiss, CheckpointError,
    EvaluationError, SyntheticSpecError, FileNotFoundError, KeyError, ValueError, OSError,
)
NUMERIC_ERRORS = (NumericError, ArithmeticError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _ids(text: str) -> List[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _ints(text: str) -> List[int]:
    return [int(x) for x in _ids(text)]


# --- shared helpers ---------------------------------------------------------

def _config(args) -> RunConfig:
    cfg = load_config(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        cfg.apply_seed(args.seed)
    return cfg


def _resource(args, cfg: RunConfig, name: str, default: str) -> Path:
    value = getattr(args, name, None)
    return Path(value) if value else Path(cfg.workdir) / default


def _load_pipeline(args, cfg: RunConfig, ablate: bool = False):
    docs, split = corpus_mod.read_split(_resource(args, cfg, "corpus", "corpus"),
                                        cfg.max_query_len, cfg.max_doc_len)
    model = load_model(_resource(args, cfg, "model", "lda.model"))
    profiles = read_profiles(_resource(args, cfg, "profiles", "profiles.tsv"))
    if getattr(args, "emb", None):
        provider = CacheProvider(args.emb)
    else:
        provider = make_provider(cfg.embeddings)
    return Pipeline(docs, model, profiles, provider, ablate_interest=ablate), split


def _add_resources(p: argparse.ArgumentParser) -> None:
    p.add_argument("--corpus", help="corpus directory written by 'ingest' (default <workdir>/corpus)")
    p.add_argument("--model", help="topic model file (default <workdir>/lda.model)")
    p.add_argument("--profiles", help="profiles file (default <workdir>/profiles.tsv)")
    p.add_argument("--emb", help="embedding cache; omitted -> synthetic provider from the config")


def _ablate(args) -> bool:
    return getattr(args, "ablate", None) == "interest"


# --- subcommands ------------------------------------------------------------

def cmd_ingest(args) -> int:
    cfg = _config(args)
    docs, imps = corpus_mod.ingest(args.log, args.docs, args.max_query_len or cfg.max_query_len,
                                   args.max_doc_len or cfg.max_doc_len)
    fraction = args.history_fraction if args.history_fraction is not None else cfg.history_fraction
    split = corpus_mod.split(imps, fraction)
    corpus_mod.write_split(split, docs, args.out)
    print(f"{len(docs)} documents, {len(imps)} impressions -> history {sum(map(len, split.history.values()))}, "
          f"train {len(split.train)}, validation {len(split.validation)}, test {len(split.test)}; "
          f"{len(split.cold_users)} user(s) without history")
    return EXIT_OK


def cmd_generate(args) -> int:
    cfg = _config(args)
    spec = cfg.synthetic
    overrides = {
        "user_count": args.users, "true_topic_count": args.topics, "vocab_size": args.vocab,
        "docs_per_user": args.docs_per_user, "candidates_per_impression": args.candidates,
        "click_noise": args.noise, "doc_count": args.doc_count,
    }
    params = {**spec.__dict__, **{k: v for k, v in overrides.items() if v is not None}}
    syn = generate_synthetic(SyntheticSpec(**params))
    log_path, docs_path = syn.write(args.out)
    print(f"wrote {log_path} ({len(syn.impressions)} impressions) and {docs_path} ({len(syn.docs)} documents)")
    return EXIT_OK


def _topic_config(args, cfg: RunConfig) -> TopicModelConfig:
    params = dict(cfg.topics.__dict__)
    n_topics = args.topics if getattr(args, "topics", None) is not None else cfg.topics.n_topics
    if getattr(args, "alpha", None) is not None:
        params["alpha"] = args.alpha
    elif n_topics != cfg.topics.n_topics:
        params["alpha"] = None
    params["n_topics"] = n_topics
    for key, attr in (("iterations", "iters"), ("beta", "beta"), ("min_df", "min_df")):
        if getattr(args, attr, None) is not None:
            params[key] = getattr(args, attr)
    return TopicModelConfig(**params)


def cmd_train_lda(args) -> int:
    cfg = _config(args)
    docs = corpus_mod.read_docs(args.docs, cfg.max_doc_len)
    if args.history:
        _, split = corpus_mod.read_split(args.history, cfg.max_query_len, cfg.max_doc_len)
        docs = topic_training_docs(docs, split)
    model = train_lda(docs, _topic_config(args, cfg))
    model.source = str(args.docs)
    save_model(model, args.out)
    print(f"trained T={model.n_topics} on {len(model.doc_ids)} documents, "
          f"vocabulary {len(model.vocabulary)}; final log-likelihood {model.loglik[-1]:.1f}")
    return EXIT_OK


def cmd_coherence(args) -> int:
    cfg = _config(args)
    model = load_model(args.model)
    docs_path = args.docs or model.source
    if not docs_path:
        raise UsageError("model records no document source; pass --docs")
    docs = corpus_mod.read_docs(docs_path, cfg.max_doc_len)
    coh = coherence(model, docs, args.topk)
    lines = ["topic,coherence,top_words"]
    for t, (score, words) in enumerate(zip(coh.per_topic, coh.top_words)):
        lines.append(f"{t},{float(score)!r},{' '.join(words)}")
    lines.append(f"mean,{float(coh.mean)!r},")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .pipeline import fit_and_evaluate
    from .plots import plot_sweep

    cfg = _config(args)
    docs, split = corpus_mod.read_split(args.corpus, cfg.max_query_len, cfg.max_doc_len)
    lda_docs = topic_training_docs(docs, split)
    base = _topic_config(args, cfg)
    evaluator = None
    if not args.no_eval:
        provider = CacheProvider(args.emb) if args.emb else make_provider(cfg.embeddings)

        def evaluator(model):
            pipe = Pipeline(docs, model, {}, provider)
            pipe.profiles = build_profiles(histories_from_corpus(split), pipe.doc_topics, model.n_topics)
            return fit_and_evaluate(pipe, split, cfg.training)[1]

    rows = sweep_topic_count(lda_docs, args.topics_list, base, evaluator, top_k=args.topk)
    write_sweep(rows, args.out)
    plot_sweep(rows, Path(args.out).with_suffix(".png"))
    for r in rows:
        status = r.error or f"coherence {r.coherence:.4f}  MRR {r.mrr:.4f}  A.Clk {r.a_clk:.3f}"
        print(f"T={r.n_topics:<4d} {status}")
    return EXIT_OK


def cmd_build_profiles(args) -> int:
    cfg = _config(args)
    docs, split = corpus_mod.read_split(args.history, cfg.max_query_len, cfg.max_doc_len)
    model = load_model(args.model)
    pipe = Pipeline(docs, model, {}, None)
    profiles = build_profiles(histories_from_corpus(split, args.multiset), pipe.doc_topics, model.n_topics)
    write_profiles(profiles, args.out)
    cold = sum(p.cold_start for p in profiles.values())
    print(f"wrote {len(profiles)} profiles ({cold} cold-start) to {args.out}")
    return EXIT_OK


def cmd_export_scatter(args) -> int:
    from .plots import plot_profile_scatter

    profiles = read_profiles(args.profiles)
    points, degenerate = export_profile_scatter([profiles[u] for u in sorted(profiles)])
    write_scatter(points, args.out)
    plot_profile_scatter(points, Path(args.out).with_suffix(".png"))
    if degenerate:
        print("warning: all profiles identical; every coordinate is zero", file=sys.stderr)
    print(f"wrote {len(points)} points to {args.out}")
    return EXIT_OK


def cmd_cache_embeddings(args) -> int:
    cfg = _config(args)
    if args.provider != "synthetic":
        raise UsageError("only the synthetic provider can generate vectors; import real ones as a cache file")
    docs = corpus_mod.read_docs(args.docs, cfg.max_doc_len)
    e = cfg.embeddings
    provider = SyntheticProvider(args.layers or e.layers, args.dim or e.dim, e.seed,
                                 args.window if args.window is not None else e.window)
    n = write_embedding_cache(read_pairs(args.pairs, docs), provider, args.out)
    print(f"wrote {n} pair record(s) to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .plots import plot_training_curve

    cfg = _config(args)
    pipe, split = _load_pipeline(args, cfg, _ablate(args))
    result = train(split, pipe.features, cfg.training, dim=pipe.feature_dim)
    save_head(result.head, args.out, pipe.bank, pipe.n_layers, pipe.n_topics)
    log_path = Path(args.out).with_suffix(".log.csv")
    write_train_log(result.log, log_path)
    plot_training_curve(result.log, log_path.with_suffix(".png"))
    for e in result.log:
        print(f"epoch {e.epoch:2d}  loss {e.mean_loss:.4f}  pairs {e.pairs}  val MRR {e.val_mrr:.4f}")
    print(f"kept epoch {result.best_epoch}; checkpoint {args.out}")
    return EXIT_OK


def cmd_rank(args) -> int:
    cfg = _config(args)
    pipe, _ = _load_pipeline(args, cfg, _ablate(args))
    head = load_head(args.head, pipe.n_layers, pipe.bank).head
    tokens = corpus_mod.tokenize(args.query, cfg.max_query_len)
    for pos, (doc_id, s) in enumerate(rank(head, pipe.features, args.user, tokens, _ids(args.candidates)), 1):
        print(f"{pos}\t{doc_id}\t{s:.6f}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .plots import plot_report

    cfg = _config(args)
    ablate = _ablate(args)
    pipe, split = _load_pipeline(args, cfg, ablate)
    head = load_head(args.head, pipe.n_layers, pipe.bank).head
    impressions = [imp for imp in split.partition(args.split) if imp.clicked]
    report = evaluate(impressions, ranking_fn(head, pipe.features))
    name = args.name or MODEL_NAMES[ablate]
    rows = []
    if args.append and Path(args.out).exists():
        rows = [r for r in read_report(args.out) if r[0] != name]
    rows.append((name, report))
    write_report(rows, args.out)
    table = format_table(rows)
    Path(args.out).with_suffix(".txt").write_text(table + "\n", encoding="utf-8")
    plot_report(rows, Path(args.out).with_suffix(".png"))
    print(table)
    return EXIT_OK


def cmd_export_heatmaps(args) -> int:
    from .plots import plot_interest_heatmap, plot_layer_heatmap

    cfg = _config(args)
    pipe, split = _load_pipeline(args, cfg)
    tokens = corpus_mod.tokenize(args.query, cfg.max_query_len)
    doc_ids = _ids(args.docs)
    for d in doc_ids:
        if d not in pipe.docs:
            raise KeyError(f"unknown doc_id {d!r}")
    interest, layers = export_kernel_heatmaps(pipe, args.user, tokens, doc_ids)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_heatmap_csv(interest, "doc_id,kernel_mu,value", out / "interest.csv")
    write_heatmap_csv(layers, "layer,kernel_mu,value", out / "layers.csv")
    clicked = {d for imp in split.partition("test") + split.validation + split.train
               if imp.user_id == args.user and imp.query.tokens == tokens for d in imp.clicked}
    plot_interest_heatmap(interest, out / "interest.png", clicked=clicked)
    plot_layer_heatmap(layers, out / "layers.png")
    print(f"wrote {len(interest)} interest rows and {len(layers)} layer rows to {out}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args)
    if args.workdir:
        cfg.workdir = args.workdir
    result = run_pipeline(cfg, force=args.force, ablate_interest=_ablate(args), figures=not args.no_figures)
    print(format_table([(result.model_name, result.report)]))
    print(f"stages run: {', '.join(result.stages_run) or 'none (all up to date)'}; report {result.report_path}")
    return EXIT_OK


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="INI config file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="global seed override")
    common.add_argument("--force", action="store_true", default=argparse.SUPPRESS,
                        help="re-run stages whose outputs exist")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = _Parser(prog="topicrank", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_, parents=[common])
        p.set_defaults(func=func)
        return p

    p = add("ingest", cmd_ingest, "tokenize a click log and split it into history/train/validation/test")
    p.add_argument("--log", required=True)
    p.add_argument("--docs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--history-fraction", type=float)
    p.add_argument("--max-query-len", type=int)
    p.add_argument("--max-doc-len", type=int)

    p = add("generate-synthetic", cmd_generate, "write a synthetic click log and document table")
    p.add_argument("--out", required=True)
    p.add_argument("--users", type=int)
    p.add_argument("--topics", type=int)
    p.add_argument("--vocab", type=int)
    p.add_argument("--docs-per-user", type=int)
    p.add_argument("--candidates", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--doc-count", type=int)

    p = add("train-lda", cmd_train_lda, "train the topic model")
    p.add_argument("--docs", required=True)
    p.add_argument("--history", help="corpus directory; restrict training to documents clicked in history")
    p.add_argument("--topics", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--min-df", type=int)
    p.add_argument("--out", required=True)

    p = add("coherence", cmd_coherence, "UMass coherence of a trained topic model")
    p.add_argument("--model", required=True)
    p.add_argument("--docs", help="document table (default: the model's training source)")
    p.add_argument("--topk", type=int, default=10)
    p.add_argument("--out")

    p = add("sweep-topics", cmd_sweep, "train and evaluate one pipeline per topic count")
    p.add_argument("--corpus", required=True)
    p.add_argument("--topics", dest="topics_list", type=_ints, required=True, help="comma-separated counts")
    p.add_argument("--iters", type=int)
    p.add_argument("--min-df", type=int)
    p.add_argument("--topk", type=int, default=10)
    p.add_argument("--emb")
    p.add_argument("--no-eval", action="store_true", help="coherence only")
    p.add_argument("--out", required=True)

    p = add("build-profiles", cmd_build_profiles, "average clicked-document topics per user")
    p.add_argument("--model", required=True)
    p.add_argument("--history", required=True, help="corpus directory written by 'ingest'")
    p.add_argument("--multiset", action="store_true", help="weight repeated clicks")
    p.add_argument("--out", required=True)

    p = add("export-scatter", cmd_export_scatter, "2-D PCA projection of user profiles")
    p.add_argument("--profiles", required=True)
    p.add_argument("--out", required=True)

    p = add("cache-embeddings", cmd_cache_embeddings, "write an embedding cache for query/doc pairs")
    p.add_argument("--pairs", required=True, help="TSV of query text<TAB>doc_id")
    p.add_argument("--docs", required=True)
    p.add_argument("--provider", default="synthetic")
    p.add_argument("--layers", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--window", type=int)
    p.add_argument("--out", required=True)

    p = add("train", cmd_train, "train the scoring head")
    _add_resources(p)
    p.add_argument("--ablate", choices=["interest"])
    p.add_argument("--out", required=True)

    p = add("rank", cmd_rank, "rank candidates for one user and query")
    _add_resources(p)
    p.add_argument("--head", required=True)
    p.add_argument("--user", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--ablate", choices=["interest"])

    p = add("evaluate", cmd_evaluate, "MAP/MRR/P@1/A.Clk on a partition")
    _add_resources(p)
    p.add_argument("--head", required=True)
    p.add_argument("--split", default="test", choices=["train", "validation", "test"])
    p.add_argument("--ablate", choices=["interest"])
    p.add_argument("--name", help="row label (default by ablation)")
    p.add_argument("--append", action="store_true", help="add/replace this row in an existing report")
    p.add_argument("--out", required=True)

    p = add("export-heatmaps", cmd_export_heatmaps, "interest and per-layer kernel activations")
    _add_resources(p)
    p.add_argument("--user", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--docs", required=True, help="comma-separated doc_ids")
    p.add_argument("--out", required=True)

    p = add("run", cmd_run, "run every stage end to end")
    p.add_argument("--workdir")
    p.add_argument("--ablate", choices=["interest"])
    p.add_argument("--no-figures", action="store_true")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.force = getattr(args, "force", False)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"topicrank: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StageError as exc:
        print(f"topicrank: {exc}", file=sys.stderr)
        return EXIT_NUMERIC if isinstance(exc.cause, NUMERIC_ERRORS) else EXIT_DATA
    except NUMERIC_ERRORS as exc:
        print(f"topicrank: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DATA_ERRORS as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"topicrank: data error: {msg}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
