"""Command-line driver.

Exit codes: 0 success, 1 usage error, 2 data error.  Logs go to standard
error; metric reports go to standard output as TSV.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .bitext import build_bitext, read_giza, write_giza
from .corpus import DataError, Vocabulary, read_qrels
from .evaluation import (RunFile, format_per_query, format_report, mrr, ndcg_at_k, paired_ttest,
                         read_run, write_run)
from .export import export_table
from .fusion import FeatureMatrix, FusionWeights, compute_features, coordinate_ascent, fuse_and_rank, model1_feature
from .index import Bm25Params, InvertedIndex, build_index, retrieve_many
from .neural import TrainConfig, load_checkpoint, save_checkpoint, train
from .pipeline import (candidates_from_run, encode_queries, index_store, load_corpus, read_splits,
                       tokenizer_config)
from .synth import SynthConfig, generate, write_synth
from .translation import EmConfig, Model1Scorer, TranslationTable, em_train, postprocess

log = logging.getLogger("model1ir")

COMMANDS = ("index", "retrieve", "build-bitext", "train-em", "train-nn", "export", "features",
            "fuse-train", "rank", "evaluate", "ttest", "gen-synth")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise DataError(f"path does not exist: {path}")
    return p


def _work(args, name: str) -> Path:
    return Path(args.work_dir) / name


def _out(args, value: str | None, default: str) -> Path:
    path = Path(value) if value else _work(args, default)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


# ---- shared loading ------------------------------------------------------------


def _load_index(args) -> tuple[InvertedIndex, Vocabulary, dict]:
    d = _existing(args.index or str(_work(args, "index")))
    index = InvertedIndex.load(d)
    vocab = Vocabulary.load(_existing(str(d / "vocab.tsv")))
    tok_path = d / "tokenizer.json"
    tok = json.loads(tok_path.read_text()) if tok_path.exists() else {"remove_stopwords": True, "stopwords": None}
    return index, vocab, tok


def _queries(args, vocab, tok) -> dict[str, np.ndarray]:
    config = tokenizer_config(tok["remove_stopwords"], tok["stopwords"])
    return encode_queries(_existing(args.queries), vocab, config)


def _split_ids(args, default_split: str | None) -> set[str] | None:
    if not args.splits:
        return None
    splits = read_splits(_existing(args.splits))
    name = args.split or default_split
    if name not in splits:
        raise DataError(f"{args.splits}: no split named {name!r}")
    return set(splits[name])


def _candidates(args):
    return candidates_from_run(read_run(_existing(args.candidates or str(_work(args, "candidates.run")))))


def _tables(specs: list[str]) -> dict[str, TranslationTable]:
    out = {}
    for spec in specs:
        name, sep, path = spec.partition("=")
        if not sep:
            name, path = "model1", spec
        out[name] = TranslationTable.read_binary(_existing(path))
    return out


# ---- commands --------------------------------------------------------------------


def cmd_index(args) -> int:
    tok = tokenizer_config(not args.keep_stopwords, args.stopwords)
    vocab, store, _ = load_corpus(_existing(args.collection), args.queries and _existing(args.queries),
                                  tok, args.vocab_cap)
    index = build_index(store, vocab, Bm25Params(args.k1, args.b))
    out = _out(args, args.out, "index")
    index.save(out, vocab)
    meta = {"remove_stopwords": not args.keep_stopwords, "stopwords": args.stopwords}
    tmp = out / "tokenizer.json.tmp"
    tmp.write_text(json.dumps(meta, sort_keys=True) + "\n")
    tmp.replace(out / "tokenizer.json")
    log.info("indexed %d documents, %d terms -> %s", index.n_docs, len(vocab), out)
    return 0


def cmd_retrieve(args) -> int:
    index, vocab, tok = _load_index(args)
    queries = _queries(args, vocab, tok)
    params = Bm25Params(args.k1 if args.k1 is not None else index.params.k1,
                        args.b if args.b is not None else index.params.b)
    start = time.perf_counter()
    ranked = retrieve_many(index, queries, args.k, params, args.threads)
    out = _out(args, args.out, "candidates.run")
    write_run(out, RunFile.from_candidates(ranked, "bm25"))
    log.info("retrieved %d queries in %.2fs -> %s", len(ranked), time.perf_counter() - start, out)
    return 0


def cmd_build_bitext(args) -> int:
    index, vocab, tok = _load_index(args)
    queries = _queries(args, vocab, tok)
    keep = _split_ids(args, "modeling")
    if keep is not None:
        queries = {q: v for q, v in queries.items() if q in keep}
    corpus = build_bitext(queries, read_qrels(_existing(args.qrels)), index_store(index), len(vocab),
                          args.chunk_len, not args.no_symmetrize)
    prefix = _out(args, args.out_prefix, "bitext")
    write_giza(corpus, vocab, f"{prefix}.src", f"{prefix}.tgt")
    log.info("bitext: %d pairs (%d missing docs) -> %s.{src,tgt}", len(corpus), corpus.skipped_missing, prefix)
    return 0


def cmd_train_em(args) -> int:
    index, vocab, _ = _load_index(args)
    prefix = args.bitext_prefix or str(_work(args, "bitext"))
    corpus = read_giza(vocab, _existing(f"{prefix}.src"), _existing(f"{prefix}.tgt"))
    config = EmConfig(args.iterations, args.prune, args.vocab_cap, args.p_self, not args.prune_first)
    table = postprocess(em_train(corpus, config.iterations, args.threads), config, vocab.freqs)
    out = _out(args, args.out, "em_table.bin")
    table.write_binary(out)
    if args.text_out:
        table.write_text(args.text_out, vocab)
    log.info("EM table: %d entries -> %s", table.nnz, out)
    return 0


def cmd_train_nn(args) -> int:
    index, vocab, tok = _load_index(args)
    queries = _queries(args, vocab, tok)
    keep = _split_ids(args, "modeling")
    if keep is not None:
        queries = {q: v for q, v in queries.items() if q in keep}
    cands = {q: c.doc_ids for q, c in _candidates(args).items() if q in queries}
    config = TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, lr_decay=args.lr_decay,
        warmup=args.warmup, weight_decay=args.weight_decay, margin=args.margin, n_neg=args.n_neg,
        pool_depth=args.pool_depth, seed=args.seed, emb_dim=args.emb_dim, proj_dim=args.proj_dim,
        hidden_dim=args.hidden_dim, p_self=args.p_self, use_self_mix=not args.no_self_mix, dtype=args.dtype)
    result = train(queries, read_qrels(_existing(args.qrels)), cands, index_store(index), len(vocab), config)
    out = _out(args, args.out, "nn.ckpt")
    save_checkpoint(result.params, out, config)
    log.info("trained %d epochs (%d queries skipped) -> %s", config.epochs, result.skipped_queries, out)
    return 0


def cmd_export(args) -> int:
    params, _ = load_checkpoint(_existing(args.checkpoint or str(_work(args, "nn.ckpt"))))
    table = export_table(params, threshold=args.threshold)
    out = _out(args, args.out, "nn_table.bin")
    table.write_binary(out)
    if args.text_out:
        _, vocab, _ = _load_index(args)
        table.write_text(args.text_out, vocab)
    log.info("exported %d entries (threshold %g) -> %s", table.nnz, args.threshold, out)
    return 0


def _feature_matrix(args, index, vocab, tok) -> tuple[FeatureMatrix, dict, dict]:
    queries = _queries(args, vocab, tok)
    cands = {q: c for q, c in _candidates(args).items() if q in queries and len(queries[q]) and len(c)}
    scorers = {name: Model1Scorer(t, index.stats, args.lam) for name, t in _tables(args.table).items()}
    fm = compute_features(queries, cands, index, {n: model1_feature(s, index) for n, s in scorers.items()})
    return fm, scorers, (queries, cands)


def cmd_features(args) -> int:
    index, vocab, tok = _load_index(args)
    fm, _, _ = _feature_matrix(args, index, vocab, tok)
    out = _out(args, args.out, "features.tsv")
    fm.write_tsv(out)
    log.info("features %s for %d queries -> %s", ",".join(fm.names), len(fm), out)
    return 0


def cmd_fuse_train(args) -> int:
    fm = FeatureMatrix.read_tsv(_existing(args.features or str(_work(args, "features.tsv"))))
    keep = _split_ids(args, "fusion")
    if keep is not None:
        fm = fm.subset(sorted(keep))
    weights = coordinate_ascent(fm, read_qrels(_existing(args.qrels)), args.metric, args.cutoff,
                                args.restarts, args.seed)
    out = _out(args, args.out, "fusion.json")
    weights.save(out)
    log.info("fusion weights %s (train %s@%d = %.4f) -> %s", weights.weights, args.metric, args.cutoff,
             weights.train_metric, out)
    return 0


def cmd_rank(args) -> int:
    index, vocab, tok = _load_index(args)
    if not args.table:
        raise UsageError("rank: at least one --table is required")
    fm, scorers, (queries, cands) = _feature_matrix(args, index, vocab, tok)
    keep = _split_ids(args, "test")
    if keep is not None:
        fm = fm.subset(sorted(keep))
    # throughput: sparse scoring only, as documents are already in memory
    elapsed, n_docs = 0.0, 0
    for q in sorted(fm.rows):
        ordinals = np.array([index.ordinal(d) for d in cands[q].doc_ids])
        tokens, offsets = index.gather(ordinals)
        for scorer in scorers.values():
            start = time.perf_counter()
            scorer.score(queries[q], tokens, offsets)
            elapsed += time.perf_counter() - start
            n_docs += len(ordinals)
    if n_docs:
        avg_len = float(np.mean([len(index.doc(index.ordinal(d))) for q in fm.rows for d in cands[q].doc_ids]))
        log.info("throughput: %.2f ms per 1000 docs (%d docs re-ranked, avg length %.1f tokens)",
                 1e6 * elapsed / n_docs, n_docs, avg_len)
    if args.weights:
        weights = FusionWeights.load(_existing(args.weights))
    else:
        first = next(iter(scorers))
        weights = FusionWeights({n: float(n == first) for n in fm.names})
    ranked = fuse_and_rank(fm, weights)
    out = _out(args, args.out, "rank.run")
    write_run(out, RunFile.from_candidates(ranked, args.tag))
    log.info("ranked %d queries -> %s", len(ranked), out)
    return 0


def cmd_evaluate(args) -> int:
    qrels = read_qrels(_existing(args.qrels))
    run = read_run(_existing(args.run))
    keep = _split_ids(args, "test")
    if keep is not None:
        run.entries = {q: v for q, v in run.entries.items() if q in keep}
    metrics = {f"mrr@{args.cutoff}": mrr(run, qrels, args.cutoff), f"ndcg@{args.ndcg_k}": ndcg_at_k(run, qrels, args.ndcg_k)}
    sys.stdout.write(format_report(metrics))
    if args.per_query:
        Path(args.per_query).write_text(format_per_query(metrics))
    return 0


def cmd_ttest(args) -> int:
    qrels = read_qrels(_existing(args.qrels))
    per = []
    for path in (args.run_a, args.run_b):
        run = read_run(_existing(path))
        res = mrr(run, qrels, args.cutoff) if args.metric == "mrr" else ndcg_at_k(run, qrels, args.cutoff)
        per.append(res.per_query)
    t, p = paired_ttest(per[0], per[1])
    n = len(set(per[0]) & set(per[1]))
    sys.stdout.write(f"metric\tt\tp\tn_queries\n{args.metric}@{args.cutoff}\t{t:.6f}\t{p:.6g}\t{n}\n")
    return 0


def cmd_gen_synth(args) -> int:
    config = SynthConfig(vocab_size=args.vocab_size, synonym_pairs=args.synonym_pairs, n_queries=args.n_queries,
                         n_docs=args.n_docs, seed=args.seed, rho=args.rho)
    paths = write_synth(generate(config), _out(args, args.out, "synth"), config)
    log.info("synthetic collection -> %s", paths["collection"].parent)
    return 0


# ---- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="model1ir", description="Model 1 retrieval and re-ranking toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--work-dir", default=".")
    common.add_argument("--config", help="JSON file of option defaults (flags override)")
    common.add_argument("--log-level", default="INFO")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    def command(name, fn, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=fn)
        return p

    def add_index(p):
        p.add_argument("--index", help="index directory (default: WORK/index)")

    def add_splits(p):
        p.add_argument("--splits", help="splits JSON file")
        p.add_argument("--split", help="split name within --splits")

    p = command("index", cmd_index, "tokenize a collection and build the BM25 index")
    p.add_argument("--collection", required=True)
    p.add_argument("--queries", help="include query tokens in the vocabulary")
    p.add_argument("--stopwords", help="stopword file (default: packaged list)")
    p.add_argument("--keep-stopwords", action="store_true")
    p.add_argument("--vocab-cap", type=int, default=10**6)
    p.add_argument("--k1", type=float, default=1.2)
    p.add_argument("--b", type=float, default=0.75)
    p.add_argument("--out")

    p = command("retrieve", cmd_retrieve, "BM25 top-k candidates as a run file")
    add_index(p)
    p.add_argument("--queries", required=True)
    p.add_argument("--k", type=int, default=1000)
    p.add_argument("--k1", type=float)
    p.add_argument("--b", type=float)
    p.add_argument("--out")

    p = command("build-bitext", cmd_build_bitext, "query/document-chunk parallel corpus")
    add_index(p)
    p.add_argument("--queries", required=True)
    p.add_argument("--qrels", required=True)
    add_splits(p)
    p.add_argument("--chunk-len", type=int, default=8)
    p.add_argument("--no-symmetrize", action="store_true")
    p.add_argument("--out-prefix")

    p = command("train-em", cmd_train_em, "EM-train, rescale and prune a translation table")
    add_index(p)
    p.add_argument("--bitext-prefix")
    p.add_argument("--iterations", type=int, default=5)
    p.add_argument("--p-self", type=float, default=0.1)
    p.add_argument("--prune", type=float, default=1e-3)
    p.add_argument("--vocab-cap", type=int, default=10**6)
    p.add_argument("--prune-first", action="store_true", help="prune before self-translation rescaling")
    p.add_argument("--out")
    p.add_argument("--text-out")

    p = command("train-nn", cmd_train_nn, "train the neural translation model")
    add_index(p)
    p.add_argument("--queries", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--candidates")
    add_splits(p)
    defaults = TrainConfig()
    for name, value in asdict(defaults).items():
        if name in ("seed", "use_self_mix", "dtype"):
            continue
        p.add_argument("--" + name.replace("_", "-"), type=type(value), default=value)
    p.add_argument("--no-self-mix", action="store_true")
    p.add_argument("--dtype", choices=("float64", "float32"), default="float64")
    p.add_argument("--out")

    p = command("export", cmd_export, "sparsify a neural checkpoint into a table")
    add_index(p)
    p.add_argument("--checkpoint")
    p.add_argument("--threshold", type=float, default=1e-4)
    p.add_argument("--out")
    p.add_argument("--text-out")

    for name, fn, help_ in (("features", cmd_features, "fusion features for candidate lists"),
                            ("rank", cmd_rank, "re-rank candidates with translation tables")):
        p = command(name, fn, help_)
        add_index(p)
        p.add_argument("--queries", required=True)
        p.add_argument("--candidates")
        p.add_argument("--table", action="append", default=[], help="[NAME=]PATH of a binary table; repeatable")
        p.add_argument("--lam", type=float, default=0.1)
        p.add_argument("--out")
        if name == "rank":
            add_splits(p)
            p.add_argument("--weights", help="fusion weights JSON (default: first table alone)")
            p.add_argument("--tag", default="model1ir")

    p = command("fuse-train", cmd_fuse_train, "learn fusion weights by coordinate ascent")
    p.add_argument("--features")
    p.add_argument("--qrels", required=True)
    add_splits(p)
    p.add_argument("--metric", choices=("mrr", "ndcg"), default="mrr")
    p.add_argument("--cutoff", type=int, default=100)
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--out")

    p = command("evaluate", cmd_evaluate, "MRR@cutoff and NDCG@k of a run")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--cutoff", type=int, required=True, help="MRR cutoff (no default)")
    p.add_argument("--ndcg-k", type=int, default=10)
    p.add_argument("--per-query")
    add_splits(p)

    p = command("ttest", cmd_ttest, "paired two-sided t-test between two runs")
    p.add_argument("--run-a", required=True)
    p.add_argument("--run-b", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--metric", choices=("mrr", "ndcg"), default="mrr")
    p.add_argument("--cutoff", type=int, required=True)

    p = command("gen-synth", cmd_gen_synth, "write a synthetic vocabulary-gap collection")
    synth = SynthConfig()
    p.add_argument("--vocab-size", type=int, default=synth.vocab_size)
    p.add_argument("--synonym-pairs", type=int, default=synth.synonym_pairs)
    p.add_argument("--n-queries", type=int, default=synth.n_queries)
    p.add_argument("--n-docs", type=int, default=synth.n_docs)
    p.add_argument("--rho", type=float, default=synth.rho)
    p.add_argument("--out")
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    """Load ``--config`` JSON into parser defaults: flat keys apply to every
    command, a section named after the command applies to that command only."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    data = json.loads(_existing(known.config).read_text())
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    for name, p in sub.choices.items():
        dests = {a.dest for a in p._actions}
        values = {k.replace("-", "_"): v for k, v in data.items() if not isinstance(v, dict)}
        values.update({k.replace("-", "_"): v for k, v in data.get(name, {}).items()})
        p.set_defaults(**{k: v for k, v in values.items() if k in dests})
        for action in p._actions:
            if action.dest in values and action.required:
                action.required = False


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    except DataError as e:
        print(f"model1ir: error: {e}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as e:
        print(f"model1ir: error: bad config file: {e}", file=sys.stderr)
        return 2
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO), stream=sys.stderr,
        format="%(asctime)s level=%(levelname)s logger=%(name)s cmd=" + args.command + " msg=%(message)s",
        force=True)
    try:
        return args.func(args)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    except (DataError, FileNotFoundError) as e:
        log.error("%s", e)
        return 2
    except ValueError as e:
        log.error("%s", e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
