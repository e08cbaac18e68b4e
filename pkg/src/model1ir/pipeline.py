"""Loading helpers and the end-to-end experiment: BM25 candidates, EM and neural
Model 1 re-rankers, fusion on a held-out split, and test-set evaluation."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .bitext import build_bitext
from .corpus import (DataError, DocStore, TokenizerConfig, Vocabulary, build_vocab, read_qrels,
                     read_stopwords, read_tsv, tokenize)
from .evaluation import RunFile, aggregate_seeds, mrr, ndcg_at_k, paired_ttest, write_run
from .export import export_table
from .fusion import FeatureMatrix, compute_features, coordinate_ascent, fuse_and_rank, model1_feature
from .index import Bm25Params, CandidateList, InvertedIndex, build_index, retrieve_many
from .neural import TrainConfig, save_checkpoint, train
from .translation import EmConfig, Model1Scorer, TranslationTable, em_train, postprocess

log = logging.getLogger(__name__)


# ---- loading -------------------------------------------------------------------


def tokenizer_config(remove_stopwords: bool = True, stopwords_path: str | None = None) -> TokenizerConfig:
    return TokenizerConfig(stopwords=read_stopwords(stopwords_path), remove_stopwords=remove_stopwords)


def load_corpus(collection: str | Path, queries: str | Path | None = None,
                tokenizer: TokenizerConfig = TokenizerConfig(), vocab_cap: int = 10**6
                ) -> tuple[Vocabulary, DocStore, dict[str, np.ndarray]]:
    """Tokenize a collection (and optionally queries) into a shared vocabulary."""
    doc_rows = [(d, tokenize(t, tokenizer)) for d, t in read_tsv(collection)]
    query_rows = [(q, tokenize(t, tokenizer)) for q, t in read_tsv(queries)] if queries else []
    stream = (tok for _, toks in doc_rows + query_rows for tok in toks)
    vocab = build_vocab(stream, vocab_cap)
    store = DocStore()
    for d, toks in doc_rows:
        store.add(d, vocab.encode(toks))
    return vocab, store, {q: vocab.encode(toks) for q, toks in query_rows}


def encode_queries(path: str | Path, vocab: Vocabulary, tokenizer: TokenizerConfig) -> dict[str, np.ndarray]:
    return {q: vocab.encode(tokenize(t, tokenizer)) for q, t in read_tsv(path)}


def read_splits(path: str | Path) -> dict[str, list[str]]:
    data = json.loads(Path(path).read_text())
    splits = data.get("splits", data)
    seen: dict[str, str] = {}
    for name, qids in splits.items():
        for q in qids:
            if q in seen:
                raise DataError(f"query {q} is in both {seen[q]!r} and {name!r} splits")
            seen[q] = name
    return {name: list(qids) for name, qids in splits.items()}


def index_store(index: InvertedIndex) -> DocStore:
    store = DocStore()
    for i, d in enumerate(index.doc_ids):
        store.add(d, index.doc(i))
    return store


def candidates_from_run(run: RunFile) -> dict[str, CandidateList]:
    return {q: CandidateList(q, [d for d, _ in v], np.array([s for _, s in v]))
            for q, v in run.entries.items()}


def rerank_throughput(scorer: Model1Scorer, index: InvertedIndex, queries: dict[str, np.ndarray],
                      candidates: dict[str, CandidateList]) -> float:
    """Milliseconds per 1000 re-ranked documents (document gathering excluded)."""
    docs, elapsed = 0, 0.0
    for q in sorted(candidates):
        if q not in queries or not len(queries[q]) or not len(candidates[q]):
            continue
        ordinals = np.array([index.ordinal(d) for d in candidates[q].doc_ids])
        tokens, offsets = index.gather(ordinals)
        start = time.perf_counter()
        scorer.score(queries[q], tokens, offsets)
        elapsed += time.perf_counter() - start
        docs += len(ordinals)
    return 1000.0 * elapsed / docs * 1000.0 if docs else float("nan")


# ---- experiment ----------------------------------------------------------------


@dataclass
class PipelineConfig:
    collection: str
    queries: str
    qrels: str
    splits: str
    work_dir: str
    mrr_cutoff: int
    remove_stopwords: bool = True
    vocab_cap: int = 10**6
    k1: float = 1.2
    b: float = 0.75
    depth: int = 1000
    chunk_len: int = 8
    symmetrize: bool = True
    em: dict = field(default_factory=dict)
    lam: float = 0.1
    nn: dict = field(default_factory=dict)
    export_threshold: float = 1e-4
    fusion_metric: str = "mrr"
    fusion_cutoff: int = 100
    fusion_restarts: int = 5
    seeds: list[int] = field(default_factory=lambda: [0])
    threads: int = 1
    dense_reference: bool = True

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("at least one seed is required")

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path: str | Path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def check_paths(self) -> None:
        for name in ("collection", "queries", "qrels", "splits"):
            if not Path(getattr(self, name)).exists():
                raise DataError(f"{name} path does not exist: {getattr(self, name)}")


@dataclass
class ExperimentReport:
    metrics: dict[str, float]
    per_query: dict[str, dict[str, float]]
    weights: dict[str, dict[str, float]]
    significance: dict[str, tuple[float, float]]
    timings: dict[str, float]
    table_sizes: dict[str, int]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def _fuse_eval(name, train_fm, test_fm, qrels, config, report_weights):
    weights = coordinate_ascent(train_fm, qrels, config.fusion_metric, config.fusion_cutoff,
                                config.fusion_restarts, seed=0)
    report_weights[name] = weights.weights
    return fuse_and_rank(test_fm, weights)


def run_experiment(config: PipelineConfig) -> ExperimentReport:
    """Full protocol on one collection; all artifacts are written under ``work_dir``."""
    config.check_paths()
    work = Path(config.work_dir)
    work.mkdir(parents=True, exist_ok=True)
    timings: dict[str, float] = {}
    clock = time.perf_counter()

    def lap(name):
        nonlocal clock
        now = time.perf_counter()
        timings[name] = now - clock
        clock = now
        log.info("%s done in %.1fs", name, timings[name])

    tok = tokenizer_config(config.remove_stopwords)
    vocab, store, queries = load_corpus(config.collection, config.queries, tok, config.vocab_cap)
    qrels = read_qrels(config.qrels)
    splits = read_splits(config.splits)
    for name in ("modeling", "fusion", "test"):
        if name not in splits:
            raise DataError(f"splits file lacks the {name!r} split")
    params = Bm25Params(config.k1, config.b)
    index = build_index(store, vocab, params)
    index.save(work / "index", vocab)
    candidates = retrieve_many(index, queries, min(config.depth, index.n_docs), params, config.threads)
    write_run(work / "bm25.run", RunFile.from_candidates(candidates, "bm25"))
    lap("index+retrieve")

    modeling = {q: queries[q] for q in splits["modeling"] if q in queries}
    em_config = EmConfig(**config.em)
    bitext = build_bitext(modeling, qrels, store, len(vocab), config.chunk_len, config.symmetrize)
    em_table = postprocess(em_train(bitext, em_config.iterations, config.threads), em_config, vocab.freqs)
    em_table.write_binary(work / "em_table.bin")
    stats = index.stats
    lap("em")

    eval_qids = sorted(set(splits["fusion"]) | set(splits["test"]))
    eval_queries = {q: queries[q] for q in eval_qids if q in queries and len(queries[q])}
    eval_cands = {q: candidates[q] for q in eval_queries if q in candidates and len(candidates[q])}
    em_scorer = Model1Scorer(em_table, stats, config.lam)
    em_fm = compute_features(eval_queries, eval_cands, index, {"model1": model1_feature(em_scorer, index)})
    lap("em features")

    test_ids = [q for q in splits["test"] if q in qrels]
    test_qrels = {q: qrels[q] for q in test_ids}
    fusion_ids = [q for q in splits["fusion"] if q in eval_cands]
    weights: dict[str, dict[str, float]] = {}
    per_query: dict[str, dict[str, float]] = {}

    def evaluate(name, ranked):
        run = {q: ranked.get(q, CandidateList(q, [], np.zeros(0))) for q in test_ids}
        per_query[name] = mrr(run, test_qrels, config.mrr_cutoff).per_query
        per_query[f"{name}.ndcg10"] = ndcg_at_k(run, test_qrels, 10).per_query
        write_run(work / f"test_{name}.run", RunFile.from_candidates(
            {q: c for q, c in run.items() if len(c)}, name))

    evaluate("bm25", candidates)
    evaluate("em_alone", fuse_and_rank(em_fm.subset(test_ids), {"bm25": 0.0, "model1": 1.0}))
    evaluate("em_fused", _fuse_eval("em_fused", em_fm.subset(fusion_ids), em_fm.subset(test_ids),
                                    qrels, config, weights))
    lap("em fusion")

    nn_config = TrainConfig.from_dict(config.nn)
    modeling_cands = {q: list(candidates[q].doc_ids) for q in modeling if q in candidates}
    table_sizes = {"em": em_table.nnz}
    seed_runs: dict[str, list[dict[str, float]]] = {"nn_fused": [], "nn_alone": [], "nn_dense_alone": []}
    for seed in config.seeds:
        cfg = TrainConfig.from_dict({**asdict(nn_config), "seed": seed})
        result = train(modeling, qrels, modeling_cands, store, len(vocab), cfg)
        save_checkpoint(result.params, work / f"nn_seed{seed}.ckpt", cfg)
        lap(f"nn train seed {seed}")
        table = export_table(result.params, len(vocab), config.export_threshold)
        table.write_binary(work / f"nn_table_seed{seed}.bin")
        table_sizes[f"nn_seed{seed}"] = table.nnz
        lap(f"nn export seed {seed}")
        scorer = Model1Scorer(table, stats, config.lam)
        fm = compute_features(eval_queries, eval_cands, index, {"model1": model1_feature(scorer, index)})
        evaluate(f"nn_alone_seed{seed}", fuse_and_rank(fm.subset(test_ids), {"bm25": 0.0, "model1": 1.0}))
        evaluate(f"nn_fused_seed{seed}", _fuse_eval(f"nn_fused_seed{seed}", fm.subset(fusion_ids),
                                                    fm.subset(test_ids), qrels, config, weights))
        seed_runs["nn_alone"].append(per_query[f"nn_alone_seed{seed}"])
        seed_runs["nn_fused"].append(per_query[f"nn_fused_seed{seed}"])
        if config.dense_reference:
            dense = export_table(result.params, len(vocab), 0.0)
            dscorer = Model1Scorer(dense, stats, config.lam)
            test_q = {q: eval_queries[q] for q in test_ids if q in eval_queries}
            dfm = compute_features(test_q, {q: eval_cands[q] for q in test_q}, index,
                                   {"model1": model1_feature(dscorer, index)})
            evaluate(f"nn_dense_alone_seed{seed}", fuse_and_rank(dfm, {"bm25": 0.0, "model1": 1.0}))
            seed_runs["nn_dense_alone"].append(per_query[f"nn_dense_alone_seed{seed}"])
        lap(f"nn eval seed {seed}")
    for name, runs in seed_runs.items():
        if runs:
            per_query[name] = aggregate_seeds(runs)

    metrics = {name: float(np.mean(list(v.values()))) for name, v in per_query.items() if v}
    significance = {}
    for name in ("em_fused", "nn_fused"):
        significance[f"{name}_vs_bm25"] = paired_ttest(per_query[name], per_query["bm25"])
    significance["nn_fused_vs_em_fused"] = paired_ttest(per_query["nn_fused"], per_query["em_fused"])
    timings["total"] = sum(timings.values())
    report = ExperimentReport(metrics, per_query, weights, significance, timings, table_sizes)
    tmp = work / "report.json.tmp"
    tmp.write_text(report.to_json())
    tmp.replace(work / "report.json")
    return report


def feature_matrix_for(table: TranslationTable, index: InvertedIndex, queries, candidates,
                       lam: float = 0.1) -> FeatureMatrix:
    scorer = Model1Scorer(table, index.stats, lam)
    return compute_features(queries, candidates, index, {"model1": model1_feature(scorer, index)})
