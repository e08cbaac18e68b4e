"""Random instance builders shared by unit and acceptance tests."""

from __future__ import annotations

import contextlib
import time

import numpy as np

from model1ir.bitext import BitextPair, ParallelCorpus
from model1ir.evaluation import mrr, ndcg_at_k
from model1ir.fusion import FeatureMatrix, fuse_and_rank
from model1ir.neural import PARAM_ORDER, compute_gradients, init_params, score_neural


ACCEPTANCE: dict[str, str] = {}


@contextlib.contextmanager
def criterion(number, title):
    """Record (and print) one PASS/FAIL line for an acceptance criterion.

    The body may append measurements to the yielded list; they are shown after the verdict.
    """
    notes: list[str] = []
    start = time.perf_counter()
    try:
        yield notes
    except BaseException as e:
        notes.append(f"{type(e).__name__}: {str(e).splitlines()[0] if str(e) else ''}")
        _record(number, title, False, notes, time.perf_counter() - start)
        raise
    _record(number, title, True, notes, time.perf_counter() - start)


def _record(number, title, ok, notes, elapsed):
    line = f"criterion {str(number):>3} {'PASS' if ok else 'FAIL'}  {title} ({'; '.join(notes + [f'{elapsed:.1f}s'])})"
    ACCEPTANCE[str(number)] = line
    print(line)


def random_pairs(rng, vocab=6, max_pairs=5, max_len=4):
    """At most ``max_pairs`` pairs over a vocabulary of at most ``vocab`` tokens."""
    n = int(rng.integers(1, max_pairs + 1))
    return [(rng.integers(0, vocab, int(rng.integers(1, max_len + 1))).tolist(),
             rng.integers(0, vocab, int(rng.integers(1, max_len + 1))).tolist()) for _ in range(n)]


def to_corpus(pairs, vocab):
    return ParallelCorpus([BitextPair(np.array(s, dtype=np.int32), np.array(t, dtype=np.int32)) for s, t in pairs],
                          vocab)


def random_params(rng, vocab=7, emb=4, proj=3, hidden=5, p_self=0.2, scale=1.0):
    """Small network with non-zero biases so every code path is exercised."""
    params = init_params(vocab, emb, proj, hidden, p_self, seed=int(rng.integers(1 << 30)))
    for name, tensor in params.tensors().items():
        tensor[...] = rng.normal(0.0, scale, tensor.shape)
    return params


def random_batch(rng, vocab, n):
    def seq(lo, hi):
        return rng.integers(0, vocab, int(rng.integers(lo, hi)))
    return [(seq(1, 4), seq(1, 7), seq(1, 7)) for _ in range(n)]


def finite_difference_check(params, batch, h=1e-5, blockwise=False):
    """Relative error of the analytic gradient against central differences, per block.

    The margin is set just above the largest score gap so every hinge is active
    while the loss stays of order one (a large loss inflates difference roundoff).
    Entry-wise mode reports the worst entry, skipping entries where both
    gradients are below 1e-8; block-wise mode reports ||a - n|| / max(||a||, ||n||).
    """
    margin = max(score_neural(params, q, p) - score_neural(params, q, n) for q, p, n in batch) + 0.5
    _, grads = compute_gradients(params, batch, margin)
    worst = {}
    for name in PARAM_ORDER:
        tensor = getattr(params, name)
        numeric = np.zeros(tensor.shape)
        for idx in np.ndindex(tensor.shape):
            old = tensor[idx]
            tensor[idx] = old + h
            up, _ = compute_gradients(params, batch, margin)
            tensor[idx] = old - h
            down, _ = compute_gradients(params, batch, margin)
            tensor[idx] = old
            numeric[idx] = (up - down) / (2 * h)
        analytic = grads[name]
        if blockwise:
            scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
            worst[name] = float(np.linalg.norm(analytic - numeric) / scale) if scale > 0 else 0.0
        else:
            scale = np.maximum(np.abs(analytic), np.abs(numeric))
            keep = scale > 1e-8
            worst[name] = float((np.abs(analytic - numeric)[keep] / scale[keep]).max()) if keep.any() else 0.0
    return worst


def cli_pipeline(work, seed=0, threads=1, synth=("--vocab-size", "150", "--synonym-pairs", "20", "--n-queries",
                                                 "60", "--n-docs", "300"), nn=("--epochs", "2", "--emb-dim", "8",
                                                                                "--proj-dim", "8", "--hidden-dim", "8",
                                                                                "--n-neg", "5")):
    """Run every command end to end under ``work``; returns the synthetic data directory."""
    from model1ir.cli import main

    data = work / "synth"
    common = ["--work-dir", str(work), "--seed", str(seed), "--threads", str(threads), "--log-level", "WARNING"]
    files = dict(queries=str(data / "queries.tsv"), qrels=str(data / "qrels.txt"), splits=str(data / "splits.json"))
    steps = [
        ["gen-synth", "--out", str(data), *synth],
        ["index", "--collection", str(data / "collection.tsv"), "--queries", files["queries"]],
        ["retrieve", "--queries", files["queries"], "--k", "50"],
        ["build-bitext", "--queries", files["queries"], "--qrels", files["qrels"], "--splits", files["splits"]],
        ["train-em", "--iterations", "3"],
        ["train-nn", "--queries", files["queries"], "--qrels", files["qrels"], "--splits", files["splits"], *nn],
        ["export"],
        ["features", "--queries", files["queries"], "--table", f"em={work / 'em_table.bin'}",
         "--table", f"nn={work / 'nn_table.bin'}"],
        ["fuse-train", "--qrels", files["qrels"], "--splits", files["splits"]],
        ["rank", "--queries", files["queries"], "--table", f"em={work / 'em_table.bin'}",
         "--table", f"nn={work / 'nn_table.bin'}", "--weights", str(work / "fusion.json"),
         "--splits", files["splits"]],
    ]
    for step in steps:
        code = main(step[:1] + common + step[1:])
        assert code == 0, step
    return data


def random_features(rng, n_queries=8, n_docs=12, names=("a", "b"), levels=None):
    fm = FeatureMatrix(list(names))
    qrels = {}
    for i in range(n_queries):
        q = f"q{i}"
        docs = [f"d{j:02d}" for j in rng.permutation(n_docs)]
        values = rng.normal(size=(n_docs, len(names)))
        if levels:
            values = np.round(values * levels) / levels  # coarse values create ties
        fm.add(q, docs, values)
        rel = rng.choice(docs, size=int(rng.integers(0, 3)), replace=False)
        qrels[q] = {d: int(rng.integers(1, 4)) for d in rel}
        qrels[q][docs[0]] = qrels[q].get(docs[0], 0)
    return fm, qrels


def reference_metric(fm, qrels, w, metric, cutoff):
    """Fuse, sort and evaluate with the evaluation module over queries with a relevant candidate."""
    keep = [q for q, (docs, _) in fm.rows.items() if any(qrels.get(q, {}).get(d, 0) >= 1 for d in docs)]
    ranked = fuse_and_rank(fm.subset(keep), dict(zip(fm.names, w)))
    res = mrr(ranked, qrels, cutoff) if metric == "mrr" else ndcg_at_k(ranked, qrels, cutoff)
    return res.mean


def trec_fixture(seed, n_queries=12, n_docs=30):
    """Random run sorted the way trec_eval sorts it (score desc, doc id desc), plus graded qrels."""
    rng = np.random.default_rng(seed)
    run, qrels = {}, {}
    for i in range(n_queries):
        q = f"q{i}"
        docs = [f"d{j:03d}" for j in range(n_docs)]
        scores = np.round(rng.normal(size=n_docs), 1)  # rounding creates ties
        run[q] = sorted(zip(docs, scores.tolist()), key=lambda p: (p[1], p[0]), reverse=True)
        judged = rng.choice(n_docs + 10, size=int(rng.integers(0, 6)), replace=False)
        qrels[q] = {f"d{j:03d}": int(rng.integers(0, 4)) for j in judged}
    run["unjudged"] = [("d000", 1.0)]
    return run, qrels


def trec_eval_means(run, qrels):
    import pytrec_eval
    judged = {q: j for q, j in qrels.items() if j}
    evaluator = pytrec_eval.RelevanceEvaluator(judged, {"recip_rank", "ndcg_cut_10"})
    res = evaluator.evaluate({q: dict(v) for q, v in run.items()})
    return {m: float(np.mean([r[m] for r in res.values()])) for m in ("recip_rank", "ndcg_cut_10")}, judged
