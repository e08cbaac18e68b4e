"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--docs 1000] [--doc-len 500] [--vocab 20000]

Reports milliseconds per 1000 re-ranked documents and the time of one EM
E-step over a random parallel corpus, for each available backend.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from model1ir import kernels
from model1ir.bitext import BitextPair, ParallelCorpus
from model1ir.corpus import CollectionStats
from model1ir.translation import Model1Scorer, TranslationTable, _EmProblem


def random_table(rng, vocab: int, per_row: int) -> TranslationTable:
    rows = np.repeat(np.arange(vocab), per_row)
    cols = rng.integers(0, vocab, size=len(rows))
    vals = rng.uniform(1e-4, 1.0, size=len(rows))
    keys, first = np.unique(rows * vocab + cols, return_index=True)
    return TranslationTable.from_entries(keys // vocab, keys % vocab, vals[first], vocab, vocab)


def zipf_stats(vocab: int) -> CollectionStats:
    counts = (1e6 / np.arange(1, vocab + 1)).astype(np.int64) + 1
    return CollectionStats(n_docs=1, total_tokens=int(counts.sum()), counts=counts,
                           probs=counts / counts.sum(), doc_freqs=np.ones(vocab, np.int64), avgdl=1.0)


def best_of(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--docs", type=int, default=1000)
    ap.add_argument("--doc-len", type=int, default=500)
    ap.add_argument("--vocab", type=int, default=20000)
    ap.add_argument("--per-row", type=int, default=50)
    ap.add_argument("--query-len", type=int, default=6)
    ap.add_argument("--pairs", type=int, default=5000)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    table = random_table(rng, args.vocab, args.per_row)
    stats = zipf_stats(args.vocab)
    ranks = np.arange(1, args.vocab + 1)
    p = (1.0 / ranks) / (1.0 / ranks).sum()
    tokens = rng.choice(args.vocab, size=args.docs * args.doc_len, p=p).astype(np.int32)
    offsets = np.arange(0, args.docs + 1, dtype=np.int64) * args.doc_len
    query = rng.choice(args.vocab, size=args.query_len, p=p)

    corpus = ParallelCorpus([BitextPair(rng.integers(0, 2000, 8, dtype=np.int32),
                                        rng.integers(0, 2000, 6, dtype=np.int32))
                             for _ in range(args.pairs)], 2000)
    problem = _EmProblem(corpus)
    values = problem.uniform()

    backends = {"python": kernels.get_backend("python")}
    if kernels.BACKEND == "compiled":
        backends["compiled"] = kernels.get_backend("compiled")
    else:
        print("compiled extension unavailable; only the fallback is measured")

    print(f"re-rank: {args.docs} docs x {args.doc_len} tokens, query length {args.query_len}, "
          f"table nnz {table.nnz}")
    print(f"em step: {args.pairs} pairs, {len(problem.entries)} alignment entries")
    print(f"{'backend':<10}{'ms/1000 docs':>15}{'E-step ms':>12}")
    reference = None
    for name, impl in backends.items():
        scorer = Model1Scorer(table, stats, 0.1, backend=impl)
        scores = scorer.score(query, tokens, offsets)
        if reference is None:
            reference = scores
        elif not np.allclose(scores, reference, rtol=1e-12, atol=0.0):
            raise SystemExit(f"{name} scores disagree with the first backend")
        rerank = best_of(lambda: scorer.score(query, tokens, offsets), args.repeats)
        estep = best_of(lambda: problem.step(values, 1, impl), args.repeats)
        print(f"{name:<10}{1000.0 * rerank / args.docs * 1000.0:>15.2f}{1000.0 * estep:>12.1f}")


if __name__ == "__main__":
    main()
