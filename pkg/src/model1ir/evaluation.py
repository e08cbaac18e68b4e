"""IR metrics (trec_eval conventions), run files, seed aggregation and paired t-tests."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .corpus import DataError, Qrels
from .index import CandidateList


@dataclass
class RunFile:
    """Ranked (doc id, score) lists per query."""

    entries: dict[str, list[tuple[str, float]]] = field(default_factory=dict)
    tag: str = "model1ir"

    @classmethod
    def from_candidates(cls, ranked: Mapping[str, CandidateList], tag: str = "model1ir") -> "RunFile":
        return cls({q: ranked[q].pairs() for q in sorted(ranked)}, tag)


def write_run(path: str | Path, run: RunFile, precision: int = 6) -> None:
    """TREC run lines ``query_id Q0 doc_id rank score tag``."""
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "w", encoding="utf-8") as f:
        for q in sorted(run.entries):
            for rank, (doc, score) in enumerate(run.entries[q], 1):
                f.write(f"{q} Q0 {doc} {rank} {score:.{precision}g} {run.tag}\n")
    tmp.replace(path)


def read_run(path: str | Path) -> RunFile:
    rows: dict[str, list[tuple[int, str, float]]] = {}
    tag = None
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise DataError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}")
            q, _, doc, rank, score, tag = parts
            try:
                rows.setdefault(q, []).append((int(rank), doc, float(score)))
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad rank or score") from None
    run = RunFile(tag=tag or "model1ir")
    for q, items in rows.items():
        items.sort(key=lambda r: r[0])
        if [r[0] for r in items] != list(range(1, len(items) + 1)):
            raise DataError(f"{path}: ranks for query {q} are not contiguous from 1")
        run.entries[q] = [(doc, score) for _, doc, score in items]
    return run


def _ranked(run) -> dict[str, list[str]]:
    if isinstance(run, RunFile):
        return {q: [d for d, _ in v] for q, v in run.entries.items()}
    out = {}
    for q, v in run.items():
        if isinstance(v, CandidateList):
            out[q] = list(v.doc_ids)
        else:
            out[q] = [d if isinstance(d, str) else d[0] for d in v]
    return out


@dataclass
class MetricResult:
    per_query: dict[str, float]
    mean: float
    n_excluded: int = 0

    @property
    def n_queries(self) -> int:
        return len(self.per_query)


def _evaluate(run, qrels: Qrels, fn) -> MetricResult:
    per_query, excluded = {}, 0
    for q, docs in sorted(_ranked(run).items()):
        if q not in qrels:
            excluded += 1
            continue
        per_query[q] = fn(docs, qrels[q])
    mean = float(np.mean(list(per_query.values()))) if per_query else 0.0
    return MetricResult(per_query, mean, excluded)


def mrr(run, qrels: Qrels, cutoff: int) -> MetricResult:
    """Reciprocal rank of the first document with grade >= 1 within ``cutoff``."""
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")

    def rr(docs, judged):
        for rank, d in enumerate(docs[:cutoff], 1):
            if judged.get(d, 0) >= 1:
                return 1.0 / rank
        return 0.0

    return _evaluate(run, qrels, rr)


def ndcg_at_k(run, qrels: Qrels, k: int = 10) -> MetricResult:
    """NDCG@k with linear gains and log2(rank + 1) discounts (trec_eval ndcg_cut)."""
    if k < 1:
        raise ValueError("k must be >= 1")

    def ndcg(docs, judged):
        dcg = sum(judged.get(d, 0) / math.log2(i + 2) for i, d in enumerate(docs[:k]))
        ideal = sorted((g for g in judged.values() if g > 0), reverse=True)[:k]
        idcg = sum(g / math.log2(i + 2) for i, g in enumerate(ideal))
        return dcg / idcg if idcg > 0 else 0.0

    return _evaluate(run, qrels, ndcg)


# ---- significance ------------------------------------------------------------


def _beta_cf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, 10_000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must be in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_bt = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    bt = math.exp(log_bt)
    if x < (a + 1.0) / (a + b + 2.0):
        return bt * _beta_cf(a, b, x) / a
    return 1.0 - bt * _beta_cf(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, df: int) -> float:
    if math.isinf(t):
        return 0.0
    return betainc(df / 2.0, 0.5, df / (df + t * t))


def paired_ttest(a: Mapping[str, float], b: Mapping[str, float]) -> tuple[float, float]:
    """Two-sided paired t-test over the queries common to ``a`` and ``b``.

    Zero-variance differences give p = 1 when the mean difference is 0, else p = 0.
    """
    common = sorted(set(a) & set(b))
    n = len(common)
    if n < 2:
        raise ValueError("paired t-test needs at least 2 common queries")
    diffs = np.array([a[q] - b[q] for q in common], dtype=np.float64)
    mean = float(diffs.mean())
    sd = float(diffs.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return 0.0, 1.0
        return math.copysign(math.inf, mean), 0.0
    t = mean / (sd / math.sqrt(n))
    return t, student_t_two_sided_p(t, n - 1)


def aggregate_seeds(results: Iterable[Mapping[str, float]]) -> dict[str, float]:
    """Per-query mean across seeds."""
    results = list(results)
    if not results:
        raise ValueError("no seed results")
    keys = set(results[0])
    for r in results[1:]:
        if set(r) != keys:
            raise ValueError("seed results cover different query sets")
    return {q: float(np.mean([r[q] for r in results])) for q in sorted(keys)}


def format_report(metrics: Mapping[str, MetricResult]) -> str:
    """``metric<TAB>mean<TAB>n_queries`` lines."""
    return "".join(f"{name}\t{m.mean:.6f}\t{m.n_queries}\n" for name, m in metrics.items())


def format_per_query(metrics: Mapping[str, MetricResult]) -> str:
    lines = []
    for name, m in metrics.items():
        for q, v in sorted(m.per_query.items()):
            lines.append(f"{name}\t{q}\t{v:.6f}\n")
    return "".join(lines)
