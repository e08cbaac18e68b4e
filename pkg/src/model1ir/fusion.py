"""Normalized ranking features and linear fusion trained by coordinate ascent."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .corpus import DataError, Qrels
from .index import CandidateList, InvertedIndex, bm25_scores

# line-search grid for one coordinate
MULTIPLIERS = (0.5, 0.8, 0.9, 1.1, 1.25, 2.0)
STEPS = (0.05, 0.1, 0.2, 0.5, 1.0)
MIN_GAIN = 1e-6
MAX_SWEEPS = 100


@dataclass
class FeatureMatrix:
    """Per query: candidate doc ids and a (n_docs, n_features) value matrix."""

    names: list[str]
    rows: dict[str, tuple[list[str], np.ndarray]] = field(default_factory=dict)

    def add(self, query_id: str, doc_ids: list[str], values) -> None:
        values = np.asarray(values, dtype=np.float64).reshape(len(doc_ids), len(self.names))
        if not np.all(np.isfinite(values)):
            raise DataError(f"non-finite feature value for query {query_id}")
        self.rows[query_id] = (list(doc_ids), values)

    def __len__(self) -> int:
        return len(self.rows)

    def select(self, names: list[str]) -> "FeatureMatrix":
        idx = [self.names.index(n) for n in names]
        out = FeatureMatrix(list(names))
        for q, (docs, x) in self.rows.items():
            out.rows[q] = (docs, x[:, idx])
        return out

    def subset(self, query_ids) -> "FeatureMatrix":
        out = FeatureMatrix(list(self.names))
        for q in query_ids:
            if q in self.rows:
                out.rows[q] = self.rows[q]
        return out

    def write_tsv(self, path: str | Path) -> None:
        tmp = Path(str(path) + ".tmp")
        with open(tmp, "w", encoding="utf-8") as f:
            for q in sorted(self.rows):
                docs, x = self.rows[q]
                for doc, vec in zip(docs, x):
                    feats = ",".join(f"{n}={v!r}" for n, v in zip(self.names, vec.tolist()))
                    f.write(f"{q}\t{doc}\t{feats}\n")
        tmp.replace(path)

    @classmethod
    def read_tsv(cls, path: str | Path) -> "FeatureMatrix":
        names = None
        grouped: dict[str, tuple[list, list]] = {}
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise DataError(f"{path}:{lineno}: expected query<TAB>doc<TAB>features")
                q, doc, feats = parts
                try:
                    kv = [item.split("=", 1) for item in feats.split(",")]
                    row_names = [k for k, _ in kv]
                    vals = [float(v) for _, v in kv]
                except ValueError:
                    raise DataError(f"{path}:{lineno}: malformed feature list") from None
                if names is None:
                    names = row_names
                elif row_names != names:
                    raise DataError(f"{path}:{lineno}: feature names differ from earlier rows")
                docs, rows = grouped.setdefault(q, ([], []))
                docs.append(doc)
                rows.append(vals)
        fm = cls(names or [])
        for q, (docs, rows) in grouped.items():
            fm.add(q, docs, rows)
        return fm


Scorer = Callable[[np.ndarray, np.ndarray], np.ndarray]


def model1_feature(scorer, index: InvertedIndex) -> Scorer:
    """Adapt a :class:`~model1ir.translation.Model1Scorer` to (query, ordinals) -> scores."""

    def score(query, ordinals):
        tokens, offsets = index.gather(ordinals)
        return scorer.score(query, tokens, offsets)

    return score


def compute_features(queries: dict[str, np.ndarray], candidates: dict[str, CandidateList],
                     index: InvertedIndex, scorers: dict[str, Scorer] | None = None) -> FeatureMatrix:
    """Feature ``bm25`` (BM25 / sum of query IDF) plus one column per registered scorer.

    Model 1 scorers already return log-scores averaged over query tokens.
    """
    scorers = scorers or {}
    fm = FeatureMatrix(["bm25", *scorers])
    for qid in sorted(candidates):
        cand = candidates[qid]
        if len(cand) == 0:
            continue
        query = np.asarray(queries[qid], dtype=np.int64)
        ordinals = np.array([index.ordinal(d) for d in cand.doc_ids], dtype=np.int64)
        hit, scores = bm25_scores(index, query)
        bm25 = np.zeros(index.n_docs)
        bm25[hit] = scores
        idf_total = index.query_idf_sum(query)
        cols = [bm25[ordinals] / idf_total if idf_total > 0 else np.zeros(len(ordinals))]
        for fn in scorers.values():
            if len(query) == 0:
                cols.append(np.zeros(len(ordinals)))
            else:
                cols.append(np.asarray(fn(query, ordinals), dtype=np.float64))
        fm.add(qid, cand.doc_ids, np.column_stack(cols))
    return fm


@dataclass
class FusionWeights:
    weights: dict[str, float]
    train_metric: float = float("nan")
    history: list[float] = field(default_factory=list)

    def vector(self, names: list[str]) -> np.ndarray:
        unknown = set(self.weights) - set(names)
        if unknown:
            raise KeyError(f"unknown feature(s) {sorted(unknown)}")
        missing = set(names) - set(self.weights)
        if missing:
            raise KeyError(f"no weight for feature(s) {sorted(missing)}")
        return np.array([self.weights[n] for n in names])

    def save(self, path: str | Path) -> None:
        tmp = Path(str(path) + ".tmp")
        tmp.write_text(json.dumps(self.weights, indent=2, sort_keys=True) + "\n")
        tmp.replace(path)

    @classmethod
    def load(cls, path: str | Path) -> "FusionWeights":
        data = json.loads(Path(path).read_text())
        return cls({k: float(v) for k, v in data.items()})


class RankMetric:
    """Vectorized MRR@k / NDCG@k of linear scores over a fixed feature matrix.

    Candidates are held in ascending doc-id order so that stable sorting
    implements the doc-id tie-break.
    """

    def __init__(self, features: FeatureMatrix, qrels: Qrels, metric: str = "mrr", cutoff: int = 100):
        if metric not in ("mrr", "ndcg"):
            raise ValueError(f"unknown metric {metric!r}")
        self.metric = metric
        self.cutoff = cutoff
        qids = [q for q in sorted(features.rows)
                if any(qrels.get(q, {}).get(d, 0) >= 1 for d in features.rows[q][0])]
        if not qids:
            raise DataError("no query has a relevant candidate")
        self.query_ids = qids
        n_max = max(len(features.rows[q][0]) for q in qids)
        F = len(features.names)
        self.X = np.zeros((len(qids), n_max, F))
        self.valid = np.zeros((len(qids), n_max), dtype=bool)
        self.grades = np.zeros((len(qids), n_max))
        self.ideal = np.zeros(len(qids))
        discount = 1.0 / np.log2(np.arange(2, cutoff + 2))
        for i, q in enumerate(qids):
            docs, x = features.rows[q]
            order = sorted(range(len(docs)), key=docs.__getitem__)
            n = len(docs)
            self.X[i, :n] = x[order]
            self.valid[i, :n] = True
            judged = qrels.get(q, {})
            self.grades[i, :n] = [judged.get(docs[j], 0) for j in order]
            ideal = sorted((g for g in judged.values() if g > 0), reverse=True)[:cutoff]
            self.ideal[i] = float(np.dot(ideal, discount[:len(ideal)]))
        self.relevant = (self.grades >= 1) & self.valid
        self.positions = np.arange(n_max)[None, :]

    def per_query(self, w) -> np.ndarray:
        s = self.X @ np.asarray(w, dtype=np.float64)
        s = np.where(self.valid, s, -np.inf)
        if self.metric == "mrr":
            s_rel = np.where(self.relevant, s, -np.inf)
            best = s_rel.max(axis=1, keepdims=True)
            first = np.argmax(self.relevant & (s_rel == best), axis=1)[:, None]
            ahead = (s > best).sum(axis=1) + ((s == best) & self.valid & (self.positions < first)).sum(axis=1)
            rank = ahead + 1
            return np.where(rank <= self.cutoff, 1.0 / rank, 0.0)
        order = np.argsort(-s, axis=1, kind="stable")[:, :self.cutoff]
        gains = np.take_along_axis(self.grades, order, axis=1)
        discount = 1.0 / np.log2(np.arange(2, order.shape[1] + 2))
        dcg = gains @ discount
        return np.where(self.ideal > 0, dcg / np.where(self.ideal > 0, self.ideal, 1.0), 0.0)

    def __call__(self, w) -> float:
        return float(self.per_query(w).mean())


def _ascend(evaluate, w0: np.ndarray) -> tuple[np.ndarray, float, list[float]]:
    w = w0.astype(np.float64).copy()
    best = evaluate(w)
    history = [best]
    for _ in range(MAX_SWEEPS):
        improved = False
        for i in range(len(w)):
            scale = np.abs(w).max()
            trials = [w[i] * m for m in MULTIPLIERS]
            trials += [w[i] + sign * a * scale for a in STEPS for sign in (1.0, -1.0)]
            pick, pick_val = None, best
            for value in trials:
                if value == w[i]:
                    continue
                cand = w.copy()
                cand[i] = value
                if not np.any(cand):
                    continue
                v = evaluate(cand)
                if v > pick_val + MIN_GAIN:
                    pick, pick_val = value, v
            if pick is not None:
                w[i] = pick
                best = pick_val
                improved = True
        history.append(best)
        if not improved:
            break
    return w, best, history


def coordinate_ascent(features: FeatureMatrix, qrels: Qrels, metric: str = "mrr", cutoff: int = 100,
                      restarts: int = 5, seed: int = 0) -> FusionWeights:
    """Hill-climb linear fusion weights on the training metric.

    Starts from every signed axis (+e_f, -e_f) and ``restarts`` random points;
    the best result is returned, L1-normalized.
    """
    metric_fn = RankMetric(features, qrels, metric, cutoff)

    def evaluate(w):
        # score the normalized vector so exact ties resolve as they will for the returned weights
        return metric_fn(w / np.abs(w).sum())

    F = len(features.names)
    if F == 0:
        raise ValueError("no features")
    starts = []
    for f in range(F):
        for sign in (1.0, -1.0):
            e = np.zeros(F)
            e[f] = sign
            starts.append(e)
    rng = np.random.default_rng(seed)
    for _ in range(restarts):
        w = rng.uniform(-1.0, 1.0, F)
        if not np.any(w):
            w[0] = 1.0
        starts.append(w)
    best_w, best_v, best_hist = None, -math.inf, []
    for w0 in starts:
        w, v, hist = _ascend(evaluate, w0)
        if v > best_v:
            best_w, best_v, best_hist = w, v, hist
    best_w = best_w / np.abs(best_w).sum()
    return FusionWeights(dict(zip(features.names, best_w.tolist())), best_v, best_hist)


def fuse_and_rank(features: FeatureMatrix, weights: FusionWeights | dict[str, float]) -> dict[str, CandidateList]:
    """Linear fusion; descending score with ascending doc-id tie-break."""
    if isinstance(weights, dict):
        weights = FusionWeights(weights)
    w = weights.vector(features.names)
    out = {}
    for q in sorted(features.rows):
        docs, x = features.rows[q]
        scores = x @ w
        order = sorted(range(len(docs)), key=lambda i: (-scores[i], docs[i]))
        out[q] = CandidateList(q, [docs[i] for i in order], scores[order])
    return out
