"""Inverted index, BM25 scoring and top-k candidate generation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .corpus import CollectionStats, DataError, DocStore, Vocabulary

INDEX_FORMAT = "model1ir-index-v1"


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self):
        if not self.k1 > 0:
            raise ValueError("k1 must be > 0")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError("b must be in [0, 1]")


@dataclass
class CandidateList:
    query_id: str
    doc_ids: list[str]
    scores: np.ndarray

    def __len__(self) -> int:
        return len(self.doc_ids)

    def pairs(self) -> list[tuple[str, float]]:
        return list(zip(self.doc_ids, (float(s) for s in self.scores)))


def bm25_idf(n_docs: int, df) -> np.ndarray:
    """ln(1 + (N - df + 0.5) / (df + 0.5)); terms absent from the collection get 0."""
    df = np.asarray(df, dtype=np.float64)
    idf = np.log1p((n_docs - df + 0.5) / (df + 0.5))
    return np.where(df > 0, idf, 0.0)


class InvertedIndex:
    """Postings in CSR layout plus a forward index of the documents.

    ``postings(t)`` returns parallel arrays of doc ordinals (ascending) and term
    frequencies.  The forward index (``doc_tokens``/``doc_offsets``) feeds the
    translation re-rankers.
    """

    def __init__(self, doc_ids, doc_tokens, doc_offsets, vocab_size, params=Bm25Params()):
        self.doc_ids = list(doc_ids)
        self.doc_tokens = np.ascontiguousarray(doc_tokens, dtype=np.int32)
        self.doc_offsets = np.ascontiguousarray(doc_offsets, dtype=np.int64)
        self.vocab_size = int(vocab_size)
        self.params = params
        self.n_docs = len(self.doc_ids)
        if self.n_docs == 0:
            raise DataError("empty collection")
        if len(self.doc_tokens) and self.doc_tokens.max() >= self.vocab_size:
            raise DataError("token id outside vocabulary")
        self.doc_lengths = np.diff(self.doc_offsets).astype(np.int32)
        self._ordinal = {d: i for i, d in enumerate(self.doc_ids)}
        if len(self._ordinal) != self.n_docs:
            raise DataError("duplicate doc ids")
        # doc ordinal -> rank of its id in lexicographic order (tie-breaking)
        order = sorted(range(self.n_docs), key=self.doc_ids.__getitem__)
        self.id_rank = np.empty(self.n_docs, dtype=np.int64)
        self.id_rank[order] = np.arange(self.n_docs)
        self._build_postings()
        self.stats = self._stats()
        self.avgdl = self.stats.avgdl
        self.idf = bm25_idf(self.n_docs, self.stats.doc_freqs)

    def _build_postings(self):
        owner = np.repeat(np.arange(self.n_docs, dtype=np.int64), self.doc_lengths)
        keys = self.doc_tokens.astype(np.int64) * self.n_docs + owner
        uniq, tf = np.unique(keys, return_counts=True)
        tokens = uniq // self.n_docs
        self.post_docs = (uniq % self.n_docs).astype(np.int32)
        self.post_tfs = tf.astype(np.int32)
        self.indptr = np.zeros(self.vocab_size + 1, dtype=np.int64)
        np.cumsum(np.bincount(tokens, minlength=self.vocab_size), out=self.indptr[1:])

    def _stats(self) -> CollectionStats:
        counts = np.bincount(self.doc_tokens, minlength=self.vocab_size).astype(np.int64)
        total = int(counts.sum())
        df = np.diff(self.indptr)
        return CollectionStats(
            n_docs=self.n_docs,
            total_tokens=total,
            counts=counts,
            probs=counts / total if total else np.zeros(self.vocab_size),
            doc_freqs=df,
            avgdl=total / self.n_docs,
        )

    def postings(self, token: int) -> tuple[np.ndarray, np.ndarray]:
        if not 0 <= token < self.vocab_size:
            return self.post_docs[:0], self.post_tfs[:0]
        lo, hi = self.indptr[token], self.indptr[token + 1]
        return self.post_docs[lo:hi], self.post_tfs[lo:hi]

    def ordinal(self, doc_id: str) -> int:
        return self._ordinal[doc_id]

    def doc(self, ordinal: int) -> np.ndarray:
        return self.doc_tokens[self.doc_offsets[ordinal]:self.doc_offsets[ordinal + 1]]

    def gather(self, ordinals) -> tuple[np.ndarray, np.ndarray]:
        """Concatenate the token arrays of ``ordinals``; returns (tokens, offsets)."""
        ordinals = np.asarray(ordinals, dtype=np.int64)
        lengths = self.doc_lengths[ordinals].astype(np.int64)
        offsets = np.zeros(len(ordinals) + 1, dtype=np.int64)
        np.cumsum(lengths, out=offsets[1:])
        if len(ordinals) == 0:
            return self.doc_tokens[:0], offsets
        starts = self.doc_offsets[ordinals]
        idx = np.repeat(starts - offsets[:-1], lengths) + np.arange(offsets[-1])
        return self.doc_tokens[idx], offsets

    def query_idf_sum(self, query) -> float:
        query = np.asarray(query, dtype=np.int64)
        query = query[(query >= 0) & (query < self.vocab_size)]
        return float(self.idf[query].sum())

    def save(self, directory: str | Path, vocab: Vocabulary | None = None) -> None:
        """Write the index directory (layout documented in README)."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        manifest = {
            "format": INDEX_FORMAT,
            "n_docs": self.n_docs,
            "vocab_size": self.vocab_size,
            "avgdl": self.avgdl,
            "total_tokens": self.stats.total_tokens,
            "params": asdict(self.params),
        }
        _atomic_write(d / "manifest.json", (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())
        _atomic_write(d / "postings.bin", self._postings_bytes())
        _atomic_write(d / "doclens.bin", self.doc_lengths.astype("<i4").tobytes())
        _atomic_write(d / "forward.bin", self.doc_tokens.astype("<i4").tobytes())
        _atomic_write(d / "docids.txt", "".join(x + "\n" for x in self.doc_ids).encode("utf-8"))
        if vocab is not None:
            vocab.save(d / "vocab.tsv")

    def _postings_bytes(self) -> bytes:
        parts = []
        lengths = np.diff(self.indptr)
        for t in np.flatnonzero(lengths):
            lo, hi = self.indptr[t], self.indptr[t + 1]
            pairs = np.empty((hi - lo, 2), dtype="<i4")
            pairs[:, 0] = self.post_docs[lo:hi]
            pairs[:, 1] = self.post_tfs[lo:hi]
            parts.append(np.array([t, hi - lo], dtype="<i4").tobytes())
            parts.append(pairs.tobytes())
        return b"".join(parts)

    @classmethod
    def load(cls, directory: str | Path) -> "InvertedIndex":
        d = Path(directory)
        try:
            manifest = json.loads((d / "manifest.json").read_text())
        except FileNotFoundError:
            raise DataError(f"no index at {d}") from None
        if manifest.get("format") != INDEX_FORMAT:
            raise DataError(f"{d}: unknown index format {manifest.get('format')!r}")
        doc_ids = (d / "docids.txt").read_text("utf-8").splitlines()
        lengths = np.frombuffer((d / "doclens.bin").read_bytes(), dtype="<i4").astype(np.int64)
        tokens = np.frombuffer((d / "forward.bin").read_bytes(), dtype="<i4").astype(np.int32)
        offsets = np.zeros(len(lengths) + 1, dtype=np.int64)
        np.cumsum(lengths, out=offsets[1:])
        index = cls(doc_ids, tokens, offsets, manifest["vocab_size"], Bm25Params(**manifest["params"]))
        # the postings file is derived data; verify it against the forward index
        if (d / "postings.bin").read_bytes() != index._postings_bytes():
            raise DataError(f"{d}: postings do not match forward index")
        return index


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def build_index(store: DocStore, vocab: Vocabulary | int, params: Bm25Params = Bm25Params()) -> InvertedIndex:
    if len(store) == 0:
        raise DataError("empty collection")
    vocab_size = vocab if isinstance(vocab, int) else len(vocab)
    docs = [toks for _, toks in store.items()]
    offsets = np.zeros(len(docs) + 1, dtype=np.int64)
    np.cumsum([len(t) for t in docs], out=offsets[1:])
    tokens = np.concatenate(docs) if offsets[-1] else np.zeros(0, dtype=np.int32)
    return InvertedIndex(store.doc_ids, tokens, offsets, vocab_size, params)


def bm25_score(query, ordinal: int, index: InvertedIndex, params: Bm25Params | None = None) -> float:
    """BM25 of one document; repeated query tokens count once per occurrence."""
    params = params or index.params
    if not 0 <= ordinal < index.n_docs:
        raise IndexError(f"doc ordinal {ordinal} out of range")
    dl = index.doc_lengths[ordinal]
    norm = params.k1 * (1.0 - params.b + params.b * dl / index.avgdl) if index.avgdl else params.k1
    score = 0.0
    for t in np.asarray(query, dtype=np.int64):
        docs, tfs = index.postings(int(t))
        pos = np.searchsorted(docs, ordinal)
        if pos < len(docs) and docs[pos] == ordinal:
            tf = float(tfs[pos])
            score += index.idf[t] * tf * (params.k1 + 1.0) / (tf + norm)
    return float(score)


def bm25_scores(index: InvertedIndex, query, params: Bm25Params | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Score every document sharing a query token; returns (ordinals, scores)."""
    params = params or index.params
    acc = np.zeros(index.n_docs)
    hit = np.zeros(index.n_docs, dtype=bool)
    avgdl = index.avgdl if index.avgdl else 1.0
    norm = params.k1 * (1.0 - params.b + params.b * index.doc_lengths / avgdl)
    for t in np.asarray(query, dtype=np.int64):
        docs, tfs = index.postings(int(t))
        if len(docs) == 0:
            continue
        tf = tfs.astype(np.float64)
        acc[docs] += index.idf[t] * tf * (params.k1 + 1.0) / (tf + norm[docs])
        hit[docs] = True
    ordinals = np.flatnonzero(hit)
    return ordinals, acc[ordinals]


def retrieve_topk(index: InvertedIndex, query, k: int = 1000, params: Bm25Params | None = None,
                  query_id: str = "") -> CandidateList:
    """Top-k BM25 documents; ties are broken by ascending doc id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ordinals, scores = bm25_scores(index, query, params)
    order = np.lexsort((index.id_rank[ordinals], -scores))[:k]
    return CandidateList(query_id, [index.doc_ids[i] for i in ordinals[order]], scores[order])


def retrieve_many(index: InvertedIndex, queries: dict[str, np.ndarray], k: int = 1000,
                  params: Bm25Params | None = None, threads: int = 1) -> dict[str, CandidateList]:
    """Run :func:`retrieve_topk` for every query, optionally on a thread pool."""
    qids = sorted(queries)
    if threads <= 1:
        return {q: retrieve_topk(index, queries[q], k, params, q) for q in qids}
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(threads) as pool:
        results = pool.map(lambda q: retrieve_topk(index, queries[q], k, params, q), qids)
        return dict(zip(qids, results))
