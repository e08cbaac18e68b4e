"""Non-parametric Model 1: EM training, table post-processing and scoring."""

from __future__ import annotations

import logging
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from . import kernels
from .bitext import ParallelCorpus
from .corpus import CollectionStats, DataError, Vocabulary

log = logging.getLogger(__name__)

LOG_FLOOR = 1e-300

_MAGIC = b"M1TT"
_VERSION = 1
_HEADER = struct.Struct("<4sIqqqq")


@dataclass(frozen=True)
class EmConfig:
    iterations: int = 5
    prune_threshold: float = 1e-3
    vocab_cap: int = 10**6
    p_self: float = 0.1
    rescale_before_prune: bool = True

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0.0 <= self.prune_threshold < 1.0:
            raise ValueError("prune_threshold must be in [0, 1)")
        if not 0.0 < self.p_self < 1.0:
            raise ValueError("p_self must be in (0, 1)")


class TranslationTable:
    """Sparse T(q|d) in CSR layout: one row per conditioning (document) token.

    Within a row the query-token ids are strictly ascending.  ``normalized``
    records whether every row is a probability distribution.
    """

    def __init__(self, indptr, indices, data, n_rows: int, n_cols: int | None = None,
                 normalized: bool = False, validate: bool = True):
        self.indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(indices, dtype=np.int32)
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.n_rows = int(n_rows)
        self.n_cols = int(n_rows if n_cols is None else n_cols)
        self.normalized = bool(normalized)
        self._keys = None
        self._by_query = None
        if validate:
            self._validate()

    def _validate(self):
        if self.indptr.shape != (self.n_rows + 1,) or self.indptr[0] != 0:
            raise DataError("bad row pointer array")
        if np.any(np.diff(self.indptr) < 0) or self.indptr[-1] != len(self.indices):
            raise DataError("bad row pointer array")
        if len(self.indices) != len(self.data):
            raise DataError("index/value length mismatch")
        if len(self.data):
            if not np.all((self.data > 0) & (self.data <= 1)):
                raise DataError("translation probabilities must lie in (0, 1]")
            if self.indices.min() < 0 or self.indices.max() >= self.n_cols:
                raise DataError("column id out of range")
            keys = self.keys
            if np.any(np.diff(keys) <= 0):
                raise DataError("columns must be strictly ascending within rows")

    @classmethod
    def from_entries(cls, rows, cols, vals, n_rows: int, n_cols: int | None = None,
                     normalized: bool = False) -> "TranslationTable":
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        n_cols = n_rows if n_cols is None else n_cols
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        indptr = np.zeros(n_rows + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n_rows), out=indptr[1:])
        return cls(indptr, cols, vals, n_rows, n_cols, normalized)

    @classmethod
    def from_dense(cls, matrix, normalized: bool = False) -> "TranslationTable":
        """Build from a dense array indexed ``[d, q]``; zeros are dropped."""
        m = np.asarray(matrix, dtype=np.float64)
        rows, cols = np.nonzero(m)
        return cls.from_entries(rows, cols, m[rows, cols], m.shape[0], m.shape[1], normalized)

    @property
    def nnz(self) -> int:
        return len(self.data)

    @property
    def keys(self) -> np.ndarray:
        """Globally sorted cell keys ``d * n_cols + q``."""
        if self._keys is None:
            rows = np.repeat(np.arange(self.n_rows, dtype=np.int64), np.diff(self.indptr))
            self._keys = rows * self.n_cols + self.indices
        return self._keys

    def row(self, d: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.indptr[d], self.indptr[d + 1]
        return self.indices[lo:hi], self.data[lo:hi]

    def row_ids(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_rows, dtype=np.int64), np.diff(self.indptr))

    def get(self, q: int, d: int) -> float:
        if not (0 <= d < self.n_rows and 0 <= q < self.n_cols):
            return 0.0
        cols, vals = self.row(d)
        pos = np.searchsorted(cols, q)
        if pos < len(cols) and cols[pos] == q:
            return float(vals[pos])
        return 0.0

    def lookup(self, q, d) -> np.ndarray:
        """Vectorized T(q|d); absent cells give 0."""
        q = np.asarray(q, dtype=np.int64)
        d = np.asarray(d, dtype=np.int64)
        q, d = np.broadcast_arrays(q, d)
        out = np.zeros(q.shape)
        ok = (q >= 0) & (q < self.n_cols) & (d >= 0) & (d < self.n_rows)
        if self.nnz == 0 or not ok.any():
            return out
        want = d[ok] * self.n_cols + q[ok]
        pos = np.minimum(np.searchsorted(self.keys, want), self.nnz - 1)
        found = self.keys[pos] == want
        vals = np.where(found, self.data[pos], 0.0)
        out[ok] = vals
        return out

    def row_sums(self) -> np.ndarray:
        return np.bincount(self.row_ids(), weights=self.data, minlength=self.n_rows)

    def to_dense(self) -> np.ndarray:
        m = np.zeros((self.n_rows, self.n_cols))
        m[self.row_ids(), self.indices] = self.data
        return m

    def by_query(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Column-major view (q -> ascending d with values), built once."""
        if self._by_query is None:
            rows = self.row_ids()
            order = np.lexsort((rows, self.indices))
            col_indptr = np.zeros(self.n_cols + 1, dtype=np.int64)
            np.cumsum(np.bincount(self.indices, minlength=self.n_cols), out=col_indptr[1:])
            self._by_query = (
                col_indptr,
                np.ascontiguousarray(rows[order], dtype=np.int32),
                np.ascontiguousarray(self.data[order]),
            )
        return self._by_query

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, TranslationTable)
            and self.n_rows == other.n_rows
            and self.n_cols == other.n_cols
            and self.normalized == other.normalized
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.data, other.data)
        )

    def __repr__(self) -> str:
        return f"TranslationTable(rows={self.n_rows}, cols={self.n_cols}, nnz={self.nnz}, normalized={self.normalized})"

    # ---- persistence -------------------------------------------------------

    def write_binary(self, path: str | Path) -> None:
        header = _HEADER.pack(_MAGIC, _VERSION, self.n_rows, self.n_cols, self.nnz, int(self.normalized))
        tmp = Path(str(path) + ".tmp")
        with open(tmp, "wb") as f:
            f.write(header)
            f.write(self.indptr.astype("<i8").tobytes())
            f.write(self.indices.astype("<i4").tobytes())
            f.write(self.data.astype("<f8").tobytes())
        tmp.replace(path)

    @classmethod
    def read_binary(cls, path: str | Path) -> "TranslationTable":
        raw = Path(path).read_bytes()
        if len(raw) < _HEADER.size:
            raise DataError(f"{path}: truncated table file")
        magic, version, n_rows, n_cols, nnz, flags = _HEADER.unpack_from(raw)
        if magic != _MAGIC or version != _VERSION:
            raise DataError(f"{path}: not a translation table file")
        off = _HEADER.size
        expected = off + 8 * (n_rows + 1) + 4 * nnz + 8 * nnz
        if len(raw) != expected:
            raise DataError(f"{path}: size {len(raw)} does not match header (expected {expected})")
        indptr = np.frombuffer(raw, "<i8", n_rows + 1, off)
        off += 8 * (n_rows + 1)
        indices = np.frombuffer(raw, "<i4", nnz, off)
        off += 4 * nnz
        data = np.frombuffer(raw, "<f8", nnz, off)
        return cls(indptr, indices, data, n_rows, n_cols, bool(flags & 1))

    def write_text(self, path: str | Path, vocab: Vocabulary) -> None:
        """``src tgt prob`` lines sorted by source then target surface form."""
        rows = self.row_ids()
        words = vocab.id_to_token
        lines = sorted(
            (words[d], words[q], p) for d, q, p in zip(rows.tolist(), self.indices.tolist(), self.data.tolist())
        )
        tmp = Path(str(path) + ".tmp")
        with open(tmp, "w", encoding="utf-8") as f:
            for s, t, p in lines:
                f.write(f"{s} {t} {p!r}\n")
        tmp.replace(path)

    @classmethod
    def read_text(cls, path: str | Path, vocab: Vocabulary, normalized: bool = False) -> "TranslationTable":
        rows, cols, vals = [], [], []
        ids = vocab.token_to_id
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                parts = line.split()
                if not parts:
                    continue
                if len(parts) != 3:
                    raise DataError(f"{path}:{lineno}: expected 'src tgt prob'")
                s, t, p = parts
                if s not in ids or t not in ids:
                    raise DataError(f"{path}:{lineno}: token not in vocabulary")
                rows.append(ids[s])
                cols.append(ids[t])
                vals.append(float(p))
        return cls.from_entries(rows, cols, vals, len(vocab), len(vocab), normalized)


# ---- EM training ------------------------------------------------------------


class _EmProblem:
    """Flattened alignment structure of a parallel corpus.

    Every (target position, source position) of every pair becomes one entry
    pointing at its table cell; entries of one target position form a group.
    """

    def __init__(self, corpus: ParallelCorpus):
        if len(corpus) == 0:
            raise DataError("empty bitext")
        V = corpus.vocab_size
        keys, sizes, pair_groups = [], [], [0]
        for p in corpus.pairs:
            src = np.asarray(p.src, dtype=np.int64)
            tgt = np.asarray(p.tgt, dtype=np.int64)
            if len(src) == 0 or len(tgt) == 0:
                raise DataError("bitext pair with an empty side")
            keys.append((src[None, :] * V + tgt[:, None]).ravel())
            sizes.append(np.full(len(tgt), len(src), dtype=np.int64))
            pair_groups.append(pair_groups[-1] + len(tgt))
        all_keys = np.concatenate(keys)
        cell_keys, entries = np.unique(all_keys, return_inverse=True)
        self.V = V
        self.entries = np.ascontiguousarray(entries.ravel(), dtype=np.int64)
        group_sizes = np.concatenate(sizes)
        self.group_offsets = np.zeros(len(group_sizes) + 1, dtype=np.int64)
        np.cumsum(group_sizes, out=self.group_offsets[1:])
        self.group_src_len = group_sizes.astype(np.float64)
        self.pair_groups = np.asarray(pair_groups, dtype=np.int64)
        self.rows = cell_keys // V
        self.cols = cell_keys % V
        self.indptr = np.zeros(V + 1, dtype=np.int64)
        np.cumsum(np.bincount(self.rows, minlength=V), out=self.indptr[1:])

    def uniform(self) -> np.ndarray:
        per_row = np.diff(self.indptr)[self.rows]
        return 1.0 / per_row

    def table(self, values: np.ndarray, normalized: bool = True) -> TranslationTable:
        return TranslationTable(self.indptr, self.cols, values.copy(), self.V, self.V, normalized, validate=False)

    def _slices(self, n_workers: int):
        """Contiguous group ranges, cut at pair boundaries."""
        n_pairs = len(self.pair_groups) - 1
        cuts = np.linspace(0, n_pairs, max(1, n_workers) + 1).round().astype(int)
        for a, b in zip(cuts[:-1], cuts[1:]):
            if b > a:
                yield self.pair_groups[a], self.pair_groups[b]

    def step(self, values: np.ndarray, n_workers: int = 1, backend=None) -> tuple[np.ndarray, float]:
        """One E+M step; returns new values and the log-likelihood of ``values``."""
        impl = backend or kernels
        jobs = list(self._slices(n_workers))

        def run(job):
            g0, g1 = job
            counts = np.zeros(len(values))
            offs = self.group_offsets[g0:g1 + 1]
            ents = self.entries[offs[0]:offs[-1]]
            ll = impl.em_estep(values, ents, offs - offs[0], self.group_src_len[g0:g1], counts)
            return counts, ll

        if len(jobs) == 1:
            results = [run(jobs[0])]
        else:
            with ThreadPoolExecutor(len(jobs)) as pool:
                results = list(pool.map(run, jobs))
        counts = np.zeros(len(values))
        ll = 0.0
        for c, part in results:  # fixed merge order
            counts += c
            ll += part
        row_mass = np.bincount(self.rows, weights=counts, minlength=self.V)
        mass = row_mass[self.rows]
        new = np.where(mass > 0, counts / np.where(mass > 0, mass, 1.0), values)
        return new, ll


def em_tables(corpus: ParallelCorpus, iterations: int, n_workers: int = 1,
              backend=None) -> Iterator[TranslationTable]:
    """Yield the uniform initial table and then the table after each EM iteration."""
    problem = _EmProblem(corpus)
    values = problem.uniform()
    yield problem.table(values)
    for it in range(iterations):
        values, ll = problem.step(values, n_workers, backend)
        log.debug("em iteration %d: log-likelihood before step %.6f", it + 1, ll)
        yield problem.table(values)


def em_train(corpus: ParallelCorpus, iterations: int = 5, n_workers: int = 1, backend=None) -> TranslationTable:
    """IBM Model 1 EM without a NULL word; returns row-normalized T(q|d)."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    table = None
    for table in em_tables(corpus, iterations, n_workers, backend):
        pass
    return table


def em_log_likelihood(corpus: ParallelCorpus, table: TranslationTable) -> float:
    total = 0.0
    for p in corpus.pairs:
        src = np.asarray(p.src, dtype=np.int64)
        tgt = np.asarray(p.tgt, dtype=np.int64)
        t = table.lookup(tgt[:, None], src[None, :])
        inner = t.sum(axis=1) / len(src)
        total += float(np.log(np.maximum(inner, LOG_FLOOR)).sum())
    return total


# ---- post-processing ----------------------------------------------------------


def prune_table(table: TranslationTable, threshold: float = 1e-3, vocab_cap: int = 10**6,
                frequencies=None) -> TranslationTable:
    """Drop entries below ``threshold`` and rows of all but the ``vocab_cap`` most frequent tokens.

    Token frequency defaults to id order (vocabulary ids are frequency ranked).
    Rows are not renormalized.
    """
    if not 0.0 <= threshold < 1.0:
        raise ValueError("threshold must be in [0, 1)")
    rows = table.row_ids()
    if frequencies is None:
        keep_row = np.arange(table.n_rows) < vocab_cap
    else:
        freqs = np.asarray(frequencies)
        order = np.lexsort((np.arange(len(freqs)), -freqs))
        keep_row = np.zeros(table.n_rows, dtype=bool)
        keep_row[order[:vocab_cap]] = True
    keep = (table.data >= threshold) & keep_row[rows]
    return TranslationTable.from_entries(rows[keep], table.indices[keep], table.data[keep],
                                         table.n_rows, table.n_cols, normalized=False)


def set_self_translation(table: TranslationTable, p_self: float) -> TranslationTable:
    """Set T(t|t) = p_self and rescale the rest of each row to mass 1 - p_self.

    Rows with no mass besides the self entry (including empty rows) become {t: 1}.
    """
    if not 0.0 < p_self < 1.0:
        raise ValueError("p_self must be in (0, 1)")
    if not table.normalized:
        raise ValueError("set_self_translation needs a row-normalized table")
    if table.n_rows > table.n_cols:
        raise ValueError("self translation needs n_rows <= n_cols")
    rows = table.row_ids()
    cols = table.indices.astype(np.int64)
    other = cols != rows
    mass = np.bincount(rows[other], weights=table.data[other], minlength=table.n_rows)
    has_mass = mass > 0
    scale = np.where(has_mass, (1.0 - p_self) / np.where(has_mass, mass, 1.0), 0.0)
    keep = other & has_mass[rows]
    diag = np.arange(table.n_rows, dtype=np.int64)
    new_rows = np.concatenate([rows[keep], diag])
    new_cols = np.concatenate([cols[keep], diag])
    new_vals = np.concatenate([table.data[keep] * scale[rows[keep]], np.where(has_mass, p_self, 1.0)])
    return TranslationTable.from_entries(new_rows, new_cols, new_vals, table.n_rows, table.n_cols, normalized=True)


def postprocess(table: TranslationTable, config: EmConfig, frequencies=None) -> TranslationTable:
    """Self-translation rescaling and pruning in the configured order."""
    if config.rescale_before_prune:
        table = set_self_translation(table, config.p_self)
        return prune_table(table, config.prune_threshold, config.vocab_cap, frequencies)
    table = prune_table(table, config.prune_threshold, config.vocab_cap, frequencies)
    table.normalized = True  # pruned rows are sub-normalized; rescaling restores mass
    rescaled = set_self_translation(table, config.p_self)
    rescaled.normalized = False
    return rescaled


# ---- scoring -----------------------------------------------------------------


def model1_log_score(query, doc, table: TranslationTable, lam: float, stats: CollectionStats) -> float:
    """Smoothed Model 1 log-likelihood of the query, averaged over query tokens.

    The inner sum runs over unique document tokens weighted by their in-document
    frequency.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must be in [0, 1]")
    query = np.asarray(query, dtype=np.int64)
    if len(query) == 0:
        raise ValueError("empty query")
    doc = np.asarray(doc, dtype=np.int64)
    uniq, tf = np.unique(doc, return_counts=True)
    p_doc = tf / len(doc) if len(doc) else tf.astype(np.float64)
    total = 0.0
    for q in query:
        inner = float(np.dot(table.lookup(q, uniq), p_doc)) if len(doc) else 0.0
        lik = (1.0 - lam) * inner + lam * stats.p_collection(int(q))
        total += math.log(max(lik, LOG_FLOOR))
    return total / len(query)


class Model1Scorer:
    """Batch re-ranker over a translation table (the fast CPU path)."""

    def __init__(self, table: TranslationTable, stats: CollectionStats, lam: float = 0.1, backend=None):
        if not 0.0 <= lam <= 1.0:
            raise ValueError("lambda must be in [0, 1]")
        self.table = table
        self.stats = stats
        self.lam = lam
        self.impl = backend or kernels
        self.columns = table.by_query()

    def score(self, query, doc_tokens, doc_offsets) -> np.ndarray:
        """Scores for documents stored back to back in ``doc_tokens``."""
        query = np.asarray(query, dtype=np.int64)
        if len(query) == 0:
            raise ValueError("empty query")
        q_ids, counts = np.unique(query, return_counts=True)
        weights = counts / len(query)
        smooth = self.lam * self.stats.p_collection_many(q_ids)
        doc_tokens = np.ascontiguousarray(doc_tokens, dtype=np.int32)
        if len(doc_tokens) and (doc_tokens.min() < 0 or doc_tokens.max() >= self.table.n_rows):
            raise ValueError("document token id outside the table")
        col_indptr, col_rows, col_vals = self.columns
        return self.impl.model1_rerank(
            np.ascontiguousarray(q_ids, dtype=np.int32),
            np.ascontiguousarray(weights, dtype=np.float64),
            np.ascontiguousarray(smooth, dtype=np.float64),
            col_indptr, col_rows, col_vals,
            doc_tokens,
            np.ascontiguousarray(doc_offsets, dtype=np.int64),
            1.0 - self.lam,
            self.table.n_rows,
        )

    def score_docs(self, query, docs) -> np.ndarray:
        lengths = [len(d) for d in docs]
        offsets = np.zeros(len(docs) + 1, dtype=np.int64)
        np.cumsum(lengths, out=offsets[1:])
        tokens = np.concatenate([np.asarray(d, dtype=np.int32) for d in docs]) if offsets[-1] else np.zeros(0, np.int32)
        return self.score(query, tokens, offsets)
