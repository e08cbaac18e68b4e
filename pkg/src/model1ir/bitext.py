"""Parallel corpus construction from queries and chunks of their relevant documents."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import DataError, DocStore, Qrels, Vocabulary, atomic_open

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BitextPair:
    src: np.ndarray  # document side (conditioning tokens)
    tgt: np.ndarray  # query side


@dataclass
class ParallelCorpus:
    pairs: list[BitextPair]
    vocab_size: int
    skipped_missing: int = 0

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)


def chunk_document(doc, chunk_len: int = 8) -> list[np.ndarray]:
    if chunk_len < 1:
        raise ValueError("chunk_len must be >= 1")
    doc = np.asarray(doc, dtype=np.int32)
    return [doc[i:i + chunk_len] for i in range(0, len(doc), chunk_len)]


def build_bitext(queries: dict[str, np.ndarray], qrels: Qrels, store: DocStore, vocab_size: int,
                 chunk_len: int = 8, symmetrize: bool = True) -> ParallelCorpus:
    """Pair every query with each chunk of each of its relevant documents.

    With ``symmetrize`` the swapped pair (query, chunk) follows each original
    pair, so both translation directions are pooled into one corpus.
    """
    pairs: list[BitextPair] = []
    missing = 0
    for qid in sorted(queries):
        q = np.asarray(queries[qid], dtype=np.int32)
        if len(q) == 0:
            continue
        for doc_id in sorted(qrels.get(qid, {})):
            if qrels[qid][doc_id] < 1:
                continue
            if doc_id not in store:
                missing += 1
                continue
            for chunk in chunk_document(store[doc_id], chunk_len):
                pairs.append(BitextPair(chunk, q))
                if symmetrize:
                    pairs.append(BitextPair(q, chunk))
    if missing:
        log.warning("bitext: %d judged documents missing from the collection", missing)
    if not pairs:
        raise DataError("empty bitext")
    for p in pairs:
        if p.src.max() >= vocab_size or p.tgt.max() >= vocab_size:
            raise DataError("bitext token id outside vocabulary")
    return ParallelCorpus(pairs, vocab_size, missing)


def write_giza(corpus: ParallelCorpus, vocab: Vocabulary, src_path: str | Path, tgt_path: str | Path) -> None:
    """Write the two sides as aligned plain-text files, one sequence per line."""
    with atomic_open(src_path) as fs, atomic_open(tgt_path) as ft:
        for p in corpus.pairs:
            fs.write(" ".join(vocab.decode(p.src)) + "\n")
            ft.write(" ".join(vocab.decode(p.tgt)) + "\n")


def read_giza(vocab: Vocabulary, src_path: str | Path, tgt_path: str | Path) -> ParallelCorpus:
    pairs = []
    with open(src_path, encoding="utf-8") as fs, open(tgt_path, encoding="utf-8") as ft:
        for s, t in zip(fs, ft):
            src, tgt = vocab.encode(s.split()), vocab.encode(t.split())
            if len(src) and len(tgt):
                pairs.append(BitextPair(src, tgt))
    if not pairs:
        raise DataError("empty bitext")
    return ParallelCorpus(pairs, len(vocab))
