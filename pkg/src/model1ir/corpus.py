"""Text ingestion: tokenization, vocabulary, document store and collection statistics."""

from __future__ import annotations

import re
from collections import Counter
from contextlib import contextmanager
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

OOV_PROBABILITY = 1e-9

_ALNUM = re.compile(r"[^\W_]+")

Qrels = dict[str, dict[str, int]]


class DataError(Exception):
    """Raised for malformed or inconsistent input data."""


@dataclass(frozen=True)
class TokenizerConfig:
    """Settings for :func:`tokenize`.

    ``pattern`` is the regular expression that extracts tokens; swap it out
    (or pre-tokenize externally) to plug in a different tokenizer.
    """

    lowercase: bool = True
    stopwords: frozenset[str] = frozenset()
    remove_stopwords: bool = True
    pattern: re.Pattern = _ALNUM


def tokenize(text: str, config: TokenizerConfig = TokenizerConfig()) -> list[str]:
    if config.lowercase:
        text = text.lower()
    tokens = config.pattern.findall(text)
    if config.remove_stopwords and config.stopwords:
        tokens = [t for t in tokens if t not in config.stopwords]
    return tokens


def read_stopwords(path: str | Path | None = None) -> frozenset[str]:
    """Read a stopword file (one token per line, ``#`` comments).

    With no path, the packaged default list is returned.
    """
    if path is None:
        text = resources.files("model1ir").joinpath("data/stopwords.txt").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    words = set()
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            words.add(line.lower())
    return frozenset(words)


class Vocabulary:
    """Dense token <-> id mapping with corpus frequencies.

    Ids are assigned in descending frequency order, so the ``n`` most frequent
    tokens are exactly the ids ``< n``.
    """

    def __init__(self, tokens: list[str], freqs: Iterable[int], stopword_ids: Iterable[int] = ()):
        self.id_to_token = list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate tokens in vocabulary")
        self.freqs = np.asarray(list(freqs), dtype=np.int64)
        if self.freqs.shape != (len(self.id_to_token),):
            raise ValueError("frequency array does not match vocabulary size")
        if (self.freqs < 0).any():
            raise ValueError("negative frequency")
        self.stopword_ids = frozenset(stopword_ids)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Vocabulary)
            and self.id_to_token == other.id_to_token
            and np.array_equal(self.freqs, other.freqs)
            and self.stopword_ids == other.stopword_ids
        )

    def encode(self, tokens: Iterable[str]) -> np.ndarray:
        """Map surface tokens to ids; tokens outside the vocabulary are dropped."""
        get = self.token_to_id.get
        ids = [i for i in (get(t) for t in tokens) if i is not None]
        return np.asarray(ids, dtype=np.int32)

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]

    def save(self, path: str | Path) -> None:
        with atomic_open(path) as f:
            for i, (tok, freq) in enumerate(zip(self.id_to_token, self.freqs)):
                flag = "\tstop" if i in self.stopword_ids else ""
                f.write(f"{tok}\t{freq}{flag}\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        tokens, freqs, stops = [], [], []
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                parts = line.rstrip("\n").split("\t")
                if len(parts) not in (2, 3):
                    raise DataError(f"{path}:{lineno}: expected token<TAB>freq")
                if len(parts) == 3:
                    stops.append(len(tokens))
                tokens.append(parts[0])
                freqs.append(int(parts[1]))
        return cls(tokens, freqs, stops)

    @classmethod
    def from_token_file(cls, path: str | Path, stopwords: frozenset[str] = frozenset()) -> "Vocabulary":
        """Load an externally supplied token list (e.g. word pieces), one per line.

        Stopwords are kept but their ids are recorded in ``stopword_ids``.
        """
        tokens = [line.rstrip("\n") for line in open(path, encoding="utf-8") if line.strip()]
        stops = [i for i, t in enumerate(tokens) if t in stopwords]
        return cls(tokens, [0] * len(tokens), stops)


def build_vocab(stream: Iterable[str], cap: int = 10**6, stopwords: Iterable[str] = ()) -> Vocabulary:
    """Keep the ``cap`` most frequent non-stopword tokens.

    Ties in frequency are broken lexicographically.
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    stop = set(stopwords)
    counts = Counter(t for t in stream if t not in stop)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:cap]
    return Vocabulary([t for t, _ in ranked], [c for _, c in ranked])


class DocStore:
    """Insertion-ordered mapping doc-id -> token-id array."""

    def __init__(self):
        self._ids: list[str] = []
        self._ordinal: dict[str, int] = {}
        self._docs: list[np.ndarray] = []

    def add(self, doc_id: str, tokens) -> int:
        if doc_id in self._ordinal:
            raise DataError(f"duplicate doc id {doc_id!r}")
        ordinal = len(self._ids)
        self._ids.append(doc_id)
        self._ordinal[doc_id] = ordinal
        self._docs.append(np.asarray(tokens, dtype=np.int32))
        return ordinal

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._ordinal

    def __getitem__(self, doc_id: str) -> np.ndarray:
        return self._docs[self._ordinal[doc_id]]

    def __iter__(self) -> Iterator[str]:
        return iter(self._ids)

    @property
    def doc_ids(self) -> list[str]:
        return list(self._ids)

    def ordinal(self, doc_id: str) -> int:
        return self._ordinal[doc_id]

    def by_ordinal(self, ordinal: int) -> np.ndarray:
        return self._docs[ordinal]

    def items(self):
        return zip(self._ids, self._docs)


@dataclass
class CollectionStats:
    n_docs: int
    total_tokens: int
    counts: np.ndarray
    probs: np.ndarray
    doc_freqs: np.ndarray
    avgdl: float
    oov_probability: float = field(default=OOV_PROBABILITY)

    def p_collection(self, token_id: int) -> float:
        """P(q|C); tokens never seen in the collection get the OOV constant."""
        if 0 <= token_id < len(self.probs) and self.counts[token_id] > 0:
            return float(self.probs[token_id])
        return self.oov_probability

    def p_collection_many(self, token_ids) -> np.ndarray:
        ids = np.asarray(token_ids, dtype=np.int64)
        out = np.full(ids.shape, self.oov_probability)
        ok = (ids >= 0) & (ids < len(self.probs))
        seen = np.zeros(ids.shape, dtype=bool)
        seen[ok] = self.counts[ids[ok]] > 0
        out[seen] = self.probs[ids[seen]]
        return out


def collection_stats(store: DocStore, vocab: "Vocabulary | int") -> CollectionStats:
    vocab_size = vocab if isinstance(vocab, int) else len(vocab)
    if len(store) == 0:
        raise DataError("empty collection")
    counts = np.zeros(vocab_size, dtype=np.int64)
    df = np.zeros(vocab_size, dtype=np.int64)
    total = 0
    for _, toks in store.items():
        if len(toks) == 0:
            continue
        total += len(toks)
        counts += np.bincount(toks, minlength=vocab_size)
        df[np.unique(toks)] += 1
    probs = counts / total if total else np.zeros(vocab_size)
    return CollectionStats(
        n_docs=len(store),
        total_tokens=total,
        counts=counts,
        probs=probs,
        doc_freqs=df,
        avgdl=total / len(store),
    )


def read_tsv(path: str | Path) -> list[tuple[str, str]]:
    """Read ``id<TAB>text`` lines (collection and query files)."""
    rows = []
    seen = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "\t" not in line:
                raise DataError(f"{path}:{lineno}: expected id<TAB>text")
            key, text = line.split("\t", 1)
            if key in seen:
                raise DataError(f"{path}:{lineno}: duplicate id {key!r}")
            seen.add(key)
            rows.append((key, text))
    return rows


@contextmanager
def atomic_open(path: str | Path):
    """Text file handle that replaces ``path`` only once writing succeeded."""
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "w", encoding="utf-8") as f:
        yield f
    tmp.replace(path)


def write_tsv(path: str | Path, rows: Iterable[tuple[str, str]]) -> None:
    with atomic_open(path) as f:
        for key, text in rows:
            f.write(f"{key}\t{text}\n")


def read_qrels(path: str | Path) -> Qrels:
    """Read TREC qrels: ``query_id 0 doc_id grade``."""
    qrels: Qrels = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
            qid, _, doc_id, grade = parts
            try:
                g = int(grade)
            except ValueError:
                raise DataError(f"{path}:{lineno}: grade {grade!r} is not an integer") from None
            if not 0 <= g <= 3:
                raise DataError(f"{path}:{lineno}: grade {g} outside [0, 3]")
            qrels.setdefault(qid, {})[doc_id] = g
    return qrels


def write_qrels(path: str | Path, qrels: Qrels) -> None:
    with atomic_open(path) as f:
        for qid in sorted(qrels):
            for doc_id in sorted(qrels[qid]):
                f.write(f"{qid} 0 {doc_id} {qrels[qid][doc_id]}\n")
