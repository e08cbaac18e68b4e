"""Seeded synthetic collections with a controlled query/document vocabulary gap.

Every concept has a query-side word and a document-side synonym.  A relevant
document mentions each query concept, choosing the synonym with probability
``rho``; hard distractors mention two of the three query concepts verbatim.
Exact-match retrieval therefore prefers distractors as ``rho`` grows, while a
translation model that has learned the synonym mapping can recover the
relevant document.
"""

from __future__ import annotations

import json
import math
from itertools import combinations
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .corpus import Qrels, write_qrels, write_tsv

SPLIT_FRACTIONS = {"modeling": 0.5, "fusion": 0.15, "test": 0.35}


@dataclass(frozen=True)
class SynthConfig:
    vocab_size: int = 500
    synonym_pairs: int = 50
    n_queries: int = 300
    n_docs: int = 2000
    seed: int = 0
    rho: float = 0.7
    query_concepts: int = 3
    distractors_per_query: int = 2
    doc_len: tuple[int, int] = (40, 80)
    mentions: tuple[int, int] = (1, 3)
    noise_concepts: int = 3
    zipf_exponent: float = 1.0

    def __post_init__(self):
        for name in ("vocab_size", "synonym_pairs", "n_queries", "n_docs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must be in [0, 1]")
        if self.synonym_pairs < max(self.query_concepts, self.noise_concepts):
            raise ValueError("need at least as many synonym pairs as concepts per query")
        if math.comb(self.synonym_pairs, self.query_concepts) < self.n_queries:
            raise ValueError("too few synonym pairs for distinct query concept sets")
        if self.n_docs < self.n_queries * (1 + self.distractors_per_query):
            raise ValueError("n_docs too small for one relevant doc plus distractors per query")


@dataclass
class SynthData:
    docs: dict[str, str]
    queries: dict[str, str]
    qrels: Qrels
    splits: dict[str, list[str]]
    synonyms: dict[str, str]


def _word(prefix: str, i: int) -> str:
    return f"{prefix}{i:05d}"


def generate(config: SynthConfig) -> SynthData:
    rng = np.random.default_rng(config.seed)
    background = [_word("w", i) for i in range(config.vocab_size)]
    q_words = [_word("qa", i) for i in range(config.synonym_pairs)]
    d_words = [_word("db", i) for i in range(config.synonym_pairs)]
    zipf = 1.0 / np.arange(1, config.vocab_size + 1) ** config.zipf_exponent
    zipf /= zipf.sum()

    def body(mentions: list[str]) -> list[str]:
        n = int(rng.integers(config.doc_len[0], config.doc_len[1] + 1))
        tokens = [background[i] for i in rng.choice(config.vocab_size, size=n, p=zipf)]
        for word in mentions:
            tokens.insert(int(rng.integers(0, len(tokens) + 1)), word)
        return tokens

    def mention(concept: int, p_synonym: float) -> list[str]:
        count = int(rng.integers(config.mentions[0], config.mentions[1] + 1))
        return [d_words[concept] if rng.random() < p_synonym else q_words[concept] for _ in range(count)]

    # distinct concept sets, so one query's relevant document never answers another
    query_sets, taken = [], set()
    while len(query_sets) < config.n_queries:
        picked = [int(c) for c in rng.choice(config.synonym_pairs, size=config.query_concepts, replace=False)]
        if frozenset(picked) not in taken:
            taken.add(frozenset(picked))
            query_sets.append(picked)

    def answers_some_query(concepts: set[int]) -> bool:
        if len(concepts) < config.query_concepts:
            return False
        return any(frozenset(sub) in taken for sub in combinations(sorted(concepts), config.query_concepts))

    def noise(base: set[int]) -> tuple[list[str], set[int]]:
        # non-relevant documents must not mention every concept of any query
        picked: set[int] = set()
        for _ in range(100):
            draw = {int(c) for c in rng.choice(config.synonym_pairs, size=config.noise_concepts, replace=False)}
            if not answers_some_query(base | draw):
                picked = draw
                break
        out = []
        for c in sorted(picked):
            out += mention(c, 0.5)
        return out, picked

    doc_texts: list[list[str]] = []
    queries, qrel_slots = {}, {}
    for qi, concepts in enumerate(query_sets):
        qid = f"Q{qi:04d}"
        queries[qid] = " ".join(q_words[c] for c in concepts)
        relevant = []
        for c in concepts:
            relevant += mention(c, config.rho)
        qrel_slots[qid] = len(doc_texts)
        doc_texts.append(body(relevant))
        for _ in range(config.distractors_per_query):
            kept = [int(c) for c in rng.choice(concepts, size=config.query_concepts - 1, replace=False)]
            words = []
            for c in kept:
                words += mention(c, 0.0)
            extra, _ = noise(set(kept))
            doc_texts.append(body(words + extra))
    while len(doc_texts) < config.n_docs:
        doc_texts.append(body(noise(set())[0]))

    # doc ids are assigned by a random permutation so id order carries no signal
    perm = rng.permutation(len(doc_texts))
    doc_ids = [f"D{perm[i]:05d}" for i in range(len(doc_texts))]
    docs = {doc_ids[i]: " ".join(doc_texts[i]) for i in np.argsort(perm)}
    qrels = {qid: {doc_ids[slot]: 1} for qid, slot in qrel_slots.items()}

    order = [f"Q{i:04d}" for i in rng.permutation(config.n_queries)]
    splits, start = {}, 0
    names = list(SPLIT_FRACTIONS)
    for k, name in enumerate(names):
        end = config.n_queries if k == len(names) - 1 else start + int(round(SPLIT_FRACTIONS[name] * config.n_queries))
        splits[name] = sorted(order[start:end])
        start = end
    return SynthData(docs, queries, qrels, splits, dict(zip(q_words, d_words)))


def write_synth(data: SynthData, out_dir: str | Path, config: SynthConfig | None = None) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "collection": out / "collection.tsv",
        "queries": out / "queries.tsv",
        "qrels": out / "qrels.txt",
        "splits": out / "splits.json",
    }
    write_tsv(paths["collection"], data.docs.items())
    write_tsv(paths["queries"], data.queries.items())
    write_qrels(paths["qrels"], data.qrels)
    meta = {"splits": data.splits}
    if config is not None:
        meta["config"] = asdict(config)
    tmp = paths["splits"].with_suffix(".tmp")
    tmp.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    tmp.replace(paths["splits"])
    return paths


def gen_synth(vocab_size: int, synonym_pairs: int, n_queries: int, n_docs: int, seed: int,
              out_dir: str | Path, rho: float = 0.7, **kwargs) -> dict[str, Path]:
    config = SynthConfig(vocab_size=vocab_size, synonym_pairs=synonym_pairs, n_queries=n_queries,
                         n_docs=n_docs, seed=seed, rho=rho, **kwargs)
    return write_synth(generate(config), out_dir, config)
