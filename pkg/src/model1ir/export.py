"""Sparsify a trained neural Model 1 into a :class:`TranslationTable`."""

from __future__ import annotations

import logging
import time

import numpy as np

from .neural import NeuralM1Params, _doc_side, _query_side, _sigmoid
from .translation import TranslationTable

log = logging.getLogger(__name__)

# float64 cells per evaluation chunk (hidden activations dominate)
_CHUNK_BUDGET = 8_000_000


def _chunk_values(params: NeuralM1Params, xq, a_q, xd_chunk):
    """Raw T for all query tokens against a chunk of document tokens; shape (chunk, V)."""
    P = xq.shape[1]
    w1 = params.f1_w
    b = xd_chunk @ w1[:, P:2 * P].T + params.f1_b                       # (c, H)
    prod = (xq[None, :, :] * xd_chunk[:, None, :]).reshape(-1, P)       # (c*V, P)
    z1 = prod @ w1[:, 2 * P:].T
    z1 = z1.reshape(len(xd_chunk), len(xq), -1)
    z1 += a_q[None, :, :]
    z1 += b[:, None, :]
    h1 = np.maximum(z1, 0.0, out=z1).reshape(-1, z1.shape[-1])
    h2 = np.maximum(h1 @ params.f2_w.T + params.f2_b, 0.0)
    z3 = h2 @ params.f3_w[0] + params.f3_b[0]
    return _sigmoid(z3).reshape(len(xd_chunk), len(xq))


def export_table(params: NeuralM1Params, vocab_size: int | None = None, threshold: float = 1e-4,
                 chunk_size: int | None = None) -> TranslationTable:
    """Evaluate T(q|d) over the full vocabulary grid and keep values >= ``threshold``.

    Values include self-translation mixing.  Rows are keyed by the document
    token and are not renormalized.
    """
    if not 0.0 <= threshold < 1.0:
        raise ValueError("threshold must be in [0, 1)")
    V = params.vocab_size if vocab_size is None else int(vocab_size)
    ids = np.arange(V)
    xq = _query_side(params, ids)[0]
    xd = _doc_side(params, ids)[0]
    P = xq.shape[1]
    a_q = xq @ params.f1_w[:, :P].T
    H = params.f1_w.shape[0]
    if chunk_size is None:
        chunk_size = max(1, _CHUNK_BUDGET // max(1, V * max(H, P)))
    rows, cols, vals = [], [], []
    start = time.perf_counter()
    last = start
    for lo in range(0, V, chunk_size):
        hi = min(V, lo + chunk_size)
        raw = _chunk_values(params, xq, a_q, xd[lo:hi])
        t = (1.0 - params.p_self) * raw
        t[np.arange(hi - lo), np.arange(lo, hi)] = params.p_self
        r, c = np.nonzero(t >= threshold)
        rows.append(r + lo)
        cols.append(c)
        vals.append(t[r, c])
        now = time.perf_counter()
        if now - last > 10.0:
            log.info("export: %d/%d rows (%.0fs)", hi, V, now - start)
            last = now
    rows = np.concatenate(rows) if rows else np.zeros(0, np.int64)
    cols = np.concatenate(cols) if cols else np.zeros(0, np.int64)
    vals = np.concatenate(vals) if vals else np.zeros(0)
    log.info("export: %d entries kept of %d (threshold %g) in %.1fs", len(vals), V * V, threshold,
             time.perf_counter() - start)
    # np.nonzero yields row-major order, so entries are already sorted
    indptr = np.zeros(V + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=V), out=indptr[1:])
    return TranslationTable(indptr, cols, vals, V, V, normalized=False)
