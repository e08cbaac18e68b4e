"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np

LOG_FLOOR = 1e-300


def model1_rerank(q_ids, q_weights, q_smooth, col_indptr, col_rows, col_vals,
                  doc_tokens, doc_offsets, one_minus_lam, n_rows):
    """Average log translation likelihood of each query under each document.

    ``doc_tokens``/``doc_offsets`` hold the candidate documents back to back;
    the table is given column-wise (one column per query token).
    """
    n_docs = len(doc_offsets) - 1
    lengths = np.diff(doc_offsets)
    owner = np.repeat(np.arange(n_docs), lengths)
    denom = np.maximum(lengths, 1).astype(np.float64)
    buf = np.zeros(max(n_rows, 1))
    out = np.zeros(n_docs)
    n_cols = len(col_indptr) - 1
    for q, w, smooth in zip(q_ids, q_weights, q_smooth):
        if q < n_cols:
            lo, hi = col_indptr[q], col_indptr[q + 1]
            rows = col_rows[lo:hi]
            buf[rows] = col_vals[lo:hi]
        else:
            rows = None
        s = np.bincount(owner, weights=buf[doc_tokens], minlength=n_docs) / denom
        out += w * np.log(np.maximum(one_minus_lam * s + smooth, LOG_FLOOR))
        if rows is not None:
            buf[rows] = 0.0
    return out


def em_estep(t_vals, entries, group_offsets, group_src_len, counts):
    """Accumulate Model 1 posterior counts into ``counts``; return the log-likelihood.

    Each group is one target token of one sentence pair; its entries index the
    table cells (src_j, tgt) for every source position j.
    """
    n_groups = len(group_offsets) - 1
    if n_groups == 0:
        return 0.0
    sizes = np.diff(group_offsets)
    group = np.repeat(np.arange(n_groups), sizes)
    t = t_vals[entries]
    denom = np.bincount(group, weights=t, minlength=n_groups)
    safe = np.where(denom > 0, denom, 1.0)
    post = np.where(denom[group] > 0, t / safe[group], 0.0)
    counts += np.bincount(entries, weights=post, minlength=len(counts))
    return float(np.log(np.maximum(denom / group_src_len, LOG_FLOOR)).sum())
