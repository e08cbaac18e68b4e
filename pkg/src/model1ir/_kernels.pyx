# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Signatures mirror :mod:`model1ir._fallback`."""

import numpy as np
cimport numpy as cnp
from libc.math cimport log

cnp.import_array()

DEF LOG_FLOOR = 1e-300


def model1_rerank(
    const cnp.int32_t[::1] q_ids,
    const double[::1] q_weights,
    const double[::1] q_smooth,
    const cnp.int64_t[::1] col_indptr,
    const cnp.int32_t[::1] col_rows,
    const double[::1] col_vals,
    const cnp.int32_t[::1] doc_tokens,
    const cnp.int64_t[::1] doc_offsets,
    double one_minus_lam,
    Py_ssize_t n_rows,
):
    cdef Py_ssize_t n_docs = doc_offsets.shape[0] - 1
    cdef Py_ssize_t n_cols = col_indptr.shape[0] - 1
    cdef cnp.ndarray[double, ndim=1] out_arr = np.zeros(n_docs, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double[::1] buf = np.zeros(max(n_rows, 1), dtype=np.float64)
    cdef Py_ssize_t qi, k, doc, j, start, end
    cdef int q
    cdef double s, lik, w, smooth
    with nogil:
        for qi in range(q_ids.shape[0]):
            q = q_ids[qi]
            w = q_weights[qi]
            smooth = q_smooth[qi]
            if q < n_cols:
                for k in range(col_indptr[q], col_indptr[q + 1]):
                    buf[col_rows[k]] = col_vals[k]
            for doc in range(n_docs):
                start = doc_offsets[doc]
                end = doc_offsets[doc + 1]
                s = 0.0
                for j in range(start, end):
                    s += buf[doc_tokens[j]]
                if end > start:
                    s = s / (end - start)
                lik = one_minus_lam * s + smooth
                if lik < LOG_FLOOR:
                    lik = LOG_FLOOR
                out[doc] += w * log(lik)
            if q < n_cols:
                for k in range(col_indptr[q], col_indptr[q + 1]):
                    buf[col_rows[k]] = 0.0
    return out_arr


def em_estep(
    const double[::1] t_vals,
    const cnp.int64_t[::1] entries,
    const cnp.int64_t[::1] group_offsets,
    const double[::1] group_src_len,
    double[::1] counts,
):
    cdef Py_ssize_t g, k, start, end
    cdef double denom, loglik = 0.0
    with nogil:
        for g in range(group_offsets.shape[0] - 1):
            start = group_offsets[g]
            end = group_offsets[g + 1]
            denom = 0.0
            for k in range(start, end):
                denom += t_vals[entries[k]]
            if denom > 0.0:
                for k in range(start, end):
                    counts[entries[k]] += t_vals[entries[k]] / denom
            denom = denom / group_src_len[g]
            if denom < LOG_FLOOR:
                denom = LOG_FLOOR
            loglik += log(denom)
    return loglik
