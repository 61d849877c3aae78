# cython: language_level=3
"""Compiled inner loops for the KS grid search and LambdaRank gradients.

Semantics are identical to ``_pykernels``; the test suite checks the two
against each other.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log2, fabs

cnp.import_array()


cdef inline long long _ks_gap(const double[::1] a, const double[::1] b, double scale) noexcept nogil:
    cdef Py_ssize_t na = a.shape[0], nb = b.shape[0]
    cdef Py_ssize_t i = 0, j = 0
    cdef long long best = 0, d
    cdef double v, bv
    while i < na or j < nb:
        if j >= nb:
            v = a[i]
        elif i >= na:
            v = scale * b[j]
        else:
            bv = scale * b[j]
            v = a[i] if a[i] < bv else bv
        while i < na and a[i] <= v:
            i += 1
        while j < nb and scale * b[j] <= v:
            j += 1
        d = <long long>i * nb - <long long>j * na
        if d < 0:
            d = -d
        if d > best:
            best = d
    return best


def ks_gap(const double[::1] a_sorted, const double[::1] b_sorted):
    """Largest ``|i*nb - j*na|`` over the merged sample points."""
    return _ks_gap(a_sorted, b_sorted, 1.0)


def ks_gap_grid(const double[::1] a_sorted, const double[::1] b_sorted, const double[::1] scales):
    cdef Py_ssize_t k, m = scales.shape[0]
    out = np.empty(m, dtype=np.int64)
    cdef cnp.int64_t[::1] o = out
    with nogil:
        for k in range(m):
            o[k] = _ks_gap(a_sorted, b_sorted, scales[k])
    return out


def lambda_gradients(const double[::1] scores, const double[::1] labels,
                     const cnp.int64_t[::1] qptr, int cutoff, bint weighted=True):
    cdef Py_ssize_t n_total = scores.shape[0]
    out = np.zeros(n_total, dtype=np.float64)
    cdef double[::1] lam = out
    disc_arr = np.zeros(n_total, dtype=np.float64)
    cdef double[::1] disc = disc_arr
    cdef Py_ssize_t q, lo, hi, i, j, r, ir
    cdef double idcg, delta, rho, l
    with nogil:
        for q in range(qptr.shape[0] - 1):
            lo = qptr[q]
            hi = qptr[q + 1]
            idcg = 0.0
            for i in range(lo, hi):
                # current rank (score desc, index asc) and ideal rank (label desc, index asc)
                r = 1
                ir = 1
                for j in range(lo, hi):
                    if scores[j] > scores[i] or (scores[j] == scores[i] and j < i):
                        r += 1
                    if labels[j] > labels[i] or (labels[j] == labels[i] and j < i):
                        ir += 1
                disc[i] = 1.0 / log2(1.0 + r) if r <= cutoff else 0.0
                if ir <= cutoff:
                    idcg += labels[i] / log2(1.0 + ir)
            if idcg <= 0.0 and weighted:
                continue
            for i in range(lo, hi):
                for j in range(lo, hi):
                    if labels[i] <= labels[j]:
                        continue
                    rho = 1.0 / (1.0 + exp(scores[i] - scores[j]))
                    if weighted:
                        delta = fabs((labels[i] - labels[j]) * (disc[i] - disc[j])) / idcg
                        l = rho * delta
                    else:
                        l = rho
                    lam[i] += l
                    lam[j] -= l
    return out
