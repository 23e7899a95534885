# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the hot kernels in _kernels_py."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def project_to_sum(values, double target):
    """L2 projection of `values` onto {x >= 0, sum(x) = target}."""
    if target < 0:
        raise ValueError("target sum must be non-negative")
    cdef cnp.ndarray[cnp.float64_t, ndim=1] x = np.array(values, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0]
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] active = np.ones(n, dtype=np.uint8)
    cdef Py_ssize_t i, count, clamped
    cdef double total, shift
    for _ in range(n):
        total = 0.0
        count = 0
        for i in range(n):
            if active[i]:
                total += x[i]
                count += 1
        if count == 0:
            return np.zeros(n, dtype=np.float64)
        shift = (target - total) / count
        clamped = 0
        for i in range(n):
            if active[i]:
                x[i] += shift
                if x[i] < 0.0:
                    x[i] = 0.0
                    active[i] = 0
                    clamped += 1
        if clamped == 0:
            break
    for i in range(n):
        if not active[i] or x[i] < 0.0:
            x[i] = 0.0
    return x


def largest_remainder_round(values, target):
    """Round non-negative reals to integers summing exactly to `target`."""
    cdef long long tgt = int(target)
    if tgt < 0:
        raise ValueError("target must be a non-negative integer")
    cdef cnp.ndarray[cnp.float64_t, ndim=1] v = np.asarray(values, dtype=np.float64)
    cdef Py_ssize_t n = v.shape[0]
    cdef Py_ssize_t i
    cdef double total = 0.0
    for i in range(n):
        if v[i] < -1e-9:
            raise ValueError("values must be non-negative")
        if v[i] < 0.0:
            v = v.copy()
            break
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out = np.empty(n, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] frac = np.empty(n, dtype=np.float64)
    cdef double w
    cdef long long floor_sum = 0
    for i in range(n):
        w = v[i]
        if w < 0.0:
            w = 0.0
        total += w
        out[i] = <long long> w
        frac[i] = w - out[i]
        floor_sum += out[i]
    if total - tgt >= n or tgt - total >= n:
        raise ValueError("sum of values too far from target for remainder rounding")
    cdef long long deficit = tgt - floor_sum
    cdef cnp.ndarray[cnp.int64_t, ndim=1] order
    if deficit > 0:
        order = np.lexsort((np.arange(n), -frac)).astype(np.int64)
        for i in range(deficit):
            out[order[i]] += 1
    elif deficit < 0:
        order = np.lexsort((np.arange(n), frac)).astype(np.int64)
        for i in range(n):
            if deficit == 0:
                break
            if out[order[i]] > 0:
                out[order[i]] -= 1
                deficit += 1
    return out


def count_matches_by_leaf(values, leaf_idx, feats, vals, n_leaves):
    """Per-leaf counts of records matching a conjunction of feature=value."""
    cdef cnp.ndarray[cnp.int64_t, ndim=2] rec = np.ascontiguousarray(values, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] leaves = np.ascontiguousarray(leaf_idx, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] f = np.ascontiguousarray(feats, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] w = np.ascontiguousarray(vals, dtype=np.int64)
    cdef Py_ssize_t n = rec.shape[0]
    cdef Py_ssize_t k = f.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] counts = np.zeros(int(n_leaves), dtype=np.int64)
    cdef Py_ssize_t i, j
    cdef bint ok
    for i in range(n):
        ok = True
        for j in range(k):
            if rec[i, f[j]] != w[j]:
                ok = False
                break
        if ok:
            counts[leaves[i]] += 1
    return counts
