# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels.  Semantics mirror :mod:`ovmorph._fallback` bit for bit."""

import numpy as np

cimport numpy as cnp
from libc.stdlib cimport free, malloc, qsort
from libc.string cimport memset

cnp.import_array()

ctypedef cnp.intp_t intp_t
ctypedef cnp.int64_t int64_t


cdef struct ValueLabel:
    double value
    intp_t label


cdef int _cmp_value(const void* a, const void* b) noexcept nogil:
    cdef double va = (<ValueLabel*>a).value
    cdef double vb = (<ValueLabel*>b).value
    if va < vb:
        return -1
    if va > vb:
        return 1
    return 0


def best_split(const double[:, ::1] X, const intp_t[::1] y, const intp_t[::1] idx,
               const intp_t[::1] features, Py_ssize_t n_classes, Py_ssize_t min_leaf):
    """Best Gini split over ``features`` for the samples ``idx``.

    Returns ``(feature, threshold, score)`` where ``score`` is
    sum_c L_c^2 / n_L + sum_c R_c^2 / n_R (larger is better), or
    ``(-1, 0.0, -inf)`` when no admissible split exists.
    """
    cdef Py_ssize_t m = idx.shape[0]
    cdef Py_ssize_t n_feat = features.shape[0]
    cdef Py_ssize_t i, c, fi, f, nl, nr
    cdef intp_t best_feature = -1
    cdef double best_threshold = 0.0
    cdef double best_score = -np.inf
    cdef double score, a, b, thr
    cdef int64_t lsq, rsq, total_sq
    if m < 2 or n_feat == 0:
        return -1, 0.0, best_score

    cdef ValueLabel* pairs = <ValueLabel*>malloc(m * sizeof(ValueLabel))
    cdef int64_t* total = <int64_t*>malloc(n_classes * sizeof(int64_t))
    cdef int64_t* left = <int64_t*>malloc(n_classes * sizeof(int64_t))
    if pairs == NULL or total == NULL or left == NULL:
        free(pairs); free(total); free(left)
        raise MemoryError()

    try:
        with nogil:
            memset(total, 0, n_classes * sizeof(int64_t))
            for i in range(m):
                total[y[idx[i]]] += 1
            total_sq = 0
            for c in range(n_classes):
                total_sq += total[c] * total[c]

            for fi in range(n_feat):
                f = features[fi]
                for i in range(m):
                    pairs[i].value = X[idx[i], f]
                    pairs[i].label = y[idx[i]]
                qsort(pairs, m, sizeof(ValueLabel), _cmp_value)
                memset(left, 0, n_classes * sizeof(int64_t))
                lsq = 0
                rsq = total_sq
                for i in range(m - 1):
                    c = pairs[i].label
                    lsq += 2 * left[c] + 1
                    rsq -= 2 * (total[c] - left[c]) - 1
                    left[c] += 1
                    nl = i + 1
                    nr = m - nl
                    if nl < min_leaf or nr < min_leaf:
                        continue
                    a = pairs[i].value
                    b = pairs[i + 1].value
                    if not a < b:
                        continue
                    score = <double>lsq / <double>nl + <double>rsq / <double>nr
                    if score > best_score:
                        thr = a + (b - a) * 0.5
                        if thr >= b:
                            thr = a
                        best_score = score
                        best_threshold = thr
                        best_feature = f
    finally:
        free(pairs)
        free(total)
        free(left)
    return int(best_feature), best_threshold, best_score


def apply_tree(const double[:, ::1] X, const intp_t[::1] feature, const double[::1] threshold,
               const intp_t[::1] left, const intp_t[::1] right):
    """Leaf index reached by every row of ``X``."""
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t i
    cdef intp_t node
    out = np.empty(n, dtype=np.intp)
    cdef intp_t[::1] out_v = out
    with nogil:
        for i in range(n):
            node = 0
            while feature[node] >= 0:
                if X[i, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            out_v[i] = node
    return out


cdef int DR[8]
cdef int DC[8]
DR[:] = [0, 1, 1, 1, 0, -1, -1, -1]
DC[:] = [1, 1, 0, -1, -1, -1, 0, 1]


cdef inline int _dir_index(int dr, int dc) noexcept nogil:
    cdef int k
    for k in range(8):
        if DR[k] == dr and DC[k] == dc:
            return k
    return -1


def contour_steps(const cnp.uint8_t[:, ::1] img):
    """Moore-neighbour trace of the outer boundary of one 8-connected component.

    ``img`` must carry a background border of at least one pixel.  Returns
    ``(axial_steps, diagonal_steps)`` of the closed boundary chain.
    """
    cdef Py_ssize_t h = img.shape[0]
    cdef Py_ssize_t w = img.shape[1]
    cdef Py_ssize_t sr = -1, sc = -1, r, c, pr, pc, qr, qc
    cdef int k, i, j, first_move = -1
    cdef long axial = 0, diagonal = 0, moves = 0, cap
    cdef long count = 0
    cdef int found

    with nogil:
        for r in range(h):
            for c in range(w):
                if img[r, c]:
                    count += 1
                    if sr < 0:
                        sr = r
                        sc = c
        cap = 4 * count + 16
        if sr < 0:
            cap = 0
        pr = sr
        pc = sc
        k = 4  # backtrack starts west of the first raster pixel
        while moves < cap:
            found = 0
            for i in range(1, 9):
                j = (k + i) % 8
                qr = pr + DR[j]
                qc = pc + DC[j]
                if img[qr, qc]:
                    found = 1
                    break
            if not found:
                break
            if pr == sr and pc == sc:
                if first_move < 0:
                    first_move = j
                elif j == first_move:
                    break
            # new backtrack: the background neighbour examined just before q
            k = _dir_index(<int>(pr + DR[(j + 7) % 8] - qr), <int>(pc + DC[(j + 7) % 8] - qc))
            if j % 2:
                diagonal += 1
            else:
                axial += 1
            pr = qr
            pc = qc
            moves += 1
    return axial, diagonal
