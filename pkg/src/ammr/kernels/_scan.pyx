# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled scoring kernels: fused weighted-dot scan with top-k selection,
and nearest-centroid assignment. Same contract as kernels._numpy."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


cdef inline bint _better(double s_a, Py_ssize_t i_a, double s_b, Py_ssize_t i_b) nogil:
    # ordering: higher score wins, lower row index wins on exact ties
    if s_a != s_b:
        return s_a > s_b
    return i_a < i_b


cdef void _sift_down(double* scores, Py_ssize_t* idx, Py_ssize_t size, Py_ssize_t root) nogil:
    # min-heap on the same ordering: root holds the current worst entry
    cdef Py_ssize_t child
    cdef double ts
    cdef Py_ssize_t ti
    while True:
        child = 2 * root + 1
        if child >= size:
            return
        if child + 1 < size and _better(scores[child], idx[child], scores[child + 1], idx[child + 1]):
            child += 1
        if _better(scores[child], idx[child], scores[root], idx[root]):
            return
        ts = scores[root]; scores[root] = scores[child]; scores[child] = ts
        ti = idx[root]; idx[root] = idx[child]; idx[child] = ti
        root = child


def topk_scan(
    double[:, ::1] matrix,
    double[::1] wq,
    double[::1] row_norms,
    double q_norm,
    Py_ssize_t k,
    subset=None,
):
    cdef Py_ssize_t n_rows = matrix.shape[0]
    cdef Py_ssize_t dim = matrix.shape[1]
    if subset is None:
        subset = np.arange(n_rows, dtype=np.intp)
    cdef Py_ssize_t[::1] sub = np.ascontiguousarray(subset, dtype=np.intp)
    cdef Py_ssize_t count = sub.shape[0]
    if k > count:
        k = count

    out_idx = np.empty(k, dtype=np.intp)
    out_scores = np.empty(k, dtype=np.float64)
    if k == 0:
        return out_idx, out_scores

    cdef double[::1] heap_s = np.empty(k, dtype=np.float64)
    cdef Py_ssize_t[::1] heap_i = np.empty(k, dtype=np.intp)
    cdef Py_ssize_t heap_size = 0
    cdef Py_ssize_t pos, row, j, parent, node
    cdef double dot, denom, score, swap_s
    cdef Py_ssize_t swap_i
    cdef Py_ssize_t[::1] res_i = out_idx
    cdef double[::1] res_s = out_scores

    with nogil:
        for pos in range(count):
            row = sub[pos]
            dot = 0.0
            for j in range(dim):
                dot += matrix[row, j] * wq[j]
            denom = row_norms[row] * q_norm
            score = dot / denom if denom > 0.0 else 0.0

            if heap_size < k:
                heap_s[heap_size] = score
                heap_i[heap_size] = row
                node = heap_size
                heap_size += 1
                while node > 0:
                    parent = (node - 1) // 2
                    if _better(heap_s[parent], heap_i[parent], heap_s[node], heap_i[node]):
                        swap_s = heap_s[parent]; heap_s[parent] = heap_s[node]; heap_s[node] = swap_s
                        swap_i = heap_i[parent]; heap_i[parent] = heap_i[node]; heap_i[node] = swap_i
                        node = parent
                    else:
                        break
            elif _better(score, row, heap_s[0], heap_i[0]):
                heap_s[0] = score
                heap_i[0] = row
                _sift_down(&heap_s[0], &heap_i[0], heap_size, 0)

        # drain the heap into descending order
        for pos in range(k - 1, -1, -1):
            res_s[pos] = heap_s[0]
            res_i[pos] = heap_i[0]
            heap_size -= 1
            heap_s[0] = heap_s[heap_size]
            heap_i[0] = heap_i[heap_size]
            if heap_size > 0:
                _sift_down(&heap_s[0], &heap_i[0], heap_size, 0)

    return out_idx, out_scores


def assign_nearest(double[:, ::1] matrix, double[:, ::1] centroids):
    cdef Py_ssize_t n = matrix.shape[0]
    cdef Py_ssize_t dim = matrix.shape[1]
    cdef Py_ssize_t m = centroids.shape[0]
    labels = np.empty(n, dtype=np.intp)
    cdef Py_ssize_t[::1] out = labels
    cdef Py_ssize_t i, c, j, best_c
    cdef double dist, diff, best

    with nogil:
        for i in range(n):
            best = -1.0
            best_c = 0
            for c in range(m):
                dist = 0.0
                for j in range(dim):
                    diff = matrix[i, j] - centroids[c, j]
                    dist += diff * diff
                if best < 0.0 or dist < best:
                    best = dist
                    best_c = c
            out[i] = best_c
    return labels
