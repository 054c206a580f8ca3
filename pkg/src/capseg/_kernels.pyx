# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: nearest-center assignment, window-normalized
Gaussian blur, and 3x3 majority filtering.

Semantics mirror capseg._kernels_py exactly; see that module for the contract
docs.  Window offsets are scanned row-major in both implementations so the
blur and majority kernels agree bitwise across backends.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def assign_points(object x_obj, object centers_obj):
    cdef double[:, ::1] x = np.ascontiguousarray(x_obj, dtype=np.float64)
    cdef double[:, ::1] centers = np.ascontiguousarray(centers_obj, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    cdef Py_ssize_t k = centers.shape[0]
    cdef cnp.ndarray[cnp.int32_t, ndim=1] labels = np.empty(n, dtype=np.int32)
    cdef double objective = 0.0
    cdef double best, dist, diff
    cdef Py_ssize_t i, j, c, best_c
    for i in range(n):
        best = -1.0
        best_c = 0
        for c in range(k):
            dist = 0.0
            for j in range(d):
                diff = x[i, j] - centers[c, j]
                dist += diff * diff
            if best < 0.0 or dist < best:
                best = dist
                best_c = c
        labels[i] = <cnp.int32_t> best_c
        objective += best
    return np.asarray(labels), objective


def blur_field(object q_obj, object taps_obj):
    cdef double[:, :, ::1] q = np.ascontiguousarray(q_obj, dtype=np.float64)
    cdef double[:, ::1] taps = np.ascontiguousarray(taps_obj, dtype=np.float64)
    cdef Py_ssize_t h = q.shape[0]
    cdef Py_ssize_t w = q.shape[1]
    cdef Py_ssize_t n_labels = q.shape[2]
    cdef Py_ssize_t r = taps.shape[0] // 2
    cdef cnp.ndarray[cnp.float64_t, ndim=3] out_arr = np.zeros((h, w, n_labels))
    cdef double[:, :, ::1] out = out_arr
    cdef double t, mass
    cdef Py_ssize_t i, j, l, di, dj, si, sj
    for i in range(h):
        for j in range(w):
            mass = 0.0
            for di in range(-r, r + 1):
                si = i + di
                if si < 0 or si >= h:
                    continue
                for dj in range(-r, r + 1):
                    sj = j + dj
                    if sj < 0 or sj >= w:
                        continue
                    t = taps[di + r, dj + r]
                    mass += t
                    for l in range(n_labels):
                        out[i, j, l] += t * q[si, sj, l]
            for l in range(n_labels):
                out[i, j, l] /= mass
    return out_arr


def majority_pass(object labels_obj, int n_labels):
    cdef cnp.ndarray[cnp.int32_t, ndim=2] lab_arr = np.ascontiguousarray(
        labels_obj, dtype=np.int32
    )
    cdef cnp.int32_t[:, ::1] labels = lab_arr
    cdef Py_ssize_t h = labels.shape[0]
    cdef Py_ssize_t w = labels.shape[1]
    cdef cnp.ndarray[cnp.int32_t, ndim=2] out_arr = np.empty((h, w), dtype=np.int32)
    cdef cnp.int32_t[:, ::1] out = out_arr
    cdef cnp.ndarray[cnp.int32_t, ndim=1] counts_arr = np.zeros(n_labels, dtype=np.int32)
    cdef cnp.int32_t[::1] counts = counts_arr
    cdef Py_ssize_t i, j, di, dj, si, sj, c
    cdef int changes = 0
    cdef cnp.int32_t best_label
    cdef cnp.int32_t best_count
    for i in range(h):
        for j in range(w):
            for c in range(n_labels):
                counts[c] = 0
            for di in range(-1, 2):
                si = i + di
                if si < 0 or si >= h:
                    continue
                for dj in range(-1, 2):
                    sj = j + dj
                    if sj < 0 or sj >= w:
                        continue
                    counts[labels[si, sj]] += 1
            best_label = 0
            best_count = -1
            for c in range(n_labels):
                if counts[c] > best_count:
                    best_count = counts[c]
                    best_label = <cnp.int32_t> c
            out[i, j] = best_label
            if best_label != labels[i, j]:
                changes += 1
    return out_arr, changes
