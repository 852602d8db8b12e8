# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the event-histogram and volume-selection loops.

Signatures and results match ``_kernels_py`` exactly.
"""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport int64_t, int32_t, int8_t

cnp.import_array()


def histogram2c(x, y, p, Py_ssize_t height, Py_ssize_t width):
    cdef const int32_t[::1] xs = np.ascontiguousarray(x, dtype=np.int32)
    cdef const int32_t[::1] ys = np.ascontiguousarray(y, dtype=np.int32)
    cdef const int8_t[::1] ps = np.ascontiguousarray(p, dtype=np.int8)
    out = np.zeros((2, height, width), dtype=np.int64)
    cdef int64_t[:, :, ::1] h = out
    cdef Py_ssize_t i, n = xs.shape[0]
    with nogil:
        for i in range(n):
            if ps[i] == 0:
                h[1, ys[i], xs[i]] += 1
            else:
                h[0, ys[i], xs[i]] += 1
    return out


def adaptive_search(t, cells, Py_ssize_t anchor, Py_ssize_t q, double t_th, double a_th, Py_ssize_t ncells):
    cdef const int64_t[::1] ts = np.ascontiguousarray(t, dtype=np.int64)
    cdef const int32_t[::1] cs = np.ascontiguousarray(cells, dtype=np.int32)
    cdef int64_t[::1] counts = np.zeros(ncells, dtype=np.int64)
    cdef Py_ssize_t n = ts.shape[0]
    cdef Py_ssize_t sid = anchor, eid = anchor, new_sid, new_eid, i, k = 0
    cdef int64_t cmax = 0, total = 0
    cdef double excess, duration
    with nogil:
        while True:
            k += 1
            new_sid = anchor - q * k
            if new_sid < 0:
                new_sid = 0
            new_eid = anchor + q * k
            if new_eid > n:
                new_eid = n
            for i in range(new_sid, sid):
                counts[cs[i]] += 1
                if counts[cs[i]] > cmax:
                    cmax = counts[cs[i]]
            for i in range(eid, new_eid):
                counts[cs[i]] += 1
                if counts[cs[i]] > cmax:
                    cmax = counts[cs[i]]
            total += (sid - new_sid) + (new_eid - eid)
            sid = new_sid
            eid = new_eid
            if eid > sid:
                duration = <double>(ts[eid - 1] - ts[sid])
                excess = <double>cmax - <double>total / <double>ncells
                if excess > a_th and duration > t_th:
                    break
            if sid == 0 and eid == n:
                sid = -1
                eid = -1
                break
    return sid, eid, k


def grid_threshold_search(cells, Py_ssize_t start, int64_t threshold, Py_ssize_t ncells):
    cdef const int32_t[::1] cs = np.ascontiguousarray(cells, dtype=np.int32)
    cdef int64_t[::1] counts = np.zeros(ncells, dtype=np.int64)
    cdef Py_ssize_t i, n = cs.shape[0], end = -1
    with nogil:
        for i in range(start, n):
            counts[cs[i]] += 1
            if counts[cs[i]] > threshold:
                end = i + 1
                break
    return end
