# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops; see ``_pykernels`` for the reference semantics."""

from libc.math cimport sqrt, INFINITY

import numpy as np


def scatter_offsets(double[:, ::1] out, const long long[::1] src_row, const long long[::1] src_col,
                    const double[::1] src_val, const long long[::1] dr, const long long[::1] dc,
                    const double[::1] w):
    cdef Py_ssize_t nrows = out.shape[0], ncols = out.shape[1]
    cdef Py_ssize_t nsrc = src_row.shape[0], noff = dr.shape[0]
    cdef Py_ssize_t k, j
    cdef long long tr, tc
    cdef double wk, term
    with nogil:
        for k in range(noff):
            wk = w[k]
            for j in range(nsrc):
                tr = src_row[j] + dr[k]
                tc = src_col[j] + dc[k]
                if tr < 0 or tr >= nrows or tc < 0 or tc >= ncols:
                    continue
                term = wk * src_val[j]
                out[tr, tc] = out[tr, tc] + term
    return np.asarray(out)


def best_cell(const double[::1] base, const long long[::1] occ, Py_ssize_t ncols, long long origin_col,
              long long origin_row, double delta, double cell_size, bint want_occupied, double u):
    cdef Py_ssize_t n = base.shape[0]
    cdef Py_ssize_t i, origin = origin_row * ncols + origin_col
    cdef long long dx, dy, count = 0, pick
    cdef double best = -INFINITY, util, dist
    cdef bint cand
    for i in range(n):
        if i == origin:
            continue
        cand = occ[i] >= 1 if want_occupied else occ[i] == 0
        if not cand:
            continue
        dx = i % ncols - origin_col
        dy = i // ncols - origin_row
        dist = cell_size * sqrt(<double>(dx * dx + dy * dy))
        util = base[i] + delta * dist
        if count == 0 or util > best:
            best = util
            count = 1
        elif util == best:
            count += 1
    if count == 0:
        return -1
    pick = <long long>(u * count)
    for i in range(n):
        if i == origin:
            continue
        cand = occ[i] >= 1 if want_occupied else occ[i] == 0
        if not cand:
            continue
        dx = i % ncols - origin_col
        dy = i // ncols - origin_row
        dist = cell_size * sqrt(<double>(dx * dx + dy * dy))
        util = base[i] + delta * dist
        if util == best:
            if pick == 0:
                return i
            pick -= 1
    return -1
