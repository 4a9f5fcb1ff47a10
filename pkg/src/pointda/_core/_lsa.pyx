# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled shortest-augmenting-path Hungarian solver.

Must stay step-for-step identical to ``pointda._core.fallback.solve_rows`` so
both backends return the same assignment, ties included.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()


def solve_rows(const double[:, ::1] cost):
    """Assign every row to a distinct column minimising the total cost.

    ``cost`` has shape (n, m) with n <= m. Returns an int64 array ``col`` of
    length n, ``col[r]`` the column given to row ``r``.
    """
    cdef Py_ssize_t n = cost.shape[0]
    cdef Py_ssize_t m = cost.shape[1]
    cdef Py_ssize_t i, j, j0, j1, i0
    cdef double delta, cur

    # 1-based potentials/links; column 0 is the virtual source.
    cdef double[::1] u = np.zeros(n + 1)
    cdef double[::1] v = np.zeros(m + 1)
    cdef double[::1] minv = np.empty(m + 1)
    cdef Py_ssize_t[::1] p = np.zeros(m + 1, dtype=np.intp)
    cdef Py_ssize_t[::1] way = np.zeros(m + 1, dtype=np.intp)
    cdef unsigned char[::1] used = np.zeros(m + 1, dtype=np.uint8)

    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        for j in range(m + 1):
            minv[j] = INFINITY
            used[j] = 0
        while True:
            used[j0] = 1
            i0 = p[j0]
            delta = INFINITY
            j1 = 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break

    out = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] col = out
    for j in range(1, m + 1):
        if p[j] != 0:
            col[p[j] - 1] = j - 1
    return out
