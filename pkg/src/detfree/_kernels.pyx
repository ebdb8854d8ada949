# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops.

Every function here has a numpy twin in ``_fallback.py`` with the same
signature; ``_backend`` picks one at import time.
"""
import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport sqrt, floor

cnp.import_array()


def csr_matvec(const long[::1] indptr, const long[::1] indices,
               const double[::1] data, const double[::1] x,
               double[::1] out, int nthreads=1):
    cdef Py_ssize_t n_rows = indptr.shape[0] - 1
    cdef Py_ssize_t i, k
    cdef double acc
    if nthreads > 1:
        for i in prange(n_rows, nogil=True, schedule="static", num_threads=nthreads):
            acc = 0.0
            for k in range(indptr[i], indptr[i + 1]):
                acc = acc + data[k] * x[indices[k]]
            out[i] = acc
    else:
        with nogil:
            for i in range(n_rows):
                acc = 0.0
                for k in range(indptr[i], indptr[i + 1]):
                    acc = acc + data[k] * x[indices[k]]
                out[i] = acc


def multishift_update(double[:, ::1] X, double[:, ::1] P, const double[::1] r,
                     const double[::1] alpha, const double[::1] zeta,
                     const double[::1] beta, const unsigned char[::1] active):
    """X[s] += alpha[s] P[s];  P[s] = zeta[s] r + beta[s] P[s]  for active shifts."""
    cdef Py_ssize_t n_shift = X.shape[0]
    cdef Py_ssize_t n = X.shape[1]
    cdef Py_ssize_t s, i
    cdef double a, z, b, p
    with nogil:
        for s in range(n_shift):
            if not active[s]:
                continue
            a = alpha[s]
            z = zeta[s]
            b = beta[s]
            for i in range(n):
                p = P[s, i]
                X[s, i] += a * p
                P[s, i] = z * r[i] + b * p


def givens_apply(double[::1] x, const long[::1] ii, const long[::1] jj,
                 const double[::1] c, const double[::1] s):
    cdef Py_ssize_t k, i, j
    cdef double xi, xj
    with nogil:
        for k in range(ii.shape[0]):
            i = ii[k]
            j = jj[k]
            xi = x[i]
            xj = x[j]
            x[i] = c[k] * xi - s[k] * xj
            x[j] = s[k] * xi + c[k] * xj


cdef inline double _wendland(double r, double s2, double l) nogil:
    cdef double t = 1.0 - r / l
    if t <= 0.0:
        return 0.0
    return s2 * t * t * t * t * (4.0 * r / l + 1.0)


def wendland_pairs(const double[:, ::1] pts, const long[::1] order,
                   const long[::1] cell_start, const long[::1] cell_of,
                   long ncx, long ncy, double l, double s2):
    """Strict upper-triangle pairs (i < j) closer than ``l``.

    ``order`` lists point indices sorted by cell, ``cell_start`` is the CSR
    offset array of cells and ``cell_of`` the cell of every point.
    """
    cdef Py_ssize_t n = pts.shape[0]
    cdef Py_ssize_t a, b, p, q, idx
    cdef long cx, cy, nx_, ny_, cell
    cdef double dx, dy, d, l2 = l * l
    cdef long count = 0
    cdef int dxc, dyc
    cdef int pass_
    rows_arr = np.empty(0, dtype=np.int64)
    cols_arr = np.empty(0, dtype=np.int64)
    vals_arr = np.empty(0, dtype=np.float64)
    cdef long[::1] rows
    cdef long[::1] cols
    cdef double[::1] vals
    for pass_ in range(2):
        if pass_ == 1:
            rows_arr = np.empty(count, dtype=np.int64)
            cols_arr = np.empty(count, dtype=np.int64)
            vals_arr = np.empty(count, dtype=np.float64)
            rows = rows_arr
            cols = cols_arr
            vals = vals_arr
            count = 0
        with nogil:
            for p in range(n):
                cell = cell_of[p]
                cx = cell % ncx
                cy = cell // ncx
                for dyc in range(-1, 2):
                    ny_ = cy + dyc
                    if ny_ < 0 or ny_ >= ncy:
                        continue
                    for dxc in range(-1, 2):
                        nx_ = cx + dxc
                        if nx_ < 0 or nx_ >= ncx:
                            continue
                        idx = ny_ * ncx + nx_
                        for b in range(cell_start[idx], cell_start[idx + 1]):
                            q = order[b]
                            if q <= p:
                                continue
                            dx = pts[p, 0] - pts[q, 0]
                            dy = pts[p, 1] - pts[q, 1]
                            d = dx * dx + dy * dy
                            if d < l2:
                                if pass_ == 1:
                                    d = sqrt(d)
                                    rows[count] = p
                                    cols[count] = q
                                    vals[count] = _wendland(d, s2, l)
                                count += 1
    return rows_arr, cols_arr, vals_arr
