# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled forward recursion (BLAS matrix-vector product per step)."""

import numpy as np
from libc.math cimport log, isfinite, floor
from scipy.linalg.cython_blas cimport dgemv


def forward(const double[:, ::1] trans, const double[:, ::1] emis,
            const double[::1] init, const double[::1] weights, bint keep=False):
    """Normalized forward recursion.

    ``trans[j, i]`` is the transition density from grid point j to grid
    point i; ``emis[k, i]`` the emission density of observation k at state i
    (row 0 is the initial emission).  Returns ``(increments, filter,
    history, failed_step)``; ``failed_step`` is -1 on success.
    """
    cdef Py_ssize_t n = emis.shape[0]
    cdef int G = <int>emis.shape[1]
    cdef Py_ssize_t k, i
    cdef double mass
    cdef double one = 1.0, zero = 0.0
    cdef int inc = 1
    cdef char trans_flag = b'N'

    incr_arr = np.zeros(n)
    h_arr = np.empty(G)
    tmp_arr = np.empty(G)
    cdef double[::1] incr = incr_arr
    cdef double[::1] h = h_arr
    cdef double[::1] tmp = tmp_arr
    cdef double[:, ::1] hist
    if keep:
        hist_arr = np.empty((n, G))
        hist = hist_arr
    else:
        hist_arr = None

    with nogil:
        mass = 0.0
        for i in range(G):
            h[i] = init[i] * emis[0, i]
            mass += weights[i] * h[i]
        if not (mass > 0.0 and isfinite(mass)):
            with gil:
                return incr_arr, h_arr, hist_arr, 0
        for i in range(G):
            h[i] /= mass
        incr[0] = log(mass)
        if keep:
            for i in range(G):
                hist[0, i] = h[i]

        for k in range(1, n):
            for i in range(G):
                tmp[i] = weights[i] * h[i]
            # Fortran view of the C-ordered trans is its transpose: h = trans^T tmp
            dgemv(&trans_flag, &G, &G, &one, <double*>&trans[0, 0], &G,
                  &tmp[0], &inc, &zero, &h[0], &inc)
            mass = 0.0
            for i in range(G):
                h[i] *= emis[k, i]
                mass += weights[i] * h[i]
            if not (mass > 0.0 and isfinite(mass)):
                with gil:
                    return incr_arr, h_arr, hist_arr, k
            for i in range(G):
                h[i] /= mass
            incr[k] = log(mass)
            if keep:
                for i in range(G):
                    hist[k, i] = h[i]

    return incr_arr, h_arr, hist_arr, -1


def forward_affine(double lo, double step, const double[::1] weights,
                   const double[:, ::1] emis, const double[::1] init,
                   const double[::1] intercepts, double slope, bint keep=False,
                   bint spline=True):
    """Forward recursion for a deterministic affine state map on a uniform grid.

    At step k the mass at grid point j moves to ``intercepts[k] + slope *
    x_j`` and is spread over the four nearest nodes with cubic B-spline
    weights (nodes past either end fold onto the end node).  With
    ``spline=False`` it goes to the two bracketing nodes by linear
    interpolation, clamped at the ends.  Same return contract as
    :func:`forward`.
    """
    cdef Py_ssize_t n = emis.shape[0]
    cdef Py_ssize_t G = emis.shape[1]
    cdef Py_ssize_t k, i, j, b, r
    cdef double mass, u, t, m, t2, t3
    cdef double top = <double>(G + 1)
    cdef double w[4]

    incr_arr = np.zeros(n)
    h_arr = np.empty(G)
    tmp_arr = np.empty(G)
    cdef double[::1] incr = incr_arr
    cdef double[::1] h = h_arr
    cdef double[::1] tmp = tmp_arr
    cdef double[:, ::1] hist
    if keep:
        hist_arr = np.empty((n, G))
        hist = hist_arr
    else:
        hist_arr = None

    with nogil:
        mass = 0.0
        for i in range(G):
            h[i] = init[i] * emis[0, i]
            mass += weights[i] * h[i]
        if not (mass > 0.0 and isfinite(mass)):
            with gil:
                return incr_arr, h_arr, hist_arr, 0
        for i in range(G):
            h[i] /= mass
        incr[0] = log(mass)
        if keep:
            for i in range(G):
                hist[0, i] = h[i]

        for k in range(1, n):
            for i in range(G):
                tmp[i] = 0.0
            for j in range(G):
                m = weights[j] * h[j]
                if m == 0.0:
                    continue
                u = (intercepts[k] + slope * (lo + j * step) - lo) / step
                if not spline:
                    if u < 0.0:
                        u = 0.0
                    elif u > G - 1.0:
                        u = G - 1.0
                    i = <Py_ssize_t>u
                    if i > G - 2:
                        i = G - 2
                    t = u - i
                    tmp[i] += m * (1.0 - t)
                    tmp[i + 1] += m * t
                    continue
                if u < -2.0:
                    u = -2.0
                elif u > top:
                    u = top
                t = floor(u)
                b = <Py_ssize_t>t
                t = u - t
                t2 = t * t
                t3 = t2 * t
                w[0] = (1.0 - t) * (1.0 - t) * (1.0 - t) / 6.0
                w[1] = (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0
                w[2] = (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0
                w[3] = t3 / 6.0
                for r in range(4):
                    i = b - 1 + r
                    if i < 0:
                        i = 0
                    elif i > G - 1:
                        i = G - 1
                    tmp[i] += m * w[r]
            mass = 0.0
            for i in range(G):
                h[i] = tmp[i] / weights[i] * emis[k, i]
                mass += weights[i] * h[i]
            if not (mass > 0.0 and isfinite(mass)):
                with gil:
                    return incr_arr, h_arr, hist_arr, k
            for i in range(G):
                h[i] /= mass
            incr[k] = log(mass)
            if keep:
                for i in range(G):
                    hist[k, i] = h[i]

    return incr_arr, h_arr, hist_arr, -1
