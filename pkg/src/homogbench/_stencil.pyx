# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled matrix-free apply of ``kappa^2 Delta^2 - div(a grad)`` for scalar fields.

Inputs live on the extended grid: one ghost layer, the boundary nodes and the
interior, so a 1-D array has ``N + 4`` entries and the interior starts at 2.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def apply_1d(const double[::1] u, double kappa2, const double[::1] a_edge, double h):
    cdef Py_ssize_t N = u.shape[0] - 4
    cdef Py_ssize_t q, e
    cdef double ih2 = 1.0 / (h * h)
    cdef double lm, lc, lp
    out_arr = np.empty(N, dtype=np.float64)
    cdef double[::1] out = out_arr
    for q in range(N):
        e = q + 2
        lm = (u[e - 2] - 2.0 * u[e - 1] + u[e]) * ih2
        lc = (u[e - 1] - 2.0 * u[e] + u[e + 1]) * ih2
        lp = (u[e] - 2.0 * u[e + 1] + u[e + 2]) * ih2
        out[q] = kappa2 * (lm - 2.0 * lc + lp) * ih2 - (
            a_edge[q + 1] * (u[e + 1] - u[e]) - a_edge[q] * (u[e] - u[e - 1])) * ih2
    return out_arr


cdef inline double _lap(const double[:, ::1] u, Py_ssize_t i, Py_ssize_t j, double ih2) nogil:
    return (u[i - 1, j] + u[i + 1, j] + u[i, j - 1] + u[i, j + 1] - 4.0 * u[i, j]) * ih2


def apply_2d(const double[:, ::1] u, double kappa2,
             const double[:, ::1] ax, const double[:, ::1] ay,
             const double[:, ::1] axy, const double[:, ::1] ayx, double h):
    cdef Py_ssize_t N = u.shape[0] - 4
    cdef Py_ssize_t ix, iy, i, j
    cdef double ih2 = 1.0 / (h * h)
    cdef double iq = 0.25 * ih2
    cdef double bih, second, cross
    out_arr = np.empty((N, N), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        for ix in range(N):
            i = ix + 2
            for iy in range(N):
                j = iy + 2
                bih = 0.0
                if kappa2 != 0.0:
                    bih = (_lap(u, i - 1, j, ih2) + _lap(u, i + 1, j, ih2)
                           + _lap(u, i, j - 1, ih2) + _lap(u, i, j + 1, ih2)
                           - 4.0 * _lap(u, i, j, ih2)) * ih2
                second = (ax[ix + 1, iy] * (u[i + 1, j] - u[i, j])
                          - ax[ix, iy] * (u[i, j] - u[i - 1, j])
                          + ay[ix, iy + 1] * (u[i, j + 1] - u[i, j])
                          - ay[ix, iy] * (u[i, j] - u[i, j - 1])) * ih2
                cross = (axy[ix + 2, iy] * (u[i + 1, j + 1] - u[i + 1, j - 1])
                         - axy[ix, iy] * (u[i - 1, j + 1] - u[i - 1, j - 1])
                         + ayx[ix, iy + 2] * (u[i + 1, j + 1] - u[i - 1, j + 1])
                         - ayx[ix, iy] * (u[i + 1, j - 1] - u[i - 1, j - 1])) * iq
                out[ix, iy] = kappa2 * bih - second - cross
    return out_arr
