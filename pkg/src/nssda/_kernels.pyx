# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled stencil kernels; see ``_kernels_py`` for the reference versions."""
import numpy as np

from libc.math cimport fabs

DEF FLAT_TOL = 1e-14


cdef inline double _slope(double um1, double u0, double up1) nogil:
    cdef double dl = u0 - um1
    cdef double dr = up1 - u0
    cdef double r, m, h
    if fabs(dr) < FLAT_TOL:
        return 0.0
    r = dl / dr
    h = 0.5 * (1.0 + r)
    m = r if r <= h else h
    if not m <= 1.0:
        m = 1.0
    if not m >= 0.0:
        m = 0.0
    return m * dr


def interface_states(const double[:, :, ::1] ue):
    cdef Py_ssize_t nb = ue.shape[0], m = ue.shape[1], p = ue.shape[2]
    cdef Py_ssize_t nf = m - 3
    cdef Py_ssize_t b, k, c
    cdef double s
    u_minus_arr = np.empty((nb, nf, p))
    u_plus_arr = np.empty((nb, nf, p))
    cdef double[:, :, ::1] u_minus = u_minus_arr
    cdef double[:, :, ::1] u_plus = u_plus_arr
    with nogil:
        for b in range(nb):
            for k in range(1, m - 1):
                for c in range(p):
                    s = _slope(ue[b, k - 1, c], ue[b, k, c], ue[b, k + 1, c])
                    if k <= m - 3:
                        u_minus[b, k - 1, c] = ue[b, k, c] + 0.5 * s
                    if k >= 2:
                        u_plus[b, k - 2, c] = ue[b, k, c] - 0.5 * s
    return u_minus_arr, u_plus_arr


def kt_assemble(const double[:, :, ::1] u_plus, const double[:, :, ::1] u_minus,
                const double[:, :, ::1] f_plus, const double[:, :, ::1] f_minus,
                const double[:, ::1] a, double dx):
    cdef Py_ssize_t nb = u_plus.shape[0], nf = u_plus.shape[1], p = u_plus.shape[2]
    cdef Py_ssize_t b, i, c
    cdef double hl, hr
    out_arr = np.empty((nb, nf - 1, p))
    cdef double[:, :, ::1] out = out_arr
    with nogil:
        for b in range(nb):
            for c in range(p):
                hl = 0.5 * (f_plus[b, 0, c] + f_minus[b, 0, c]) - 0.5 * a[b, 0] * (
                    u_plus[b, 0, c] - u_minus[b, 0, c])
                for i in range(1, nf):
                    hr = 0.5 * (f_plus[b, i, c] + f_minus[b, i, c]) - 0.5 * a[b, i] * (
                        u_plus[b, i, c] - u_minus[b, i, c])
                    out[b, i - 1, c] = -(hr - hl) / dx
                    hl = hr
    return out_arr
