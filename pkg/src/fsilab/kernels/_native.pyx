# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Compiled element kernels (hot inner loops of assembly/diagnostics).

Per-cell results depend only on that cell's rows, so splitting the cell
range across threads reproduces the sequential output bit for bit.
"""

import numpy as np

cimport cython


def local_stiffness_range(double[:, :, :, ::1] gradphi, double[:, ::1] wdet,
                          double[:, :, :, ::1] coeff, double[:, :, ::1] out,
                          Py_ssize_t c0, Py_ssize_t c1):
    cdef Py_ssize_t c, q, a, b
    cdef Py_ssize_t nq = gradphi.shape[1]
    cdef Py_ssize_t n = gradphi.shape[2]
    cdef double w, m00, m01, m10, m11, ga0, ga1, t0, t1
    with nogil:
        for c in range(c0, c1):
            for a in range(n):
                for b in range(n):
                    out[c, a, b] = 0.0
            for q in range(nq):
                w = wdet[c, q]
                m00 = coeff[c, q, 0, 0]
                m01 = coeff[c, q, 0, 1]
                m10 = coeff[c, q, 1, 0]
                m11 = coeff[c, q, 1, 1]
                for a in range(n):
                    ga0 = gradphi[c, q, a, 0]
                    ga1 = gradphi[c, q, a, 1]
                    t0 = w * (ga0 * m00 + ga1 * m10)
                    t1 = w * (ga0 * m01 + ga1 * m11)
                    for b in range(n):
                        out[c, a, b] += t0 * gradphi[c, q, b, 0] + t1 * gradphi[c, q, b, 1]


def local_mass_range(double[:, ::1] phi, double[:, ::1] wdet,
                     double[:, :, ::1] out, Py_ssize_t c0, Py_ssize_t c1):
    cdef Py_ssize_t c, q, a, b
    cdef Py_ssize_t nq = phi.shape[0]
    cdef Py_ssize_t n = phi.shape[1]
    cdef double w
    with nogil:
        for c in range(c0, c1):
            for a in range(n):
                for b in range(n):
                    out[c, a, b] = 0.0
            for q in range(nq):
                w = wdet[c, q]
                for a in range(n):
                    for b in range(n):
                        out[c, a, b] += w * phi[q, a] * phi[q, b]


def local_div_range(double[:, :, :, ::1] gradphi, double[:, ::1] psi,
                    double[:, ::1] wdet, double[:, :, ::1] bvec,
                    double[:, :, ::1] out, Py_ssize_t c0, Py_ssize_t c1):
    cdef Py_ssize_t c, q, p, a
    cdef Py_ssize_t nq = gradphi.shape[1]
    cdef Py_ssize_t n = gradphi.shape[2]
    cdef Py_ssize_t np_ = psi.shape[1]
    cdef double w, b0, b1, s
    with nogil:
        for c in range(c0, c1):
            for p in range(np_):
                for a in range(n):
                    out[c, p, a] = 0.0
            for q in range(nq):
                w = wdet[c, q]
                b0 = bvec[c, q, 0]
                b1 = bvec[c, q, 1]
                for a in range(n):
                    s = w * (b0 * gradphi[c, q, a, 0] + b1 * gradphi[c, q, a, 1])
                    for p in range(np_):
                        out[c, p, a] += psi[q, p] * s


def field_grad_range(double[:, :, :, ::1] gradphi, double[:, ::1] coefs,
                     double[:, :, ::1] out, Py_ssize_t c0, Py_ssize_t c1):
    cdef Py_ssize_t c, q, a
    cdef Py_ssize_t nq = gradphi.shape[1]
    cdef Py_ssize_t n = gradphi.shape[2]
    cdef double g0, g1
    with nogil:
        for c in range(c0, c1):
            for q in range(nq):
                g0 = 0.0
                g1 = 0.0
                for a in range(n):
                    g0 += gradphi[c, q, a, 0] * coefs[c, a]
                    g1 += gradphi[c, q, a, 1] * coefs[c, a]
                out[c, q, 0] = g0
                out[c, q, 1] = g1


def field_value_range(double[:, ::1] phi, double[:, ::1] coefs,
                      double[:, ::1] out, Py_ssize_t c0, Py_ssize_t c1):
    cdef Py_ssize_t c, q, a
    cdef Py_ssize_t nq = phi.shape[0]
    cdef Py_ssize_t n = phi.shape[1]
    cdef double s
    with nogil:
        for c in range(c0, c1):
            for q in range(nq):
                s = 0.0
                for a in range(n):
                    s += phi[q, a] * coefs[c, a]
                out[c, q] = s
