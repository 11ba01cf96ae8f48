# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernel hot loops; same signatures as ``_kernels_py``.

Inner products go through BLAS; the elementwise part runs as flat C loops
with no intermediate arrays. Built without fast-math so results do not depend
on array addresses (vectorized libm variants broke run-to-run determinism).
"""

import numpy as np
from libc.math cimport acos, exp, sin, sqrt


cdef void _geodesic_se(double* d, double* k, Py_ssize_t m, double theta, double beta) noexcept nogil:
    cdef Py_ssize_t i
    cdef double c, a
    for i in range(m):
        c = d[i]
        c = 1.0 if c > 1.0 else c
        c = -1.0 if c < -1.0 else c
        a = acos(c)
        d[i] = a * a
    for i in range(m):
        k[i] = theta * exp(-beta * d[i])


cdef void _euclid_se(double* d, const double* s1, const double* s2, double* k, Py_ssize_t n1,
                     Py_ssize_t n2, double theta, double beta) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double v
    for i in range(n1):
        for j in range(n2):
            v = s1[i] + s2[j] - 2.0 * d[i * n2 + j]
            d[i * n2 + j] = v if v > 0.0 else 0.0
    for i in range(n1 * n2):
        k[i] = theta * exp(-beta * d[i])


cdef void _dk_dc(const double* k, const double* d2, double* out, Py_ssize_t m, double beta) noexcept nogil:
    cdef Py_ssize_t i
    cdef double d, s, ratio
    for i in range(m):
        d = sqrt(d2[i])
        s = sin(d)
        s = s if s > 1e-8 else 1e-8
        ratio = d / s if d > 1e-6 else 1.0 + d2[i] / 6.0
        out[i] = 2.0 * beta * k[i] * ratio


def sphere_se(double[:, ::1] Z1, double[:, ::1] Z2, double theta, double beta):
    D2 = np.dot(np.asarray(Z1), np.asarray(Z2).T)
    K = np.empty_like(D2)
    cdef double[:, ::1] dv = D2
    cdef double[:, ::1] kv = K
    if D2.size:
        _geodesic_se(&dv[0, 0], &kv[0, 0], D2.size, theta, beta)
    return K, D2


def euclid_se(double[:, ::1] X1, double[:, ::1] X2, double theta, double beta):
    A, B = np.asarray(X1), np.asarray(X2)
    D2 = np.dot(A, B.T)
    K = np.empty_like(D2)
    cdef double[::1] s1 = np.einsum("ij,ij->i", A, A)
    cdef double[::1] s2 = np.einsum("ij,ij->i", B, B)
    cdef double[:, ::1] dv = D2
    cdef double[:, ::1] kv = K
    if D2.size:
        _euclid_se(&dv[0, 0], &s1[0], &s2[0], &kv[0, 0], D2.shape[0], D2.shape[1], theta, beta)
    return K, D2


def sphere_dk_dc(double[:, ::1] K, double[:, ::1] D2, double beta):
    out = np.empty((K.shape[0], K.shape[1]))
    cdef double[:, ::1] ov = out
    if out.size:
        _dk_dc(&K[0, 0], &D2[0, 0], &ov[0, 0], out.size, beta)
    return out
