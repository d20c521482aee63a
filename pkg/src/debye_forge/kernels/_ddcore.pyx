# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled divided-difference weight kernels.

Fused loops over eigenvalue pairs for the first, second (confluent
f[a,a,b]) and third (f[a,a,a,b]) divided differences of the Fermi-Dirac
function f_T(. - mu). These matrices are the inner loop of every
response-fiber and Jacobian assembly; the pure-python fallback in
`_fallback.py` implements identical formulas.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, sinh

cnp.import_array()

BACKEND = "cython"


cdef inline double _sinhc_scaled(double d, double expo) nogil:
    # sinh(d)/d * exp(expo); libm sinh avoids cancellation for small d,
    # exponent combination avoids overflow for large |d| <= -expo.
    if fabs(d) < 1e-300:
        return exp(expo)
    if fabs(d) < 1.0:
        return exp(expo) * sinh(d) / d
    return 0.5 * (exp(d + expo) - exp(-d + expo)) / d


cdef inline double _dd1(double a, double b, double T, double mu) nogil:
    cdef double al = (a - mu) / (2.0 * T)
    cdef double be = (b - mu) / (2.0 * T)
    cdef double d = al - be
    cdef double ea = exp(-2.0 * fabs(al))
    cdef double eb = exp(-2.0 * fabs(be))
    cdef double expo = -fabs(al) - fabs(be)
    return -(1.0 / T) * _sinhc_scaled(d, expo) / ((1.0 + ea) * (1.0 + eb))


cdef inline double _deriv(double lam, double T, int order) nogil:
    # derivatives of f(lam) = 1/(exp(lam/T)+1) via u = s(1-s), t = 1-2s;
    # exp-based so u keeps relative precision in the tails
    cdef double x = lam / T
    cdef double em = exp(-fabs(x))
    cdef double u = em / ((1.0 + em) * (1.0 + em))
    cdef double t = (1.0 - em) / (1.0 + em)
    if x < 0.0:
        t = -t
    if order == 1:
        return -u / T
    if order == 2:
        return u * t / (T * T)
    if order == 3:
        return -u * (1.0 - 6.0 * u) / (T * T * T)
    if order == 4:
        return u * t * (1.0 - 12.0 * u) / (T * T * T * T)
    return u * (-1.0 + 30.0 * u - 120.0 * u * u) / (T * T * T * T * T)


cdef inline double _dd2(double a, double b, double T, double mu, double tau) nogil:
    cdef double h = b - a
    cdef double am = a - mu
    if fabs(h) < tau:
        return (0.5 * _deriv(am, T, 2)
                + _deriv(am, T, 3) * h / 6.0
                + _deriv(am, T, 4) * h * h / 24.0
                + _deriv(am, T, 5) * h * h * h / 120.0)
    return (_dd1(a, b, T, mu) - _deriv(am, T, 1)) / h


cdef inline double _dd3(double a, double b, double T, double mu, double tau) nogil:
    cdef double h = b - a
    cdef double am = a - mu
    if fabs(h) < tau:
        return (_deriv(am, T, 3) / 6.0
                + _deriv(am, T, 4) * h / 24.0
                + _deriv(am, T, 5) * h * h / 120.0)
    return (_dd2(a, b, T, mu, tau) - 0.5 * _deriv(am, T, 2)) / h


def dd1_matrix(a, b, double T, double mu):
    cdef cnp.ndarray[double, ndim=1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t n = av.shape[0], m = bv.shape[0], i, j
    cdef cnp.ndarray[double, ndim=2] out = np.empty((n, m), dtype=np.float64)
    with nogil:
        for i in range(n):
            for j in range(m):
                out[i, j] = _dd1(av[i], bv[j], T, mu)
    return out


def dd2_matrix(a, b, double T, double mu):
    cdef cnp.ndarray[double, ndim=1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef double tau = 1e-6 * (T if T > 1.0 else 1.0)
    cdef Py_ssize_t n = av.shape[0], m = bv.shape[0], i, j
    cdef cnp.ndarray[double, ndim=2] out = np.empty((n, m), dtype=np.float64)
    with nogil:
        for i in range(n):
            for j in range(m):
                out[i, j] = _dd2(av[i], bv[j], T, mu, tau)
    return out


def dd3_matrix(a, b, double T, double mu):
    cdef cnp.ndarray[double, ndim=1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef double tau = 1e-6 * (T if T > 1.0 else 1.0)
    cdef Py_ssize_t n = av.shape[0], m = bv.shape[0], i, j
    cdef cnp.ndarray[double, ndim=2] out = np.empty((n, m), dtype=np.float64)
    with nogil:
        for i in range(n):
            for j in range(m):
                out[i, j] = _dd3(av[i], bv[j], T, mu, tau)
    return out
