# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementations of the hot kernels.

Mirrors ``aspectsim._fallback`` exactly; see that module for the semantics.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, log

cnp.import_array()


def pairwise_sqdist(a, b):
    """Squared Euclidean distances between rows of ``a`` and rows of ``b``."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    cdef const double[:, ::1] av = a
    cdef const double[:, ::1] bv = b
    cdef Py_ssize_t n = av.shape[0], m = bv.shape[0], d = av.shape[1]
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, j, k
    cdef double acc, diff
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for k in range(d):
                diff = av[i, k] - bv[j, k]
                acc += diff * diff
            ov[i, j] = acc
    return out


def sinkhorn_log(dist, x_p, x_q, double lam, int max_iters, double tol):
    """Log-domain Sinkhorn scaling of the Gibbs kernel exp(-lam * dist).

    Returns ``(plan, iterations, violation, converged)``; see
    ``aspectsim._fallback.sinkhorn_log``.
    """
    dist = np.ascontiguousarray(dist, dtype=np.float64)
    x_p = np.ascontiguousarray(x_p, dtype=np.float64)
    x_q = np.ascontiguousarray(x_q, dtype=np.float64)
    cdef const double[:, ::1] dv = dist
    cdef const double[::1] av = x_p
    cdef const double[::1] bv = x_q
    cdef Py_ssize_t n = dv.shape[0], m = dv.shape[1]

    neg = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] ng = neg
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(m):
            ng[i, j] = -lam * dv[i, j]

    log_a = np.log(x_p)
    log_b = np.log(x_q)
    cdef double[::1] la = log_a
    cdef double[::1] lb = log_b

    f_arr = np.zeros(n, dtype=np.float64)
    g_arr = np.zeros(m, dtype=np.float64)
    fn_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] f = f_arr
    cdef double[::1] g = g_arr
    cdef double[::1] fn = fn_arr

    plan = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] pv = plan

    cdef int iterations = 0
    cdef bint converged = False
    cdef double drift, term
    cdef double violation = 0.0
    # Row violation of the plan (f, g) equals x_p * |exp(f - fn) - 1|, so
    # potential drift is a free convergence trigger.  The returned flag
    # still comes from the explicit marginal violation of the final plan;
    # if that check fails the threshold tightens and iteration resumes.
    cdef double threshold = tol

    _row_update(ng, g, la, f)
    while iterations < max_iters:
        iterations += 1
        _col_update(ng, f, lb, g)
        _row_update(ng, g, la, fn)
        drift = 0.0
        for i in range(n):
            term = av[i] * fabs(exp(f[i] - fn[i]) - 1.0)
            if term > drift:
                drift = term
            f[i] = fn[i]
        if drift <= threshold:
            _write_plan(ng, f, g, pv)
            violation = _marginal_violation(pv, av, bv)
            if violation <= tol:
                converged = True
                break
            threshold = drift / 10.0

    if not converged:
        _write_plan(ng, f, g, pv)
        violation = _marginal_violation(pv, av, bv)
        converged = violation <= tol

    return plan, iterations, violation, converged


cdef void _write_plan(const double[:, ::1] neg, const double[::1] f,
                      const double[::1] g, double[:, ::1] out) noexcept:
    cdef Py_ssize_t n = neg.shape[0], m = neg.shape[1]
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(m):
            out[i, j] = exp(f[i] + g[j] + neg[i, j])


cdef double _marginal_violation(const double[:, ::1] plan, const double[::1] a,
                                const double[::1] b) noexcept:
    cdef Py_ssize_t n = plan.shape[0], m = plan.shape[1]
    cdef Py_ssize_t i, j
    cdef double worst = 0.0, s, term
    for i in range(n):
        s = 0.0
        for j in range(m):
            s += plan[i, j]
        term = fabs(s - a[i])
        if term > worst:
            worst = term
    for j in range(m):
        s = 0.0
        for i in range(n):
            s += plan[i, j]
        term = fabs(s - b[j])
        if term > worst:
            worst = term
    return worst


cdef void _row_update(const double[:, ::1] neg, const double[::1] g,
                      const double[::1] log_a, double[::1] out) noexcept:
    cdef Py_ssize_t n = neg.shape[0], m = neg.shape[1]
    cdef Py_ssize_t i, j
    cdef double top, acc, v
    for i in range(n):
        top = neg[i, 0] + g[0]
        for j in range(1, m):
            v = neg[i, j] + g[j]
            if v > top:
                top = v
        acc = 0.0
        for j in range(m):
            acc += exp(neg[i, j] + g[j] - top)
        out[i] = log_a[i] - (top + log(acc))


cdef void _col_update(const double[:, ::1] neg, const double[::1] f,
                      const double[::1] log_b, double[::1] out) noexcept:
    cdef Py_ssize_t n = neg.shape[0], m = neg.shape[1]
    cdef Py_ssize_t i, j
    cdef double top, acc, v
    for j in range(m):
        top = neg[0, j] + f[0]
        for i in range(1, n):
            v = neg[i, j] + f[i]
            if v > top:
                top = v
        acc = 0.0
        for i in range(n):
            acc += exp(neg[i, j] + f[i] - top)
        out[j] = log_b[j] - (top + log(acc))
