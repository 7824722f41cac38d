# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: batched non-local transform, dense history sums,
batched power-iteration spectral norms.

Mirrors ``dnl._kernels_py`` exactly in signature and error behaviour.
"""

import numpy as np

from libc.math cimport exp, sqrt, fabs, INFINITY
from libc.stdlib cimport malloc, free

from dnl.errors import DegenerateNormalizerError

KRONECKER = 0
SCALED_DOT = 1
GAUSSIAN = 2

cdef double _EPS = np.finfo(np.float64).eps


cdef int _transform_one(int kind, const double[:, :] T1, const double[:, :] T2,
                        const double[:, :] T3, const double[:] z, double* out,
                        double* q, double* k, double* v, double* e,
                        Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double acc, mx, s, scale, lg
    for i in range(n):
        acc = 0.0
        for j in range(n):
            acc += T3[i, j] * z[j]
        v[i] = acc
    if kind == 0:
        for i in range(n):
            out[i] = v[i]
        return 0
    if kind == 1:
        for i in range(n):
            acc = 0.0
            s = 0.0
            for j in range(n):
                acc += T1[i, j] * z[j]
                s += T2[i, j] * z[j]
            q[i] = acc
            k[i] = s
        scale = 1.0 / sqrt(<double>n)
    else:
        for i in range(n):
            q[i] = z[i]
            k[i] = z[i]
        scale = 1.0
    for i in range(n):
        mx = -INFINITY
        for j in range(n):
            lg = q[i] * k[j] * scale
            e[j] = lg
            if lg > mx:
                mx = lg
        s = 0.0
        acc = 0.0
        for j in range(n):
            e[j] = exp(e[j] - mx)
            s += e[j]
            acc += e[j] * v[j]
        if not (s > _EPS):
            return -1
        out[i] = acc / s
    return 0


def transform_rows(int kind, T1, T2, T3, Z):
    Z = np.asarray(Z, dtype=np.float64)
    cdef Py_ssize_t m = Z.shape[0]
    cdef Py_ssize_t n = Z.shape[1]
    cdef bint shared = T1.ndim == 2
    if kind == 0 and shared:
        # a plain shared linear map: BLAS beats the row loop
        return Z @ np.asarray(T3).T
    cdef const double[:, :] s1
    cdef const double[:, :] s2
    cdef const double[:, :] s3
    cdef const double[:, :, :] t1
    cdef const double[:, :, :] t2
    cdef const double[:, :, :] t3
    # broadcasting shared matrices to (m, n, n) costs more than the kernel itself for small m
    if shared:
        s1, s2, s3 = T1, T2, T3
    else:
        t1, t2, t3 = T1, T2, T3
    cdef const double[:, :] zz = Z
    out = np.empty((m, n))
    cdef double[:, :] o = out
    cdef double* buf = <double*> malloc(4 * n * sizeof(double))
    cdef Py_ssize_t r
    cdef int status = 0
    try:
        with nogil:
            for r in range(m):
                if shared:
                    status = _transform_one(kind, s1, s2, s3, zz[r], &o[r, 0],
                                            buf, buf + n, buf + 2 * n, buf + 3 * n, n)
                else:
                    status = _transform_one(kind, t1[r], t2[r], t3[r], zz[r], &o[r, 0],
                                            buf, buf + n, buf + 2 * n, buf + 3 * n, n)
                if status != 0:
                    break
    finally:
        free(buf)
    if status != 0:
        raise DegenerateNormalizerError("softmax normalizer vanished or is not finite")
    return out


def history_sum(int kind, T1, T2, T3, X, W, c, weights):
    X = np.asarray(X, dtype=np.float64)
    cdef Py_ssize_t m = X.shape[0]
    cdef Py_ssize_t n = X.shape[1]
    out = np.zeros(n)
    if m == 0:
        return out
    cdef const double[:, :] t1 = T1
    cdef const double[:, :] t2 = T2
    cdef const double[:, :] t3 = T3
    cdef const double[:, :] xx = X
    cdef const double[:, :, :] ww = W
    cdef const double[:, :] cc = c
    cdef const double[:] wt = weights
    cdef double[:] o = out
    cdef double* buf = <double*> malloc(5 * n * sizeof(double))
    cdef double* a = buf + 4 * n
    cdef Py_ssize_t kk, i, j
    cdef double acc
    cdef int status = 0
    try:
        with nogil:
            for kk in range(m):
                status = _transform_one(kind, t1, t2, t3, xx[kk], a,
                                        buf, buf + n, buf + 2 * n, buf + 3 * n, n)
                if status != 0:
                    break
                for i in range(n):
                    acc = cc[kk, i]
                    for j in range(n):
                        acc += ww[kk, i, j] * a[j]
                    o[i] += wt[kk] * acc
    finally:
        free(buf)
    if status != 0:
        raise DegenerateNormalizerError("softmax normalizer vanished or is not finite")
    return out


cdef double _norm(double* x, Py_ssize_t n) noexcept nogil:
    cdef double s = 0.0
    cdef Py_ssize_t i
    for i in range(n):
        s += x[i] * x[i]
    return sqrt(s)


cdef void _matvec(const double[:, :] M, double* x, double* y, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double acc
    for i in range(n):
        acc = 0.0
        for j in range(n):
            acc += M[i, j] * x[j]
        y[i] = acc


cdef void _rmatvec(const double[:, :] M, double* x, double* y, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, j
    for j in range(n):
        y[j] = 0.0
    for i in range(n):
        for j in range(n):
            y[j] += M[i, j] * x[i]


cdef int _try_start(const double[:, :] M, double* x, double* y, double* z,
                    Py_ssize_t n) noexcept nogil:
    _matvec(M, x, y, n)
    _rmatvec(M, y, z, n)
    return _norm(z, n) > 0.0


def spectral_norms(stack, double tol=1e-12, int max_iter=10000):
    stack = np.asarray(stack, dtype=np.float64)
    cdef Py_ssize_t m = stack.shape[0]
    cdef Py_ssize_t n = stack.shape[2]
    cdef const double[:, :, :] S = stack
    sigma_a = np.zeros(m)
    u_a = np.zeros((m, n))
    v_a = np.zeros((m, n))
    it_a = np.zeros(m, dtype=np.int64)
    cdef double[:] sigma = sigma_a
    cdef double[:, :] uu = u_a
    cdef double[:, :] vv = v_a
    cdef long long[:] its = it_a
    cdef double* x = <double*> malloc(3 * n * sizeof(double))
    cdef double* y = x + n
    cdef double* z = x + 2 * n
    cdef Py_ssize_t k, i, c
    cdef double nrm, s_old, s_new
    cdef int it, found
    try:
        with nogil:
            for k in range(m):
                for i in range(n):
                    x[i] = 1.0 + 0.5 * i / <double>n
                nrm = _norm(x, n)
                for i in range(n):
                    x[i] /= nrm
                found = _try_start(S[k], x, y, z, n)
                if not found:
                    for i in range(n):
                        x[i] = (1.0 if i % 2 == 0 else -1.0) / sqrt(<double>n)
                    found = _try_start(S[k], x, y, z, n)
                c = 0
                while not found and c < n:
                    for i in range(n):
                        x[i] = 0.0
                    x[c] = 1.0
                    found = _try_start(S[k], x, y, z, n)
                    c += 1
                if not found:
                    continue
                _matvec(S[k], x, y, n)
                s_old = _norm(y, n)
                it = 0
                while it < max_iter:
                    it += 1
                    _matvec(S[k], x, y, n)
                    _rmatvec(S[k], y, z, n)
                    nrm = _norm(z, n)
                    for i in range(n):
                        x[i] = z[i] / nrm
                    _matvec(S[k], x, y, n)
                    s_new = _norm(y, n)
                    if fabs(s_new - s_old) <= tol * s_new:
                        s_old = s_new
                        break
                    s_old = s_new
                sigma[k] = s_old
                its[k] = it
                for i in range(n):
                    vv[k, i] = x[i]
                    uu[k, i] = y[i] / s_old if s_old > 0.0 else 0.0
    finally:
        free(x)
    return sigma_a, u_a, v_a, it_a
