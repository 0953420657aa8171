# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel core: the hot per-step math of training and evaluation.

Matrix products go through BLAS dgemm (scipy's shared capsule); bias, relu,
and Adam run as fused C loops. The whole-network entry points (mlp_forward*,
mlp_backward) do one Python call per network pass, which is where the speedup
over the per-op numpy fallback comes from. Requires scipy at runtime; when it
is missing the package falls back to the numpy backend at import.
"""

from libc.math cimport sqrt

import numpy as np

cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef void _gemm_abt(double* out, double* a, double* b,
                    int m, int n, int k, double beta) noexcept nogil:
    # row-major out(m,n) (+)= a(m,k) @ b(n,k)^T
    cdef double alpha = 1.0
    dgemm("T", "N", &n, &m, &k, &alpha, b, &k, a, &k, &beta, out, &n)


cdef void _gemm_ab(double* out, double* a, double* b,
                   int m, int n, int k, double beta) noexcept nogil:
    # row-major out(m,n) (+)= a(m,k) @ b(k,n)
    cdef double alpha = 1.0
    dgemm("N", "N", &n, &m, &k, &alpha, b, &n, a, &k, &beta, out, &n)


cdef void _gemm_atb(double* out, double* a, double* b,
                    int m, int n, int k, double beta) noexcept nogil:
    # row-major out(m,n) (+)= a(k,m)^T @ b(k,n)
    cdef double alpha = 1.0
    dgemm("N", "T", &n, &m, &k, &alpha, b, &n, a, &m, &beta, out, &n)


def linear_forward(double[:, ::1] x, double[:, ::1] w, double[::1] b):
    cdef int n = <int> x.shape[0]
    cdef int d_in = <int> x.shape[1]
    cdef int d_out = <int> w.shape[0]
    out_arr = np.empty((n, d_out), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(d_out):
            out[i, j] = b[j]
    _gemm_abt(&out[0, 0], &x[0, 0], &w[0, 0], n, d_out, d_in, 1.0)
    return out_arr


def relu_forward(double[:, ::1] z):
    cdef Py_ssize_t n = z.shape[0]
    cdef Py_ssize_t d = z.shape[1]
    out_arr = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(d):
            out[i, j] = z[i, j] if z[i, j] > 0.0 else 0.0
    return out_arr


def relu_backward(double[:, ::1] dy, double[:, ::1] z):
    cdef Py_ssize_t n = z.shape[0]
    cdef Py_ssize_t d = z.shape[1]
    out_arr = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(d):
            out[i, j] = dy[i, j] if z[i, j] > 0.0 else 0.0
    return out_arr


def linear_backward(double[:, ::1] dy, double[:, ::1] x, double[:, ::1] w):
    cdef int n = <int> x.shape[0]
    cdef int d_in = <int> x.shape[1]
    cdef int d_out = <int> w.shape[0]
    dw_arr = np.empty((d_out, d_in), dtype=np.float64)
    db_arr = np.zeros(d_out, dtype=np.float64)
    dx_arr = np.empty((n, d_in), dtype=np.float64)
    cdef double[:, ::1] dw = dw_arr
    cdef double[::1] db = db_arr
    cdef double[:, ::1] dx = dx_arr
    cdef Py_ssize_t i, j
    _gemm_atb(&dw[0, 0], &dy[0, 0], &x[0, 0], d_out, d_in, n, 0.0)
    _gemm_ab(&dx[0, 0], &dy[0, 0], &w[0, 0], n, d_in, d_out, 0.0)
    for i in range(n):
        for j in range(d_out):
            db[j] += dy[i, j]
    return dw_arr, db_arr, dx_arr


def mlp_forward(double[:, ::1] x, list weights, list biases):
    """Forward through relu hidden layers and an identity output layer."""
    cdef Py_ssize_t n_layers = len(weights)
    cdef Py_ssize_t l, i, j
    cdef double[:, ::1] a = x
    cdef double[:, ::1] w
    cdef double[::1] b
    cdef double[:, ::1] z
    cdef int n = <int> x.shape[0]
    cdef int d_in, d_out
    for l in range(n_layers):
        w = weights[l]
        b = biases[l]
        d_in = <int> w.shape[1]
        d_out = <int> w.shape[0]
        z_arr = np.empty((n, d_out), dtype=np.float64)
        z = z_arr
        for i in range(n):
            for j in range(d_out):
                z[i, j] = b[j]
        _gemm_abt(&z[0, 0], &a[0, 0], &w[0, 0], n, d_out, d_in, 1.0)
        if l < n_layers - 1:
            for i in range(n):
                for j in range(d_out):
                    if z[i, j] < 0.0:
                        z[i, j] = 0.0
        a = z
    return np.asarray(a)


def mlp_forward_cached(double[:, ::1] x, list weights, list biases):
    """Forward pass returning (y, activations, pre_activations) for backward."""
    cdef Py_ssize_t n_layers = len(weights)
    cdef Py_ssize_t l, i, j
    cdef double[:, ::1] a = x
    cdef double[:, ::1] w
    cdef double[::1] b
    cdef double[:, ::1] z
    cdef double[:, ::1] act
    cdef int n = <int> x.shape[0]
    cdef int d_in, d_out
    activations = [np.asarray(x)]
    pre_acts = []
    for l in range(n_layers):
        w = weights[l]
        b = biases[l]
        d_in = <int> w.shape[1]
        d_out = <int> w.shape[0]
        z_arr = np.empty((n, d_out), dtype=np.float64)
        z = z_arr
        for i in range(n):
            for j in range(d_out):
                z[i, j] = b[j]
        _gemm_abt(&z[0, 0], &a[0, 0], &w[0, 0], n, d_out, d_in, 1.0)
        pre_acts.append(z_arr)
        if l < n_layers - 1:
            act_arr = np.empty((n, d_out), dtype=np.float64)
            act = act_arr
            for i in range(n):
                for j in range(d_out):
                    act[i, j] = z[i, j] if z[i, j] > 0.0 else 0.0
            activations.append(act_arr)
            a = act
        else:
            a = z
    return np.asarray(a), activations, pre_acts


def mlp_backward(double[:, ::1] upstream, list weights, list activations, list pre_acts):
    """Reverse pass; returns ([(dw, db), ...] per layer, dx)."""
    cdef Py_ssize_t n_layers = len(weights)
    cdef Py_ssize_t l, i, j
    cdef int n = <int> upstream.shape[0]
    cdef int d_in, d_out
    cdef double[:, ::1] d = upstream
    cdef double[:, ::1] w
    cdef double[:, ::1] a_prev
    cdef double[:, ::1] z_prev
    cdef double[:, ::1] dw
    cdef double[::1] db
    cdef double[:, ::1] dx
    grads = [None] * n_layers
    for l in range(n_layers - 1, -1, -1):
        w = weights[l]
        a_prev = activations[l]
        d_in = <int> w.shape[1]
        d_out = <int> w.shape[0]
        dw_arr = np.empty((d_out, d_in), dtype=np.float64)
        db_arr = np.zeros(d_out, dtype=np.float64)
        dx_arr = np.empty((n, d_in), dtype=np.float64)
        dw = dw_arr
        db = db_arr
        dx = dx_arr
        _gemm_atb(&dw[0, 0], &d[0, 0], &a_prev[0, 0], d_out, d_in, n, 0.0)
        _gemm_ab(&dx[0, 0], &d[0, 0], &w[0, 0], n, d_in, d_out, 0.0)
        for i in range(n):
            for j in range(d_out):
                db[j] += d[i, j]
        grads[l] = (dw_arr, db_arr)
        if l > 0:
            z_prev = pre_acts[l - 1]
            for i in range(n):
                for j in range(d_in):
                    if z_prev[i, j] <= 0.0:
                        dx[i, j] = 0.0
            d = dx
        else:
            d = dx
    return grads, np.asarray(d)


def adam_step_inplace(
    double[::1] p,
    double[::1] g,
    double[::1] m,
    double[::1] v,
    long t,
    double lr,
    double beta1,
    double beta2,
    double eps,
):
    cdef Py_ssize_t n = p.shape[0]
    cdef double bc1 = 1.0 - beta1 ** t
    cdef double bc2 = 1.0 - beta2 ** t
    cdef Py_ssize_t i
    cdef double m_hat, v_hat
    for i in range(n):
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
        m_hat = m[i] / bc1
        v_hat = v[i] / bc2
        p[i] -= lr * m_hat / (sqrt(v_hat) + eps)
