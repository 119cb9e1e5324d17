# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels.  Semantics mirror kernels/pyback.py exactly.

Single-threaded on purpose: accumulation order stays fixed, so repeated runs
are bit-identical for a given backend.
"""

import numpy as np

cimport cython
cimport numpy as cnp
from libc.math cimport erf, exp, log, sqrt

cnp.import_array()

BACKEND = "c"

ctypedef fused floating:
    float
    double

cdef double _SQRT1_2 = sqrt(0.5)
cdef double _INV_SQRT_2PI = 1.0 / sqrt(2.0 * 3.14159265358979323846)


cdef object _dtype_of(floating x):
    if floating is float:
        return np.float32
    return np.float64


def layer_norm_fwd(floating[:, ::1] x, floating[::1] gain, floating[::1] bias,
                   double eps):
    cdef Py_ssize_t R = x.shape[0], D = x.shape[1], r, d
    dtype = np.float32 if floating is float else np.float64
    y_arr = np.empty((R, D), dtype=dtype)
    mean_arr = np.empty(R, dtype=dtype)
    rstd_arr = np.empty(R, dtype=dtype)
    cdef floating[:, ::1] y = y_arr
    cdef floating[::1] mean = mean_arr
    cdef floating[::1] rstd = rstd_arr
    cdef double acc, mu, var, rs, c
    for r in range(R):
        acc = 0.0
        for d in range(D):
            acc += x[r, d]
        mu = acc / D
        var = 0.0
        for d in range(D):
            c = x[r, d] - mu
            var += c * c
        var /= D
        rs = 1.0 / sqrt(var + eps)
        mean[r] = <floating> mu
        rstd[r] = <floating> rs
        for d in range(D):
            y[r, d] = <floating> ((x[r, d] - mu) * rs * gain[d] + bias[d])
    return y_arr, mean_arr, rstd_arr


def layer_norm_bwd(floating[:, ::1] dy, floating[:, ::1] x, floating[::1] gain,
                   floating[::1] mean, floating[::1] rstd):
    cdef Py_ssize_t R = x.shape[0], D = x.shape[1], r, d
    dtype = np.float32 if floating is float else np.float64
    dx_arr = np.empty((R, D), dtype=dtype)
    dgain_arr = np.zeros(D, dtype=dtype)
    dbias_arr = np.zeros(D, dtype=dtype)
    cdef floating[:, ::1] dx = dx_arr
    cdef floating[::1] dgain = dgain_arr
    cdef floating[::1] dbias = dbias_arr
    cdef double xhat, dyg, s1, s2, mu, rs
    for r in range(R):
        mu = mean[r]
        rs = rstd[r]
        s1 = 0.0
        s2 = 0.0
        for d in range(D):
            xhat = (x[r, d] - mu) * rs
            dyg = dy[r, d] * gain[d]
            s1 += dyg
            s2 += dyg * xhat
            dgain[d] += <floating> (dy[r, d] * xhat)
            dbias[d] += dy[r, d]
        s1 /= D
        s2 /= D
        for d in range(D):
            xhat = (x[r, d] - mu) * rs
            dyg = dy[r, d] * gain[d]
            dx[r, d] = <floating> (rs * (dyg - s1 - xhat * s2))
    return dx_arr, dgain_arr, dbias_arr


def gelu_fwd(floating[::1] x):
    cdef Py_ssize_t n = x.shape[0], i
    dtype = np.float32 if floating is float else np.float64
    y_arr = np.empty(n, dtype=dtype)
    cdef floating[::1] y = y_arr
    cdef double v
    for i in range(n):
        v = x[i]
        y[i] = <floating> (0.5 * v * (1.0 + erf(v * _SQRT1_2)))
    return y_arr


def gelu_bwd(floating[::1] x, floating[::1] dy):
    cdef Py_ssize_t n = x.shape[0], i
    dtype = np.float32 if floating is float else np.float64
    dx_arr = np.empty(n, dtype=dtype)
    cdef floating[::1] dx = dx_arr
    cdef double v, cdf, pdf
    for i in range(n):
        v = x[i]
        cdf = 0.5 * (1.0 + erf(v * _SQRT1_2))
        pdf = _INV_SQRT_2PI * exp(-0.5 * v * v)
        dx[i] = <floating> (dy[i] * (cdf + v * pdf))
    return dx_arr


def masked_softmax_fwd(floating[:, ::1] scores, cnp.uint8_t[:, ::1] valid):
    cdef Py_ssize_t R = scores.shape[0], T = scores.shape[1], r, t
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.zeros((R, T), dtype=dtype)
    cdef floating[:, ::1] out = out_arr
    cdef double m, denom, e
    cdef bint any_valid
    for r in range(R):
        any_valid = False
        m = 0.0
        for t in range(T):
            if valid[r, t]:
                if not any_valid or scores[r, t] > m:
                    m = scores[r, t]
                any_valid = True
        if not any_valid:
            continue
        denom = 0.0
        for t in range(T):
            if valid[r, t]:
                e = exp(scores[r, t] - m)
                out[r, t] = <floating> e
                denom += e
        for t in range(T):
            if valid[r, t]:
                out[r, t] = <floating> (out[r, t] / denom)
    return out_arr


def masked_softmax_bwd(floating[:, ::1] probs, floating[:, ::1] dprobs):
    cdef Py_ssize_t R = probs.shape[0], T = probs.shape[1], r, t
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.empty((R, T), dtype=dtype)
    cdef floating[:, ::1] out = out_arr
    cdef double inner
    for r in range(R):
        inner = 0.0
        for t in range(T):
            inner += probs[r, t] * dprobs[r, t]
        for t in range(T):
            out[r, t] = <floating> (probs[r, t] * (dprobs[r, t] - inner))
    return out_arr


def softmax_xent(floating[:, ::1] logits, cnp.int64_t[::1] targets):
    cdef Py_ssize_t R = logits.shape[0], V = logits.shape[1], r, v
    cdef Py_ssize_t tgt
    dtype = np.float32 if floating is float else np.float64
    losses_arr = np.empty(R, dtype=dtype)
    dlogits_arr = np.empty((R, V), dtype=dtype)
    cdef floating[::1] losses = losses_arr
    cdef floating[:, ::1] dlogits = dlogits_arr
    cdef double m, s, e
    for r in range(R):
        tgt = targets[r]
        m = logits[r, 0]
        for v in range(1, V):
            if logits[r, v] > m:
                m = logits[r, v]
        s = 0.0
        for v in range(V):
            e = exp(logits[r, v] - m)
            dlogits[r, v] = <floating> e
            s += e
        losses[r] = <floating> ((m + log(s)) - logits[r, tgt])
        for v in range(V):
            dlogits[r, v] = <floating> (dlogits[r, v] / s)
        dlogits[r, tgt] -= <floating> 1.0
    return losses_arr, dlogits_arr


def adamw_update(floating[::1] p, floating[::1] g, floating[::1] m,
                 floating[::1] v, double lr, double beta1, double beta2,
                 double eps, double weight_decay, double bc1, double bc2):
    cdef Py_ssize_t n = p.shape[0], i
    cdef double gi, mi, vi, decay_scale
    decay_scale = 1.0 - lr * weight_decay
    for i in range(n):
        if weight_decay != 0.0:
            p[i] = <floating> (p[i] * decay_scale)
        gi = g[i]
        mi = beta1 * m[i] + (1.0 - beta1) * gi
        vi = beta2 * v[i] + (1.0 - beta2) * gi * gi
        m[i] = <floating> mi
        v[i] = <floating> vi
        p[i] = <floating> (p[i] - (lr / bc1) * (mi / (sqrt(vi / bc2) + eps)))
    return None
