# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: same functions and signatures as ``_kernels_py``.

Matrix products go through the BLAS that scipy links against; the
elementwise parts (tanh, softmax rows, the AdamW moment update) are fused
loops so a training step does not allocate a temporary per numpy operation.
Arrays are row-major, so each product is issued to column-major dgemm as its
transpose.
"""

import numpy as np

from libc.math cimport exp, log, sqrt, pow
from scipy.linalg.cython_blas cimport dgemm

BACKEND = "compiled"


cdef inline void _gemm(char* ta, char* tb, int m, int n, int k, double alpha,
                       double* a, int lda, double* b, int ldb, double* c, int ldc) noexcept nogil:
    cdef double beta = 0.0
    dgemm(ta, tb, &m, &n, &k, &alpha, a, &lda, b, &ldb, &beta, c, &ldc)


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def mlp_forward(weights, biases, x):
    """Return the list of activations ``[x, h1, ..., logits]`` for a batch.

    Hidden layers use tanh, the last layer is affine.
    """
    cdef const double[:, ::1] a, w
    cdef double[:, ::1] out
    cdef const double[::1] b
    cdef Py_ssize_t i, r, c, n, fi, fo
    cdef Py_ssize_t last = len(weights) - 1
    acts = [x]
    cur = _f64(x)
    n = cur.shape[0]
    for i in range(last + 1):
        wi = _f64(weights[i])
        fi, fo = wi.shape[0], wi.shape[1]
        nxt = np.empty((n, fo), dtype=np.float64)
        if n > 0 and fo > 0:
            a = cur
            w = wi
            out = nxt
            b = _f64(biases[i])
            if fi > 0:
                _gemm(b"N", b"N", <int>fo, <int>n, <int>fi, 1.0,
                      <double*>&w[0, 0], <int>fo, <double*>&a[0, 0], <int>fi, &out[0, 0], <int>fo)
            else:
                nxt[...] = 0.0
            with nogil:
                for r in range(n):
                    for c in range(fo):
                        out[r, c] += b[c]
            if i != last:
                # numpy's vectorised tanh beats a scalar libm loop
                np.tanh(nxt, out=nxt)
        acts.append(nxt)
        cur = nxt
    return acts


def mlp_backward(weights, acts, delta):
    """Batch-mean parameter gradients given dL/dlogits per sample."""
    cdef const double[:, ::1] d, a, w, h
    cdef double[:, ::1] gw, dp
    cdef double[::1] gb
    cdef Py_ssize_t i, r, c, n, fi, fo
    cdef double inv
    L = len(weights)
    grads_w = [None] * L
    grads_b = [None] * L
    dcur = _f64(delta)
    n = dcur.shape[0]
    inv = 1.0 / n if n > 0 else 0.0
    for i in range(L - 1, -1, -1):
        wi = _f64(weights[i])
        fi, fo = wi.shape[0], wi.shape[1]
        ai = _f64(acts[i])
        gwi = np.zeros((fi, fo), dtype=np.float64)
        gbi = np.zeros(fo, dtype=np.float64)
        if n > 0 and fi > 0 and fo > 0:
            d = dcur
            a = ai
            gw = gwi
            _gemm(b"N", b"T", <int>fo, <int>fi, <int>n, inv,
                  <double*>&d[0, 0], <int>fo, <double*>&a[0, 0], <int>fi, &gw[0, 0], <int>fo)
        if n > 0 and fo > 0:
            d = dcur
            gb = gbi
            with nogil:
                for r in range(n):
                    for c in range(fo):
                        gb[c] += d[r, c]
                for c in range(fo):
                    gb[c] *= inv
        grads_w[i] = gwi
        grads_b[i] = gbi
        if i > 0:
            dprev = np.zeros((n, fi), dtype=np.float64)
            if n > 0 and fi > 0 and fo > 0:
                d = dcur
                w = wi
                dp = dprev
                h = ai
                _gemm(b"T", b"N", <int>fi, <int>n, <int>fo, 1.0,
                      <double*>&w[0, 0], <int>fo, <double*>&d[0, 0], <int>fo, &dp[0, 0], <int>fi)
                with nogil:
                    for r in range(n):
                        for c in range(fi):
                            dp[r, c] *= 1.0 - h[r, c] * h[r, c]
            dcur = dprev
    return grads_w, grads_b


def adamw_update(param, grad, m, v, double lr, double beta1, double beta2, double eps,
                 double weight_decay, step):
    """In-place AdamW update of one parameter array (decay applied first)."""
    for arr in (param, m, v):
        if arr.dtype != np.float64 or not arr.flags.c_contiguous:
            raise ValueError("adamw_update needs C-contiguous float64 state arrays")
    cdef double[::1] p = param.reshape(-1)
    cdef const double[::1] g = _f64(grad).reshape(-1)
    cdef double[::1] mm = m.reshape(-1)
    cdef double[::1] vv = v.reshape(-1)
    cdef Py_ssize_t j, size = p.shape[0]
    cdef double decay = 1.0 - lr * weight_decay
    cdef double c1 = 1.0 - pow(beta1, <double>step)
    cdef double c2 = 1.0 - pow(beta2, <double>step)
    cdef double gj
    if g.shape[0] != size or mm.shape[0] != size or vv.shape[0] != size:
        raise ValueError("adamw_update: array sizes differ")
    with nogil:
        for j in range(size):
            gj = g[j]
            p[j] *= decay
            mm[j] = beta1 * mm[j] + (1.0 - beta1) * gj
            vv[j] = beta2 * vv[j] + (1.0 - beta2) * gj * gj
            p[j] -= lr * (mm[j] / c1) / (sqrt(vv[j] / c2) + eps)


cdef void _log_softmax_into(const double[:, ::1] z, double[:, ::1] out, double scale) noexcept nogil:
    # out = log softmax(z * scale), row by row
    cdef Py_ssize_t r, c, n = z.shape[0], k = z.shape[1]
    cdef double mx, s, lse
    for r in range(n):
        mx = z[r, 0] * scale
        for c in range(1, k):
            if z[r, c] * scale > mx:
                mx = z[r, c] * scale
        s = 0.0
        for c in range(k):
            s += exp(z[r, c] * scale - mx)
        lse = mx + log(s)
        for c in range(k):
            out[r, c] = z[r, c] * scale - lse


def log_softmax_rows(z):
    zz = _f64(z)
    out = np.empty_like(zz)
    if zz.shape[0] and zz.shape[1]:
        _log_softmax_into(zz, out, 1.0)
    return out


def softmax_rows(z):
    out = log_softmax_rows(z)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t r, c
    with nogil:
        for r in range(o.shape[0]):
            for c in range(o.shape[1]):
                o[r, c] = exp(o[r, c])
    return out


def gumbel_softmax_rows(logits, noise, double tau):
    """softmax((log softmax(logits) + noise) / tau) row by row."""
    ls = log_softmax_rows(logits)
    cdef double[:, ::1] l = ls
    cdef const double[:, ::1] g = _f64(np.broadcast_to(noise, ls.shape))
    cdef Py_ssize_t r, c
    with nogil:
        for r in range(l.shape[0]):
            for c in range(l.shape[1]):
                l[r, c] = l[r, c] + g[r, c]
    out = np.empty_like(ls)
    if ls.shape[0] and ls.shape[1]:
        _log_softmax_into(l, out, 1.0 / tau)
    cdef double[:, ::1] o = out
    with nogil:
        for r in range(o.shape[0]):
            for c in range(o.shape[1]):
                o[r, c] = exp(o[r, c])
    return out


def jsd_rows(p, q):
    """Pointwise Jensen-Shannon divergence between matching rows, in nats."""
    cdef const double[:, ::1] pp = _f64(p)
    cdef const double[:, ::1] qq = _f64(q)
    cdef Py_ssize_t r, c, n = pp.shape[0], k = pp.shape[1]
    if qq.shape[0] != n or qq.shape[1] != k:
        raise ValueError("jsd_rows: shapes differ")
    out = np.zeros(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef double a, b, mid, s
    with nogil:
        for r in range(n):
            s = 0.0
            for c in range(k):
                a = pp[r, c]
                b = qq[r, c]
                mid = 0.5 * (a + b)
                if a > 0:
                    s += a * log(a / mid)
                if b > 0:
                    s += b * log(b / mid)
            o[r] = 0.5 * s
    return out
