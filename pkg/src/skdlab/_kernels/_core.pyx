# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: batched MLP forward and backward passes.

At desk scale (hidden sizes of tens, vocabularies under 64) NumPy's per-call
overhead dominates the arithmetic, so plain C loops win. Semantics match
``fallback.py``; tiny last-ulp differences from summation order are allowed.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

from libc.math cimport tanh


def mlp_forward(cnp.ndarray[cnp.float64_t, ndim=2] emb,
                cnp.ndarray[cnp.float64_t, ndim=2] w1,
                cnp.ndarray[cnp.float64_t, ndim=1] b1,
                cnp.ndarray[cnp.float64_t, ndim=2] w2,
                cnp.ndarray[cnp.float64_t, ndim=1] b2,
                cnp.ndarray[cnp.int64_t, ndim=2] ctx):
    """Logits for a batch of fixed-width token contexts. Mirrors fallback."""
    cdef Py_ssize_t n = ctx.shape[0]
    cdef Py_ssize_t c = ctx.shape[1]
    cdef Py_ssize_t de = emb.shape[1]
    cdef Py_ssize_t dh = w1.shape[1]
    cdef Py_ssize_t v = w2.shape[1]
    cdef Py_ssize_t d_in = c * de

    cdef cnp.ndarray[cnp.float64_t, ndim=2] logits = np.empty((n, v))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] x = np.empty(d_in)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] h = np.empty(dh)

    cdef double[:, :] emb_v = emb, w1_v = w1, w2_v = w2, out_v = logits
    cdef double[:] b1_v = b1, b2_v = b2, x_v = x, h_v = h
    cdef long[:, :] ctx_v = ctx

    cdef Py_ssize_t i, j, k, t, tok
    cdef double acc

    for i in range(n):
        for t in range(c):
            tok = ctx_v[i, t]
            for k in range(de):
                x_v[t * de + k] = emb_v[tok, k]
        for j in range(dh):
            acc = b1_v[j]
            for k in range(d_in):
                acc += x_v[k] * w1_v[k, j]
            h_v[j] = tanh(acc)
        for j in range(v):
            acc = b2_v[j]
            for k in range(dh):
                acc += h_v[k] * w2_v[k, j]
            out_v[i, j] = acc
    return logits


def mlp_backward(cnp.ndarray[cnp.float64_t, ndim=2] emb,
                 cnp.ndarray[cnp.float64_t, ndim=2] w1,
                 cnp.ndarray[cnp.float64_t, ndim=1] b1,
                 cnp.ndarray[cnp.float64_t, ndim=2] w2,
                 cnp.ndarray[cnp.float64_t, ndim=1] b2,
                 cnp.ndarray[cnp.int64_t, ndim=2] ctx,
                 cnp.ndarray[cnp.float64_t, ndim=2] dlogits):
    """Parameter gradients given upstream d(loss)/d(logits). Mirrors fallback."""
    cdef Py_ssize_t n = ctx.shape[0]
    cdef Py_ssize_t c = ctx.shape[1]
    cdef Py_ssize_t de = emb.shape[1]
    cdef Py_ssize_t dh = w1.shape[1]
    cdef Py_ssize_t v = w2.shape[1]
    cdef Py_ssize_t d_in = c * de

    cdef cnp.ndarray[cnp.float64_t, ndim=2] demb = np.zeros_like(emb)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] dw1 = np.zeros_like(w1)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] db1 = np.zeros_like(b1)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] dw2 = np.zeros_like(w2)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] db2 = np.zeros_like(b2)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] x = np.empty(d_in)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] h = np.empty(dh)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] da = np.empty(dh)

    cdef double[:, :] emb_v = emb, w1_v = w1, w2_v = w2, dl_v = dlogits
    cdef double[:, :] demb_v = demb, dw1_v = dw1, dw2_v = dw2
    cdef double[:] b1_v = b1, db1_v = db1, db2_v = db2
    cdef double[:] x_v = x, h_v = h, da_v = da
    cdef long[:, :] ctx_v = ctx

    cdef Py_ssize_t i, j, k, t, tok
    cdef double acc, g

    for i in range(n):
        for t in range(c):
            tok = ctx_v[i, t]
            for k in range(de):
                x_v[t * de + k] = emb_v[tok, k]
        for j in range(dh):
            acc = b1_v[j]
            for k in range(d_in):
                acc += x_v[k] * w1_v[k, j]
            h_v[j] = tanh(acc)

        # output layer
        for j in range(v):
            g = dl_v[i, j]
            db2_v[j] += g
            for k in range(dh):
                dw2_v[k, j] += h_v[k] * g
        # back through tanh
        for k in range(dh):
            acc = 0.0
            for j in range(v):
                acc += dl_v[i, j] * w2_v[k, j]
            da_v[k] = acc * (1.0 - h_v[k] * h_v[k])
        # hidden layer
        for k in range(dh):
            g = da_v[k]
            db1_v[k] += g
            for j in range(d_in):
                dw1_v[j, k] += x_v[j] * g
        # embeddings
        for t in range(c):
            tok = ctx_v[i, t]
            for k in range(de):
                acc = 0.0
                for j in range(dh):
                    acc += da_v[j] * w1_v[t * de + k, j]
                demb_v[tok, k] += acc

    return demb, dw1, db1, dw2, db2
