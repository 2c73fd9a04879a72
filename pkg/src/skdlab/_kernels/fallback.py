"""Pure-NumPy implementations of the hot kernels.

Reference semantics for the compiled core in ``_core.pyx``; selected at
import time when the extension is unavailable or ``SKDLAB_PURE=1``.
"""

import numpy as np


def mlp_forward(emb, w1, b1, w2, b2, ctx):
    """Logits for a batch of fixed-width token contexts.

    ctx is (n, c) int64; rows index the embedding table. Returns (n, |V|).
    """
    e = emb[ctx].reshape(ctx.shape[0], -1)
    h = np.tanh(e @ w1 + b1)
    return h @ w2 + b2


def mlp_backward(emb, w1, b1, w2, b2, ctx, dlogits):
    """Parameter gradients given upstream d(loss)/d(logits).

    Recomputes the forward pass internally; returns arrays shaped like
    (emb, w1, b1, w2, b2).
    """
    n, c = ctx.shape
    e = emb[ctx].reshape(n, -1)
    h = np.tanh(e @ w1 + b1)

    dw2 = h.T @ dlogits
    db2 = dlogits.sum(axis=0)
    dh = dlogits @ w2.T
    da = dh * (1.0 - h * h)
    dw1 = e.T @ da
    db1 = da.sum(axis=0)
    de = (da @ w1.T).reshape(n, c, emb.shape[1])

    demb = np.zeros_like(emb)
    np.add.at(demb, ctx, de)
    return demb, dw1, db1, dw2, db2
