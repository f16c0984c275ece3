"""Dense multi-head attention in plain numpy with hand-derived gradients.

Used only as an oracle against :func:`lgstime.attention.multi_head_forward`
when the band covers the whole sequence.  It shares no code with the tape.
"""

from __future__ import annotations

import numpy as np


def dense_attention(X, W_Q, W_K, W_V, W_O, heads: int, upstream=None):
    """Unmasked attention output and gradients of ``sum(upstream * output)``.

    ``X`` is (n, d_model).  Returns ``(output, grads)`` where ``grads`` maps
    "X", "W_Q", "W_K", "W_V", "W_O" to arrays.
    """
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    dh = d // heads
    G = np.ones((n, d)) if upstream is None else np.asarray(upstream, dtype=np.float64)
    scale = 1.0 / np.sqrt(dh)

    Q = np.einsum("nd,de->ne", X, W_Q)
    K = np.einsum("nd,de->ne", X, W_K)
    V = np.einsum("nd,de->ne", X, W_V)
    H = np.empty((n, d))
    cache = []
    for i in range(heads):
        blk = slice(i * dh, (i + 1) * dh)
        S = np.einsum("jc,kc->jk", Q[:, blk], K[:, blk]) * scale
        E = np.exp(S - S.max(axis=1, keepdims=True))
        A = E / E.sum(axis=1, keepdims=True)
        H[:, blk] = np.einsum("jk,kc->jc", A, V[:, blk])
        cache.append(A)
    out = np.einsum("nd,de->ne", H, W_O)

    gW_O = np.einsum("nd,ne->de", H, G)
    gH = np.einsum("ne,de->nd", G, W_O)
    gQ = np.zeros_like(Q)
    gK = np.zeros_like(K)
    gV = np.zeros_like(V)
    for i, A in enumerate(cache):
        blk = slice(i * dh, (i + 1) * dh)
        gA = np.einsum("jc,kc->jk", gH[:, blk], V[:, blk])
        gV[:, blk] = np.einsum("jk,jc->kc", A, gH[:, blk])
        gS = A * (gA - np.einsum("jk,jk->j", gA, A)[:, None])
        gQ[:, blk] = np.einsum("jk,kc->jc", gS, K[:, blk]) * scale
        gK[:, blk] = np.einsum("jk,jc->kc", gS, Q[:, blk]) * scale
    grads = {
        "W_Q": np.einsum("nd,ne->de", X, gQ),
        "W_K": np.einsum("nd,ne->de", X, gK),
        "W_V": np.einsum("nd,ne->de", X, gV),
        "W_O": gW_O,
        "X": gQ @ W_Q.T + gK @ W_K.T + gV @ W_V.T,
    }
    return out, grads
