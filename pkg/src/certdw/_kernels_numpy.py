"""Pure-numpy implementations of the hot kernels.

Fallback path used when numba is unavailable or ``CERTDW_BACKEND=numpy``.
Signatures and semantics match ``_kernels_numba`` exactly; training results
may differ from the numba path in the last ulp (different summation order
inside BLAS/reductions), prediction counts agree except on exact logit ties.
"""

import numpy as np


def linear_counts(xs, wt, b):
    """Label frequencies of ``argmax(xs @ wt + b)`` over a noisy batch.

    xs: (m, d) inputs, wt: (d, K) transposed weights, b: (K,) bias.
    Returns int64 counts of length K; first index wins ties.
    """
    logits = np.dot(xs, wt) + b
    labels = np.argmax(logits, axis=1)
    return np.bincount(labels, minlength=b.shape[0]).astype(np.int64)


def mlp_counts(xs, w1t, b1, w2t, b2):
    """Label frequencies for a one-hidden-layer relu MLP over a batch."""
    a1 = np.maximum(np.dot(xs, w1t) + b1, 0.0)
    logits = np.dot(a1, w2t) + b2
    labels = np.argmax(logits, axis=1)
    return np.bincount(labels, minlength=b2.shape[0]).astype(np.int64)


def logistic_train(xs, ys, order, wt, b, lr, batch):
    """Mini-batch softmax-regression SGD; mutates wt (d, K) and b in place.

    order: (epochs, n) permutation per epoch. Returns mean cross-entropy
    loss per epoch.
    """
    n = xs.shape[0]
    epochs = order.shape[0]
    losses = np.zeros(epochs)
    for e in range(epochs):
        total = 0.0
        for s in range(0, n, batch):
            idx = order[e, s:s + batch]
            xb = xs[idx]
            yb = ys[idx]
            bs = idx.shape[0]
            z = np.dot(xb, wt) + b
            z -= z.max(axis=1, keepdims=True)
            p = np.exp(z)
            p /= p.sum(axis=1, keepdims=True)
            rows = np.arange(bs)
            total += -np.log(p[rows, yb]).sum()
            p[rows, yb] -= 1.0
            sc = lr / bs
            wt -= sc * np.dot(xb.T, p)
            b -= sc * p.sum(axis=0)
        losses[e] = total / n
    return losses


def mlp_train(xs, ys, order, w1t, b1, w2t, b2, lr, batch):
    """Mini-batch SGD for a one-hidden-layer relu MLP; parameters in place.

    w1t: (d, h), b1: (h,), w2t: (h, K), b2: (K,). Returns per-epoch mean
    cross-entropy loss.
    """
    n = xs.shape[0]
    epochs = order.shape[0]
    losses = np.zeros(epochs)
    for e in range(epochs):
        total = 0.0
        for s in range(0, n, batch):
            idx = order[e, s:s + batch]
            xb = xs[idx]
            yb = ys[idx]
            bs = idx.shape[0]
            a1 = np.maximum(np.dot(xb, w1t) + b1, 0.0)
            z = np.dot(a1, w2t) + b2
            z -= z.max(axis=1, keepdims=True)
            p = np.exp(z)
            p /= p.sum(axis=1, keepdims=True)
            rows = np.arange(bs)
            total += -np.log(p[rows, yb]).sum()
            p[rows, yb] -= 1.0
            dz1 = np.dot(p, w2t.T) * (a1 > 0.0)
            sc = lr / bs
            w2t -= sc * np.dot(a1.T, p)
            b2 -= sc * p.sum(axis=0)
            w1t -= sc * np.dot(xb.T, dz1)
            b1 -= sc * dz1.sum(axis=0)
        losses[e] = total / n
    return losses
