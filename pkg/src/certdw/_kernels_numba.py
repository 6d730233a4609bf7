"""Numba-jitted hot kernels: noisy-batch label counting and SGD training.

The matrix products dispatch to BLAS through ``np.dot``; the surrounding
elementwise work (bias + relu, softmax, argmax tie-breaking, gradient
scatter) is fused into the jitted loops, which is where this path beats
the numpy fallback. Compiled artifacts are cached on disk, so only the
first call in a fresh environment pays compilation.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def linear_counts(xs, wt, b):
    logits = np.dot(xs, wt)
    k = b.shape[0]
    counts = np.zeros(k, dtype=np.int64)
    for i in range(logits.shape[0]):
        best = 0
        bestv = logits[i, 0] + b[0]
        for c in range(1, k):
            v = logits[i, c] + b[c]
            if v > bestv:
                bestv = v
                best = c
        counts[best] += 1
    return counts


@njit(cache=True)
def mlp_counts(xs, w1t, b1, w2t, b2):
    z1 = np.dot(xs, w1t)
    for i in range(z1.shape[0]):
        for j in range(z1.shape[1]):
            v = z1[i, j] + b1[j]
            z1[i, j] = v if v > 0.0 else 0.0
    logits = np.dot(z1, w2t)
    k = b2.shape[0]
    counts = np.zeros(k, dtype=np.int64)
    for i in range(logits.shape[0]):
        best = 0
        bestv = logits[i, 0] + b2[0]
        for c in range(1, k):
            v = logits[i, c] + b2[c]
            if v > bestv:
                bestv = v
                best = c
        counts[best] += 1
    return counts


@njit(cache=True)
def _softmax_inplace_with_loss(z, yb):
    # Row-wise softmax of z in place; returns summed cross-entropy
    # against the integer labels yb.
    total = 0.0
    for i in range(z.shape[0]):
        zmax = z[i, 0]
        for c in range(1, z.shape[1]):
            if z[i, c] > zmax:
                zmax = z[i, c]
        ssum = 0.0
        for c in range(z.shape[1]):
            z[i, c] = np.exp(z[i, c] - zmax)
            ssum += z[i, c]
        for c in range(z.shape[1]):
            z[i, c] /= ssum
        total += -np.log(z[i, yb[i]])
        z[i, yb[i]] -= 1.0
    return total


@njit(cache=True)
def logistic_train(xs, ys, order, wt, b, lr, batch):
    n = xs.shape[0]
    epochs = order.shape[0]
    losses = np.zeros(epochs)
    for e in range(epochs):
        total = 0.0
        for s in range(0, n, batch):
            idx = order[e, s:min(s + batch, n)]
            xb = xs[idx]
            yb = ys[idx]
            bs = idx.shape[0]
            z = np.dot(xb, wt)
            for i in range(bs):
                for c in range(b.shape[0]):
                    z[i, c] += b[c]
            total += _softmax_inplace_with_loss(z, yb)
            sc = lr / bs
            gw = np.dot(np.ascontiguousarray(xb.T), z)
            for j in range(wt.shape[0]):
                for c in range(wt.shape[1]):
                    wt[j, c] -= sc * gw[j, c]
            for c in range(b.shape[0]):
                gb = 0.0
                for i in range(bs):
                    gb += z[i, c]
                b[c] -= sc * gb
        losses[e] = total / n
    return losses


@njit(cache=True)
def mlp_train(xs, ys, order, w1t, b1, w2t, b2, lr, batch):
    n = xs.shape[0]
    epochs = order.shape[0]
    losses = np.zeros(epochs)
    for e in range(epochs):
        total = 0.0
        for s in range(0, n, batch):
            idx = order[e, s:min(s + batch, n)]
            xb = xs[idx]
            yb = ys[idx]
            bs = idx.shape[0]
            a1 = np.dot(xb, w1t)
            for i in range(bs):
                for j in range(a1.shape[1]):
                    v = a1[i, j] + b1[j]
                    a1[i, j] = v if v > 0.0 else 0.0
            z = np.dot(a1, w2t)
            for i in range(bs):
                for c in range(b2.shape[0]):
                    z[i, c] += b2[c]
            total += _softmax_inplace_with_loss(z, yb)
            dz1 = np.dot(z, np.ascontiguousarray(w2t.T))
            for i in range(bs):
                for j in range(dz1.shape[1]):
                    if a1[i, j] <= 0.0:
                        dz1[i, j] = 0.0
            sc = lr / bs
            gw2 = np.dot(np.ascontiguousarray(a1.T), z)
            for j in range(w2t.shape[0]):
                for c in range(w2t.shape[1]):
                    w2t[j, c] -= sc * gw2[j, c]
            for c in range(b2.shape[0]):
                gb = 0.0
                for i in range(bs):
                    gb += z[i, c]
                b2[c] -= sc * gb
            gw1 = np.dot(np.ascontiguousarray(xb.T), dz1)
            for j in range(w1t.shape[0]):
                for c in range(w1t.shape[1]):
                    w1t[j, c] -= sc * gw1[j, c]
            for j in range(b1.shape[0]):
                gb = 0.0
                for i in range(bs):
                    gb += dz1[i, j]
                b1[j] -= sc * gb
        losses[e] = total / n
    return losses
