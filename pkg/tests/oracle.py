"""Straight-line dense reimplementations used as test oracles."""

import math

import numpy as np


def dense_masks(topology):
    m, s = topology.n_items, topology.n_features
    mask = np.zeros((m, s))
    for i, f in topology.encoder_edges:
        mask[i, f] = 1.0
    return mask


def dense_weights(topology, edge_values):
    mat = np.zeros((topology.n_items, topology.n_features))
    for (i, f), w in zip(topology.encoder_edges, edge_values):
        mat[i, f] = w
    return mat


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def dense_forward(topology, enc, dec, x):
    W = dense_weights(topology, enc)  # items x features
    V = dense_weights(topology, dec)  # stored item x feature, used transposed
    hidden = sigmoid(np.asarray(x) @ W)
    output = sigmoid(hidden @ V.T)
    return hidden, output


def dense_loss(topology, enc, dec, target):
    _, out = dense_forward(topology, enc, dec, target)
    return 0.5 * float(np.sum((out - np.asarray(target)) ** 2))


def scalar_forward(items, features, edges, enc, dec, x):
    """Loop-by-loop version of the two layer formulas."""
    hidden = {}
    for f in features:
        z = 0.0
        for (i, g), w in zip(edges, enc):
            if g == f:
                z += w * x[items.index(i)]
        hidden[f] = 1.0 / (1.0 + math.exp(-z))
    out = []
    for i in items:
        z = 0.0
        for (j, g), v in zip(edges, dec):
            if j == i:
                z += v * hidden[g]
        out.append(1.0 / (1.0 + math.exp(-z)))
    return hidden, out


def central_differences(topology, enc, dec, target, h=1e-5):
    enc = np.array(enc, dtype=float)
    dec = np.array(dec, dtype=float)
    grads = []
    for which in (enc, dec):
        g = np.zeros_like(which)
        for e in range(which.size):
            keep = which[e]
            which[e] = keep + h
            up = dense_loss(topology, enc, dec, target)
            which[e] = keep - h
            down = dense_loss(topology, enc, dec, target)
            which[e] = keep
            g[e] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def brute_precision(top, relevant, n):
    return len(set(list(top)[:n]) & set(relevant)) / n


def brute_err_ia(top, grades, item_topics, topic_dist):
    """ERR-IA straight from its definition: sum over ranks of 1/r * sum_t P(t) prod(1-R) R."""
    total = 0.0
    for r in range(1, len(top) + 1):
        inner = 0.0
        for t, pt in topic_dist.items():
            def rel(pos):
                item = top[pos - 1]
                if t not in item_topics.get(item, ()):
                    return 0.0
                return (2 ** grades.get(item, 0) - 1) / 32.0
            prod = 1.0
            for i in range(1, r):
                prod *= 1 - rel(i)
            inner += pt * prod * rel(r)
        total += inner / r
    return total
