"""Scalar-loop reference implementations of the graph kernels.

These share no code with the vectorized production paths: every sum is
an explicit Python loop. They exist purely to cross-check projection
and interaction on small instances and are never used in training.
"""

from __future__ import annotations

import math

import numpy as np

from .encoder import FeatureMap
from .interaction import InteractionParams
from .projection import GraphEmbedding, ProjectionParams


def naive_project(x, params: ProjectionParams) -> GraphEmbedding:
    data = x.data if isinstance(x, FeatureMap) else np.asarray(x, dtype=np.float64)
    d, h, w = data.shape
    n = h * w
    k = params.anchors.shape[0]
    anchors = params.anchors
    sig = np.empty_like(params.scale_logits)
    for a in range(k):
        for c in range(d):
            sig[a, c] = 1.0 / (1.0 + math.exp(-params.scale_logits[a, c]))

    pixels = np.empty((n, d))
    for i in range(h):
        for j in range(w):
            for c in range(d):
                pixels[i * w + j, c] = data[c, i, j]

    logits = np.empty((n, k))
    for p in range(n):
        for a in range(k):
            acc = 0.0
            for c in range(d):
                r = (pixels[p, c] - anchors[a, c]) / sig[a, c]
                acc += r * r
            logits[p, a] = -acc / 2.0

    q = np.empty((n, k))
    for p in range(n):
        peak = max(logits[p, a] for a in range(k))
        denom = 0.0
        for a in range(k):
            denom += math.exp(logits[p, a] - peak)
        for a in range(k):
            q[p, a] = math.exp(logits[p, a] - peak) / denom

    z = np.zeros((k, d))
    empty = np.zeros(k, dtype=bool)
    for a in range(k):
        mass = 0.0
        for p in range(n):
            mass += q[p, a]
        if mass < 1e-12:
            empty[a] = True
            continue
        row = [0.0] * d
        for c in range(d):
            acc = 0.0
            for p in range(n):
                acc += q[p, a] * (pixels[p, c] - anchors[a, c])
            row[c] = (acc / mass) / sig[a, c]
        norm = math.sqrt(sum(v * v for v in row))
        if norm < 1e-8:
            continue
        for c in range(d):
            z[a, c] = row[c] / norm

    aff = np.empty((k, k))
    for a in range(k):
        for b in range(k):
            acc = 0.0
            for c in range(d):
                acc += z[a, c] * z[b, c]
            aff[a, b] = acc

    return GraphEmbedding(vertex_features=z, affinity=aff, assignment=q,
                          empty_vertices=empty)


def _affine(z, w, b):
    k, din = z.shape
    dout = w.shape[1]
    out = np.empty((k, dout))
    for i in range(k):
        for j in range(dout):
            acc = 0.0 if b is None else b[j]
            for c in range(din):
                acc += z[i, c] * w[c, j]
            out[i, j] = acc
    return out


def _row_softmax(s):
    k, m = s.shape
    out = np.empty((k, m))
    for i in range(k):
        peak = max(s[i, j] for j in range(m))
        denom = 0.0
        for j in range(m):
            denom += math.exp(s[i, j] - peak)
        for j in range(m):
            out[i, j] = math.exp(s[i, j] - peak) / denom
    return out


def _matmul(a, b):
    n, m = a.shape
    m2, p = b.shape
    out = np.empty((n, p))
    for i in range(n):
        for j in range(p):
            acc = 0.0
            for c in range(m):
                acc += a[i, c] * b[c, j]
            out[i, j] = acc
    return out


def naive_interact(g1, g2, params: InteractionParams):
    z1 = np.asarray(g1.vertex_features if isinstance(g1, GraphEmbedding) else g1)
    z2 = np.asarray(g2.vertex_features if isinstance(g2, GraphEmbedding) else g2)
    k, d = z1.shape

    q1 = _affine(z1, params.query_1.w, params.query_1.b)
    q2 = _affine(z2, params.query_2.w, params.query_2.b)
    k1 = _affine(z1, params.key_w1, None)
    k2 = _affine(z2, params.key_w2, None)
    v1 = _affine(z1, params.value_1.w, params.value_1.b)
    v2 = _affine(z2, params.value_2.w, params.value_2.b)

    zq = np.empty((k, d))
    half = d // 2
    for i in range(k):
        for c in range(half):
            zq[i, c] = q1[i, c]
            zq[i, half + c] = q2[i, c]

    a12 = _row_softmax(_matmul(zq, k2.T))
    a21 = _row_softmax(_matmul(zq, k1.T))

    z1p = _matmul(a21, v1)
    z2p = _matmul(a12, v2)
    for i in range(k):
        for c in range(d):
            z1p[i, c] += z1[i, c]
            z2p[i, c] += z2[i, c]

    h1 = _matmul(_matmul(a21, z1p), params.gcn_w1)
    h2 = _matmul(_matmul(a12, z2p), params.gcn_w2)
    for i in range(k):
        for c in range(d):
            h1[i, c] = max(h1[i, c], 0.0)
            h2[i, c] = max(h2[i, c], 0.0)
    return h1, h2
