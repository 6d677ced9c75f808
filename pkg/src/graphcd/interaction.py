"""Cross-graph message passing between the two time phases.

Both vertex-feature matrices are transformed into query/key/value
graphs, the phase queries are concatenated into one unified query, and
row-stochastic inter-graph affinities transport value features across
phases with residual adds. A one-layer graph convolution with a
rectifier then refines each phase.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ops import DTYPE, softmax_last, softmax_last_backward
from .projection import GraphEmbedding


@dataclass
class LinearMap:
    w: np.ndarray  # [d_in, d_out]
    b: np.ndarray  # [d_out]


@dataclass
class InteractionParams:
    """Six q/k/v transforms (queries map d -> d/2) and two GCN weights.

    Key transforms carry no bias: a per-feature shift of the keys adds a
    row-constant to the attention logits and cancels in the row softmax.
    """

    query_1: LinearMap
    query_2: LinearMap
    key_w1: np.ndarray  # [d, d]
    key_w2: np.ndarray  # [d, d]
    value_1: LinearMap
    value_2: LinearMap
    gcn_w1: np.ndarray  # [d, d]
    gcn_w2: np.ndarray  # [d, d]

    def __post_init__(self):
        d = self.key_w1.shape[0]
        if d % 2:
            raise ValueError(f"feature dimension must be even, got {d}")
        if self.query_1.w.shape != (d, d // 2):
            raise ValueError(
                f"query transforms must map {d} -> {d // 2}, got {self.query_1.w.shape}"
            )
        for arr in self.tensors().values():
            if not np.isfinite(arr).all():
                raise ValueError("interaction parameters contain non-finite values")

    @property
    def feature_dim(self) -> int:
        return self.key_w1.shape[0]

    def tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for name in ("query_1", "query_2", "value_1", "value_2"):
            lin: LinearMap = getattr(self, name)
            out[f"{name}.w"] = lin.w
            out[f"{name}.b"] = lin.b
        out["key_w1"] = self.key_w1
        out["key_w2"] = self.key_w2
        out["gcn_w1"] = self.gcn_w1
        out["gcn_w2"] = self.gcn_w2
        return out


def init_interaction_params(feature_dim: int, rng: np.random.Generator) -> InteractionParams:
    if feature_dim % 2:
        raise ValueError(f"feature dimension must be even, got {feature_dim}")
    std = 1.0 / np.sqrt(feature_dim)

    def lin(dout):
        return LinearMap(
            w=rng.normal(0.0, std, size=(feature_dim, dout)).astype(DTYPE),
            b=np.zeros(dout, dtype=DTYPE),
        )

    def mat():
        return rng.normal(0.0, std, size=(feature_dim, feature_dim)).astype(DTYPE)

    return InteractionParams(
        query_1=lin(feature_dim // 2), query_2=lin(feature_dim // 2),
        key_w1=mat(), key_w2=mat(),
        value_1=lin(feature_dim), value_2=lin(feature_dim),
        gcn_w1=mat(), gcn_w2=mat(),
    )


# ---------------------------------------------------------------------------
# single-sample operations
# ---------------------------------------------------------------------------

def qkv_transform(z: np.ndarray, params: InteractionParams, phase: int):
    """Affine query/key/value images of one phase's vertex features."""
    if phase not in (1, 2):
        raise ValueError(f"phase must be 1 or 2, got {phase}")
    z = np.asarray(z, dtype=DTYPE)
    if z.shape[-1] != params.feature_dim:
        raise ValueError(
            f"vertex features have d = {z.shape[-1]}, parameters expect "
            f"{params.feature_dim}"
        )
    q = getattr(params, f"query_{phase}")
    kw = getattr(params, f"key_w{phase}")
    v = getattr(params, f"value_{phase}")
    return z @ q.w + q.b, z @ kw, z @ v.w + v.b


def unify_queries(z_q1: np.ndarray, z_q2: np.ndarray) -> np.ndarray:
    """Concatenate the two phase queries along the feature axis."""
    if z_q1.shape != z_q2.shape:
        raise ValueError(f"query shapes differ: {z_q1.shape} vs {z_q2.shape}")
    return np.concatenate([z_q1, z_q2], axis=-1)


def inter_affinity(z_q: np.ndarray, z_k_target: np.ndarray) -> np.ndarray:
    """Row-stochastic attention of unified queries over target keys."""
    if z_q.shape[-1] != z_k_target.shape[-1]:
        raise ValueError(
            f"query dim {z_q.shape[-1]} != key dim {z_k_target.shape[-1]}"
        )
    return softmax_last(z_q @ np.swapaxes(z_k_target, -1, -2))


def cross_message(a_inter: np.ndarray, z_v_source: np.ndarray,
                  z_residual: np.ndarray) -> np.ndarray:
    """Transport source values through the affinity, plus the residual."""
    return a_inter @ z_v_source + z_residual


def intra_gcn(z_prime: np.ndarray, a_inter: np.ndarray,
              gcn_weight: np.ndarray) -> np.ndarray:
    """One rectified graph-convolution step over the given affinity."""
    return np.maximum(a_inter @ z_prime @ gcn_weight, 0.0)


def interact(g1: GraphEmbedding, g2: GraphEmbedding, params: InteractionParams):
    """Full interaction of two graph embeddings -> evolved vertex features."""
    z1 = np.asarray(g1.vertex_features, dtype=DTYPE)
    z2 = np.asarray(g2.vertex_features, dtype=DTYPE)
    if z1.shape != z2.shape:
        raise ValueError(
            f"graph embeddings must share K and d: {z1.shape} vs {z2.shape}"
        )
    if z1.shape[-1] != params.feature_dim:
        raise ValueError(
            f"vertex features have d = {z1.shape[-1]}, parameters expect "
            f"{params.feature_dim}"
        )
    zt1, zt2, _ = interact_batch(z1[None], z2[None], params)
    return zt1[0], zt2[0]


# ---------------------------------------------------------------------------
# batched core: z1, z2 are [B, K, d]
# ---------------------------------------------------------------------------

def interact_batch(z1: np.ndarray, z2: np.ndarray, params: InteractionParams):
    p = params
    q1 = z1 @ p.query_1.w + p.query_1.b
    q2 = z2 @ p.query_2.w + p.query_2.b
    k1 = z1 @ p.key_w1
    k2 = z2 @ p.key_w2
    v1 = z1 @ p.value_1.w + p.value_1.b
    v2 = z2 @ p.value_2.w + p.value_2.b
    zq = np.concatenate([q1, q2], axis=-1)
    a12 = softmax_last(zq @ np.swapaxes(k2, -1, -2))
    a21 = softmax_last(zq @ np.swapaxes(k1, -1, -2))
    z1p = a21 @ v1 + z1
    z2p = a12 @ v2 + z2
    m1 = a21 @ z1p
    m2 = a12 @ z2p
    h1 = m1 @ p.gcn_w1
    h2 = m2 @ p.gcn_w2
    zt1 = np.maximum(h1, 0.0)
    zt2 = np.maximum(h2, 0.0)
    cache = (z1, z2, zq, k1, k2, v1, v2, a12, a21, z1p, z2p, m1, m2, h1, h2)
    return zt1, zt2, cache


def interact_backward_batch(dzt1, dzt2, cache, params: InteractionParams):
    """Returns (dz1, dz2, grads) with grads keyed like params.tensors()."""
    p = params
    z1, z2, zq, k1, k2, v1, v2, a12, a21, z1p, z2p, m1, m2, h1, h2 = cache
    half = p.feature_dim // 2

    dh1 = dzt1 * (h1 > 0)
    dh2 = dzt2 * (h2 > 0)
    dw_gcn1 = np.einsum("bkc,bkd->cd", m1, dh1)
    dw_gcn2 = np.einsum("bkc,bkd->cd", m2, dh2)
    dm1 = dh1 @ p.gcn_w1.T
    dm2 = dh2 @ p.gcn_w2.T

    da21 = dm1 @ np.swapaxes(z1p, -1, -2)
    da12 = dm2 @ np.swapaxes(z2p, -1, -2)
    dz1p = np.swapaxes(a21, -1, -2) @ dm1
    dz2p = np.swapaxes(a12, -1, -2) @ dm2

    da21 = da21 + dz1p @ np.swapaxes(v1, -1, -2)
    da12 = da12 + dz2p @ np.swapaxes(v2, -1, -2)
    dv1 = np.swapaxes(a21, -1, -2) @ dz1p
    dv2 = np.swapaxes(a12, -1, -2) @ dz2p
    dz1 = dz1p.copy()
    dz2 = dz2p.copy()

    ds21 = softmax_last_backward(da21, a21)
    ds12 = softmax_last_backward(da12, a12)
    dzq = ds21 @ k1 + ds12 @ k2
    dk1 = np.swapaxes(ds21, -1, -2) @ zq
    dk2 = np.swapaxes(ds12, -1, -2) @ zq
    dq1 = dzq[..., :half]
    dq2 = dzq[..., half:]

    grads = {"gcn_w1": dw_gcn1, "gcn_w2": dw_gcn2}
    for name, src, dout in (
        ("query_1", z1, dq1), ("query_2", z2, dq2),
        ("value_1", z1, dv1), ("value_2", z2, dv2),
    ):
        grads[f"{name}.w"] = np.einsum("bkc,bkd->cd", src, dout)
        grads[f"{name}.b"] = dout.sum(axis=(0, 1))
    grads["key_w1"] = np.einsum("bkc,bkd->cd", z1, dk1)
    grads["key_w2"] = np.einsum("bkc,bkd->cd", z2, dk2)

    dz1 = dz1 + dq1 @ p.query_1.w.T + dk1 @ p.key_w1.T + dv1 @ p.value_1.w.T
    dz2 = dz2 + dq2 @ p.query_2.w.T + dk2 @ p.key_w2.T + dv2 @ p.value_2.w.T
    return dz1, dz2, grads
