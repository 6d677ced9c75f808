"""Projection of a feature map onto a small set of learned graph vertices.

Each pixel feature is softly assigned to K anchor vectors using a
scaled-distance softmax; each vertex then aggregates the normalized
average of its residuals, and vertex similarity is the Gram matrix of
the unit-norm vertex features.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoder import FeatureMap
from .ops import DTYPE, sigmoid, softmax_last, softmax_last_backward

MASS_FLOOR = 1e-12   # below this total assignment a vertex is dropped
NORM_FLOOR = 1e-8    # below this norm a vertex row is returned as zeros


@dataclass
class ProjectionParams:
    """Anchor vectors [K, d] and per-anchor scale logits [K, d].

    The effective scales are sigmoid(scale_logits), elementwise in (0, 1).
    """

    anchors: np.ndarray
    scale_logits: np.ndarray

    def __post_init__(self):
        if self.anchors.shape != self.scale_logits.shape:
            raise ValueError(
                f"anchors {self.anchors.shape} and scale_logits "
                f"{self.scale_logits.shape} must have equal shapes"
            )
        if self.anchors.ndim != 2 or self.anchors.shape[0] < 1:
            raise ValueError("anchors must be [K, d] with K >= 1")

    @property
    def num_vertices(self) -> int:
        return self.anchors.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.anchors.shape[1]


@dataclass
class GraphEmbedding:
    """Vertex features Z [K, d], affinity A [K, K], assignment Q [N, K].

    ``empty_vertices`` flags vertices whose total soft assignment fell
    below the numerical floor; their feature rows are all zeros.
    """

    vertex_features: np.ndarray
    affinity: np.ndarray
    assignment: np.ndarray
    empty_vertices: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.empty_vertices is None:
            self.empty_vertices = np.zeros(self.vertex_features.shape[0], dtype=bool)


def init_projection_params(num_vertices: int, feature_dim: int,
                           rng: np.random.Generator) -> ProjectionParams:
    """Anchors ~ N(0, 1/d) keep initial assignments diffuse; scales start at 0.5."""
    anchors = rng.normal(0.0, 1.0 / np.sqrt(feature_dim),
                         size=(num_vertices, feature_dim)).astype(DTYPE)
    scale_logits = np.zeros((num_vertices, feature_dim), dtype=DTYPE)
    return ProjectionParams(anchors=anchors, scale_logits=scale_logits)


def _pixels(x) -> np.ndarray:
    """[d, h, w] (or FeatureMap) -> pixel-major [N, d] with N = h*w."""
    data = x.data if isinstance(x, FeatureMap) else np.asarray(x, dtype=DTYPE)
    if data.ndim != 3:
        raise ValueError(f"expected a [d, h, w] feature map, got shape {data.shape}")
    d = data.shape[0]
    return data.reshape(d, -1).T


def _check_features(xf: np.ndarray, params: ProjectionParams):
    if xf.shape[-1] != params.feature_dim:
        raise ValueError(
            f"feature dimension {xf.shape[-1]} does not match anchors "
            f"with d = {params.feature_dim}"
        )
    if not np.isfinite(xf).all():
        raise ValueError("feature map contains non-finite values")


# ---------------------------------------------------------------------------
# batched kernels: xf is [B, N, d]
# ---------------------------------------------------------------------------

def soft_assign_batch(xf: np.ndarray, params: ProjectionParams):
    """Softmax over vertices of -||(x - w_k)/sigma_k||^2 / 2, per pixel."""
    sig = sigmoid(params.scale_logits)                    # [K, d]
    inv2 = 1.0 / (sig * sig)                              # [K, d]
    w = params.anchors
    # ||(x - w)/sigma||^2 expanded so no [B, N, K, d] tensor is built
    dist = (
        (xf * xf) @ inv2.T
        - 2.0 * (xf @ (w * inv2).T)
        + ((w * w) * inv2).sum(axis=1)
    )
    q = softmax_last(-0.5 * dist)
    cache = (xf, q, w, sig, inv2)
    return q, cache


def encode_vertices_batch(xf: np.ndarray, q: np.ndarray, params: ProjectionParams):
    """Unit-normalized, scale-divided weighted residual means per vertex."""
    sig = sigmoid(params.scale_logits)
    w = params.anchors
    mass = q.sum(axis=-2)                                     # [B, K]
    u = np.swapaxes(q, -1, -2) @ xf - mass[..., None] * w     # [B, K, d]
    live_mass = mass >= MASS_FLOOR
    safe_mass = np.where(live_mass, mass, 1.0)
    v = u / safe_mass[..., None]
    z_raw = v / sig
    norm = np.linalg.norm(z_raw, axis=-1)                     # [B, K]
    live = live_mass & (norm >= NORM_FLOOR)
    safe_norm = np.where(live, norm, 1.0)
    z = np.where(live[..., None], z_raw / safe_norm[..., None], 0.0)
    empty = ~live_mass
    cache = (xf, q, w, sig, mass, u, v, norm, live, z)
    return z, empty, cache


def affinity_batch(z: np.ndarray) -> np.ndarray:
    return z @ np.swapaxes(z, -1, -2)


def project_batch(x: np.ndarray, params: ProjectionParams):
    """[B, d, h, w] -> (q [B,N,K], z [B,K,d], a [B,K,K], empty, cache)."""
    b, d, h, wid = x.shape
    xf = x.transpose(0, 2, 3, 1).reshape(b, h * wid, d)
    q, q_cache = soft_assign_batch(xf, params)
    z, empty, v_cache = encode_vertices_batch(xf, q, params)
    a = affinity_batch(z)
    cache = (q_cache, v_cache, z, (b, d, h, wid))
    return q, z, a, empty, cache


def project_backward_batch(dq_ext, dz_ext, da, cache):
    """Gradients of (Q, Z, A) outputs back to the feature map and params.

    Any of the output gradients may be None. Returns
    (dx [B,d,h,w], danchors, dscale_logits).
    """
    q_cache, v_cache, z, xshape = cache
    xf, q, w, sig, mass, u, v, norm, live, _ = v_cache
    _, _, _, _, inv2 = q_cache
    b, d, h, wid = xshape
    k = w.shape[0]

    dz = np.zeros_like(z)
    if dz_ext is not None:
        dz = dz + dz_ext
    if da is not None:
        dz = dz + (da + np.swapaxes(da, -1, -2)) @ z

    # unit normalization: z = z_raw / ||z_raw||, dead rows pass nothing
    safe_norm = np.where(live, norm, 1.0)
    zdot = (z * dz).sum(axis=-1, keepdims=True)
    dz_raw = np.where(live[..., None], (dz - z * zdot) / safe_norm[..., None], 0.0)

    # z_raw = v / sigma
    dv = dz_raw / sig
    dsig = -(dz_raw * v / (sig * sig)).sum(axis=0)            # [K, d]

    # v = u / mass
    safe_mass = np.where(live, mass, 1.0)
    du = np.where(live[..., None], dv / safe_mass[..., None], 0.0)
    dmass = np.where(live, -(dv * u).sum(axis=-1) / (safe_mass * safe_mass), 0.0)

    # u = Q^T X - mass * w
    dq = xf @ np.swapaxes(du, -1, -2)                         # [B, N, K]
    dxf = q @ du                                              # [B, N, d]
    dmass = dmass - (du * w).sum(axis=-1)
    dw = -(mass[..., None] * du).sum(axis=0)                  # [K, d]

    # mass = sum_n q
    dq = dq + dmass[:, None, :]
    if dq_ext is not None:
        dq = dq + dq_ext

    dlogit = softmax_last_backward(dq, q)
    ddist = -0.5 * dlogit                                     # [B, N, K]

    # dist = sum_c (x - w)^2 / sigma^2, expanded form
    dxf = dxf + 2.0 * xf * (ddist @ inv2) - 2.0 * (ddist @ (w * inv2))
    t0 = ddist.sum(axis=(0, 1))                               # [K]
    t1 = np.einsum("bnk,bnc->kc", ddist, xf)
    t2 = np.einsum("bnk,bnc->kc", ddist, xf * xf)
    dw = dw + (-2.0 * inv2) * (t1 - w * t0[:, None])
    dinv2 = t2 - 2.0 * w * t1 + (w * w) * t0[:, None]
    dsig = dsig + dinv2 * (-2.0 / (sig ** 3))

    dscale_logits = dsig * sig * (1.0 - sig)
    dx = np.swapaxes(dxf, -1, -2).reshape(b, d, h, wid)
    return dx, dw, dscale_logits


# ---------------------------------------------------------------------------
# single-sample API
# ---------------------------------------------------------------------------

def soft_assign(x, params: ProjectionParams) -> np.ndarray:
    """Row-stochastic assignment [N, K] of pixels to vertices."""
    xf = _pixels(x)
    _check_features(xf, params)
    q, _ = soft_assign_batch(xf[None], params)
    return q[0]

def encode_vertices(x, q: np.ndarray, params: ProjectionParams) -> np.ndarray:
    """Vertex feature matrix [K, d] with unit-norm (or zero) rows."""
    xf = _pixels(x)
    _check_features(xf, params)
    z, _, _ = encode_vertices_batch(xf[None], np.asarray(q, dtype=DTYPE)[None], params)
    return z[0]


def affinity(z: np.ndarray) -> np.ndarray:
    """Vertex Gram matrix Z Z^T, symmetric with entries in [-1, 1]."""
    z = np.asarray(z, dtype=DTYPE)
    return z @ z.T


def project(x, params: ProjectionParams) -> GraphEmbedding:
    """Full projection of one [d, h, w] feature map into graph space."""
    xf = _pixels(x)
    _check_features(xf, params)
    q, _ = soft_assign_batch(xf[None], params)
    z, empty, _ = encode_vertices_batch(xf[None], q, params)
    return GraphEmbedding(
        vertex_features=z[0],
        affinity=affinity_batch(z)[0],
        assignment=q[0],
        empty_vertices=empty[0],
    )
