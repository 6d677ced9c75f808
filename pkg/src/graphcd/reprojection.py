"""Back-projection of evolved vertex features and the change-probability head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .encoder import FeatureMap
from .ops import DTYPE, sigmoid


@dataclass
class ChangeMap:
    """Per-pixel change probabilities (sigmoid of logits) at input resolution."""

    probabilities: np.ndarray  # [H, W] in [0, 1]
    logits: np.ndarray         # [H, W]


@dataclass
class HeadParams:
    """1x1 convolution collapsing the fused feature difference to one logit."""

    w: np.ndarray  # [d]
    b: np.ndarray  # [1]


def init_head_params(feature_dim: int, rng: np.random.Generator) -> HeadParams:
    std = 1.0 / np.sqrt(feature_dim)
    return HeadParams(
        w=rng.normal(0.0, std, size=feature_dim).astype(DTYPE),
        b=np.zeros(1, dtype=DTYPE),
    )


def reproject(q: np.ndarray, z_tilde: np.ndarray, x):
    """Scatter vertex features back to pixels through Q, plus the residual.

    ``q`` is [N, K], ``z_tilde`` is [K, d], and ``x`` the original
    [d, h, w] feature map (or FeatureMap) with N = h*w.
    """
    fm = isinstance(x, FeatureMap)
    data = x.data if fm else np.asarray(x, dtype=DTYPE)
    d, h, w = data.shape
    q = np.asarray(q, dtype=DTYPE)
    z_tilde = np.asarray(z_tilde, dtype=DTYPE)
    if q.shape[0] != h * w:
        raise ValueError(f"assignment rows {q.shape[0]} != pixels {h * w}")
    if q.shape[1] != z_tilde.shape[0] or z_tilde.shape[1] != d:
        raise ValueError(
            f"assignment {q.shape} and vertex features {z_tilde.shape} do not "
            f"conform with d = {d}"
        )
    out = (q @ z_tilde).T.reshape(d, h, w) + data
    return FeatureMap(data=out, stride=x.stride) if fm else out


def reproject_batch(q, z_tilde, x):
    """[B,N,K] x [B,K,d] scattered onto [B,d,h,w] with a residual add."""
    b, d, h, w = x.shape
    add = (q @ z_tilde).transpose(0, 2, 1).reshape(b, d, h, w)
    return x + add


def reproject_backward_batch(grad, q, z_tilde, xshape):
    """Returns (dq, dz_tilde, dx) for the batched reprojection."""
    b, d, h, w = xshape
    gy = grad.reshape(b, d, h * w).transpose(0, 2, 1)  # [B, N, d]
    dq = gy @ np.swapaxes(z_tilde, -1, -2)
    dz = np.swapaxes(q, -1, -2) @ gy
    return dq, dz, grad


def change_head(x1_new, x2_new, head: HeadParams) -> ChangeMap:
    """Absolute-difference fusion, 1x1 conv, bilinear upsampling, sigmoid."""
    if isinstance(x1_new, FeatureMap) != isinstance(x2_new, FeatureMap):
        raise ValueError("both inputs must be FeatureMaps or both raw arrays")
    if isinstance(x1_new, FeatureMap):
        factor = x1_new.stride
        a, b = x1_new.data, x2_new.data
    else:
        raise ValueError("change_head needs FeatureMaps to know the upsampling factor")
    if a.shape != b.shape:
        raise ValueError(f"feature maps must share a shape: {a.shape} vs {b.shape}")
    logits, _ = change_head_batch(a[None], b[None], head, factor)
    return ChangeMap(probabilities=sigmoid(logits[0]), logits=logits[0])


def change_head_batch(x1, x2, head: HeadParams, factor: int):
    """Batched head: [B,d,h,w] pairs -> logits [B,H,W] at input resolution."""
    diff = x1 - x2
    absdiff = np.abs(diff)
    low = np.einsum("bdhw,d->bhw", absdiff, head.w) + head.b[0]
    logits, up_cache = ops.bilinear_upsample_forward(low[:, None], factor)
    cache = (diff, absdiff, up_cache, head.w)
    return logits[:, 0], cache


def change_head_backward_batch(dlogits, cache):
    """Returns (dx1, dx2, dw, db)."""
    diff, absdiff, up_cache, w = cache
    dlow = ops.bilinear_upsample_backward(dlogits[:, None], up_cache)[:, 0]
    dw = np.einsum("bhw,bdhw->d", dlow, absdiff)
    db = np.array([dlow.sum()])
    dabs = dlow[:, None] * w[None, :, None, None]
    ddiff = dabs * np.sign(diff)
    return ddiff, -ddiff, dw, db
