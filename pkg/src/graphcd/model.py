"""Full change-detection network: siamese encoder, graph interaction, head.

Parameters live in one flat dict keyed ``enc.*`` / ``proj.*`` / ``gim.*``
/ ``head.*``; batch-norm running statistics live in a separate state
dict. With ``use_gim=False`` the encoder features flow straight into the
change head (the ablation baseline).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import encoder as enc
from .encoder import EncoderConfig, FeatureMap
from .interaction import (
    InteractionParams,
    LinearMap,
    init_interaction_params,
    interact_backward_batch,
    interact_batch,
)
from .ops import DTYPE, sigmoid
from .projection import (
    ProjectionParams,
    init_projection_params,
    project_backward_batch,
    project_batch,
)
from .reprojection import (
    ChangeMap,
    HeadParams,
    change_head_backward_batch,
    change_head_batch,
    init_head_params,
    reproject_backward_batch,
    reproject_batch,
)


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    vertices: int = 32
    use_gim: bool = True

    def __post_init__(self):
        if self.vertices < 1:
            raise ValueError(f"vertices must be >= 1, got {self.vertices}")


def init_model_params(config: ModelConfig, rng: np.random.Generator):
    params: dict[str, np.ndarray] = {}
    enc_params, state = enc.init_encoder_params(config.encoder, rng)
    for k, v in enc_params.items():
        params[f"enc.{k}"] = v
    d = config.encoder.feature_dim
    if config.use_gim:
        proj = init_projection_params(config.vertices, d, rng)
        params["proj.anchors"] = proj.anchors
        params["proj.scale_logits"] = proj.scale_logits
        gim = init_interaction_params(d, rng)
        for k, v in gim.tensors().items():
            params[f"gim.{k}"] = v
    head = init_head_params(d, rng)
    params["head.w"] = head.w
    params["head.b"] = head.b
    return params, state


def _proj_view(params) -> ProjectionParams:
    return ProjectionParams(
        anchors=params["proj.anchors"], scale_logits=params["proj.scale_logits"]
    )


def _gim_view(params) -> InteractionParams:
    def lin(name):
        return LinearMap(w=params[f"gim.{name}.w"], b=params[f"gim.{name}.b"])

    return InteractionParams(
        query_1=lin("query_1"), query_2=lin("query_2"),
        key_w1=params["gim.key_w1"], key_w2=params["gim.key_w2"],
        value_1=lin("value_1"), value_2=lin("value_2"),
        gcn_w1=params["gim.gcn_w1"], gcn_w2=params["gim.gcn_w2"],
    )


def _head_view(params) -> HeadParams:
    return HeadParams(w=params["head.w"], b=params["head.b"])


def forward_batch(x1, x2, params, state, config: ModelConfig, train: bool = False):
    """[B,3,H,W] pairs -> (logits [B,H,W], cache for backward)."""
    b = x1.shape[0]
    stacked = np.concatenate([x1, x2], axis=0)
    feats, enc_cache = enc.encoder_forward(
        stacked, _strip(params, "enc."), state, config.encoder, train
    )
    f1, f2 = feats[:b], feats[b:]
    cache = {"enc": enc_cache, "fshape": f1.shape, "train": train}
    if config.use_gim:
        proj = _proj_view(params)
        q1, z1, _, _, pc1 = project_batch(f1, proj)
        q2, z2, _, _, pc2 = project_batch(f2, proj)
        zt1, zt2, icache = interact_batch(z1, z2, _gim_view(params))
        x1n = reproject_batch(q1, zt1, f1)
        x2n = reproject_batch(q2, zt2, f2)
        cache.update(pc1=pc1, pc2=pc2, icache=icache,
                     q1=q1, q2=q2, zt1=zt1, zt2=zt2)
    else:
        x1n, x2n = f1, f2
    logits, hcache = change_head_batch(
        x1n, x2n, _head_view(params), config.encoder.output_stride
    )
    cache["head"] = hcache
    return logits, cache


def backward_batch(dlogits, cache, params, config: ModelConfig,
                   need_input_grad: bool = False):
    """Gradient of a scalar loss (given d loss / d logits) for every parameter."""
    grads: dict[str, np.ndarray] = {}
    dx1n, dx2n, dw, db = change_head_backward_batch(dlogits, cache["head"])
    grads["head.w"] = dw
    grads["head.b"] = db
    if config.use_gim:
        fshape = cache["fshape"]
        dq1, dzt1, df1 = reproject_backward_batch(dx1n, cache["q1"], cache["zt1"], fshape)
        dq2, dzt2, df2 = reproject_backward_batch(dx2n, cache["q2"], cache["zt2"], fshape)
        dz1, dz2, gim_grads = interact_backward_batch(
            dzt1, dzt2, cache["icache"], _gim_view(params)
        )
        for k, v in gim_grads.items():
            grads[f"gim.{k}"] = v
        dfa, dw1, ds1 = project_backward_batch(dq1, dz1, None, cache["pc1"])
        dfb, dw2, ds2 = project_backward_batch(dq2, dz2, None, cache["pc2"])
        grads["proj.anchors"] = dw1 + dw2
        grads["proj.scale_logits"] = ds1 + ds2
        df1 = df1 + dfa
        df2 = df2 + dfb
    else:
        df1, df2 = dx1n, dx2n
    dstacked = np.concatenate([df1, df2], axis=0)
    dx, enc_grads = enc.encoder_backward(
        dstacked, cache["enc"], _strip(params, "enc."), config.encoder,
        need_input_grad=need_input_grad,
    )
    for k, v in enc_grads.items():
        grads[f"enc.{k}"] = v
    if dx is None:
        return grads, None
    b = df1.shape[0]
    return grads, (dx[:b], dx[b:])


def _strip(params, prefix):
    return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}


class BGINet:
    """Bitemporal graph-interaction change-detection network."""

    def __init__(self, config: ModelConfig, rng=None, params=None, state=None):
        self.config = config
        if params is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            params, state = init_model_params(config, rng)
        elif state is None:
            state = enc.fresh_bn_state(config.encoder)
        self.params = params
        self.bn_state = state

    def forward(self, image1, image2) -> ChangeMap:
        """Single-pair evaluation-mode inference at input resolution."""
        image1 = np.asarray(image1, dtype=DTYPE)
        image2 = np.asarray(image2, dtype=DTYPE)
        if image1.shape != image2.shape:
            raise ValueError(
                f"bitemporal images must share a shape: {image1.shape} vs {image2.shape}"
            )
        enc._check_image(image1, self.config.encoder)
        logits, _ = forward_batch(
            image1[None], image2[None], self.params, self.bn_state,
            self.config, train=False,
        )
        return ChangeMap(probabilities=sigmoid(logits[0]), logits=logits[0])

    def forward_batch(self, x1, x2, train=False):
        return forward_batch(x1, x2, self.params, self.bn_state, self.config, train)

    def backward_batch(self, dlogits, cache, need_input_grad=False):
        return backward_batch(dlogits, cache, self.params, self.config,
                              need_input_grad=need_input_grad)

    def encode_feature_map(self, image) -> FeatureMap:
        return enc.encode(
            image, _strip(self.params, "enc."), self.config.encoder, self.bn_state
        )


def bginet_forward(image1, image2, model: BGINet) -> ChangeMap:
    """Full pipeline on one bitemporal pair (evaluation mode)."""
    return model.forward(image1, image2)
