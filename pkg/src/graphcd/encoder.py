"""Weight-shared siamese residual CNN encoder.

The backbone is a stem (7x7 stride-2 convolution, batch norm, relu,
3x3 stride-2 max pool) followed by stages of two-convolution residual
blocks. The same parameter set is applied to both time phases.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .ops import DTYPE

BN_MOMENTUM = 0.1


@dataclass(frozen=True)
class EncoderConfig:
    in_channels: int = 3
    stage_channels: tuple[int, ...] = (64, 64, 128, 256)
    blocks_per_stage: tuple[int, ...] = (2, 2, 2)
    output_stride: int = 16

    def __post_init__(self):
        if self.output_stride not in (4, 8, 16):
            raise ValueError(f"output_stride must be 4, 8 or 16, got {self.output_stride}")
        if len(self.stage_channels) != len(self.blocks_per_stage) + 1:
            raise ValueError(
                "stage_channels must list the stem plus one entry per residual "
                f"stage: got {len(self.stage_channels)} channels for "
                f"{len(self.blocks_per_stage)} stages"
            )
        counts = (self.in_channels, *self.stage_channels, *self.blocks_per_stage)
        if any(c < 1 for c in counts):
            raise ValueError("all channel/block counts must be >= 1")

    @property
    def feature_dim(self) -> int:
        return self.stage_channels[-1]

    def stage_strides(self) -> list[int]:
        """Stride of the first block of each residual stage."""
        strides = []
        reached = 4  # stem conv (2) plus max pool (2)
        for i in range(len(self.blocks_per_stage)):
            if i > 0 and reached < self.output_stride:
                strides.append(2)
                reached *= 2
            else:
                strides.append(1)
        if reached != self.output_stride:
            raise ValueError(
                f"cannot realize output_stride {self.output_stride} with "
                f"{len(self.blocks_per_stage)} stages"
            )
        return strides


@dataclass
class FeatureMap:
    """Dense feature array [d, h, w] at a known downsampling stride."""

    data: np.ndarray
    stride: int


def _he_conv(rng, cout, cin, k):
    std = np.sqrt(2.0 / (cin * k * k))
    return rng.normal(0.0, std, size=(cout, cin, k, k)).astype(DTYPE)


def _bn_params(params, state, prefix, channels):
    params[f"{prefix}.gamma"] = np.ones(channels, dtype=DTYPE)
    params[f"{prefix}.beta"] = np.zeros(channels, dtype=DTYPE)
    state[f"{prefix}.mean"] = np.zeros(channels, dtype=DTYPE)
    state[f"{prefix}.var"] = np.ones(channels, dtype=DTYPE)


def init_encoder_params(config: EncoderConfig, rng: np.random.Generator):
    """He-initialized conv kernels, unit-scale batch norms, fresh stats."""
    params: dict[str, np.ndarray] = {}
    state: dict[str, np.ndarray] = {}
    stem_ch = config.stage_channels[0]
    params["stem.conv.w"] = _he_conv(rng, stem_ch, config.in_channels, 7)
    _bn_params(params, state, "stem.bn", stem_ch)
    cin = stem_ch
    strides = config.stage_strides()
    for i, (cout, blocks) in enumerate(
        zip(config.stage_channels[1:], config.blocks_per_stage)
    ):
        for j in range(blocks):
            stride = strides[i] if j == 0 else 1
            p = f"s{i}.b{j}"
            params[f"{p}.conv1.w"] = _he_conv(rng, cout, cin, 3)
            _bn_params(params, state, f"{p}.bn1", cout)
            params[f"{p}.conv2.w"] = _he_conv(rng, cout, cout, 3)
            _bn_params(params, state, f"{p}.bn2", cout)
            if stride != 1 or cin != cout:
                params[f"{p}.down.w"] = _he_conv(rng, cout, cin, 1)
                _bn_params(params, state, f"{p}.dbn", cout)
            cin = cout
    return params, state


def fresh_bn_state(config: EncoderConfig) -> dict[str, np.ndarray]:
    _, state = init_encoder_params(config, np.random.default_rng(0))
    return state


def _bn_fwd(x, params, state, prefix, train):
    return ops.batchnorm_forward(
        x, params[f"{prefix}.gamma"], params[f"{prefix}.beta"],
        state[f"{prefix}.mean"], state[f"{prefix}.var"],
        train, momentum=BN_MOMENTUM,
    )


def _block_forward(x, params, state, prefix, stride, train):
    c = {}
    out, c["conv1"] = ops.conv2d_forward(x, params[f"{prefix}.conv1.w"], stride=stride, pad=1)
    out, c["bn1"] = _bn_fwd(out, params, state, f"{prefix}.bn1", train)
    out, c["relu1"] = ops.relu_forward(out)
    out, c["conv2"] = ops.conv2d_forward(out, params[f"{prefix}.conv2.w"], stride=1, pad=1)
    out, c["bn2"] = _bn_fwd(out, params, state, f"{prefix}.bn2", train)
    if f"{prefix}.down.w" in params:
        sc, c["down"] = ops.conv2d_forward(x, params[f"{prefix}.down.w"], stride=stride, pad=0)
        sc, c["dbn"] = _bn_fwd(sc, params, state, f"{prefix}.dbn", train)
    else:
        sc = x
    out = out + sc
    out, c["relu2"] = ops.relu_forward(out)
    return out, c


def _block_backward(grad, cache, params, prefix, grads):
    grad = ops.relu_backward(grad, cache["relu2"])
    # grad splits into the main path and the shortcut
    g, dgamma, dbeta = ops.batchnorm_backward(grad, cache["bn2"])
    grads[f"{prefix}.bn2.gamma"] = dgamma
    grads[f"{prefix}.bn2.beta"] = dbeta
    g, dw, _ = ops.conv2d_backward(g, cache["conv2"])
    grads[f"{prefix}.conv2.w"] = dw
    g = ops.relu_backward(g, cache["relu1"])
    g, dgamma, dbeta = ops.batchnorm_backward(g, cache["bn1"])
    grads[f"{prefix}.bn1.gamma"] = dgamma
    grads[f"{prefix}.bn1.beta"] = dbeta
    dx, dw, _ = ops.conv2d_backward(g, cache["conv1"])
    grads[f"{prefix}.conv1.w"] = dw
    if "down" in cache:
        g_sc, dgamma, dbeta = ops.batchnorm_backward(grad, cache["dbn"])
        grads[f"{prefix}.dbn.gamma"] = dgamma
        grads[f"{prefix}.dbn.beta"] = dbeta
        g_sc, dw, _ = ops.conv2d_backward(g_sc, cache["down"])
        grads[f"{prefix}.down.w"] = dw
        dx = dx + g_sc
    else:
        dx = dx + grad
    return dx


def encoder_forward(x, params, state, config: EncoderConfig, train: bool = False):
    """Batched forward pass: [B, Cin, H, W] -> [B, d, H/stride, W/stride]."""
    c = {}
    out, c["stem.conv"] = ops.conv2d_forward(x, params["stem.conv.w"], stride=2, pad=3)
    out, c["stem.bn"] = _bn_fwd(out, params, state, "stem.bn", train)
    out, c["stem.relu"] = ops.relu_forward(out)
    out, c["pool"] = ops.maxpool2d_forward(out, kernel=3, stride=2, pad=1)
    strides = config.stage_strides()
    for i, blocks in enumerate(config.blocks_per_stage):
        for j in range(blocks):
            stride = strides[i] if j == 0 else 1
            out, c[f"s{i}.b{j}"] = _block_forward(
                out, params, state, f"s{i}.b{j}", stride, train
            )
    return out, c


def encoder_backward(grad, cache, params, config: EncoderConfig,
                     need_input_grad: bool = True):
    """Returns (dx, parameter gradients keyed like the parameter dict)."""
    grads: dict[str, np.ndarray] = {}
    for i in reversed(range(len(config.blocks_per_stage))):
        for j in reversed(range(config.blocks_per_stage[i])):
            grad = _block_backward(grad, cache[f"s{i}.b{j}"], params, f"s{i}.b{j}", grads)
    grad = ops.maxpool2d_backward(grad, cache["pool"])
    grad = ops.relu_backward(grad, cache["stem.relu"])
    grad, dgamma, dbeta = ops.batchnorm_backward(grad, cache["stem.bn"])
    grads["stem.bn.gamma"] = dgamma
    grads["stem.bn.beta"] = dbeta
    dx, dw, _ = ops.conv2d_backward(grad, cache["stem.conv"], need_dx=need_input_grad)
    grads["stem.conv.w"] = dw
    return dx, grads


def _check_image(image, config: EncoderConfig):
    image = np.asarray(image, dtype=DTYPE)
    if image.ndim != 3 or image.shape[0] != config.in_channels:
        raise ValueError(
            f"expected image of shape [{config.in_channels}, H, W], got {image.shape}"
        )
    h, w = image.shape[1:]
    if h % config.output_stride or w % config.output_stride:
        raise ValueError(
            f"image size {h}x{w} not divisible by output_stride {config.output_stride}"
        )
    return image


def encode(image, params, config: EncoderConfig, state=None) -> FeatureMap:
    """Encode a single [Cin, H, W] image to a FeatureMap (evaluation mode)."""
    image = _check_image(image, config)
    if state is None:
        state = fresh_bn_state(config)
    out, _ = encoder_forward(image[None], params, state, config, train=False)
    return FeatureMap(data=out[0], stride=config.output_stride)


def encode_pair(image1, image2, params, config: EncoderConfig, state=None):
    """Apply the shared encoder to both time phases."""
    image1 = np.asarray(image1, dtype=DTYPE)
    image2 = np.asarray(image2, dtype=DTYPE)
    if image1.shape != image2.shape:
        raise ValueError(
            f"bitemporal images must share a shape: {image1.shape} vs {image2.shape}"
        )
    if state is None:
        state = fresh_bn_state(config)
    return (
        encode(image1, params, config, state),
        encode(image2, params, config, state),
    )
