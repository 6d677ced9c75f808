"""Siamese encoder: shape contracts, weight sharing, and the parameter budget."""

import numpy as np
import pytest

from graphcd.encoder import (
    EncoderConfig,
    encode,
    encode_pair,
    fresh_bn_state,
    init_encoder_params,
)

SMALL = EncoderConfig(stage_channels=(8, 8, 16, 32), output_stride=16)


def test_config_validation():
    with pytest.raises(ValueError, match="output_stride"):
        EncoderConfig(output_stride=32)
    with pytest.raises(ValueError, match="stage_channels"):
        EncoderConfig(stage_channels=(64, 64), blocks_per_stage=(2, 2, 2))
    with pytest.raises(ValueError, match=">= 1"):
        EncoderConfig(stage_channels=(64, 0, 128, 256))


def test_output_shape_default_config():
    cfg = EncoderConfig()
    params, state = init_encoder_params(cfg, np.random.default_rng(0))
    fm = encode(np.zeros((3, 64, 64)), params, cfg, state)
    assert fm.data.shape == (256, 4, 4)
    assert fm.stride == 16


@pytest.mark.parametrize("stride,hw", [(4, 16), (8, 8), (16, 4)])
def test_output_stride_variants(stride, hw):
    cfg = EncoderConfig(stage_channels=(8, 8, 16, 32), output_stride=stride)
    params, state = init_encoder_params(cfg, np.random.default_rng(0))
    fm = encode(np.zeros((3, 64, 64)), params, cfg, state)
    assert fm.data.shape == (32, hw, hw)


def test_zero_weights_zero_image_gives_zero_map():
    params, state = init_encoder_params(SMALL, np.random.default_rng(0))
    for k in params:
        if k.endswith("conv.w") or k.endswith("conv1.w") or k.endswith("conv2.w") \
                or k.endswith("down.w"):
            params[k][:] = 0.0
    fm = encode(np.zeros((3, 32, 32)), params, SMALL, state)
    np.testing.assert_array_equal(fm.data, 0.0)


def test_shape_errors():
    params, state = init_encoder_params(SMALL, np.random.default_rng(0))
    with pytest.raises(ValueError, match=r"\[3, H, W\]"):
        encode(np.zeros((1, 32, 32)), params, SMALL, state)
    with pytest.raises(ValueError, match="divisible"):
        encode(np.zeros((3, 33, 33)), params, SMALL, state)
    with pytest.raises(ValueError, match="share a shape"):
        encode_pair(np.zeros((3, 32, 32)), np.zeros((3, 48, 48)), params, SMALL)


def test_encode_pair_weight_sharing_bit_exact():
    rng = np.random.default_rng(1)
    params, state = init_encoder_params(SMALL, rng)
    a = rng.normal(size=(3, 32, 32))
    b = rng.normal(size=(3, 32, 32))
    fa, fb = encode_pair(a, b, params, SMALL, state)
    np.testing.assert_array_equal(fa.data, encode(a, params, SMALL, state).data)
    np.testing.assert_array_equal(fb.data, encode(b, params, SMALL, state).data)
    # swapped inputs swap outputs exactly
    ga, gb = encode_pair(b, a, params, SMALL, state)
    np.testing.assert_array_equal(ga.data, fb.data)
    np.testing.assert_array_equal(gb.data, fa.data)


def test_encode_pair_identical_and_distinct_inputs():
    rng = np.random.default_rng(2)
    params, state = init_encoder_params(SMALL, rng)
    img = rng.normal(size=(3, 32, 32))
    fa, fb = encode_pair(img, img, params, SMALL, state)
    assert np.abs(fa.data - fb.data).max() == 0.0
    fa, fb = encode_pair(img, img + 0.5, params, SMALL, state)
    assert np.abs(fa.data - fb.data).max() > 0.0


def test_translation_covariance_at_stride_granularity():
    cfg = SMALL
    rng = np.random.default_rng(3)
    params, state = init_encoder_params(cfg, rng)
    big = rng.normal(size=(3, 80, 80))
    s = cfg.output_stride
    a = big[:, :48, :48]
    b = big[:, s:48 + s, s:48 + s]
    fa = encode(a, params, cfg, state).data
    fb = encode(b, params, cfg, state).data
    # shifting the input by one stride shifts the map by one cell (interior)
    np.testing.assert_allclose(fa[:, 2:, 2:], fb[:, 1:-1, 1:-1], atol=1e-5)


def test_parameter_count_matches_independent_arithmetic():
    cfg = EncoderConfig()
    params, _ = init_encoder_params(cfg, np.random.default_rng(0))
    total = sum(v.size for v in params.values())

    def conv(cout, cin, k):
        return cout * cin * k * k

    def bn(c):
        return 2 * c

    expect = conv(64, 3, 7) + bn(64)
    chans = [(64, 64, 1), (64, 128, 2), (128, 256, 2)]
    for cin, cout, stride in chans:
        # first block (may downsample), then one identity block
        expect += conv(cout, cin, 3) + bn(cout) + conv(cout, cout, 3) + bn(cout)
        if stride != 1 or cin != cout:
            expect += conv(cout, cin, 1) + bn(cout)
        expect += 2 * (conv(cout, cout, 3) + bn(cout))
    assert total == expect == 2_782_784
