"""Cross-graph interaction: transforms, affinities, messages, GCN, gradients."""

import numpy as np
import pytest

from graphcd.interaction import (
    InteractionParams,
    LinearMap,
    cross_message,
    init_interaction_params,
    inter_affinity,
    interact,
    intra_gcn,
    qkv_transform,
    unify_queries,
)
from graphcd.projection import GraphEmbedding
from graphcd.reference import naive_interact
from graphcd.selfcheck import interaction_gradcheck


def embed(z):
    z = np.asarray(z, dtype=float)
    return GraphEmbedding(vertex_features=z, affinity=z @ z.T,
                          assignment=np.ones((1, z.shape[0])) / z.shape[0])


def identity_params(d):
    return InteractionParams(
        query_1=LinearMap(np.eye(d)[:, :d // 2].copy(), np.zeros(d // 2)),
        query_2=LinearMap(np.eye(d)[:, :d // 2].copy(), np.zeros(d // 2)),
        key_w1=np.eye(d), key_w2=np.eye(d),
        value_1=LinearMap(np.eye(d), np.zeros(d)),
        value_2=LinearMap(np.eye(d), np.zeros(d)),
        gcn_w1=np.eye(d), gcn_w2=np.eye(d),
    )


def test_qkv_identity_transforms():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(3, 4))
    zq, zk, zv = qkv_transform(z, identity_params(4), phase=1)
    np.testing.assert_array_equal(zk, z)
    np.testing.assert_array_equal(zv, z)
    assert zq.shape == (3, 2)


def test_qkv_zero_transforms():
    p = identity_params(4)
    for lin in (p.query_1, p.value_1):
        lin.w[:] = 0
    p.key_w1[:] = 0
    zq, zk, zv = qkv_transform(np.ones((3, 4)), p, phase=1)
    assert np.abs(zq).max() == 0 and np.abs(zk).max() == 0 and np.abs(zv).max() == 0


def test_qkv_matches_matmul_oracle():
    rng = np.random.default_rng(1)
    z = rng.normal(size=(3, 4))
    p = init_interaction_params(4, rng)
    p.query_2.b[:] = rng.normal(size=2)
    zq, zk, zv = qkv_transform(z, p, phase=2)
    np.testing.assert_allclose(zq, np.einsum("kc,cd->kd", z, p.query_2.w) + p.query_2.b,
                               atol=1e-6)
    np.testing.assert_allclose(zk, np.einsum("kc,cd->kd", z, p.key_w2), atol=1e-6)
    np.testing.assert_allclose(zv, np.einsum("kc,cd->kd", z, p.value_2.w) + p.value_2.b,
                               atol=1e-6)


def test_qkv_rejects_bad_phase_and_dim():
    p = identity_params(4)
    with pytest.raises(ValueError, match="phase"):
        qkv_transform(np.zeros((2, 4)), p, phase=3)
    with pytest.raises(ValueError, match="d = 6"):
        qkv_transform(np.zeros((2, 6)), p, phase=1)


def test_unify_queries_concatenates_features():
    a = np.arange(6.0).reshape(3, 2)
    b = -np.arange(6.0).reshape(3, 2)
    u = unify_queries(a, b)
    assert u.shape == (3, 4)
    for r in range(3):
        np.testing.assert_array_equal(u[r], np.concatenate([a[r], b[r]]))
    # swapping arguments swaps the column blocks
    v = unify_queries(b, a)
    np.testing.assert_array_equal(v[:, :2], u[:, 2:])
    np.testing.assert_array_equal(v[:, 2:], u[:, :2])
    np.testing.assert_array_equal(unify_queries(np.zeros((3, 2)), np.zeros((3, 2))),
                                  np.zeros((3, 4)))
    with pytest.raises(ValueError, match="query shapes"):
        unify_queries(a, b[:2])


def test_inter_affinity_uniform_for_zero_queries():
    rng = np.random.default_rng(2)
    a = inter_affinity(np.zeros((3, 4)), rng.normal(size=(3, 4)))
    np.testing.assert_allclose(a, 1.0 / 3.0, atol=1e-12)


def test_inter_affinity_saturates_on_dominant_pair():
    zq = np.zeros((2, 4))
    zq[0, 0] = 50.0
    zk = np.zeros((2, 4))
    zk[1, 0] = 50.0  # query row 0 aligns overwhelmingly with key row 1
    a = inter_affinity(zq, zk)
    assert a[0, 1] > 1.0 - 1e-9


def test_inter_affinity_matches_loop_oracle():
    rng = np.random.default_rng(3)
    zq = rng.normal(size=(3, 4))
    zk = rng.normal(size=(3, 4))
    a = inter_affinity(zq, zk)
    expected = np.zeros((3, 3))
    for i in range(3):
        scores = [sum(zq[i, c] * zk[j, c] for c in range(4)) for j in range(3)]
        e = np.exp(np.array(scores) - max(scores))
        expected[i] = e / e.sum()
    np.testing.assert_allclose(a, expected, atol=1e-6)
    np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-6)


def test_cross_message_identity_and_uniform():
    rng = np.random.default_rng(4)
    z = rng.normal(size=(3, 4))
    res = rng.normal(size=(3, 4))
    np.testing.assert_allclose(cross_message(np.eye(3), z, res), z + res, atol=1e-12)
    uniform = np.full((3, 3), 1.0 / 3.0)
    out = cross_message(uniform, z, res)
    np.testing.assert_allclose(out, z.mean(axis=0) + res, atol=1e-12)
    # zero transported values return the residual exactly
    np.testing.assert_array_equal(cross_message(uniform, np.zeros((3, 4)), res), res)


def test_cross_message_matches_loop_oracle():
    rng = np.random.default_rng(5)
    a = rng.uniform(size=(2, 2))
    v = rng.normal(size=(2, 3))
    res = rng.normal(size=(2, 3))
    out = cross_message(a, v, res)
    expected = np.zeros((2, 3))
    for i in range(2):
        for c in range(3):
            expected[i, c] = sum(a[i, j] * v[j, c] for j in range(2)) + res[i, c]
    np.testing.assert_allclose(out, expected, atol=1e-6)


def test_intra_gcn_zero_and_clipping():
    a = np.full((2, 2), 0.5)
    w = np.eye(3)
    np.testing.assert_array_equal(intra_gcn(np.zeros((2, 3)), a, w), 0.0)
    z = -np.ones((2, 3))
    np.testing.assert_array_equal(intra_gcn(z, a, w), 0.0)


def test_intra_gcn_matches_loop_oracle():
    rng = np.random.default_rng(6)
    z = rng.normal(size=(2, 3))
    a = rng.uniform(size=(2, 2))
    w = rng.normal(size=(3, 3))
    out = intra_gcn(z, a, w)
    expected = np.zeros((2, 3))
    for i in range(2):
        for c in range(3):
            acc = 0.0
            for j in range(2):
                for e in range(3):
                    acc += a[i, j] * z[j, e] * w[e, c]
            expected[i, c] = max(acc, 0.0)
    np.testing.assert_allclose(out, expected, atol=1e-6)


def test_interact_symmetric_inputs_and_params():
    rng = np.random.default_rng(7)
    z = rng.normal(size=(3, 4))
    p = init_interaction_params(4, rng)
    sym = InteractionParams(
        query_1=p.query_1, query_2=p.query_1,
        key_w1=p.key_w1, key_w2=p.key_w1,
        value_1=p.value_1, value_2=p.value_1,
        gcn_w1=p.gcn_w1, gcn_w2=p.gcn_w1,
    )
    zt1, zt2 = interact(embed(z), embed(z), sym)
    np.testing.assert_allclose(zt1, zt2, atol=1e-12)


def test_interact_zero_features_give_zero_output():
    p = init_interaction_params(4, np.random.default_rng(8))
    zt1, zt2 = interact(embed(np.zeros((3, 4))), embed(np.zeros((3, 4))), p)
    np.testing.assert_array_equal(zt1, 0.0)
    np.testing.assert_array_equal(zt2, 0.0)


def test_interact_matches_composed_oracle():
    rng = np.random.default_rng(9)
    z1 = rng.normal(size=(4, 8))
    z2 = rng.normal(size=(4, 8))
    p = init_interaction_params(8, rng)
    for nm in ("query_1", "query_2", "value_1", "value_2"):
        getattr(p, nm).b[:] = rng.normal(size=getattr(p, nm).b.shape) * 0.3
    zt1, zt2 = interact(embed(z1), embed(z2), p)
    st1, st2 = naive_interact(z1, z2, p)
    assert np.abs(zt1 - st1).max() <= 1e-5
    assert np.abs(zt2 - st2).max() <= 1e-5


def test_interact_rejects_mismatched_graphs():
    p = init_interaction_params(4, np.random.default_rng(10))
    with pytest.raises(ValueError, match="share K and d"):
        interact(embed(np.zeros((3, 4))), embed(np.zeros((2, 4))), p)
    with pytest.raises(ValueError, match="parameters expect"):
        interact(embed(np.zeros((3, 6))), embed(np.zeros((3, 6))), p)


def test_key_scaling_sharpens_affinities_monotonically():
    rng = np.random.default_rng(11)
    z1 = rng.normal(size=(3, 4))
    z2 = rng.normal(size=(3, 4))
    p = init_interaction_params(4, rng)
    zq = unify_queries(z1 @ p.query_1.w + p.query_1.b,
                       z2 @ p.query_2.w + p.query_2.b)
    prev = None
    for c in (1.0, 10.0, 100.0):
        a = inter_affinity(zq, z2 @ (c * p.key_w2))
        peak = a.max(axis=1)
        if prev is not None:
            assert (peak >= prev - 1e-12).all()
        prev = peak


def test_interaction_params_validation():
    rng = np.random.default_rng(12)
    with pytest.raises(ValueError, match="even"):
        init_interaction_params(5, rng)
    p = init_interaction_params(4, rng)
    p.gcn_w1[0, 0] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        InteractionParams(query_1=p.query_1, query_2=p.query_2,
                          key_w1=p.key_w1, key_w2=p.key_w2,
                          value_1=p.value_1, value_2=p.value_2,
                          gcn_w1=p.gcn_w1, gcn_w2=p.gcn_w2)


def test_gradients_match_finite_differences():
    rep = interaction_gradcheck()
    assert rep.passed, rep.lines()
