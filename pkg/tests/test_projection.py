"""Graph projection: assignment, vertex encoding, affinity, and gradients."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphcd.projection import (
    GraphEmbedding,
    ProjectionParams,
    affinity,
    encode_vertices,
    init_projection_params,
    project,
    soft_assign,
)
from graphcd.selfcheck import projection_gradcheck


def rand_params(rng, k, d, scale=1.0):
    return ProjectionParams(
        anchors=rng.normal(size=(k, d)) * scale,
        scale_logits=rng.normal(size=(k, d)) * scale,
    )


def test_single_vertex_assigns_everything():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4, 3, 3))
    q = soft_assign(x, rand_params(rng, 1, 4))
    np.testing.assert_allclose(q, 1.0, atol=1e-12)


def test_equidistant_anchors_split_evenly():
    d = 3
    anchors = np.stack([np.full(d, 1.0), np.full(d, -1.0)])
    params = ProjectionParams(anchors=anchors, scale_logits=np.zeros((2, d)))
    x = np.zeros((d, 1, 1))  # equidistant from both anchors
    q = soft_assign(x, params)
    np.testing.assert_allclose(q, 0.5, atol=1e-12)


def test_soft_assign_matches_scalar_loop_oracle():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(4, 3, 3))
    params = rand_params(rng, 3, 4)
    q = soft_assign(x, params)

    sig = 1.0 / (1.0 + np.exp(-params.scale_logits))
    pixels = x.reshape(4, -1).T
    expected = np.zeros((9, 3))
    for p in range(9):
        logits = []
        for k in range(3):
            acc = 0.0
            for c in range(4):
                r = (pixels[p, c] - params.anchors[k, c]) / sig[k, c]
                acc += r * r
            logits.append(-acc / 2.0)
        e = np.exp(np.array(logits) - max(logits))
        expected[p] = e / e.sum()
    np.testing.assert_allclose(q, expected, atol=1e-6)


def test_zero_residual_vertex_row_is_zero():
    rng = np.random.default_rng(2)
    params = rand_params(rng, 2, 3)
    x = np.broadcast_to(params.anchors[0][:, None, None], (3, 2, 2)).copy()
    q = soft_assign(x, params)
    z = encode_vertices(x, q, params)
    np.testing.assert_array_equal(z[0], 0.0)


def test_vertex_rows_unit_norm():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(8, 4, 4))
    params = rand_params(rng, 4, 8)
    z = encode_vertices(x, soft_assign(x, params), params)
    norms = np.linalg.norm(z, axis=1)
    live = norms > 0
    np.testing.assert_allclose(norms[live], 1.0, atol=1e-6)


def test_encode_vertices_matches_scalar_loop_oracle():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(8, 4, 4))
    params = rand_params(rng, 4, 8)
    q = soft_assign(x, params)
    z = encode_vertices(x, q, params)

    sig = 1.0 / (1.0 + np.exp(-params.scale_logits))
    pixels = x.reshape(8, -1).T
    expected = np.zeros((4, 8))
    for k in range(4):
        mass = q[:, k].sum()
        row = np.zeros(8)
        for c in range(8):
            acc = 0.0
            for p in range(16):
                acc += q[p, k] * (pixels[p, c] - params.anchors[k, c])
            row[c] = (acc / mass) / sig[k, c]
        norm = np.sqrt((row ** 2).sum())
        expected[k] = row / norm if norm >= 1e-8 else 0.0
    np.testing.assert_allclose(z, expected, atol=1e-6)


def test_affinity_identity_for_orthonormal_rows():
    z = np.eye(4)[:3]
    np.testing.assert_allclose(affinity(z), np.eye(3), atol=1e-12)


def test_affinity_symmetric_bounded_unit_diag():
    rng = np.random.default_rng(5)
    z = rng.normal(size=(5, 7))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    a = affinity(z)
    assert np.abs(a - a.T).max() == 0.0
    assert (np.abs(a) <= 1.0 + 1e-12).all()
    np.testing.assert_allclose(np.diag(a), 1.0, atol=1e-6)


def test_project_invariants_hold_on_random_inputs():
    rng = np.random.default_rng(6)
    for _ in range(100):
        d = int(rng.integers(2, 9))
        k = int(rng.integers(1, 5))
        x = rng.normal(size=(d, int(rng.integers(2, 6)), int(rng.integers(2, 6))))
        g = project(x, rand_params(rng, k, d))
        assert isinstance(g, GraphEmbedding)
        np.testing.assert_allclose(g.assignment.sum(axis=1), 1.0, atol=1e-6)
        assert (g.assignment >= 0).all() and (g.assignment <= 1).all()
        norms = np.linalg.norm(g.vertex_features, axis=1)
        assert ((np.abs(norms - 1.0) < 1e-6) | (norms == 0.0)).all()
        assert np.abs(g.affinity - g.affinity.T).max() < 1e-6


def test_vertex_permutation_equivariance():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(5, 3, 4))
    params = rand_params(rng, 4, 5)
    perm = np.array([2, 0, 3, 1])
    permuted = ProjectionParams(anchors=params.anchors[perm],
                                scale_logits=params.scale_logits[perm])
    g = project(x, params)
    gp = project(x, permuted)
    np.testing.assert_allclose(gp.assignment, g.assignment[:, perm], atol=1e-12)
    np.testing.assert_allclose(gp.vertex_features, g.vertex_features[perm], atol=1e-12)
    np.testing.assert_allclose(gp.affinity, g.affinity[np.ix_(perm, perm)], atol=1e-12)


def test_constant_map_gives_identical_assignment_rows():
    rng = np.random.default_rng(8)
    params = rand_params(rng, 3, 4)
    x = np.full((4, 3, 3), 0.7)
    q = soft_assign(x, params)
    np.testing.assert_allclose(q, q[0], atol=1e-12)


def test_rejects_bad_inputs():
    rng = np.random.default_rng(9)
    params = rand_params(rng, 2, 4)
    with pytest.raises(ValueError, match="feature dimension"):
        soft_assign(rng.normal(size=(3, 2, 2)), params)
    bad = np.full((4, 2, 2), np.nan)
    with pytest.raises(ValueError, match="non-finite"):
        soft_assign(bad, params)
    with pytest.raises(ValueError, match="equal shapes"):
        ProjectionParams(anchors=np.zeros((2, 3)), scale_logits=np.zeros((2, 4)))


def test_init_scales_start_at_half():
    p = init_projection_params(4, 8, np.random.default_rng(0))
    sig = 1.0 / (1.0 + np.exp(-p.scale_logits))
    np.testing.assert_allclose(sig, 0.5, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 5), st.integers(2, 6))
def test_assignment_row_stochastic_property(seed, k, d):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(d, 3, 2)) * rng.uniform(0.1, 10)
    q = soft_assign(x, rand_params(rng, k, d, scale=rng.uniform(0.1, 3)))
    np.testing.assert_allclose(q.sum(axis=1), 1.0, atol=1e-6)
    assert (q >= 0).all() and (q <= 1).all()


def test_gradients_match_finite_differences():
    rep = projection_gradcheck()
    assert rep.passed, rep.lines()
