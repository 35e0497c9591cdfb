import numpy as np
import pytest

from varflow.confidence import (
    baseline_confidence,
    boundary_distance,
    confidence_features,
    edge_tensor,
    fwd_bwd_distance,
    loss_cor,
    nonmin_suppress,
)
from varflow.errors import DimMismatch, NonPositiveGamma
from varflow.grid_io import FlowField, ScalarMap
from varflow.matching import argmin_flow, correlate, softmax_prob
from varflow.quadfit import quadfit_refine

from oracles import bilinear_transcription


def _flow(u0, u1):
    return FlowField(np.asarray(u0, dtype=np.float64), np.asarray(u1, dtype=np.float64))


def test_fwd_bwd_zero_flows():
    z = np.zeros((4, 4))
    d = fwd_bwd_distance(_flow(z, z), _flow(z, z))
    assert np.all(d.values == 0.0)


def test_fwd_bwd_equal_constant_flows():
    # the formula literally subtracts the interpolated backward field
    u = np.full((5, 5), 1.0)
    z = np.zeros((5, 5))
    d = fwd_bwd_distance(_flow(u, z), _flow(u, z))
    inside = d.values[:, :4, 0]  # warps of the last column leave the grid
    assert np.all(inside == 0.0)
    assert np.all(d.values[:, 4, 0] == 1e6)


def test_fwd_bwd_matches_transcription():
    rng = np.random.default_rng(0)
    fwd = _flow(rng.uniform(-1.5, 1.5, (6, 7)), rng.uniform(-1.5, 1.5, (6, 7)))
    bwd = _flow(rng.standard_normal((6, 7)), rng.standard_normal((6, 7)))
    d = fwd_bwd_distance(fwd, bwd)
    for y in range(6):
        for x in range(7):
            px = x + fwd.u0[y, x]
            py = y + fwd.u1[y, x]
            if 0 <= px <= 6 and 0 <= py <= 5:
                b0 = bilinear_transcription(bwd.u0, px, py)
                b1 = bilinear_transcription(bwd.u1, px, py)
                ref = np.hypot(fwd.u0[y, x] - b0, fwd.u1[y, x] - b1)
            else:
                ref = 1e6
            assert abs(d.values[y, x, 0] - ref) < 1e-12


def test_boundary_distance_examples():
    z = np.zeros((10, 10))
    b = boundary_distance(_flow(z, z))
    assert b.values[0, 0, 0] == 0.0
    assert b.values[5, 5, 0] == 5.0
    u0 = np.zeros((10, 10))
    u0[5, 5] = -7.0
    b = boundary_distance(_flow(u0, z))
    assert b.values[5, 5, 0] == 0.0


def test_boundary_distance_formula_random():
    rng = np.random.default_rng(1)
    u0 = rng.uniform(-5, 5, (6, 8))
    u1 = rng.uniform(-5, 5, (6, 8))
    b = boundary_distance(_flow(u0, u1))
    M, N = 6, 8
    for y in range(M):
        for x in range(N):
            ref = max(
                0.0,
                min(x + u0[y, x], y + u1[y, x], N - x - u0[y, x], M - y - u1[y, x]),
            )
            assert abs(b.values[y, x, 0] - ref) < 1e-12


def test_nonmin_suppress_block():
    m = nonmin_suppress(ScalarMap(np.array([[0.1, 0.9], [0.3, 0.2]])))
    assert np.array_equal(m.values[:, :, 0], [[0.0, 0.9], [0.0, 0.0]])


def test_nonmin_suppress_tie_row_major():
    m = nonmin_suppress(ScalarMap(np.full((2, 2), 0.5)))
    assert np.array_equal(m.values[:, :, 0], [[0.5, 0.0], [0.0, 0.0]])


def test_nonmin_suppress_one_survivor_per_block():
    rng = np.random.default_rng(2)
    v = rng.uniform(0, 1, (8, 10))
    out = nonmin_suppress(ScalarMap(v)).values[:, :, 0]
    for by in range(4):
        for bx in range(5):
            blk = out[2 * by : 2 * by + 2, 2 * bx : 2 * bx + 2]
            src = v[2 * by : 2 * by + 2, 2 * bx : 2 * bx + 2]
            assert np.count_nonzero(blk) <= 1
            assert blk.max() == src.max()


def test_nonmin_suppress_odd_dims():
    v = np.array([[0.2, 0.5, 0.9], [0.1, 0.3, 0.4], [0.8, 0.6, 0.7]])
    out = nonmin_suppress(ScalarMap(v)).values[:, :, 0]
    assert out[0, 1] == 0.5 and out[0, 2] == 0.9  # last column is its own block
    assert out[2, 0] == 0.8


def test_edge_tensor_constant_image():
    t = edge_tensor(ScalarMap(np.full((5, 5), 0.7)), 5.0)
    assert np.all(t.w0 == 1.0) and np.all(t.w1 == 1.0)


def test_edge_tensor_step_edge():
    img = np.zeros((4, 6))
    img[:, 3:] = 0.5  # vertical edge between columns 2 and 3
    t = edge_tensor(ScalarMap(img), 4.0)
    assert np.allclose(t.w0[:, 2], np.exp(-4.0 * 0.5), atol=1e-15)
    assert np.all(t.w1 == 1.0)


def test_edge_tensor_monotone_in_gamma():
    rng = np.random.default_rng(3)
    img = ScalarMap(rng.uniform(0, 1, (6, 6)))
    t1 = edge_tensor(img, 2.0)
    t2 = edge_tensor(img, 6.0)
    assert np.all(t2.w0 <= t1.w0) and np.all(t2.w1 <= t1.w1)
    assert t1.w0.min() > 0.0 and t1.w0.max() <= 1.0


def test_edge_tensor_rejects_nonpositive_gamma():
    with pytest.raises(NonPositiveGamma):
        edge_tensor(ScalarMap(np.zeros((2, 2))), 0.0)


def test_loss_zero_when_perfect():
    M, N, d = 3, 3, 2
    p0 = np.zeros((M, N, 2 * d))
    p1 = np.zeros((M, N, 2 * d))
    ustar = _flow(np.full((M, N), 1.0), np.full((M, N), -1.0))
    p0[:, :, 1 + d] = 1.0  # displacement +1
    p1[:, :, -1 + d] = 1.0  # displacement -1
    loss = loss_cor(
        ScalarMap(p0), ScalarMap(p1), ustar, ustar, np.ones((M, N), bool), 0.1, 0.01
    )
    # -log(1) twice; the fitting term keeps the Huber floor eps^2/2
    floor = 0.1 * min(1.0, 0.5 * 0.01**2) * M * N
    assert abs(loss - floor) < 1e-12
    assert loss < 1e-4  # "zero" up to the floor convention


def test_loss_clamps_large_errors():
    M, N, d = 2, 2, 1
    p0 = np.full((M, N, 2), 0.5)
    p1 = np.full((M, N, 2), 0.5)
    uhat = _flow(np.full((M, N), 500.0), np.zeros((M, N)))
    ustar = _flow(np.zeros((M, N)), np.zeros((M, N)))
    loss = loss_cor(ScalarMap(p0), ScalarMap(p1), uhat, ustar, np.ones((M, N), bool), 0.1, 0.01)
    expect = (2 * (-np.log(0.5)) + 0.1 * 1.0) * M * N
    assert abs(loss - expect) < 1e-12


def test_loss_matches_transcription():
    rng = np.random.default_rng(4)
    M, N, d = 3, 4, 2
    raw0 = rng.uniform(0.05, 1.0, (M, N, 2 * d))
    p0 = raw0 / raw0.sum(axis=2, keepdims=True)
    raw1 = rng.uniform(0.05, 1.0, (M, N, 2 * d))
    p1 = raw1 / raw1.sum(axis=2, keepdims=True)
    uhat = _flow(rng.uniform(-1, 1, (M, N)), rng.uniform(-1, 1, (M, N)))
    ustar = _flow(rng.uniform(-1.4, 1.4, (M, N)), rng.uniform(-1.4, 1.4, (M, N)))
    valid = rng.uniform(size=(M, N)) > 0.3
    alpha, eps = 0.1, 0.01
    got = loss_cor(ScalarMap(p0), ScalarMap(p1), uhat, ustar, valid, alpha, eps)
    ref = 0.0
    for y in range(M):
        for x in range(N):
            if not valid[y, x]:
                continue
            i0 = int(np.rint(ustar.u0[y, x]))
            i1 = int(np.rint(ustar.u1[y, x]))
            if not (-d <= i0 < d and -d <= i1 < d):
                continue
            ref -= np.log(p0[y, x, i0 + d]) + np.log(p1[y, x, i1 + d])
            n = np.hypot(uhat.u0[y, x] - ustar.u0[y, x], uhat.u1[y, x] - ustar.u1[y, x])
            hub = 0.5 * n * n + 0.5 * eps * eps if n <= eps else eps * n
            ref += alpha * min(1.0, hub)
    assert abs(got - ref) < 1e-12


def test_feature_stack_and_baseline(kernel_backend):
    rng = np.random.default_rng(5)
    f0 = rng.standard_normal((4, 4, 6))
    f1 = rng.standard_normal((4, 4, 6))
    cor00, cor01, cor10, cor11 = correlate(f0, f1, 2)
    ubar = argmin_flow(cor00, cor01)
    ubar_bw = argmin_flow(cor10, cor11)
    p0 = softmax_prob(cor00)
    p1 = softmax_prob(cor01)
    psi0 = rng.standard_normal((8, 8, 6))
    psi1 = rng.standard_normal((8, 8, 6))
    refined = quadfit_refine(ScalarMap(psi0), ScalarMap(psi1), ubar)
    feats = confidence_features(p0, p1, ubar, ubar_bw, refined)
    assert feats.prob.values.shape == (8, 8, 2)
    assert feats.prob.values.min() >= 0.0 and feats.prob.values.max() <= 1.0
    assert feats.fb_dist.values.min() >= 0.0
    assert feats.boundary.values.min() >= 0.0
    conf = baseline_confidence(feats)
    assert conf.c.min() >= 0.0 and conf.c.max() <= 1.0
    for by in range(4):
        for bx in range(4):
            assert np.count_nonzero(conf.c[2 * by : 2 * by + 2, 2 * bx : 2 * bx + 2]) <= 1


def test_fwd_bwd_dim_mismatch():
    with pytest.raises(DimMismatch):
        fwd_bwd_distance(
            _flow(np.zeros((3, 3)), np.zeros((3, 3))),
            _flow(np.zeros((4, 3)), np.zeros((4, 3))),
        )
