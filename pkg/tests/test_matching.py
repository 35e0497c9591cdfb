import numpy as np
import pytest

from varflow.errors import DimMismatch, NonPositiveRange
from varflow.grid_io import ScalarMap
from varflow.matching import (
    argmin_flow,
    correlate,
    prob_at_displacement,
    softmax_prob,
)

from oracles import brute_force_argmin_4d


def _one_hot_features(M, N):
    f = np.zeros((M, N, M * N))
    for y in range(M):
        for x in range(N):
            f[y, x, y * N + x] = 1.0
    return f


def _shifted_features(M, N, shift):
    # distinct unit features; frame 1 holds frame 0 displaced by `shift`
    # with zero padding (no wrap-around)
    f0 = _one_hot_features(M, N)
    f1 = np.zeros_like(f0)
    f1[:, shift:, :] = f0[:, : N - shift, :]
    return f0, f1


def test_identical_features_match_at_zero(kernel_backend):
    f = _one_hot_features(4, 4)
    cor00, cor01, _, _ = correlate(f, f, 2)
    flow = argmin_flow(cor00, cor01)
    assert np.all(flow.u0 == 0.0) and np.all(flow.u1 == 0.0)
    assert np.all(cor00.scores[:, :, 2] == -1.0)
    other = np.delete(cor00.scores, 2, axis=2)
    assert np.all(other >= 0.0)


def test_shifted_features_recover_shift(kernel_backend):
    f0, f1 = _shifted_features(5, 6, 2)
    cor00, cor01, _, _ = correlate(f0, f1, 3)
    flow = argmin_flow(cor00, cor01)
    # pixels whose shifted twin exists
    assert np.all(flow.u0[:, : 6 - 2] == 2.0)
    assert np.all(flow.u1[:, : 6 - 2] == 0.0)


def test_min_projection_equals_brute_force(kernel_backend):
    rng = np.random.default_rng(0)
    checked = 0
    for _ in range(20):
        M = int(rng.integers(3, 7))
        N = int(rng.integers(3, 7))
        f0 = rng.standard_normal((M, N, 3))
        f1 = rng.standard_normal((M, N, 3))
        cor00, cor01, _, _ = correlate(f0, f1, 2)
        flow = argmin_flow(cor00, cor01)
        best, unique = brute_force_argmin_4d(f0, f1, 2)
        assert unique.all()  # continuous features: ties have measure zero
        assert np.array_equal(flow.u0, best[:, :, 0].astype(np.float32))
        assert np.array_equal(flow.u1, best[:, :, 1].astype(np.float32))
        checked += 1
    assert checked == 20


def test_argmin_tie_rule_smallest_displacement(kernel_backend):
    # all-equal scores: the first channel (displacement -d) wins
    from varflow.matching import CostVolume

    scores = np.zeros((3, 3, 4))
    flow = argmin_flow(CostVolume(scores, 2), CostVolume(scores, 2))
    assert np.all(flow.u0 == -2.0) and np.all(flow.u1 == -2.0)


def test_softmax_uniform():
    from varflow.matching import CostVolume

    p = softmax_prob(CostVolume(np.zeros((2, 2, 4)), 2))
    assert np.allclose(p.values, 0.25, atol=0)


def test_softmax_sums_to_one(kernel_backend):
    rng = np.random.default_rng(1)
    f0 = rng.standard_normal((4, 5, 3))
    f1 = rng.standard_normal((4, 5, 3))
    cor00, _, _, _ = correlate(f0, f1, 2)
    p = softmax_prob(cor00)
    assert np.abs(p.values.sum(axis=2) - 1.0).max() < 1e-6
    assert p.values.min() >= 0.0 and p.values.max() <= 1.0


def test_softmax_dominant_score():
    from varflow.matching import CostVolume

    scores = np.full((1, 1, 4), 100.0)
    scores[0, 0, 1] = 0.0
    p = softmax_prob(CostVolume(scores, 2))
    assert p.values[0, 0, 1] >= 1.0 - 1e-40


def test_backward_volumes_equal_swapped_forward(kernel_backend):
    rng = np.random.default_rng(2)
    f0 = rng.standard_normal((4, 4, 3))
    f1 = rng.standard_normal((4, 4, 3))
    _, _, cor10, cor11 = correlate(f0, f1, 2)
    swapped00, swapped01, _, _ = correlate(f1, f0, 2)
    assert np.array_equal(cor10.scores, swapped00.scores)
    assert np.array_equal(cor11.scores, swapped01.scores)


def test_correlate_validation():
    f = np.zeros((3, 3, 2))
    with pytest.raises(DimMismatch):
        correlate(f, np.zeros((3, 4, 2)), 2)
    with pytest.raises(NonPositiveRange):
        correlate(f, f, 0)


def test_prob_lookup_out_of_range_is_zero():
    p = ScalarMap(np.full((2, 2, 4), 0.25))
    vals = prob_at_displacement(p, np.full((2, 2), 5.0))
    assert np.all(vals == 0.0)
