import math

import numpy as np
import pytest

from varflow.errors import NonFinite, StoreMismatch
from varflow.tv import (
    SolverConfig,
    TvState,
    checkpoint_indices,
    fista_t_sequence,
    prox_data,
    tv_backward,
    tv_energy,
    tv_forward,
    tv_step,
)

from oracles import (
    central_difference,
    fista_tv_transcription,
    rel_err,
    t_sequence,
    tv_energy_transcription,
    tv_step_transcription,
)


def _instance(seed, shape=(6, 6), spread=1.0):
    rng = np.random.default_rng(seed)
    return {
        "uhat": rng.standard_normal(shape),
        "c": rng.uniform(0.0, 1.0, shape),
        "tw0": rng.uniform(0.0, 1.0, shape),
        "tw1": rng.uniform(0.0, 1.0, shape),
        "u0": rng.standard_normal(shape) * spread,
    }


# ---------------------------------------------------------------------------
# prox and t sequence
# ---------------------------------------------------------------------------


def test_prox_branches():
    one = np.ones((1, 1))
    assert prox_data(2.0 * one, 0.0 * one, 0.5 * one)[0, 0] == 1.5
    assert prox_data(0.3 * one, 0.0 * one, 0.5 * one)[0, 0] == 0.0
    assert prox_data(-2.0 * one, 0.0 * one, 0.5 * one)[0, 0] == -1.5


def test_prox_tie_goes_to_uhat():
    one = np.ones((1, 1))
    # u_half - c == uhat exactly: the strict inequality sends it to uhat
    assert prox_data(1.5 * one, 1.0 * one, 0.5 * one)[0, 0] == 1.0


def test_t_sequence_values():
    t = fista_t_sequence(2)
    assert t[0] == 1.0
    assert t[1] == pytest.approx((1.0 + math.sqrt(5.0)) / 2.0, abs=1e-15)
    # value forced by the squared recurrence
    t2 = (1.0 + math.sqrt(1.0 + 4.0 * t[1] * t[1])) / 2.0
    assert t[2] == pytest.approx(t2, abs=1e-15)
    assert t[2] == pytest.approx(2.193527085331054, abs=1e-12)


def test_t_sequence_matches_transcription():
    assert np.allclose(fista_t_sequence(20), t_sequence(20), atol=1e-14)


def test_checkpoint_index_bounds():
    for K in (1, 2, 9, 10, 50, 100, 1024, 4000):
        idx = checkpoint_indices(K, "sqrt")
        assert idx[0] == 0
        assert all(b > a for a, b in zip(idx, idx[1:]))
        s = math.floor(math.sqrt(K))
        assert s <= len(idx) <= s + 2
        bounds = idx + [K]
        max_seg = max(b - a for a, b in zip(bounds, bounds[1:]))
        assert max_seg <= math.ceil(math.sqrt(K)) + 1


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------


def test_fixed_point_exact(kernel_backend):
    shape = (5, 4)
    uhat = np.full(shape, 3.0)
    c = np.ones(shape)
    w = np.ones(shape)
    for K in (1, 7, 30):
        cfg = SolverConfig(delta=0.1, iters=K)
        uK, _ = tv_forward(uhat, c, w, w, cfg)
        assert np.array_equal(uK, uhat)


def test_zero_tensor_reaches_uhat_in_one_step(kernel_backend):
    shape = (4, 4)
    uhat = np.full(shape, 2.0)
    cfg = SolverConfig(delta=0.1, iters=1)
    uK, _ = tv_forward(uhat, np.ones(shape), np.zeros(shape), np.zeros(shape), cfg)
    assert np.array_equal(uK, uhat)


def test_step_matches_transcription(numpy_backend):
    inst = _instance(4, (3, 3))
    state = TvState(
        u=inst["u0"].copy(), v=inst["u0"].copy(), k=0, t_prev=1.0, t_cur=1.0
    )
    a0, a1 = inst["tw0"] / 8.0, inst["tw1"] / 8.0
    for _ in range(3):
        state = tv_step(state, inst["uhat"], inst["c"], a0, a1, 0.1)
    u, v = inst["u0"].copy(), inst["u0"].copy()
    t = t_sequence(3)
    for k in range(3):
        u, v = tv_step_transcription(
            u, v, inst["uhat"], inst["c"], a0, a1, 0.1, (t[k] - 1) / t[k + 1]
        )
    assert np.max(np.abs(state.u - u)) < 1e-12
    assert np.max(np.abs(state.v - v)) < 1e-12


def test_forward_matches_transcription(kernel_backend):
    inst = _instance(5, (5, 6))
    cfg = SolverConfig(delta=0.1, iters=9)
    uK, _ = tv_forward(
        inst["uhat"], inst["c"], inst["tw0"], inst["tw1"], cfg, u0=inst["u0"]
    )
    ref = fista_tv_transcription(
        inst["uhat"], inst["c"], inst["tw0"], inst["tw1"], 0.1, 9, inst["u0"]
    )
    assert np.max(np.abs(uK - ref)) < 1e-12


def test_single_confident_pixel_diffuses(kernel_backend):
    shape = (8, 8)
    uhat = np.zeros(shape)
    uhat[3, 4] = 2.0
    c = np.zeros(shape)
    c[3, 4] = 1.0
    cfg = SolverConfig(delta=0.1, iters=4000)
    uK, _ = tv_forward(uhat, c, np.ones(shape), np.ones(shape), cfg, u0=uhat)
    assert np.max(np.abs(uK - 2.0)) < 1e-3


def test_forward_rejects_nonfinite_inputs():
    shape = (3, 3)
    bad = np.zeros(shape)
    bad[0, 0] = np.inf
    with pytest.raises(NonFinite):
        tv_forward(bad, np.ones(shape), np.ones(shape), np.ones(shape), SolverConfig(iters=1))


# ---------------------------------------------------------------------------
# energy
# ---------------------------------------------------------------------------


def test_energy_floor():
    shape = (4, 4)
    u = np.full(shape, 1.25)
    e = tv_energy(u, u, np.ones(shape), np.ones(shape), np.ones(shape), 0.1)
    assert abs(e - 0.08) < 1e-12


def test_energy_floor_zero_tensor():
    shape = (4, 4)
    u = np.full(shape, 1.25)
    e = tv_energy(u, u, np.ones(shape), np.zeros(shape), np.zeros(shape), 0.1)
    assert abs(e - 0.08) < 1e-12


def test_energy_matches_transcription():
    inst = _instance(6, (5, 7))
    u = np.random.default_rng(7).standard_normal((5, 7))
    e = tv_energy(u, inst["uhat"], inst["c"], inst["tw0"], inst["tw1"], 0.1)
    ref = tv_energy_transcription(
        u, inst["uhat"], inst["c"], inst["tw0"], inst["tw1"], 0.1
    )
    assert abs(e - ref) < 1e-12 * max(1.0, abs(ref))


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


def test_backward_one_iteration_passthrough(kernel_backend):
    # c = 1 and u0 = uhat keeps every pixel in the clamp branch: the final
    # iterate is uhat, so its gradient routes to uhat untouched
    shape = (2, 2)
    uhat = np.full(shape, 0.7)
    c = np.ones(shape)
    w = np.ones(shape)
    cfg = SolverConfig(delta=0.1, iters=1)
    uK, store = tv_forward(uhat, c, w, w, cfg)
    assert np.array_equal(uK, uhat)
    d_uK = np.arange(4.0).reshape(shape) + 1.0
    g = tv_backward(d_uK, store, uhat, c, w, w, cfg)
    assert np.array_equal(g.d_uhat, d_uK)
    assert np.all(g.d_c == 0.0)
    assert np.all(g.d_tw0 == 0.0) and np.all(g.d_tw1 == 0.0)
    assert np.all(g.d_u0 == 0.0)


@pytest.mark.parametrize("seed", [0, 3])
def test_backward_matches_finite_differences(kernel_backend, seed):
    inst = _instance(seed, (6, 6))
    cfg = SolverConfig(delta=0.1, iters=30)
    uK, store = tv_forward(
        inst["uhat"], inst["c"], inst["tw0"], inst["tw1"], cfg, u0=inst["u0"]
    )
    g = tv_backward(
        uK.copy(), store, inst["uhat"], inst["c"], inst["tw0"], inst["tw1"], cfg
    )
    analytic = {
        "uhat": g.d_uhat, "c": g.d_c, "tw0": g.d_tw0, "tw1": g.d_tw1, "u0": g.d_u0,
    }

    def loss(**over):
        fields = {k: inst[k] for k in analytic}
        fields.update(over)
        u, _ = tv_forward(
            fields["uhat"], fields["c"], fields["tw0"], fields["tw1"], cfg,
            u0=fields["u0"],
        )
        return 0.5 * float(np.sum(u * u))

    for fam, grad in analytic.items():
        worst = 0.0
        for idx in np.ndindex(grad.shape):
            fd = central_difference(lambda b: loss(**{fam: b}), inst[fam], idx, 1e-5)
            worst = max(worst, rel_err(float(grad[idx]), fd))
        assert worst < 1e-4, f"{fam}: {worst}"


@pytest.mark.parametrize("K", [9, 100])
def test_checkpoint_modes_bit_identical(kernel_backend, K):
    inst = _instance(11, (7, 5))
    grads = {}
    for mode in ("sqrt", "full"):
        cfg = SolverConfig(delta=0.1, iters=K, checkpoint_mode=mode)
        uK, store = tv_forward(
            inst["uhat"], inst["c"], inst["tw0"], inst["tw1"], cfg, u0=inst["u0"]
        )
        grads[mode] = tv_backward(
            uK.copy(), store, inst["uhat"], inst["c"], inst["tw0"], inst["tw1"], cfg
        )
    for name in ("d_uhat", "d_c", "d_tw0", "d_tw1", "d_u0"):
        assert np.array_equal(getattr(grads["sqrt"], name), getattr(grads["full"], name))


def test_checkpoint_modes_bit_identical_mixed_precision(kernel_backend):
    inst = _instance(12, (6, 6))
    grads = {}
    for mode in ("sqrt", "full"):
        cfg = SolverConfig(delta=0.1, iters=33, checkpoint_mode=mode, precision="mixed")
        uK, store = tv_forward(
            inst["uhat"], inst["c"], inst["tw0"], inst["tw1"], cfg, u0=inst["u0"]
        )
        grads[mode] = tv_backward(
            uK.copy(), store, inst["uhat"], inst["c"], inst["tw0"], inst["tw1"], cfg
        )
    for name in ("d_uhat", "d_c", "d_tw0", "d_tw1", "d_u0"):
        assert np.array_equal(getattr(grads["sqrt"], name), getattr(grads["full"], name))


def test_replay_reproduces_forward_bitwise(kernel_backend):
    # replaying a segment from its checkpoint must land exactly on the
    # next checkpoint; this pins every branch decision to the forward pass
    from varflow import backend as bk

    inst = _instance(13, (6, 6))
    cfg = SolverConfig(delta=0.1, iters=50)
    uK, store = tv_forward(
        inst["uhat"], inst["c"], inst["tw0"], inst["tw1"], cfg, u0=inst["u0"]
    )
    kern = bk.get_kernels()
    from varflow.tv import _rho, _working_inputs, TV_STEP_CONSTANT

    uhat_w, c_w, a0, a1 = _working_inputs(
        inst["uhat"], inst["c"], inst["tw0"], inst["tw1"], cfg, TV_STEP_CONSTANT
    )
    rho = _rho(cfg.iters)
    segs = store.segments()
    for i, (k0, k1, (su, sv)) in enumerate(segs):
        u, v = su.copy(), sv.copy()
        gx, gy = np.zeros_like(u), np.zeros_like(u)
        empty = np.empty((0,) + u.shape, dtype=u.dtype)
        kern.tv_fwd_segment(u, v, gx, gy, uhat_w, c_w, a0, a1, 0.1, rho, k0, k1, empty, empty)
        if i + 1 < len(segs):
            nu, nv = segs[i + 1][2]
            assert np.array_equal(u, nu) and np.array_equal(v, nv)
        else:
            assert np.array_equal(u, uK)


def test_store_mismatch_detected(kernel_backend):
    inst = _instance(14, (4, 4))
    cfg = SolverConfig(delta=0.1, iters=10)
    uK, store = tv_forward(inst["uhat"], inst["c"], inst["tw0"], inst["tw1"], cfg)
    with pytest.raises(StoreMismatch):
        bad = SolverConfig(delta=0.1, iters=11)
        tv_backward(uK.copy(), store, inst["uhat"], inst["c"], inst["tw0"], inst["tw1"], bad)
    with pytest.raises(StoreMismatch):
        bad = SolverConfig(delta=0.1, iters=10, checkpoint_mode="full")
        tv_backward(uK.copy(), store, inst["uhat"], inst["c"], inst["tw0"], inst["tw1"], bad)
    with pytest.raises(StoreMismatch):
        bad = SolverConfig(delta=0.1, iters=10, precision="mixed")
        tv_backward(uK.copy(), store, inst["uhat"], inst["c"], inst["tw0"], inst["tw1"], bad)


def test_branch_exclusivity_instrumented(kernel_backend):
    # at every recorded half-step exactly one prox branch fires
    from varflow import backend as bk
    from varflow.tv import _rho, _working_inputs, TV_STEP_CONSTANT

    inst = _instance(15, (5, 5))
    cfg = SolverConfig(delta=0.1, iters=20)
    uK, store = tv_forward(
        inst["uhat"], inst["c"], inst["tw0"], inst["tw1"], cfg, u0=inst["u0"]
    )
    kern = bk.get_kernels()
    uhat_w, c_w, a0, a1 = _working_inputs(
        inst["uhat"], inst["c"], inst["tw0"], inst["tw1"], cfg, TV_STEP_CONSTANT
    )
    rho = _rho(cfg.iters)
    for k0, k1, (su, sv) in store.segments():
        L = k1 - k0
        u, v = su.copy(), sv.copy()
        gx, gy = np.zeros_like(u), np.zeros_like(u)
        rec_u05 = np.empty((L,) + u.shape)
        rec_v = np.empty((L,) + u.shape)
        kern.tv_fwd_segment(u, v, gx, gy, uhat_w, c_w, a0, a1, 0.1, rho, k0, k1, rec_u05, rec_v)
        for j in range(L):
            plus = rec_u05[j] - c_w > uhat_w
            minus = rec_u05[j] + c_w < uhat_w
            clamp = np.abs(uhat_w - rec_u05[j]) <= c_w
            fired = plus.astype(int) + minus.astype(int) + clamp.astype(int)
            assert np.all(fired == 1)
