"""Second-order (TGV) flow inpainting with the same unrolled machinery.

The regularizer couples the flow channel u with an auxiliary vector field
(w0, w1): it penalizes sqrt(W)(Du - w) and beta-weighted differences of
each auxiliary channel, all through the same per-group Huber norm.  The
smooth part is stepped jointly for (u, w) through the stacked operator;
only u passes the data prox.  Step-size folding uses the constant
L = max(12, 8*beta): the tensor channels become W/L, the auxiliary
difference weight beta/L, and the group norms are evaluated with weights
W/L and 1/L.  Checkpointing, precision policy and determinism guarantees
are identical to the TV solver; gradients are returned with respect to
the unscaled inputs, with the scalar beta gradient summed over pixels in
a fixed order.  L is treated as a constant of the iteration: the returned
beta gradient is exact wherever max(12, 8*beta) is locally flat in beta
(beta < 1.5).
"""

import math
from dataclasses import dataclass

import numpy as np

from . import backend
from .diffops import huber_field
from .errors import (
    DimMismatch,
    NonFinite,
    NonPositiveDelta,
    NonPositiveValue,
    StoreMismatch,
)
from .tv import CheckpointStore, _rho, checkpoint_indices, _check_shapes, _require_finite


def tgv_step_constant(beta):
    return max(12.0, 8.0 * beta)


@dataclass
class TgvWeights:
    """Step-folded diagonal weights of the stacked smooth term."""

    beta: float
    lipschitz: float
    a0: np.ndarray  # tensor channel 0 / L
    a1: np.ndarray  # tensor channel 1 / L
    e: float  # 1 / L, the group-norm weight of the auxiliary differences
    b: float  # beta / L

    @classmethod
    def from_tensor(cls, tw0, tw1, beta, dtype=np.float64):
        if beta <= 0:
            raise NonPositiveValue(f"beta must be > 0, got {beta}")
        L = tgv_step_constant(beta)
        tw0 = np.asarray(tw0, dtype=np.float64)
        tw1 = np.asarray(tw1, dtype=np.float64)
        return cls(
            beta=float(beta),
            lipschitz=L,
            a0=(tw0 / L).astype(dtype),
            a1=(tw1 / L).astype(dtype),
            e=1.0 / L,
            b=float(beta) / L,
        )


@dataclass
class TgvState:
    """Joint (u, w) state with extrapolated companions (v, q)."""

    u: np.ndarray
    w0: np.ndarray
    w1: np.ndarray
    v: np.ndarray
    q0: np.ndarray
    q1: np.ndarray
    k: int
    t_prev: float
    t_cur: float


@dataclass
class TgvGradients:
    """Float64 gradients; d_w0/d_w1 are w.r.t. the initial auxiliaries."""

    d_uhat: np.ndarray
    d_c: np.ndarray
    d_tw0: np.ndarray
    d_tw1: np.ndarray
    d_beta: float
    d_u0: np.ndarray
    d_w0: np.ndarray
    d_w1: np.ndarray


def tgv_step(state, uhat, c, weights, delta):
    """Single joint FISTA iteration; weights must be pre-folded (TgvWeights)."""
    kern = backend.get_kernels()
    if delta <= 0:
        raise NonPositiveDelta(f"delta must be > 0, got {delta}")
    u = state.u.copy()
    w0 = state.w0.copy()
    w1 = state.w1.copy()
    v = state.v.copy()
    q0 = state.q0.copy()
    q1 = state.q1.copy()
    _check_shapes(u, w0, w1, v, q0, q1, uhat, c, weights.a0, weights.a1)
    t_next = (1.0 + math.sqrt(1.0 + 4.0 * state.t_cur * state.t_cur)) / 2.0
    rho = np.array([(state.t_cur - 1.0) / t_next], dtype=np.float64)
    g = np.zeros((6,) + u.shape, dtype=u.dtype)
    empty = np.empty((0,) + u.shape, dtype=u.dtype)
    empty_vq = np.empty((0, 3) + u.shape, dtype=u.dtype)
    kern.tgv_fwd_segment(
        u, w0, w1, v, q0, q1, g, uhat, c, weights.a0, weights.a1,
        float(weights.e), float(weights.b), float(delta), rho, 0, 1,
        empty, empty_vq,
    )
    _require_finite(f"iterate after step {state.k}", u, w0, w1, v, q0, q1)
    return TgvState(u, w0, w1, v, q0, q1, state.k + 1, state.t_cur, t_next)


def tgv_forward(uhat, c, tw0, tw1, beta, config, u0=None, w_init=None):
    """Run K joint iterations; returns (u_K, w0_K, w1_K, store).

    u0 defaults to uhat, the auxiliaries to zero.  Checkpoints hold the
    full six-field state.
    """
    config.validate()
    kern = backend.get_kernels()
    dt = config.dtype
    uhat64 = np.asarray(uhat, dtype=np.float64)
    c64 = np.asarray(c, dtype=np.float64)
    _check_shapes(uhat64, c64, np.asarray(tw0), np.asarray(tw1))
    uhat_w = uhat64.astype(dt)
    c_w = c64.astype(dt)
    weights = TgvWeights.from_tensor(tw0, tw1, beta, dtype=dt)
    _require_finite("inputs", uhat_w, c_w, weights.a0, weights.a1)
    K = config.iters
    if u0 is None:
        u = uhat_w.copy()
    else:
        u0 = np.asarray(u0)
        _check_shapes(u0, uhat_w)
        u = u0.astype(dt)
    if w_init is None:
        w0 = np.zeros_like(u)
        w1 = np.zeros_like(u)
    else:
        w0 = np.asarray(w_init[0]).astype(dt)
        w1 = np.asarray(w_init[1]).astype(dt)
        _check_shapes(w0, w1, uhat_w)
    v = u.copy()
    q0 = w0.copy()
    q1 = w1.copy()
    rho = _rho(K)
    indices = checkpoint_indices(K, config.checkpoint_mode)
    store = CheckpointStore(
        kind="tgv",
        iters=K,
        checkpoint_mode=config.checkpoint_mode,
        segment_len=math.ceil(math.sqrt(K)),
        shape=uhat_w.shape,
        dtype=dt,
        indices=indices,
    )
    g = np.zeros((6,) + u.shape, dtype=dt)
    empty = np.empty((0,) + u.shape, dtype=dt)
    empty_vq = np.empty((0, 3) + u.shape, dtype=dt)
    bounds = indices + [K]
    for i in range(len(indices)):
        k0, k1 = bounds[i], bounds[i + 1]
        store.states.append(
            (u.copy(), w0.copy(), w1.copy(), v.copy(), q0.copy(), q1.copy())
        )
        kern.tgv_fwd_segment(
            u, w0, w1, v, q0, q1, g, uhat_w, c_w, weights.a0, weights.a1,
            float(weights.e), float(weights.b), float(config.delta), rho, k0, k1,
            empty, empty_vq,
        )
        _require_finite(f"iterate at checkpoint {k1}", u, w0, w1, v, q0, q1)
    return u, w0, w1, store


def tgv_backward(d_uK, d_w0K, d_w1K, store, uhat, c, tw0, tw1, beta, config):
    """Exact gradients of a loss on (u_K, w_K) w.r.t. all inputs."""
    config.validate()
    kern = backend.get_kernels()
    if store.kind != "tgv":
        raise StoreMismatch(f"store kind {store.kind!r}, expected 'tgv'")
    if store.iters != config.iters:
        raise StoreMismatch(f"store has K={store.iters}, config K={config.iters}")
    if store.checkpoint_mode != config.checkpoint_mode:
        raise StoreMismatch(
            f"store mode {store.checkpoint_mode!r} != {config.checkpoint_mode!r}"
        )
    if store.dtype != config.dtype:
        raise StoreMismatch("store precision differs from config")
    dt = config.dtype
    uhat_w = np.asarray(uhat, dtype=np.float64).astype(dt)
    c_w = np.asarray(c, dtype=np.float64).astype(dt)
    weights = TgvWeights.from_tensor(tw0, tw1, beta, dtype=dt)
    if store.shape != uhat_w.shape:
        raise StoreMismatch(f"store shape {store.shape} != field {uhat_w.shape}")
    M, N = uhat_w.shape
    P = np.empty((3, M, N), dtype=np.float64)
    P[0] = np.asarray(d_uK, dtype=np.float64)
    P[1] = np.asarray(d_w0K, dtype=np.float64)
    P[2] = np.asarray(d_w1K, dtype=np.float64)
    _require_finite("loss gradient", P)
    Q = np.zeros((3, M, N), dtype=np.float64)
    R = np.zeros((3, M, N), dtype=np.float64)
    d05 = np.zeros((M, N), dtype=np.float64)
    h = np.zeros((6, M, N), dtype=np.float64)
    d_uhat = np.zeros((M, N), dtype=np.float64)
    d_c = np.zeros((M, N), dtype=np.float64)
    d_t0 = np.zeros((M, N), dtype=np.float64)
    d_t1 = np.zeros((M, N), dtype=np.float64)
    d_beta_map = np.zeros((M, N), dtype=np.float64)
    K = config.iters
    rho = _rho(K)
    seg_cap = max(k1 - k0 for k0, k1, _ in store.segments())
    rec_u05 = np.empty((seg_cap, M, N), dtype=dt)
    rec_vq = np.empty((seg_cap, 3, M, N), dtype=dt)
    g = np.zeros((6, M, N), dtype=dt)
    for k0, k1, state in reversed(store.segments()):
        L = k1 - k0
        su, sw0, sw1, sv, sq0, sq1 = state
        if su.shape != (M, N):
            raise StoreMismatch(f"checkpoint shape {su.shape} != field {(M, N)}")
        ur, w0r, w1r = su.copy(), sw0.copy(), sw1.copy()
        vr, q0r, q1r = sv.copy(), sq0.copy(), sq1.copy()
        kern.tgv_fwd_segment(
            ur, w0r, w1r, vr, q0r, q1r, g, uhat_w, c_w, weights.a0, weights.a1,
            float(weights.e), float(weights.b), float(config.delta), rho, k0, k1,
            rec_u05[:L], rec_vq[:L],
        )
        kern.tgv_bwd_segment(
            rec_u05[:L], rec_vq[:L], uhat_w, c_w, weights.a0, weights.a1,
            float(weights.e), float(weights.b), float(config.delta), rho, k0, k1,
            P, Q, R, d05, h, d_uhat, d_c, d_t0, d_t1, d_beta_map,
        )
        _require_finite(
            f"gradients at segment {k0}", d_uhat, d_c, d_t0, d_t1, d_beta_map, Q
        )
    L_step = weights.lipschitz
    return TgvGradients(
        d_uhat=d_uhat,
        d_c=d_c,
        d_tw0=d_t0 / L_step,
        d_tw1=d_t1 / L_step,
        d_beta=float(np.sum(d_beta_map)) / L_step,
        d_u0=Q[0],
        d_w0=Q[1],
        d_w1=Q[2],
    )


def tgv_energy(u, w0, w1, uhat, c, tw0, tw1, beta, delta):
    """Literal second-order energy including the Huber floors."""
    if delta <= 0:
        raise NonPositiveDelta(f"delta must be > 0, got {delta}")
    if beta <= 0:
        raise NonPositiveValue(f"beta must be > 0, got {beta}")
    u = np.asarray(u, dtype=np.float64)
    w0 = np.asarray(w0, dtype=np.float64)
    w1 = np.asarray(w1, dtype=np.float64)
    uhat = np.asarray(uhat, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    tw0 = np.asarray(tw0, dtype=np.float64)
    tw1 = np.asarray(tw1, dtype=np.float64)
    _check_shapes(u, w0, w1, uhat, c, tw0, tw1)

    def d(f):
        gx = np.zeros_like(f)
        gy = np.zeros_like(f)
        gx[:, :-1] = f[:, 1:] - f[:, :-1]
        gy[:-1, :] = f[1:, :] - f[:-1, :]
        return gx, gy

    gx, gy = d(u)
    z0 = gx - w0
    z1 = gy - w1
    nA = np.sqrt(tw0 * z0 * z0 + tw1 * z1 * z1)
    g0x, g0y = d(w0)
    nB = np.sqrt(g0x * g0x + g0y * g0y)
    g1x, g1y = d(w1)
    nC = np.sqrt(g1x * g1x + g1y * g1y)
    reg = (
        np.sum(huber_field(nA, delta))
        + beta * (np.sum(huber_field(nB, delta)) + np.sum(huber_field(nC, delta)))
    )
    return float(reg + np.sum(c * np.abs(u - uhat)))
