"""Huber-TV flow inpainting by unrolled FISTA with an exact reverse pass.

Forward: K accelerated proximal-gradient iterations on one flow channel

    E(u) = sum_p huber(|sqrt(W') D u|_p, delta) + sum_p c_p |u_p - uhat_p|

where W' is the diffusion tensor divided by the step constant 8 (folded in
once at entry, so the smooth part has unit Lipschitz constant and the
iteration runs with step size 1).

Backward: reverse-mode gradients of any scalar loss on u_K with respect to
uhat, c, the *unscaled* tensor, and the initial iterate u0.  Memory stays
O(sqrt(K) * N * M) via checkpointing: the forward stores (u, v) at about
sqrt(K) indices, and the reverse pass replays one segment at a time to
regenerate the per-iteration quantities it needs.  All gradient buffers
accumulate in float64; replay recomputes every branch decision with the
same expressions and precision as the forward pass, so checkpointed and
full-storage backward runs are bit-identical.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import backend
from .defaults import DEFAULTS
from .diffops import huber_field
from .errors import (
    DimMismatch,
    NonFinite,
    NonPositiveDelta,
    NonPositiveValue,
    StoreMismatch,
)

_PRECISIONS = {"f64": np.float64, "mixed": np.float32}
TV_STEP_CONSTANT = 8.0


@dataclass
class SolverConfig:
    """Iteration budget and numerical policy shared by both solvers.

    precision "f64" keeps iterates in float64; "mixed" stores iterates and
    replay buffers in float32 while gradients still accumulate in float64.
    """

    delta: float = DEFAULTS["delta"]
    iters: int = 100
    checkpoint_mode: str = "sqrt"  # "sqrt" or "full"
    precision: str = "f64"  # "f64" or "mixed"

    def validate(self):
        if self.delta <= 0:
            raise NonPositiveDelta(f"delta must be > 0, got {self.delta}")
        if self.iters < 1:
            raise NonPositiveValue(f"iters must be >= 1, got {self.iters}")
        if self.checkpoint_mode not in ("sqrt", "full"):
            raise NonPositiveValue(f"unknown checkpoint_mode {self.checkpoint_mode!r}")
        if self.precision not in _PRECISIONS:
            raise NonPositiveValue(f"unknown precision {self.precision!r}")

    @property
    def dtype(self):
        return _PRECISIONS[self.precision]


@dataclass
class TvState:
    """One-channel solver state after iteration k."""

    u: np.ndarray
    v: np.ndarray
    k: int
    t_prev: float
    t_cur: float


@dataclass
class CheckpointStore:
    """Snapshots of the solver state at O(sqrt(K)) iteration indices."""

    kind: str
    iters: int
    checkpoint_mode: str
    segment_len: int
    shape: tuple
    dtype: object
    indices: list = field(default_factory=list)
    states: list = field(default_factory=list)

    def segments(self):
        """(k0, k1, state) triples covering 0..iters, coarse order."""
        bounds = list(self.indices) + [self.iters]
        return [
            (bounds[i], bounds[i + 1], self.states[i])
            for i in range(len(self.indices))
        ]


def fista_t_sequence(K):
    """Extrapolation weights t^0..t^K with t^0 = 1 and
    t^{k+1} = (1 + sqrt(1 + 4 t_k^2)) / 2."""
    t = np.empty(K + 1, dtype=np.float64)
    t[0] = 1.0
    for k in range(K):
        t[k + 1] = (1.0 + math.sqrt(1.0 + 4.0 * t[k] * t[k])) / 2.0
    return t


def _rho(K):
    t = fista_t_sequence(K)
    return ((t[:-1] - 1.0) / t[1:]).astype(np.float64)


def checkpoint_indices(K, mode):
    """Snapshot indices: every ceil(k*sqrt(K)) below K, or every index."""
    if mode == "full":
        return list(range(K))
    s = math.sqrt(K)
    idx = sorted({math.ceil(k * s) for k in range(math.floor(s) + 1)})
    return [i for i in idx if i < K]


def prox_data(u_half, uhat, c):
    """Soft shrinkage of the iterate toward uhat with per-pixel radius c."""
    u_half, uhat, c = np.asarray(u_half), np.asarray(uhat), np.asarray(c)
    if not (u_half.shape == uhat.shape == c.shape):
        raise DimMismatch(f"{u_half.shape}, {uhat.shape}, {c.shape}")
    return np.where(
        u_half - c > uhat, u_half - c, np.where(u_half + c < uhat, u_half + c, uhat)
    )


def _check_shapes(*arrays):
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise DimMismatch(f"field shapes disagree: {sorted(shapes)}")


def _require_finite(what, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFinite(f"non-finite values in {what}")


def tv_step(state, uhat, c, tw0_scaled, tw1_scaled, delta):
    """Single FISTA iteration; the tensor must already be divided by 8."""
    kern = backend.get_kernels()
    u = state.u.copy()
    v = state.v.copy()
    _check_shapes(u, v, uhat, c, tw0_scaled, tw1_scaled)
    if delta <= 0:
        raise NonPositiveDelta(f"delta must be > 0, got {delta}")
    t_next = (1.0 + math.sqrt(1.0 + 4.0 * state.t_cur * state.t_cur)) / 2.0
    rho = np.array([(state.t_cur - 1.0) / t_next], dtype=np.float64)
    gx = np.zeros_like(u)
    gy = np.zeros_like(u)
    empty = np.empty((0,) + u.shape, dtype=u.dtype)
    kern.tv_fwd_segment(
        u, v, gx, gy, uhat, c, tw0_scaled, tw1_scaled, float(delta), rho, 0, 1,
        empty, empty,
    )
    _require_finite(f"iterate after step {state.k}", u, v)
    return TvState(u, v, state.k + 1, state.t_cur, t_next)


def _working_inputs(uhat, c, tw0, tw1, config, step_constant):
    uhat = np.asarray(uhat, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    tw0 = np.asarray(tw0, dtype=np.float64)
    tw1 = np.asarray(tw1, dtype=np.float64)
    _check_shapes(uhat, c, tw0, tw1)
    dt = config.dtype
    return (
        uhat.astype(dt),
        c.astype(dt),
        (tw0 / step_constant).astype(dt),
        (tw1 / step_constant).astype(dt),
    )


def tv_forward(uhat, c, tw0, tw1, config, u0=None):
    """Run K iterations; returns the final iterate and a checkpoint store.

    u0 defaults to uhat.  The returned field is in working precision.
    """
    config.validate()
    kern = backend.get_kernels()
    uhat_w, c_w, a0, a1 = _working_inputs(uhat, c, tw0, tw1, config, TV_STEP_CONSTANT)
    _require_finite("inputs", uhat_w, c_w, a0, a1)
    dt = config.dtype
    K = config.iters
    if u0 is None:
        u = uhat_w.copy()
    else:
        u0 = np.asarray(u0)
        _check_shapes(u0, uhat_w)
        u = u0.astype(dt)
    v = u.copy()
    rho = _rho(K)
    indices = checkpoint_indices(K, config.checkpoint_mode)
    store = CheckpointStore(
        kind="tv",
        iters=K,
        checkpoint_mode=config.checkpoint_mode,
        segment_len=math.ceil(math.sqrt(K)),
        shape=uhat_w.shape,
        dtype=dt,
        indices=indices,
    )
    gx = np.zeros_like(u)
    gy = np.zeros_like(u)
    empty = np.empty((0,) + u.shape, dtype=dt)
    bounds = indices + [K]
    for i in range(len(indices)):
        k0, k1 = bounds[i], bounds[i + 1]
        store.states.append((u.copy(), v.copy()))
        kern.tv_fwd_segment(
            u, v, gx, gy, uhat_w, c_w, a0, a1, float(config.delta), rho, k0, k1,
            empty, empty,
        )
        _require_finite(f"iterate at checkpoint {k1}", u, v)
    return u, store


def tv_backward(d_uK, store, uhat, c, tw0, tw1, config):
    """Exact gradients of a loss with gradient d_uK at the final iterate.

    Returns gradients with respect to uhat, c, the unscaled tensor
    channels, and the initial iterate, all float64.
    """
    config.validate()
    kern = backend.get_kernels()
    if store.kind != "tv":
        raise StoreMismatch(f"store kind {store.kind!r}, expected 'tv'")
    if store.iters != config.iters:
        raise StoreMismatch(f"store has K={store.iters}, config K={config.iters}")
    if store.checkpoint_mode != config.checkpoint_mode:
        raise StoreMismatch(
            f"store mode {store.checkpoint_mode!r} != {config.checkpoint_mode!r}"
        )
    if store.dtype != config.dtype:
        raise StoreMismatch("store precision differs from config")
    uhat_w, c_w, a0, a1 = _working_inputs(uhat, c, tw0, tw1, config, TV_STEP_CONSTANT)
    if store.shape != uhat_w.shape:
        raise StoreMismatch(f"store shape {store.shape} != field {uhat_w.shape}")
    d_uK = np.asarray(d_uK, dtype=np.float64)
    _check_shapes(d_uK, uhat_w)
    _require_finite("loss gradient", d_uK)
    K = config.iters
    rho = _rho(K)
    M, N = uhat_w.shape
    P = d_uK.copy()
    Q = np.zeros((M, N), dtype=np.float64)
    R = np.zeros((M, N), dtype=np.float64)
    d05 = np.zeros((M, N), dtype=np.float64)
    hx = np.zeros((M, N), dtype=np.float64)
    hy = np.zeros((M, N), dtype=np.float64)
    d_uhat = np.zeros((M, N), dtype=np.float64)
    d_c = np.zeros((M, N), dtype=np.float64)
    d_t0 = np.zeros((M, N), dtype=np.float64)
    d_t1 = np.zeros((M, N), dtype=np.float64)
    seg_cap = max(k1 - k0 for k0, k1, _ in store.segments())
    rec_u05 = np.empty((seg_cap, M, N), dtype=store.dtype)
    rec_v = np.empty((seg_cap, M, N), dtype=store.dtype)
    gx = np.zeros((M, N), dtype=store.dtype)
    gy = np.zeros((M, N), dtype=store.dtype)
    for k0, k1, (su, sv) in reversed(store.segments()):
        L = k1 - k0
        if su.shape != (M, N):
            raise StoreMismatch(f"checkpoint shape {su.shape} != field {(M, N)}")
        ur = su.copy()
        vr = sv.copy()
        kern.tv_fwd_segment(
            ur, vr, gx, gy, uhat_w, c_w, a0, a1, float(config.delta), rho, k0, k1,
            rec_u05[:L], rec_v[:L],
        )
        kern.tv_bwd_segment(
            rec_u05[:L], rec_v[:L], uhat_w, c_w, a0, a1, float(config.delta), rho,
            k0, k1, P, Q, R, d05, hx, hy, d_uhat, d_c, d_t0, d_t1,
        )
        _require_finite(f"gradients at segment {k0}", d_uhat, d_c, d_t0, d_t1, Q)
    return TvGradients(
        d_uhat=d_uhat,
        d_c=d_c,
        d_tw0=d_t0 / TV_STEP_CONSTANT,
        d_tw1=d_t1 / TV_STEP_CONSTANT,
        d_u0=Q,
    )


@dataclass
class TvGradients:
    """Float64 gradients w.r.t. the solver inputs (tensor unscaled)."""

    d_uhat: np.ndarray
    d_c: np.ndarray
    d_tw0: np.ndarray
    d_tw1: np.ndarray
    d_u0: np.ndarray


def tv_energy(u, uhat, c, tw0, tw1, delta):
    """Literal energy: Huber of the weighted differences plus weighted-L1
    data term (the Huber floor delta^2/2 per pixel included)."""
    if delta <= 0:
        raise NonPositiveDelta(f"delta must be > 0, got {delta}")
    u = np.asarray(u, dtype=np.float64)
    uhat = np.asarray(uhat, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    tw0 = np.asarray(tw0, dtype=np.float64)
    tw1 = np.asarray(tw1, dtype=np.float64)
    _check_shapes(u, uhat, c, tw0, tw1)
    gx = np.zeros_like(u)
    gy = np.zeros_like(u)
    gx[:, :-1] = u[:, 1:] - u[:, :-1]
    gy[:-1, :] = u[1:, :] - u[:-1, :]
    n = np.sqrt(tw0 * gx * gx + tw1 * gy * gy)
    return float(np.sum(huber_field(n, delta)) + np.sum(c * np.abs(u - uhat)))
