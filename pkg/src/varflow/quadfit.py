"""Sub-pixel refinement of integer matches by separable quadratic fitting.

The coarse match (at half resolution, displacements in coarse units)
implies four integer candidates on the fine grid; the cheapest candidate
anchors a 5-point cost stencil (center, +-x, +-y) sampled from the
high-resolution feature maps.  A parabola per axis gives the sub-pixel
correction and its value.  Fitting fails when the stencil leaves the
grid, the curvature is not positive, or the minimum falls outside
(-1, 1); failed pixels keep the integer candidate and its center cost
and receive zero gradients.

The reverse pass has two stages kept separate on purpose: gradients of
(flow, cost) w.r.t. the five stencil costs (quadfit_backward), and the
linear completion from stencil costs to the feature maps
(stencil_feature_grads), which is just the correlation transpose.
Neither propagates through the integer candidate selection.
"""

from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import DimMismatch, StoreMismatch
from .grid_io import FlowField, ScalarMap

EPS_CURVATURE = 1e-12
STENCIL_OFFSETS = ((0, 0), (1, 0), (-1, 0), (0, 1), (0, -1))  # (ox, oy)


@dataclass
class QuadFitResult:
    """Refined flow at full resolution plus everything the reverse pass needs."""

    flow: FlowField
    cost: ScalarMap
    failed: np.ndarray  # bool (M, N)
    stencil: np.ndarray  # (M, N, 5) costs: center, +x, -x, +y, -y
    cand0: np.ndarray  # chosen integer candidate, x component
    cand1: np.ndarray


def _values(f):
    return f.values if isinstance(f, ScalarMap) else np.asarray(f)


def quadfit_refine(psi0, psi1, ubar):
    """Refine a coarse integer flow against full-resolution features."""
    a = _values(psi0)
    b = _values(psi1)
    if a.shape != b.shape:
        raise DimMismatch(f"feature maps {a.shape} vs {b.shape}")
    M, N, _ = a.shape
    if not isinstance(ubar, FlowField):
        ubar = FlowField(*ubar)
    if N != 2 * ubar.width or M != 2 * ubar.height:
        raise DimMismatch(
            f"features {N}x{M} are not twice the coarse flow "
            f"{ubar.width}x{ubar.height}"
        )
    ub0 = np.rint(ubar.u0).astype(np.int64)
    ub1 = np.rint(ubar.u1).astype(np.int64)
    kern = backend.get_kernels()
    flow0 = np.zeros((M, N), dtype=np.float64)
    flow1 = np.zeros((M, N), dtype=np.float64)
    cost = np.zeros((M, N), dtype=np.float64)
    failed = np.zeros((M, N), dtype=np.uint8)
    stencil = np.zeros((M, N, 5), dtype=np.float64)
    cand0 = np.zeros((M, N), dtype=np.int64)
    cand1 = np.zeros((M, N), dtype=np.int64)
    kern.quadfit_kernel(
        a, b, ub0, ub1, EPS_CURVATURE, flow0, flow1, cost, failed, stencil,
        cand0, cand1,
    )
    return QuadFitResult(
        flow=FlowField(flow0, flow1),
        cost=ScalarMap(cost),
        failed=failed.astype(bool),
        stencil=stencil,
        cand0=cand0,
        cand1=cand1,
    )


def quadfit_backward(d_flow, d_cost, result):
    """Gradients of (flow, cost) w.r.t. the five stencil costs.

    Returns an (M, N, 5) array; rows of failed pixels are zero (their
    forward output is piecewise constant in the features).
    """
    if not isinstance(d_flow, FlowField):
        d_flow = FlowField(*d_flow)
    dcost = _values(d_cost)[:, :, 0]
    q = result.stencil
    if q.shape[:2] != d_flow.u0.shape or dcost.shape != d_flow.u0.shape:
        raise StoreMismatch("gradient shapes do not match the saved stencil")
    ok = ~result.failed
    q00, qp0, qm0, q0p, q0m = (q[:, :, i] for i in range(5))
    a0 = (qp0 + qm0 - 2.0 * q00) / 2.0
    b0 = (qp0 - qm0) / 2.0
    a1 = (q0p + q0m - 2.0 * q00) / 2.0
    b1 = (q0p - q0m) / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        v0 = np.where(ok, -b0 / (2.0 * a0), 0.0)
        v1 = np.where(ok, -b1 / (2.0 * a1), 0.0)
        # dv/dq from v = -b/(2a) with da, db per stencil point
        dv0_q00 = -b0 / (2.0 * a0 * a0)
        dv0_qp0 = b0 / (4.0 * a0 * a0) - 1.0 / (4.0 * a0)
        dv0_qm0 = b0 / (4.0 * a0 * a0) + 1.0 / (4.0 * a0)
        dv1_q00 = -b1 / (2.0 * a1 * a1)
        dv1_q0p = b1 / (4.0 * a1 * a1) - 1.0 / (4.0 * a1)
        dv1_q0m = b1 / (4.0 * a1 * a1) + 1.0 / (4.0 * a1)
    # cost = a0 v0^2 + b0 v0 + q00 + a1 v1^2 + b1 v1; at the fitted minimum
    # df/dv = 0, so only the explicit q-dependence remains
    df_q00 = 1.0 - v0 * v0 - v1 * v1
    df_qp0 = (v0 * v0 + v0) / 2.0
    df_qm0 = (v0 * v0 - v0) / 2.0
    df_q0p = (v1 * v1 + v1) / 2.0
    df_q0m = (v1 * v1 - v1) / 2.0
    du0 = d_flow.u0
    du1 = d_flow.u1
    d_q = np.zeros_like(q)
    d_q[:, :, 0] = dcost * df_q00 + du0 * dv0_q00 + du1 * dv1_q00
    d_q[:, :, 1] = dcost * df_qp0 + du0 * dv0_qp0
    d_q[:, :, 2] = dcost * df_qm0 + du0 * dv0_qm0
    d_q[:, :, 3] = dcost * df_q0p + du1 * dv1_q0p
    d_q[:, :, 4] = dcost * df_q0m + du1 * dv1_q0m
    d_q[result.failed] = 0.0
    return d_q


def stencil_feature_grads(d_q, result, psi0, psi1):
    """Linear completion d_q -> (d_psi0, d_psi1) via the correlation
    transpose; each stencil cost is -<psi0(x, y), psi1(target)>."""
    a = _values(psi0)
    b = _values(psi1)
    M, N, C = a.shape
    if d_q.shape != (M, N, 5):
        raise StoreMismatch(f"d_q shape {d_q.shape} != {(M, N, 5)}")
    d_psi0 = np.zeros_like(a, dtype=np.float64)
    d_psi1 = np.zeros_like(b, dtype=np.float64)
    yy, xx = np.meshgrid(np.arange(M), np.arange(N), indexing="ij")
    for i, (ox, oy) in enumerate(STENCIL_OFFSETS):
        t0 = xx + result.cand0 + ox
        t1 = yy + result.cand1 + oy
        valid = (t0 >= 0) & (t0 < N) & (t1 >= 0) & (t1 < M)
        g = np.where(valid, d_q[:, :, i], 0.0)
        tx = np.clip(t0, 0, N - 1)
        ty = np.clip(t1, 0, M - 1)
        d_psi0 += -g[:, :, None] * b[ty, tx, :]
        np.add.at(
            d_psi1,
            (ty[valid], tx[valid]),
            -g[valid][:, None] * a[valid],
        )
    return d_psi0, d_psi1
