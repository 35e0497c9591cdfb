"""Numba builds of the hot kernels.

Layout conventions shared with ``_kernels_numpy``:

* scalar fields are ``(M, N)`` arrays indexed ``[y, x]``,
* forward differences vanish on the last column (x) / row (y),
* ``a0, a1`` are the diffusion-tensor channels already divided by the
  step-size constant, in working precision,
* gradient buffers (``P, Q, R``, accumulators) are always float64.

Parallel loops run over rows and write disjoint elements only; no kernel
performs a cross-thread reduction, so results do not depend on the
thread count.
"""

import numpy as np
from numba import njit, prange

SENTINEL = 1e30

# below this pixel count the per-iteration thread-fork overhead of the
# parallel build dominates; both builds are bitwise identical (disjoint
# writes, no cross-thread reductions), so dispatching on size cannot
# change results
PARALLEL_MIN_PIXELS = 1 << 15


def _dual(impl):
    par = njit(parallel=True, cache=True)(impl)
    ser = njit(parallel=False, cache=True)(impl)
    return par, ser


# ---------------------------------------------------------------------------
# TV solver
# ---------------------------------------------------------------------------


def _tv_fwd_segment(u, v, gx, gy, uhat, c, a0, a1, delta, rho, k0, k1, rec_u05, rec_v):
    """Advance (u, v) in place from iteration k0 to k1.

    When the rec buffers are non-empty, stores v^k and u^{k+0.5} for each
    iteration of the segment (needed by the reverse pass).
    """
    M, N = u.shape
    record = rec_u05.shape[0] > 0
    for k in range(k0, k1):
        j = k - k0
        rk = rho[k]
        # weighted, Huber-normalized difference field of the extrapolated iterate
        for y in prange(M):
            for x in range(N):
                vc = v[y, x]
                if record:
                    rec_v[j, y, x] = vc
                zx = v[y, x + 1] - vc if x < N - 1 else vc - vc
                zy = v[y + 1, x] - vc if y < M - 1 else vc - vc
                n2 = a0[y, x] * zx * zx + a1[y, x] * zy * zy
                n = np.sqrt(n2)
                if n > delta:
                    s = delta / n
                    gx[y, x] = a0[y, x] * zx * s
                    gy[y, x] = a1[y, x] * zy * s
                else:
                    gx[y, x] = a0[y, x] * zx
                    gy[y, x] = a1[y, x] * zy
        # divergence-like adjoint step, data prox, extrapolation
        for y in prange(M):
            for x in range(N):
                dT = gx[y, x] - gx[y, x]  # 0 in working precision
                if x > 0:
                    dT += gx[y, x - 1]
                if x < N - 1:
                    dT -= gx[y, x]
                if y > 0:
                    dT += gy[y - 1, x]
                if y < M - 1:
                    dT -= gy[y, x]
                u05 = v[y, x] - dT
                if record:
                    rec_u05[j, y, x] = u05
                uh = uhat[y, x]
                cc = c[y, x]
                if u05 - cc > uh:
                    un = u05 - cc
                elif u05 + cc < uh:
                    un = u05 + cc
                else:
                    un = uh
                v[y, x] = un + rk * (un - u[y, x])
                u[y, x] = un


_tv_fwd_par, _tv_fwd_ser = _dual(_tv_fwd_segment)


def tv_fwd_segment(u, v, *args):
    kern = _tv_fwd_par if u.size >= PARALLEL_MIN_PIXELS else _tv_fwd_ser
    kern(u, v, *args)


def _tv_bwd_segment(
    rec_u05,
    rec_v,
    uhat,
    c,
    a0,
    a1,
    delta,
    rho,
    k0,
    k1,
    P,
    Q,
    R,
    d05,
    hx,
    hy,
    d_uhat,
    d_c,
    d_t0,
    d_t1,
):
    """Reverse iterations k1-1 .. k0.

    On entry P holds the complete gradient w.r.t. u^{k1} and Q the partial
    gradient w.r.t. u^{k1-1}; on exit (k0 > 0) the same invariant holds at
    k0.  For k0 == 0, Q ends as the gradient w.r.t. the initial iterate.
    Branch decisions are recomputed from the recorded iterates with the
    same expressions as the forward pass, so they match it exactly.
    """
    M, N = uhat.shape
    for k in range(k1 - 1, k0 - 1, -1):
        j = k - k0
        # data prox: route gradient to uhat (clamp branch) or pass through
        for y in prange(M):
            for x in range(N):
                u05 = rec_u05[j, y, x]
                uh = uhat[y, x]
                cc = c[y, x]
                p = P[y, x]
                if u05 - cc > uh:
                    d05[y, x] = p
                    d_c[y, x] -= p
                elif u05 + cc < uh:
                    d05[y, x] = p
                    d_c[y, x] += p
                else:
                    d_uhat[y, x] += p
                    d05[y, x] = 0.0
        # Jacobian of the Huber-normalized difference step + tensor gradient
        for y in prange(M):
            for x in range(N):
                vc = rec_v[j, y, x]
                zx = rec_v[j, y, x + 1] - vc if x < N - 1 else vc - vc
                zy = rec_v[j, y + 1, x] - vc if y < M - 1 else vc - vc
                n2 = a0[y, x] * zx * zx + a1[y, x] * zy * zy
                n = np.sqrt(n2)
                dc = d05[y, x]
                sx = d05[y, x + 1] - dc if x < N - 1 else 0.0
                sy = d05[y + 1, x] - dc if y < M - 1 else 0.0
                if n > delta:
                    t = a0[y, x] * zx * sx + a1[y, x] * zy * sy
                    f = delta / n
                    hx[y, x] = f * (a0[y, x] * sx - a0[y, x] * zx * t / n2)
                    hy[y, x] = f * (a1[y, x] * sy - a1[y, x] * zy * t / n2)
                    d_t0[y, x] -= delta * (sx * zx / n - t * zx * zx / (2.0 * n * n2))
                    d_t1[y, x] -= delta * (sy * zy / n - t * zy * zy / (2.0 * n * n2))
                else:
                    hx[y, x] = a0[y, x] * sx
                    hy[y, x] = a1[y, x] * sy
                    d_t0[y, x] -= sx * zx
                    d_t1[y, x] -= sy * zy
        # adjoint of the difference gather, then momentum split
        for y in prange(M):
            for x in range(N):
                dT = 0.0
                if x > 0:
                    dT += hx[y, x - 1]
                if x < N - 1:
                    dT -= hx[y, x]
                if y > 0:
                    dT += hy[y - 1, x]
                if y < M - 1:
                    dT -= hy[y, x]
                dv = d05[y, x] - dT
                if k > 0:
                    Q[y, x] += (1.0 + rho[k - 1]) * dv
                    R[y, x] = -rho[k - 1] * dv
                else:
                    Q[y, x] += dv
        if k > 0:
            for y in prange(M):
                for x in range(N):
                    P[y, x] = Q[y, x]
                    Q[y, x] = R[y, x]


_tv_bwd_par, _tv_bwd_ser = _dual(_tv_bwd_segment)


def tv_bwd_segment(rec_u05, rec_v, uhat, *args):
    kern = _tv_bwd_par if uhat.size >= PARALLEL_MIN_PIXELS else _tv_bwd_ser
    kern(rec_u05, rec_v, uhat, *args)


# ---------------------------------------------------------------------------
# TGV solver
# ---------------------------------------------------------------------------


def _tgv_fwd_segment(
    u, w0, w1, v, q0, q1, g, uhat, c, a0, a1, e, b, delta, rho, k0, k1, rec_u05, rec_vq
):
    """Advance the joint (u, w) iterate in place from iteration k0 to k1.

    ``g`` is a (6, M, N) scratch stack: channels 0-1 hold the weighted
    (Du - w) pair, 2-3 / 4-5 the weighted differences of each auxiliary
    channel.  The Huber normalization acts per pixel on three independent
    groups matching the three regularizer terms.
    """
    M, N = u.shape
    record = rec_u05.shape[0] > 0
    for k in range(k0, k1):
        j = k - k0
        rk = rho[k]
        for y in prange(M):
            for x in range(N):
                vc = v[y, x]
                qc0 = q0[y, x]
                qc1 = q1[y, x]
                if record:
                    rec_vq[j, 0, y, x] = vc
                    rec_vq[j, 1, y, x] = qc0
                    rec_vq[j, 2, y, x] = qc1
                z0 = (v[y, x + 1] - vc if x < N - 1 else vc - vc) - qc0
                z1 = (v[y + 1, x] - vc if y < M - 1 else vc - vc) - qc1
                z2 = q0[y, x + 1] - qc0 if x < N - 1 else qc0 - qc0
                z3 = q0[y + 1, x] - qc0 if y < M - 1 else qc0 - qc0
                z4 = q1[y, x + 1] - qc1 if x < N - 1 else qc1 - qc1
                z5 = q1[y + 1, x] - qc1 if y < M - 1 else qc1 - qc1
                nA = np.sqrt(a0[y, x] * z0 * z0 + a1[y, x] * z1 * z1)
                sA = delta / nA if nA > delta else 1.0
                nB = np.sqrt(e * (z2 * z2 + z3 * z3))
                sB = delta / nB if nB > delta else 1.0
                nC = np.sqrt(e * (z4 * z4 + z5 * z5))
                sC = delta / nC if nC > delta else 1.0
                g[0, y, x] = a0[y, x] * z0 * sA
                g[1, y, x] = a1[y, x] * z1 * sA
                g[2, y, x] = b * z2 * sB
                g[3, y, x] = b * z3 * sB
                g[4, y, x] = b * z4 * sC
                g[5, y, x] = b * z5 * sC
        for y in prange(M):
            for x in range(N):
                tu = g[0, y, x] - g[0, y, x]  # 0 in working precision
                if x > 0:
                    tu += g[0, y, x - 1]
                if x < N - 1:
                    tu -= g[0, y, x]
                if y > 0:
                    tu += g[1, y - 1, x]
                if y < M - 1:
                    tu -= g[1, y, x]
                tg0 = g[0, y, x] - g[0, y, x]
                if x > 0:
                    tg0 += g[2, y, x - 1]
                if x < N - 1:
                    tg0 -= g[2, y, x]
                if y > 0:
                    tg0 += g[3, y - 1, x]
                if y < M - 1:
                    tg0 -= g[3, y, x]
                tg1 = g[0, y, x] - g[0, y, x]
                if x > 0:
                    tg1 += g[4, y, x - 1]
                if x < N - 1:
                    tg1 -= g[4, y, x]
                if y > 0:
                    tg1 += g[5, y - 1, x]
                if y < M - 1:
                    tg1 -= g[5, y, x]
                u05 = v[y, x] - tu
                w0n = q0[y, x] - (-g[0, y, x] + tg0)
                w1n = q1[y, x] - (-g[1, y, x] + tg1)
                if record:
                    rec_u05[j, y, x] = u05
                uh = uhat[y, x]
                cc = c[y, x]
                if u05 - cc > uh:
                    un = u05 - cc
                elif u05 + cc < uh:
                    un = u05 + cc
                else:
                    un = uh
                v[y, x] = un + rk * (un - u[y, x])
                q0[y, x] = w0n + rk * (w0n - w0[y, x])
                q1[y, x] = w1n + rk * (w1n - w1[y, x])
                u[y, x] = un
                w0[y, x] = w0n
                w1[y, x] = w1n


_tgv_fwd_par, _tgv_fwd_ser = _dual(_tgv_fwd_segment)


def tgv_fwd_segment(u, *args):
    kern = _tgv_fwd_par if u.size >= PARALLEL_MIN_PIXELS else _tgv_fwd_ser
    kern(u, *args)


def _tgv_bwd_segment(
    rec_u05,
    rec_vq,
    uhat,
    c,
    a0,
    a1,
    e,
    b,
    delta,
    rho,
    k0,
    k1,
    P,
    Q,
    R,
    d05,
    h,
    d_uhat,
    d_c,
    d_t0,
    d_t1,
    d_beta_map,
):
    """Reverse TGV iterations k1-1 .. k0.

    P, Q, R are (3, M, N) float64 stacks for the (u, w0, w1) gradient
    triple with the same rotation protocol as the TV case.  The scalar
    smoothing-weight gradient is accumulated per pixel into d_beta_map and
    summed once by the caller.
    """
    M, N = uhat.shape
    for k in range(k1 - 1, k0 - 1, -1):
        j = k - k0
        for y in prange(M):
            for x in range(N):
                u05 = rec_u05[j, y, x]
                uh = uhat[y, x]
                cc = c[y, x]
                p = P[0, y, x]
                if u05 - cc > uh:
                    d05[y, x] = p
                    d_c[y, x] -= p
                elif u05 + cc < uh:
                    d05[y, x] = p
                    d_c[y, x] += p
                else:
                    d_uhat[y, x] += p
                    d05[y, x] = 0.0
        for y in prange(M):
            for x in range(N):
                vc = rec_vq[j, 0, y, x]
                qc0 = rec_vq[j, 1, y, x]
                qc1 = rec_vq[j, 2, y, x]
                z0 = (rec_vq[j, 0, y, x + 1] - vc if x < N - 1 else vc - vc) - qc0
                z1 = (rec_vq[j, 0, y + 1, x] - vc if y < M - 1 else vc - vc) - qc1
                z2 = rec_vq[j, 1, y, x + 1] - qc0 if x < N - 1 else qc0 - qc0
                z3 = rec_vq[j, 1, y + 1, x] - qc0 if y < M - 1 else qc0 - qc0
                z4 = rec_vq[j, 2, y, x + 1] - qc1 if x < N - 1 else qc1 - qc1
                z5 = rec_vq[j, 2, y + 1, x] - qc1 if y < M - 1 else qc1 - qc1
                dc = d05[y, x]
                s0 = (d05[y, x + 1] - dc if x < N - 1 else 0.0) - P[1, y, x]
                s1 = (d05[y + 1, x] - dc if y < M - 1 else 0.0) - P[2, y, x]
                s2 = P[1, y, x + 1] - P[1, y, x] if x < N - 1 else 0.0
                s3 = P[1, y + 1, x] - P[1, y, x] if y < M - 1 else 0.0
                s4 = P[2, y, x + 1] - P[2, y, x] if x < N - 1 else 0.0
                s5 = P[2, y + 1, x] - P[2, y, x] if y < M - 1 else 0.0
                nA2 = a0[y, x] * z0 * z0 + a1[y, x] * z1 * z1
                nA = np.sqrt(nA2)
                if nA > delta:
                    t = a0[y, x] * z0 * s0 + a1[y, x] * z1 * s1
                    f = delta / nA
                    h[0, y, x] = f * (a0[y, x] * s0 - a0[y, x] * z0 * t / nA2)
                    h[1, y, x] = f * (a1[y, x] * s1 - a1[y, x] * z1 * t / nA2)
                    d_t0[y, x] -= delta * (s0 * z0 / nA - t * z0 * z0 / (2.0 * nA * nA2))
                    d_t1[y, x] -= delta * (s1 * z1 / nA - t * z1 * z1 / (2.0 * nA * nA2))
                    dbeta = 0.0
                else:
                    h[0, y, x] = a0[y, x] * s0
                    h[1, y, x] = a1[y, x] * s1
                    d_t0[y, x] -= s0 * z0
                    d_t1[y, x] -= s1 * z1
                    dbeta = 0.0
                nB2 = e * (z2 * z2 + z3 * z3)
                nB = np.sqrt(nB2)
                if nB > delta:
                    tb = z2 * s2 + z3 * s3
                    f = b * delta / nB
                    h[2, y, x] = f * (s2 - e * z2 * tb / nB2)
                    h[3, y, x] = f * (s3 - e * z3 * tb / nB2)
                    dbeta -= (delta / nB) * (s2 * z2 + s3 * z3)
                else:
                    h[2, y, x] = b * s2
                    h[3, y, x] = b * s3
                    dbeta -= s2 * z2 + s3 * z3
                nC2 = e * (z4 * z4 + z5 * z5)
                nC = np.sqrt(nC2)
                if nC > delta:
                    tc = z4 * s4 + z5 * s5
                    f = b * delta / nC
                    h[4, y, x] = f * (s4 - e * z4 * tc / nC2)
                    h[5, y, x] = f * (s5 - e * z5 * tc / nC2)
                    dbeta -= (delta / nC) * (s4 * z4 + s5 * z5)
                else:
                    h[4, y, x] = b * s4
                    h[5, y, x] = b * s5
                    dbeta -= s4 * z4 + s5 * z5
                d_beta_map[y, x] += dbeta
        for y in prange(M):
            for x in range(N):
                dc = d05[y, x]
                tu = 0.0
                if x > 0:
                    tu += h[0, y, x - 1]
                if x < N - 1:
                    tu -= h[0, y, x]
                if y > 0:
                    tu += h[1, y - 1, x]
                if y < M - 1:
                    tu -= h[1, y, x]
                dv = dc - tu
                tg0 = 0.0
                if x > 0:
                    tg0 += h[2, y, x - 1]
                if x < N - 1:
                    tg0 -= h[2, y, x]
                if y > 0:
                    tg0 += h[3, y - 1, x]
                if y < M - 1:
                    tg0 -= h[3, y, x]
                dq0 = P[1, y, x] - (-h[0, y, x] + tg0)
                tg1 = 0.0
                if x > 0:
                    tg1 += h[4, y, x - 1]
                if x < N - 1:
                    tg1 -= h[4, y, x]
                if y > 0:
                    tg1 += h[5, y - 1, x]
                if y < M - 1:
                    tg1 -= h[5, y, x]
                dq1 = P[2, y, x] - (-h[1, y, x] + tg1)
                if k > 0:
                    rk = rho[k - 1]
                    Q[0, y, x] += (1.0 + rk) * dv
                    Q[1, y, x] += (1.0 + rk) * dq0
                    Q[2, y, x] += (1.0 + rk) * dq1
                    R[0, y, x] = -rk * dv
                    R[1, y, x] = -rk * dq0
                    R[2, y, x] = -rk * dq1
                else:
                    Q[0, y, x] += dv
                    Q[1, y, x] += dq0
                    Q[2, y, x] += dq1
        if k > 0:
            for y in prange(M):
                for x in range(N):
                    for i in range(3):
                        P[i, y, x] = Q[i, y, x]
                        Q[i, y, x] = R[i, y, x]


_tgv_bwd_par, _tgv_bwd_ser = _dual(_tgv_bwd_segment)


def tgv_bwd_segment(rec_u05, rec_vq, uhat, *args):
    kern = _tgv_bwd_par if uhat.size >= PARALLEL_MIN_PIXELS else _tgv_bwd_ser
    kern(rec_u05, rec_vq, uhat, *args)


# ---------------------------------------------------------------------------
# Cost volumes
# ---------------------------------------------------------------------------


@njit(parallel=True, cache=True)
def correlate_pair(fr, ft, d, cor0, cor1):
    """Min-projected directional cost volumes for one reference frame.

    cor0[y, x, u0+d] = min over u1 of -<fr(x,y), ft(x+u0, y+u1)>, and
    cor1 symmetrically.  Displacements whose target leaves the grid score
    SENTINEL before the projection.
    """
    M, N, C = fr.shape
    two_d = 2 * d
    for y in prange(M):
        for x in range(N):
            for i in range(two_d):
                cor0[y, x, i] = SENTINEL
                cor1[y, x, i] = SENTINEL
            for i0 in range(two_d):
                tx = x + i0 - d
                if tx < 0 or tx >= N:
                    continue
                for i1 in range(two_d):
                    ty = y + i1 - d
                    if ty < 0 or ty >= M:
                        continue
                    acc = fr[y, x, 0] - fr[y, x, 0]
                    for ch in range(C):
                        acc += fr[y, x, ch] * ft[ty, tx, ch]
                    score = -acc
                    if score < cor0[y, x, i0]:
                        cor0[y, x, i0] = score
                    if score < cor1[y, x, i1]:
                        cor1[y, x, i1] = score


# ---------------------------------------------------------------------------
# Quadratic sub-pixel refinement
# ---------------------------------------------------------------------------


@njit(parallel=True, cache=True)
def quadfit_kernel(
    psi0, psi1, ub0, ub1, eps_a, flow0, flow1, cost, failed, qstn, cand0, cand1
):
    """Refine integer matches to sub-pixel accuracy on the fine grid.

    Per pixel: pick the cheapest of the four integer candidates implied by
    the coarse match, sample the 5-point cost stencil around it, fit a
    separable quadratic and move to its minimum.  Any stencil point off
    the grid, non-convex curvature, or a minimum outside (-1, 1) marks the
    pixel failed; failed pixels keep the integer candidate and its cost.
    qstn rows store (center, +x, -x, +y, -y).
    """
    M, N, C = psi0.shape
    for y in prange(M):
        for x in range(N):
            base0 = 2 * ub0[y // 2, x // 2]
            base1 = 2 * ub1[y // 2, x // 2]
            best = SENTINEL
            bc0 = base0
            bc1 = base1
            for dy in range(2):
                for dx in range(2):
                    tx = x + base0 + dx
                    ty = y + base1 + dy
                    if tx < 0 or tx >= N or ty < 0 or ty >= M:
                        continue
                    acc = psi0[y, x, 0] - psi0[y, x, 0]
                    for ch in range(C):
                        acc += psi0[y, x, ch] * psi1[ty, tx, ch]
                    score = -acc
                    if score < best:
                        best = score
                        bc0 = base0 + dx
                        bc1 = base1 + dy
            cand0[y, x] = bc0
            cand1[y, x] = bc1
            for i in range(5):
                qstn[y, x, i] = 0.0
            if best >= SENTINEL:  # every candidate left the grid
                failed[y, x] = 1
                flow0[y, x] = bc0
                flow1[y, x] = bc1
                cost[y, x] = 0.0
                continue
            ok = True
            for i in range(5):
                ox = 0
                oy = 0
                if i == 1:
                    ox = 1
                elif i == 2:
                    ox = -1
                elif i == 3:
                    oy = 1
                elif i == 4:
                    oy = -1
                tx = x + bc0 + ox
                ty = y + bc1 + oy
                if tx < 0 or tx >= N or ty < 0 or ty >= M:
                    ok = False
                    break
                acc = psi0[y, x, 0] - psi0[y, x, 0]
                for ch in range(C):
                    acc += psi0[y, x, ch] * psi1[ty, tx, ch]
                qstn[y, x, i] = -acc
            if not ok:
                failed[y, x] = 1
                flow0[y, x] = bc0
                flow1[y, x] = bc1
                cost[y, x] = best
                for i in range(5):
                    qstn[y, x, i] = 0.0
                continue
            q00 = qstn[y, x, 0]
            qp0 = qstn[y, x, 1]
            qm0 = qstn[y, x, 2]
            q0p = qstn[y, x, 3]
            q0m = qstn[y, x, 4]
            a0 = (qp0 + qm0 - 2.0 * q00) / 2.0
            b0 = (qp0 - qm0) / 2.0
            a1 = (q0p + q0m - 2.0 * q00) / 2.0
            b1 = (q0p - q0m) / 2.0
            if a0 <= eps_a or a1 <= eps_a:
                failed[y, x] = 1
                flow0[y, x] = bc0
                flow1[y, x] = bc1
                cost[y, x] = q00
                continue
            v0 = -b0 / (2.0 * a0)
            v1 = -b1 / (2.0 * a1)
            if abs(v0) > 1.0 or abs(v1) > 1.0:
                failed[y, x] = 1
                flow0[y, x] = bc0
                flow1[y, x] = bc1
                cost[y, x] = q00
                continue
            failed[y, x] = 0
            flow0[y, x] = bc0 + v0
            flow1[y, x] = bc1 + v1
            cost[y, x] = a0 * v0 * v0 + b0 * v0 + q00 + a1 * v1 * v1 + b1 * v1
