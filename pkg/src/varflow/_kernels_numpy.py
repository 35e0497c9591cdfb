"""Vectorized numpy fallback for the hot kernels.

Same contracts as ``_kernels_numba``; expressions are written in the same
association order so that float64 results agree bit-for-bit with the
numba build (float32 working precision may differ in the last ulp because
numpy keeps scalar operands in working precision while numba promotes
them to float64).
"""

import numpy as np

SENTINEL = 1e30


def _diff_x(src, out):
    out.fill(0.0)
    out[:, :-1] = src[:, 1:] - src[:, :-1]
    return out


def _diff_y(src, out):
    out.fill(0.0)
    out[:-1, :] = src[1:, :] - src[:-1, :]
    return out


def _div_adj(gx, gy, out):
    # adjoint gather of the forward differences: same per-element op order
    # as the scalar kernels (left, self-x, up, self-y)
    out.fill(0.0)
    out[:, 1:] += gx[:, :-1]
    out[:, :-1] -= gx[:, :-1]
    out[1:, :] += gy[:-1, :]
    out[:-1, :] -= gy[:-1, :]
    return out


# ---------------------------------------------------------------------------
# TV solver
# ---------------------------------------------------------------------------


def tv_fwd_segment(u, v, gx, gy, uhat, c, a0, a1, delta, rho, k0, k1, rec_u05, rec_v):
    record = rec_u05.shape[0] > 0
    zx = np.zeros_like(u)
    zy = np.zeros_like(u)
    dT = np.zeros_like(u)
    for k in range(k0, k1):
        j = k - k0
        if record:
            rec_v[j] = v
        _diff_x(v, zx)
        _diff_y(v, zy)
        n = np.sqrt(a0 * zx * zx + a1 * zy * zy)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(n > delta, delta / n, 1.0)
        gx[:] = a0 * zx * scale
        gy[:] = a1 * zy * scale
        _div_adj(gx, gy, dT)
        u05 = v - dT
        if record:
            rec_u05[j] = u05
        bplus = u05 - c > uhat
        bminus = u05 + c < uhat
        un = np.where(bplus, u05 - c, np.where(bminus, u05 + c, uhat))
        v[:] = un + rho[k] * (un - u)
        u[:] = un


def tv_bwd_segment(
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
    zx = np.zeros_like(uhat)
    zy = np.zeros_like(uhat)
    sx = np.zeros_like(d05)
    sy = np.zeros_like(d05)
    dT = np.zeros_like(d05)
    for k in range(k1 - 1, k0 - 1, -1):
        j = k - k0
        u05 = rec_u05[j]
        bplus = u05 - c > uhat
        bminus = u05 + c < uhat
        shrink = bplus | bminus
        d05[:] = np.where(shrink, P, 0.0)
        d_c -= np.where(bplus, P, 0.0)
        d_c += np.where(bminus, P, 0.0)
        d_uhat += np.where(shrink, 0.0, P)
        _diff_x(rec_v[j], zx)
        _diff_y(rec_v[j], zy)
        n2 = a0 * zx * zx + a1 * zy * zy
        n = np.sqrt(n2)
        _diff_x(d05, sx)
        _diff_y(d05, sy)
        lin = n > delta
        t = a0 * zx * sx + a1 * zy * sy
        with np.errstate(divide="ignore", invalid="ignore"):
            f = delta / n
            hx[:] = np.where(lin, f * (a0 * sx - a0 * zx * t / n2), a0 * sx)
            hy[:] = np.where(lin, f * (a1 * sy - a1 * zy * t / n2), a1 * sy)
            d_t0 -= np.where(
                lin, delta * (sx * zx / n - t * zx * zx / (2.0 * n * n2)), sx * zx
            )
            d_t1 -= np.where(
                lin, delta * (sy * zy / n - t * zy * zy / (2.0 * n * n2)), sy * zy
            )
        _div_adj(hx, hy, dT)
        dv = d05 - dT
        if k > 0:
            Q += (1.0 + rho[k - 1]) * dv
            R[:] = -rho[k - 1] * dv
            P[:] = Q
            Q[:] = R
        else:
            Q += dv


# ---------------------------------------------------------------------------
# TGV solver
# ---------------------------------------------------------------------------


def tgv_fwd_segment(
    u, w0, w1, v, q0, q1, g, uhat, c, a0, a1, e, b, delta, rho, k0, k1, rec_u05, rec_vq
):
    record = rec_u05.shape[0] > 0
    dx = np.zeros_like(u)
    dy = np.zeros_like(u)
    tu = np.zeros_like(u)
    tw = np.zeros_like(u)
    for k in range(k0, k1):
        j = k - k0
        rk = rho[k]
        if record:
            rec_vq[j, 0] = v
            rec_vq[j, 1] = q0
            rec_vq[j, 2] = q1
        z0 = _diff_x(v, dx) - q0
        z1 = _diff_y(v, dy) - q1
        z2 = _diff_x(q0, np.zeros_like(u))
        z3 = _diff_y(q0, np.zeros_like(u))
        z4 = _diff_x(q1, np.zeros_like(u))
        z5 = _diff_y(q1, np.zeros_like(u))
        nA = np.sqrt(a0 * z0 * z0 + a1 * z1 * z1)
        nB = np.sqrt(e * (z2 * z2 + z3 * z3))
        nC = np.sqrt(e * (z4 * z4 + z5 * z5))
        with np.errstate(divide="ignore", invalid="ignore"):
            sA = np.where(nA > delta, delta / nA, 1.0)
            sB = np.where(nB > delta, delta / nB, 1.0)
            sC = np.where(nC > delta, delta / nC, 1.0)
        g[0] = a0 * z0 * sA
        g[1] = a1 * z1 * sA
        g[2] = b * z2 * sB
        g[3] = b * z3 * sB
        g[4] = b * z4 * sC
        g[5] = b * z5 * sC
        _div_adj(g[0], g[1], tu)
        u05 = v - tu
        _div_adj(g[2], g[3], tw)
        w0n = q0 - (-g[0] + tw)
        _div_adj(g[4], g[5], tw)
        w1n = q1 - (-g[1] + tw)
        if record:
            rec_u05[j] = u05
        bplus = u05 - c > uhat
        bminus = u05 + c < uhat
        un = np.where(bplus, u05 - c, np.where(bminus, u05 + c, uhat))
        v[:] = un + rk * (un - u)
        q0[:] = w0n + rk * (w0n - w0)
        q1[:] = w1n + rk * (w1n - w1)
        u[:] = un
        w0[:] = w0n
        w1[:] = w1n


def tgv_bwd_segment(
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
    M, N = uhat.shape
    wbuf = np.zeros((2, M, N), dtype=uhat.dtype)
    sbuf = np.zeros((6, M, N), dtype=np.float64)
    dT = np.zeros((M, N), dtype=np.float64)
    for k in range(k1 - 1, k0 - 1, -1):
        j = k - k0
        u05 = rec_u05[j]
        bplus = u05 - c > uhat
        bminus = u05 + c < uhat
        shrink = bplus | bminus
        d05[:] = np.where(shrink, P[0], 0.0)
        d_c -= np.where(bplus, P[0], 0.0)
        d_c += np.where(bminus, P[0], 0.0)
        d_uhat += np.where(shrink, 0.0, P[0])
        vj = rec_vq[j, 0]
        qj0 = rec_vq[j, 1]
        qj1 = rec_vq[j, 2]
        z0 = _diff_x(vj, wbuf[0]).copy() - qj0
        z1 = _diff_y(vj, wbuf[0]).copy() - qj1
        z2 = _diff_x(qj0, wbuf[0]).copy()
        z3 = _diff_y(qj0, wbuf[0]).copy()
        z4 = _diff_x(qj1, wbuf[0]).copy()
        z5 = _diff_y(qj1, wbuf[0]).copy()
        s0 = _diff_x(d05, sbuf[0]) - P[1]
        s1 = _diff_y(d05, sbuf[1]) - P[2]
        s2 = _diff_x(P[1], sbuf[2])
        s3 = _diff_y(P[1], sbuf[3])
        s4 = _diff_x(P[2], sbuf[4])
        s5 = _diff_y(P[2], sbuf[5])
        nA2 = a0 * z0 * z0 + a1 * z1 * z1
        nA = np.sqrt(nA2)
        linA = nA > delta
        t = a0 * z0 * s0 + a1 * z1 * s1
        with np.errstate(divide="ignore", invalid="ignore"):
            fA = delta / nA
            h[0] = np.where(linA, fA * (a0 * s0 - a0 * z0 * t / nA2), a0 * s0)
            h[1] = np.where(linA, fA * (a1 * s1 - a1 * z1 * t / nA2), a1 * s1)
            d_t0 -= np.where(
                linA, delta * (s0 * z0 / nA - t * z0 * z0 / (2.0 * nA * nA2)), s0 * z0
            )
            d_t1 -= np.where(
                linA, delta * (s1 * z1 / nA - t * z1 * z1 / (2.0 * nA * nA2)), s1 * z1
            )
            nB2 = e * (z2 * z2 + z3 * z3)
            nB = np.sqrt(nB2)
            linB = nB > delta
            tb = z2 * s2 + z3 * s3
            fB = b * delta / nB
            h[2] = np.where(linB, fB * (s2 - e * z2 * tb / nB2), b * s2)
            h[3] = np.where(linB, fB * (s3 - e * z3 * tb / nB2), b * s3)
            dbeta = -np.where(
                linB, (delta / nB) * (s2 * z2 + s3 * z3), s2 * z2 + s3 * z3
            )
            nC2 = e * (z4 * z4 + z5 * z5)
            nC = np.sqrt(nC2)
            linC = nC > delta
            tc = z4 * s4 + z5 * s5
            fC = b * delta / nC
            h[4] = np.where(linC, fC * (s4 - e * z4 * tc / nC2), b * s4)
            h[5] = np.where(linC, fC * (s5 - e * z5 * tc / nC2), b * s5)
            dbeta -= np.where(
                linC, (delta / nC) * (s4 * z4 + s5 * z5), s4 * z4 + s5 * z5
            )
        d_beta_map += dbeta
        _div_adj(h[0], h[1], dT)
        dv = d05 - dT
        _div_adj(h[2], h[3], dT)
        dq0 = P[1] - (-h[0] + dT)
        _div_adj(h[4], h[5], dT)
        dq1 = P[2] - (-h[1] + dT)
        if k > 0:
            rk = rho[k - 1]
            Q[0] += (1.0 + rk) * dv
            Q[1] += (1.0 + rk) * dq0
            Q[2] += (1.0 + rk) * dq1
            R[0] = -rk * dv
            R[1] = -rk * dq0
            R[2] = -rk * dq1
            P[:] = Q
            Q[:] = R
        else:
            Q[0] += dv
            Q[1] += dq0
            Q[2] += dq1


# ---------------------------------------------------------------------------
# Cost volumes
# ---------------------------------------------------------------------------


def correlate_pair(fr, ft, d, cor0, cor1):
    M, N, C = fr.shape
    cor0.fill(SENTINEL)
    cor1.fill(SENTINEL)
    for i0 in range(2 * d):
        u0 = i0 - d
        x_lo = max(0, -u0)
        x_hi = min(N, N - u0)
        if x_lo >= x_hi:
            continue
        for i1 in range(2 * d):
            u1 = i1 - d
            y_lo = max(0, -u1)
            y_hi = min(M, M - u1)
            if y_lo >= y_hi:
                continue
            src = fr[y_lo:y_hi, x_lo:x_hi]
            tgt = ft[y_lo + u1 : y_hi + u1, x_lo + u0 : x_hi + u0]
            acc = np.zeros(src.shape[:2], dtype=fr.dtype)
            for ch in range(C):  # sequential channel order matches the scalar kernel
                acc += src[:, :, ch] * tgt[:, :, ch]
            score = -acc
            blk = cor0[y_lo:y_hi, x_lo:x_hi, i0]
            np.minimum(blk, score, out=blk)
            blk = cor1[y_lo:y_hi, x_lo:x_hi, i1]
            np.minimum(blk, score, out=blk)


# ---------------------------------------------------------------------------
# Quadratic sub-pixel refinement
# ---------------------------------------------------------------------------


def _stencil_scores(psi0, psi1, t0, t1):
    """-<psi0(x,y), psi1(target)> with SENTINEL outside the grid."""
    M, N, C = psi0.shape
    valid = (t0 >= 0) & (t0 < N) & (t1 >= 0) & (t1 < M)
    tx = np.clip(t0, 0, N - 1)
    ty = np.clip(t1, 0, M - 1)
    yy, xx = np.meshgrid(np.arange(M), np.arange(N), indexing="ij")
    acc = np.zeros((M, N), dtype=psi0.dtype)
    for ch in range(C):
        acc += psi0[yy, xx, ch] * psi1[ty, tx, ch]
    return np.where(valid, -acc, SENTINEL)


def quadfit_kernel(
    psi0, psi1, ub0, ub1, eps_a, flow0, flow1, cost, failed, qstn, cand0, cand1
):
    M, N, C = psi0.shape
    yy, xx = np.meshgrid(np.arange(M), np.arange(N), indexing="ij")
    base0 = 2 * ub0[yy // 2, xx // 2]
    base1 = 2 * ub1[yy // 2, xx // 2]
    scores = np.empty((4, M, N))
    offs = [(0, 0), (0, 1), (1, 0), (1, 1)]  # (dy, dx) scan order of the scalar kernel
    for i, (dy, dx) in enumerate(offs):
        scores[i] = _stencil_scores(psi0, psi1, xx + base0 + dx, yy + base1 + dy)
    pick = np.argmin(scores, axis=0)  # first minimum wins, as in the scalar scan
    best = np.take_along_axis(scores, pick[None], axis=0)[0]
    dyx = np.array(offs)
    bc0 = base0 + dyx[pick, 1]
    bc1 = base1 + dyx[pick, 0]
    hard = best >= SENTINEL
    bc0 = np.where(hard, base0, bc0)
    bc1 = np.where(hard, base1, bc1)
    cand0[:] = bc0
    cand1[:] = bc1

    stn = np.empty((5, M, N))
    stn_valid = np.empty((5, M, N), dtype=bool)
    for i, (ox, oy) in enumerate([(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)]):
        t0 = xx + bc0 + ox
        t1 = yy + bc1 + oy
        stn[i] = _stencil_scores(psi0, psi1, t0, t1)
        stn_valid[i] = stn[i] < SENTINEL
    exited = ~stn_valid.all(axis=0) & ~hard

    q00, qp0, qm0, q0p, q0m = stn
    a0 = (qp0 + qm0 - 2.0 * q00) / 2.0
    b0 = (qp0 - qm0) / 2.0
    a1 = (q0p + q0m - 2.0 * q00) / 2.0
    b1 = (q0p - q0m) / 2.0
    flat = (a0 <= eps_a) | (a1 <= eps_a)
    with np.errstate(divide="ignore", invalid="ignore"):
        v0 = np.where(flat, 0.0, -b0 / (2.0 * a0))
        v1 = np.where(flat, 0.0, -b1 / (2.0 * a1))
    outside = (np.abs(v0) > 1.0) | (np.abs(v1) > 1.0)
    bad_fit = (flat | outside) & ~hard & ~exited

    ok = ~(hard | exited | bad_fit)
    failed[:] = (~ok).astype(failed.dtype)
    flow0[:] = np.where(ok, bc0 + v0, bc0)
    flow1[:] = np.where(ok, bc1 + v1, bc1)
    fit_cost = a0 * v0 * v0 + b0 * v0 + q00 + a1 * v1 * v1 + b1 * v1
    cost[:] = np.where(ok, fit_cost, np.where(exited, best, np.where(hard, 0.0, q00)))
    keep_q = ok | bad_fit  # scalar kernel zeroes the stencil only on grid exits
    for i in range(5):
        qstn[:, :, i] = np.where(keep_q, stn[i], 0.0)
