"""Hand-crafted confidence features, suppression, edge tensor, match loss.

These per-pixel signals are the inputs an external confidence scorer
would consume: match likelihoods, forward-backward consistency, distance
of the warped position to the image boundary, and the fitted match cost.
A simple built-in baseline combines them directly; it is plumbing, not a
learned model.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, NonPositiveGamma, ProbOutOfRange
from .grid_io import ConfidenceMap, DiffusionTensor, FlowField, ScalarMap
from .matching import prob_at_displacement

OUT_OF_GRID_DISTANCE = 1e6


@dataclass
class ConfidenceFeatures:
    """Full-resolution feature stack for confidence estimation."""

    prob: ScalarMap  # 2 channels: likelihood of the matched displacement per axis
    fb_dist: ScalarMap  # forward-backward flow distance
    boundary: ScalarMap  # distance of the warped position to the boundary
    fit_cost: ScalarMap  # cost after sub-pixel refinement


def _field(a):
    return a.values[:, :, 0] if isinstance(a, ScalarMap) else np.asarray(a)


def fwd_bwd_distance(ubar, ubar_bw):
    """|u(x, y) - u_bw(x + u0, y + u1)| with bilinear interpolation of the
    backward field; warps leaving the grid score a large sentinel."""
    if not isinstance(ubar, FlowField):
        ubar = FlowField(*ubar)
    if not isinstance(ubar_bw, FlowField):
        ubar_bw = FlowField(*ubar_bw)
    if (ubar.width, ubar.height) != (ubar_bw.width, ubar_bw.height):
        raise DimMismatch(
            f"flow {ubar.width}x{ubar.height} vs {ubar_bw.width}x{ubar_bw.height}"
        )
    M, N = ubar.u0.shape
    yy, xx = np.meshgrid(np.arange(M), np.arange(N), indexing="ij")
    px = xx + ubar.u0.astype(np.float64)
    py = yy + ubar.u1.astype(np.float64)
    inside = (px >= 0) & (px <= N - 1) & (py >= 0) & (py <= M - 1)
    cx = np.clip(px, 0, N - 1)
    cy = np.clip(py, 0, M - 1)
    x0 = np.floor(cx).astype(np.int64)
    y0 = np.floor(cy).astype(np.int64)
    x1 = np.minimum(x0 + 1, N - 1)
    y1 = np.minimum(y0 + 1, M - 1)
    fx = cx - x0
    fy = cy - y0

    def interp(ch):
        ch = ch.astype(np.float64)
        top = ch[y0, x0] * (1.0 - fx) + ch[y0, x1] * fx
        bot = ch[y1, x0] * (1.0 - fx) + ch[y1, x1] * fx
        return top * (1.0 - fy) + bot * fy

    d0 = ubar.u0 - interp(ubar_bw.u0)
    d1 = ubar.u1 - interp(ubar_bw.u1)
    dist = np.sqrt(d0 * d0 + d1 * d1)
    return ScalarMap(np.where(inside, dist, OUT_OF_GRID_DISTANCE))


def boundary_distance(uhat):
    """max(0, min(x + u0, y + u1, N - x - u0, M - y - u1)) per pixel."""
    if not isinstance(uhat, FlowField):
        uhat = FlowField(*uhat)
    M, N = uhat.u0.shape
    yy, xx = np.meshgrid(np.arange(M, dtype=np.float64), np.arange(N, dtype=np.float64), indexing="ij")
    u0 = uhat.u0.astype(np.float64)
    u1 = uhat.u1.astype(np.float64)
    inner = np.minimum(
        np.minimum(xx + u0, yy + u1), np.minimum(N - xx - u0, M - yy - u1)
    )
    return ScalarMap(np.maximum(0.0, inner))


def nonmin_suppress(conf):
    """Keep only the maximum entry of each aligned 2x2 block, zero the
    rest; ties resolve to the first pixel in row-major order.  Odd
    dimensions behave as if padded with zeros."""
    v = _field(conf).astype(np.float64)
    M, N = v.shape
    Mp, Np = M + (M % 2), N + (N % 2)
    pad = np.zeros((Mp, Np))
    pad[:M, :N] = v
    blocks = pad.reshape(Mp // 2, 2, Np // 2, 2).transpose(0, 2, 1, 3).reshape(-1, 4)
    keep = np.argmax(blocks, axis=1)  # first maximum wins
    mask = np.zeros_like(blocks)
    mask[np.arange(blocks.shape[0]), keep] = 1.0
    mask = (
        mask.reshape(Mp // 2, Np // 2, 2, 2)
        .transpose(0, 2, 1, 3)
        .reshape(Mp, Np)
    )
    return ScalarMap((pad * mask)[:M, :N])


def edge_tensor(image, gamma):
    """Fallback diffusion tensor from image edges: w_i = exp(-gamma |d_i I|)
    with forward differences; 1 exactly where the image is locally flat."""
    if gamma <= 0:
        raise NonPositiveGamma(f"gamma must be > 0, got {gamma}")
    img = _field(image).astype(np.float64)
    gx = np.zeros_like(img)
    gy = np.zeros_like(img)
    gx[:, :-1] = img[:, 1:] - img[:, :-1]
    gy[:-1, :] = img[1:, :] - img[:-1, :]
    return DiffusionTensor(np.exp(-gamma * np.abs(gx)), np.exp(-gamma * np.abs(gy)))


def loss_cor(prob0, prob1, uhat, ustar, valid, alpha, eps):
    """Matching loss: negative log-likelihood of the rounded ground-truth
    displacement plus a clamped Huber fitting term, over valid pixels.

    Probability channels and ustar must use the same displacement units.
    Rounded ground-truth displacements outside the volume range are
    treated as invalid pixels.
    """
    p0 = prob0.values if isinstance(prob0, ScalarMap) else np.asarray(prob0)
    p1 = prob1.values if isinstance(prob1, ScalarMap) else np.asarray(prob1)
    if not isinstance(uhat, FlowField):
        uhat = FlowField(*uhat)
    if not isinstance(ustar, FlowField):
        ustar = FlowField(*ustar)
    if p0.shape != p1.shape or p0.shape[:2] != uhat.u0.shape:
        raise DimMismatch("probability maps and flows disagree")
    if p0.min() < 0.0 or p0.max() > 1.0 or p1.min() < 0.0 or p1.max() > 1.0:
        raise ProbOutOfRange("probabilities outside [0, 1]")
    valid = np.asarray(valid, dtype=bool)
    d = p0.shape[2] // 2
    i0 = np.rint(ustar.u0.astype(np.float64)).astype(np.int64)
    i1 = np.rint(ustar.u1.astype(np.float64)).astype(np.int64)
    in_range = (i0 >= -d) & (i0 < d) & (i1 >= -d) & (i1 < d)
    use = valid & in_range
    l0 = prob_at_displacement(ScalarMap(p0), i0.astype(np.float64))
    l1 = prob_at_displacement(ScalarMap(p1), i1.astype(np.float64))
    with np.errstate(divide="ignore"):
        nll = -np.log(l0) - np.log(l1)
    e0 = uhat.u0.astype(np.float64) - ustar.u0.astype(np.float64)
    e1 = uhat.u1.astype(np.float64) - ustar.u1.astype(np.float64)
    n = np.sqrt(e0 * e0 + e1 * e1)
    hub = np.where(n <= eps, 0.5 * n * n + 0.5 * eps * eps, eps * n)
    fit = alpha * np.minimum(1.0, hub)
    return float(np.sum(np.where(use, nll + fit, 0.0)))


def confidence_features(prob0, prob1, ubar, ubar_bw, refined):
    """Assemble the full-resolution confidence feature stack.

    prob0/prob1 and the coarse flows live at half resolution; they are
    upsampled by pixel duplication.  Boundary distances use the refined
    full-resolution flow.
    """
    pa0 = prob_at_displacement(prob0, ubar.u0)
    pa1 = prob_at_displacement(prob1, ubar.u1)
    up = lambda a: np.repeat(np.repeat(a, 2, axis=0), 2, axis=1)
    prob = ScalarMap(np.stack([up(pa0), up(pa1)], axis=-1))
    fb = ScalarMap(up(fwd_bwd_distance(ubar, ubar_bw).values[:, :, 0]))
    return ConfidenceFeatures(
        prob=prob,
        fb_dist=fb,
        boundary=boundary_distance(refined.flow),
        fit_cost=refined.cost,
    )


def baseline_confidence(features):
    """Plumbing baseline scorer: suppressed product of match likelihood
    and forward-backward consistency."""
    p = features.prob.values
    score = np.exp(-features.fb_dist.values[:, :, 0]) * p[:, :, 0] * p[:, :, 1]
    kept = nonmin_suppress(ScalarMap(score))
    return ConfidenceMap(np.clip(kept.values[:, :, 0], 0.0, 1.0))
