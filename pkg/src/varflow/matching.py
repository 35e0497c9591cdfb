"""Correlation cost volumes, min-projection, argmin flow, pseudo-likelihoods.

A full 4D correlation volume over displacements H = {-d, ..., d-1} is
never materialized: each directional volume keeps, per pixel and per
displacement along its own axis, the minimum over the orthogonal
displacement.  A unique 4D minimum survives this projection, so the
directional argmins recover the joint best match.  Out-of-grid targets
score a large sentinel, which keeps the volumes total and makes their
softmax weight underflow to zero.
"""

import numpy as np

from . import backend
from .errors import DimMismatch, NonPositiveRange, ProbOutOfRange
from .defaults import DEFAULTS
from .grid_io import FlowField, ScalarMap

# Feature maps use the same container as any per-pixel channel raster.
FeatureMap = ScalarMap

SENTINEL = 1e30
DEFAULT_RANGE = DEFAULTS["range"]


class CostVolume:
    """Directional correlation scores, shape (height, width, 2*d);
    channel i holds displacement i - d."""

    def __init__(self, scores, d):
        scores = np.asarray(scores)
        if scores.ndim != 3 or scores.shape[2] != 2 * d:
            raise DimMismatch(f"scores {scores.shape} do not match range {d}")
        self.scores = scores
        self.d = d

    @property
    def width(self):
        return self.scores.shape[1]

    @property
    def height(self):
        return self.scores.shape[0]


def _values(f):
    return f.values if isinstance(f, ScalarMap) else np.asarray(f)


def correlate(f0, f1, d):
    """Four directional volumes (cor00, cor01, cor10, cor11).

    The first index is the reference frame (0 = forward, 1 = backward),
    the second the displacement axis kept by the min-projection.
    """
    a = _values(f0)
    b = _values(f1)
    if a.shape != b.shape:
        raise DimMismatch(f"feature maps {a.shape} vs {b.shape}")
    if d < 1:
        raise NonPositiveRange(f"displacement range must be >= 1, got {d}")
    kern = backend.get_kernels()
    M, N, _ = a.shape
    out = []
    for ref, tgt in ((a, b), (b, a)):
        cor0 = np.empty((M, N, 2 * d), dtype=ref.dtype)
        cor1 = np.empty((M, N, 2 * d), dtype=ref.dtype)
        kern.correlate_pair(ref, tgt, d, cor0, cor1)
        out.append(CostVolume(cor0, d))
        out.append(CostVolume(cor1, d))
    return tuple(out)


def argmin_flow(cor0, cor1):
    """Integer flow minimizing each directional volume; ties pick the
    smallest displacement."""
    if cor0.scores.shape[:2] != cor1.scores.shape[:2] or cor0.d != cor1.d:
        raise DimMismatch("directional volumes disagree")
    u0 = np.argmin(cor0.scores, axis=2).astype(np.float32) - cor0.d
    u1 = np.argmin(cor1.scores, axis=2).astype(np.float32) - cor1.d
    return FlowField(u0, u1)


def softmax_prob(cor):
    """Per-pixel displacement likelihoods p = softmax(-scores), computed
    with a per-pixel shift for stability; channels sum to 1."""
    s = cor.scores.astype(np.float64)
    shift = s.min(axis=2, keepdims=True)
    q = np.exp(-(s - shift))
    p = q / q.sum(axis=2, keepdims=True)
    return ScalarMap(p)


def prob_at_displacement(prob, flow_channel):
    """Look up per-pixel likelihood of an integer displacement channel.

    Displacements outside H give probability 0.
    """
    p = _values(prob)
    d = p.shape[2] // 2
    idx = np.rint(np.asarray(flow_channel)).astype(np.int64) + d
    valid = (idx >= 0) & (idx < 2 * d)
    idx = np.clip(idx, 0, 2 * d - 1)
    out = np.take_along_axis(p, idx[:, :, None], axis=2)[:, :, 0]
    out = np.where(valid, out, 0.0)
    if out.min() < 0.0 or out.max() > 1.0:
        raise ProbOutOfRange("likelihood outside [0, 1]")
    return out
