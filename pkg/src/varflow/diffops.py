"""Discrete difference operators, their adjoints, and spectral estimation.

Conventions: scalar fields are (M, N) arrays indexed [y, x].  Forward
differences are zero on the last column (x direction) and last row
(y direction), which makes the TV system matrix norm approach 8 and the
second-order stack norm approach max(12, 8*beta) from below.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, IterBudgetZero, NonPositiveDelta


@dataclass
class GradField:
    """Forward differences of a scalar field; gx = 0 on the last column,
    gy = 0 on the last row."""

    gx: np.ndarray
    gy: np.ndarray

    @property
    def width(self):
        return self.gx.shape[1]

    @property
    def height(self):
        return self.gx.shape[0]


@dataclass
class TgvStack:
    """Six-channel stack (Du - w, Dw0, Dw1), channels leading: (6, M, N)."""

    data: np.ndarray


def grad(u):
    """Forward-difference gradient of a scalar field."""
    u = np.asarray(u)
    gx = np.zeros_like(u)
    gy = np.zeros_like(u)
    gx[:, :-1] = u[:, 1:] - u[:, :-1]
    gy[:-1, :] = u[1:, :] - u[:-1, :]
    return GradField(gx, gy)


def grad_adj(field):
    """Exact adjoint of grad: <grad(u), p> == <u, grad_adj(p)>."""
    if isinstance(field, GradField):
        gx, gy = field.gx, field.gy
    else:
        gx, gy = field
    if gx.shape != gy.shape:
        raise DimMismatch(f"gx {gx.shape} vs gy {gy.shape}")
    out = np.zeros_like(gx)
    out[:, 1:] += gx[:, :-1]
    out[:, :-1] -= gx[:, :-1]
    out[1:, :] += gy[:-1, :]
    out[:-1, :] -= gy[:-1, :]
    return out


def tgv_stack(u, w0, w1):
    """Stack (Du - w, Dw0, Dw1) of the second-order regularizer."""
    u, w0, w1 = np.asarray(u), np.asarray(w0), np.asarray(w1)
    if not (u.shape == w0.shape == w1.shape):
        raise DimMismatch(f"u {u.shape}, w0 {w0.shape}, w1 {w1.shape}")
    gu = grad(u)
    g0 = grad(w0)
    g1 = grad(w1)
    return TgvStack(
        np.stack([gu.gx - w0, gu.gy - w1, g0.gx, g0.gy, g1.gx, g1.gy])
    )


def tgv_stack_adj(stack):
    """Adjoint of tgv_stack, returning (du, dw0, dw1)."""
    s = stack.data if isinstance(stack, TgvStack) else np.asarray(stack)
    if s.ndim != 3 or s.shape[0] != 6:
        raise DimMismatch(f"expected (6, M, N), got {s.shape}")
    du = grad_adj((s[0], s[1]))
    dw0 = -s[0] + grad_adj((s[2], s[3]))
    dw1 = -s[1] + grad_adj((s[4], s[5]))
    return du, dw0, dw1


def huber(value, delta):
    """Huber penalty of a local vector: 0.5|v|^2 + 0.5*delta^2 below the
    threshold, delta*|v| above (continuous at |v| = delta)."""
    if delta <= 0:
        raise NonPositiveDelta(f"delta must be > 0, got {delta}")
    v = np.asarray(value, dtype=np.float64)
    n = float(np.sqrt(np.sum(v * v)))
    if n <= delta:
        return 0.5 * n * n + 0.5 * delta * delta
    return delta * n


def huber_field(norms, delta):
    """Vectorized Huber penalty of per-pixel vector norms."""
    if delta <= 0:
        raise NonPositiveDelta(f"delta must be > 0, got {delta}")
    n = np.asarray(norms, dtype=np.float64)
    return np.where(n <= delta, 0.5 * n * n + 0.5 * delta * delta, delta * n)


def spectral_norm(apply, apply_adj, shape, iters, seed=0):
    """Power-iteration estimate of the top eigenvalue of apply_adj o apply.

    The estimate is the Rayleigh quotient of the current iterate; for a
    positive semi-definite composition it is nondecreasing in the
    iteration count and never exceeds the true norm.  Deterministic for a
    fixed seed.
    """
    if iters < 1:
        raise IterBudgetZero(f"iters must be >= 1, got {iters}")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape)
    x /= np.sqrt(np.vdot(x, x).real)
    lam = 0.0
    for _ in range(iters):
        y = np.asarray(apply_adj(apply(x)))
        lam = float(np.vdot(x, y).real)
        norm = float(np.sqrt(np.vdot(y, y).real))
        if norm == 0.0:
            return 0.0
        x = y / norm
    return lam
