"""Euclidean projections onto the primal and dual sets, and the closed-form dual step."""

import numpy as np


def project_l2_ball(v, radius):
    if not radius > 0:
        raise ValueError("radius must be positive")
    v = np.asarray(v, dtype=np.float64)
    nv = float(np.sqrt(v @ v))
    if nv <= radius:
        return v.copy()
    scale = radius / nv
    out = v * scale
    # rounding may leave the result a hair outside; shrink by ulps so a
    # second projection is the identity
    while float(np.sqrt(out @ out)) > radius:
        scale = np.nextafter(scale, 0.0)
        out = v * scale
    return out


def project_box(v, lo, hi):
    v = np.asarray(v, dtype=np.float64)
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    if not (v.shape == lo.shape == hi.shape):
        raise ValueError("v, lo and hi must have the same shape")
    if np.any(lo > hi):
        raise ValueError("need lo <= hi")
    return np.minimum(np.maximum(v, lo), hi)


def project_linf_ball(v, radius):
    if not radius > 0:
        raise ValueError("radius must be positive")
    return np.clip(np.asarray(v, dtype=np.float64), -radius, radius)


def dual_update(y_prev, Fx, s, Y):
    """Maximiser of ``<y, Fx> - ||y - y_prev||^2 / (2s)`` over ``Y``.

    Completing the square turns this into ``Π_Y(y_prev + s Fx)``.
    """
    if not s > 0:
        raise ValueError("s must be positive")
    y_prev = np.asarray(y_prev, dtype=np.float64)
    Fx = np.asarray(Fx, dtype=np.float64)
    if y_prev.shape != Fx.shape or y_prev.shape != (Y.dim,):
        raise ValueError("dimension mismatch in dual_update")
    return Y.project(y_prev + s * Fx)
