"""Euclidean projections onto the factors of the feasible set.

All vector projections accept arrays with leading batch dimensions and act on
the last axis.
"""
from dataclasses import dataclass

import numpy as np

from . import _kernels


@dataclass(frozen=True)
class ThetaBounds:
    y_radius: float
    z_budget: float

    @classmethod
    def for_game(cls, S, A, T, r_max):
        return cls(S * (T + 1) * (T + 2) * r_max / 2.0, S * A * (T * T + T + 2) * r_max)


def project_simplex(v, total=1.0):
    """argmin ||x - v|| over {x >= 0, sum x = total} (sort-based, O(n log n))."""
    v = np.asarray(v, dtype=np.float64)
    if total <= 0:
        raise ValueError("total must be positive")
    flat = np.ascontiguousarray(v.reshape(-1, v.shape[-1]))
    return _kernels.project_simplex_rows(flat, float(total)).reshape(v.shape)


def project_capped_nonneg(v, budget):
    """argmin ||x - v|| over {x >= 0, sum x <= budget}."""
    v = np.asarray(v, dtype=np.float64)
    if budget <= 0:
        raise ValueError("budget must be positive")
    clipped = np.maximum(v, 0.0)
    over = clipped.sum(axis=-1) > budget
    if not np.any(over):
        return clipped
    if v.ndim == 1:
        return project_simplex(v, budget)
    out = clipped.copy()
    out[over] = project_simplex(v[over], budget)
    return out


def project_l2_ball(v, radius):
    v = np.asarray(v, dtype=np.float64)
    if radius <= 0:
        raise ValueError("radius must be positive")
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    scale = np.where(norm > radius, radius / np.where(norm > 0, norm, 1.0), 1.0)
    return v * scale


def project_components(y, z, L, bounds):
    """Project raw ``(y, z, L)`` arrays; ``z`` is capped as one long vector, ``L`` per time slice."""
    y = project_l2_ball(np.asarray(y, dtype=np.float64).reshape(-1), bounds.y_radius)
    z = np.asarray(z, dtype=np.float64)
    z = project_capped_nonneg(z.reshape(-1), bounds.z_budget).reshape(z.shape)
    L = np.asarray(L, dtype=np.float64)
    L = project_simplex(L.reshape(L.shape[0], -1), 1.0).reshape(L.shape)
    return y, z, L


def project_theta(theta, bounds):
    from .formulation import ThetaPoint

    y, z, L = project_components(theta.y, theta.z, theta.L, bounds)
    return ThetaPoint(y, z, L)


# ---------------------------------------------------------------------------
# projections in a diagonal metric: argmin sum_i w_i (x_i - v_i)^2


def project_simplex_weighted(v, w, total=1.0):
    """Weighted projection onto the scaled simplex, last axis; ``w > 0``.

    The solution is ``x_i = max(v_i - tau / w_i, 0)``; ``tau`` is found exactly
    by sorting the breakpoints ``v_i w_i``.
    """
    v = np.asarray(v, dtype=np.float64)
    w = np.broadcast_to(np.asarray(w, dtype=np.float64), v.shape)
    flat_v = v.reshape(-1, v.shape[-1])
    flat_w = w.reshape(-1, v.shape[-1])
    order = np.argsort(-(flat_v * flat_w), axis=1)
    vs = np.take_along_axis(flat_v, order, axis=1)
    iw = 1.0 / np.take_along_axis(flat_w, order, axis=1)
    tau = (np.cumsum(vs, axis=1) - total) / np.cumsum(iw, axis=1)
    # the active set is the longest prefix whose last member stays positive
    valid = vs - tau * iw > 0
    k = valid.shape[1] - 1 - np.argmax(valid[:, ::-1], axis=1)
    t = tau[np.arange(tau.shape[0]), k]
    x = np.maximum(flat_v - t[:, None] / flat_w, 0.0)
    return x.reshape(v.shape)


def project_capped_nonneg_weighted(v, w, budget):
    """Weighted projection onto ``{x >= 0, sum x <= budget}`` (one long vector)."""
    v = np.asarray(v, dtype=np.float64)
    clipped = np.maximum(v, 0.0)
    if clipped.sum() <= budget:
        return clipped
    return project_simplex_weighted(v, w, budget)


def project_l2_ball_weighted(v, w, radius, tol=1e-14):
    """Weighted projection onto the l2 ball: ``x = w v / (w + lam)`` with ``||x|| = radius``."""
    v = np.asarray(v, dtype=np.float64)
    w = np.broadcast_to(np.asarray(w, dtype=np.float64), v.shape)
    if np.linalg.norm(v) <= radius:
        return v.copy()
    lo, hi = 0.0, float(w.max()) * (np.linalg.norm(v) / radius)
    for _ in range(200):
        lam = 0.5 * (lo + hi)
        if np.linalg.norm(w * v / (w + lam)) > radius:
            lo = lam
        else:
            hi = lam
        if hi - lo <= tol * max(hi, 1.0):
            break
    return w * v / (w + hi)


def project_components_weighted(y, z, L, wy, wz, wL, bounds):
    """Blockwise weighted projection; weights share the shapes of the blocks."""
    y = project_l2_ball_weighted(np.asarray(y, dtype=np.float64).reshape(-1), wy.reshape(-1), bounds.y_radius)
    z = np.asarray(z, dtype=np.float64)
    z = project_capped_nonneg_weighted(z.reshape(-1), wz.reshape(-1), bounds.z_budget).reshape(z.shape)
    L = np.asarray(L, dtype=np.float64)
    T1 = L.shape[0]
    L = project_simplex_weighted(L.reshape(T1, -1), wL.reshape(T1, -1), 1.0).reshape(L.shape)
    return y, z, L
