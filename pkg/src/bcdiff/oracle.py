"""Slow, independent references for the boundary and trajectory code.

Nothing here calls into ``schedules``, ``boundary`` formulas or
``trajectory``: coefficients are recomputed from their definitions and the
first exit is found by walking a dense time grid.  The ``plain_*`` helpers
are separately coded unrescaled diffusion paths used as ``r = 0``
regression targets.
"""

from __future__ import annotations

import numpy as np

DENSITY = 32


def reference_coeff(kind: str, T: int, t, sigma0: float = 0.01, sigmaT: float = 50.0):
    """``(u, v)`` at (real) times ``t`` straight from the schedule definitions."""
    t = np.asarray(t, dtype=np.float64)
    if kind == "OT":
        return 1.0 - t / T, t / T
    if kind == "VE":
        return np.ones_like(t), sigma0 * (sigmaT / sigma0) ** (t / T)
    betas = np.linspace(1e-4, 2e-2, T)
    abar = [1.0]
    for b in betas:
        abar.append(abar[-1] * (1.0 - b))
    su = np.sqrt(np.asarray(abar))
    k = np.minimum(np.floor(t + 1e-9 * T).astype(np.int64), T)
    return su[k], np.sqrt(1.0 - su**2)[k]


def brute_first_exit(x0_row, eps_row, I: int, weights, kind: str, T: int, grid_density: int | None = None,
                     sigma0: float = 0.01, sigmaT: float = 50.0) -> float:
    """First grid time at which some other state ties or beats ``I``; ``T`` if none."""
    n = DENSITY * T if grid_density is None else grid_density
    grid = np.linspace(0.0, T, n + 1)
    u, v = reference_coeff(kind, T, grid, sigma0, sigmaT)
    x = u[:, None] * np.asarray(x0_row)[None, :] + v[:, None] * np.asarray(eps_row)[None, :]
    scores = x @ np.asarray(weights).T
    own = scores[:, I]
    others = np.delete(scores, I, axis=1)
    hit = np.nonzero(np.any(others >= own[:, None], axis=1))[0]
    return float(grid[hit[0]]) if hit.size else float(T)


def brute_argmax(x_row, weights) -> int:
    best, best_score = 0, None
    for j, row in enumerate(np.asarray(weights)):
        s = sum(float(a) * float(b) for a, b in zip(row, x_row))
        if best_score is None or s > best_score:
            best, best_score = j, s
    return best


def finite_diff_field(x0, eps, t0, t: float, r: float, kind: str, T: int, h: float = 1.0,
                      sigma0: float = 0.01, sigmaT: float = 50.0) -> np.ndarray:
    """Central difference of the rescaled trajectory position in nominal time."""

    def position(s):
        tau = r * t0 + s * (T - r * t0) / T
        u, v = reference_coeff(kind, T, tau, sigma0, sigmaT)
        return u[..., None] * x0 + v[..., None] * eps

    return (position(t + h) - position(t - h)) / (2.0 * h)


# -- plain (unrescaled) reference paths ---------------------------------------

def plain_forward(x0, eps, t, kind: str, T: int, sigma0: float = 0.01, sigmaT: float = 50.0):
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), np.shape(x0)[:-1])
    u, v = reference_coeff(kind, T, t, sigma0, sigmaT)
    return u[..., None] * x0 + v[..., None] * eps


def plain_sample(predict, x_T, eps, intervals, kind: str, T: int, alteration: bool,
                 sigma0: float = 0.01, sigmaT: float = 50.0, sigma_fn=None, rng=None):
    """DDIM-style deterministic loop on the unrescaled trajectory (position view, embedding spaces)."""
    B = len(x_T)
    x = np.asarray(x_T, dtype=np.float64)
    t = T
    for dt in intervals:
        z = rng.standard_normal(x.shape) * sigma_fn(t) if sigma_fn is not None else None
        x0_hat = predict(x, np.full(B, float(t)))
        u, v = reference_coeff(kind, T, np.full(x.shape[:-1], float(t)), sigma0, sigmaT)
        if alteration or sigma_fn is not None:
            eps = (x - u[..., None] * x0_hat) / v[..., None]
        t = max(t - int(dt), 1)
        u, v = reference_coeff(kind, T, np.full(x.shape[:-1], float(t)), sigma0, sigmaT)
        x = u[..., None] * x0_hat + v[..., None] * eps
        if z is not None:
            x = x + z
    return predict(x, np.full(B, float(t)))
