"""Boundary-conditional forward trajectories.

A trajectory toward noise ``eps`` is restarted at its boundary point: the
nominal time ``t`` maps to ``tau = r*t0 + t*(T - r*t0)/T`` and the noisy
sample is the plain flow evaluated at ``tau``.  ``r = 0`` gives back the
unrescaled process.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from bcdiff.boundary import BoundaryEstimate, estimate_boundary
from bcdiff.discrete_space import EmbeddingTable
from bcdiff.schedules import Schedule


@dataclass
class RescaledPoint:
    x_tilde: np.ndarray
    t: np.ndarray
    tau: np.ndarray
    eps: np.ndarray
    r: float
    estimate: BoundaryEstimate


def rescale_time(t, t0, r: float, T: int) -> np.ndarray:
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"confidence factor must lie in [0, 1], got {r}")
    t0 = np.asarray(t0, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    return r * t0 + t * (T - r * t0) / T


def _expand_time(t, x0) -> np.ndarray:
    # per-sample times of shape (B,) broadcast over the element axis
    t = np.asarray(t, dtype=np.float64)
    lead = np.ndim(x0) - 1
    if 0 < t.ndim < lead:
        t = t.reshape(t.shape + (1,) * (lead - t.ndim))
    return t


def flow(x0, eps, tau, schedule: Schedule) -> np.ndarray:
    """``u(tau) x0 + v(tau) eps`` with per-element ``tau``."""
    u, v = schedule.coeff(tau)
    return u[..., None] * x0 + v[..., None] * eps


def forward_sample(x0, eps, t, labels, table: EmbeddingTable, schedule: Schedule, r: float,
                   estimate: BoundaryEstimate | None = None) -> RescaledPoint:
    """Sample ``x~_t`` on the boundary-restarted trajectory toward ``eps``."""
    if estimate is None:
        estimate = estimate_boundary(x0, eps, labels, table, schedule)
    t = _expand_time(t, x0)
    tau = rescale_time(t, estimate.t0, r, schedule.T)
    tau = np.broadcast_to(tau, np.shape(x0)[:-1])
    return RescaledPoint(flow(x0, eps, tau, schedule), t, tau, eps, r, estimate)


def rescaled_vector_field(x0, eps, t, labels, table: EmbeddingTable, schedule: Schedule, r: float,
                          estimate: BoundaryEstimate | None = None) -> np.ndarray:
    """``d x~_t / dt = [u'(tau) x0 + v'(tau) eps] * (T - r t0) / T``."""
    if estimate is None:
        estimate = estimate_boundary(x0, eps, labels, table, schedule)
    t = _expand_time(t, x0)
    tau = np.broadcast_to(rescale_time(t, estimate.t0, r, schedule.T), np.shape(x0)[:-1])
    du, dv = schedule.coeff_derivative(tau)
    dtau_dt = (schedule.T - r * estimate.t0) / schedule.T
    return (du[..., None] * x0 + dv[..., None] * eps) * dtau_dt[..., None]


def x0_field_coefficient(tau, schedule: Schedule) -> np.ndarray:
    """``u'(tau) - v'(tau) u(tau) / v(tau)``.

    Holding ``x~_t`` and ``tau`` fixed, the vector field conditioned on two
    different targets differs by this factor times ``dtau/dt`` times the
    target difference.
    """
    u, v = schedule.coeff(tau)
    du, dv = schedule.coeff_derivative(tau)
    return du - dv * u / v


def deterministic_step(x_t, x0, t_from, t_to, schedule: Schedule) -> np.ndarray:
    """Move ``x_t`` from ``t_from`` to ``t_to`` along the trajectory through ``x0``."""
    t_from = np.asarray(t_from, dtype=np.float64)
    t_to = np.asarray(t_to, dtype=np.float64)
    if np.any(t_to > t_from):
        raise ValueError("deterministic_step runs backwards in time: need t_to <= t_from")
    u_f, v_f = schedule.coeff(t_from)
    u_t, v_t = schedule.coeff(t_to)
    u_f, v_f, u_t, v_t = (np.asarray(a)[..., None] for a in (u_f, v_f, u_t, v_t))
    if np.any(v_f <= 0):
        raise ValueError("v(t_from) must be positive")
    same = (t_from == t_to)[..., None]
    stepped = (u_t - u_f * v_t / v_f) * x0 + (v_t / v_f) * x_t
    stepped = np.where(v_t == 0, x0, stepped)
    return np.where(same, x_t, stepped)
