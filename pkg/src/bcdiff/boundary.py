"""Where a deterministic forward trajectory leaves its discrete area.

For a datum ``x0 = Emb(I)`` and noise ``eps`` the trajectory
``x_t = u_t x0 + v_t eps`` crosses into the area of a competitor ``J`` when
``u_t * a_J = v_t * b_J`` with

    a_J = f(x0, I) - f(x0, J)        b_J = f(eps, J) - f(eps, I).

The tightest boundary is the smallest ratio ``q = a_J / b_J`` over the
competitors that are actually reachable (``a_J >= 0`` and ``b_J > 0``).
Every schedule's ``u_t / v_t`` decreases monotonically in ``t``, so the
smallest ratio is also the earliest crossing time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from bcdiff.discrete_space import EmbeddingTable
from bcdiff.schedules import Schedule

Q_SENTINEL = 100.0


@dataclass
class BoundaryEstimate:
    t0: np.ndarray
    u_t0: np.ndarray
    v_t0: np.ndarray
    masked: np.ndarray
    j_star: np.ndarray
    q: np.ndarray

    def as_rows(self):
        """Flattened ``(element, t0, u_t0, v_t0, j_star, masked)`` records."""
        t0, u, v = self.t0.ravel(), self.u_t0.ravel(), self.v_t0.ravel()
        j, m = self.j_star.ravel(), self.masked.ravel()
        return [(i, float(t0[i]), float(u[i]), float(v[i]), int(j[i]), bool(m[i])) for i in range(t0.size)]


def boundary_fraction(x0, eps, labels, table: EmbeddingTable, self_dot: bool = True):
    """Smallest crossing ratio per element.

    ``x0`` and ``eps`` have shape ``(..., m)``, ``labels`` shape ``(...)``.
    With ``self_dot`` the own-state likelihood is ``Emb(I) . Emb(I)``, which
    assumes ``x0`` rows are embedding rows; pass ``False`` for arbitrary
    points (e.g. a predicted ``x0``).

    Returns ``(q_min, j_star, masked)``; masked elements get
    ``q_min = Q_SENTINEL`` and ``j_star = -1``.
    """
    W = table.weights
    labels = np.asarray(labels, dtype=np.int64)
    f_x = np.asarray(x0, dtype=np.float64) @ W.T
    f_eps = np.asarray(eps, dtype=np.float64) @ W.T
    if self_dot:
        f_x_i = np.sum(W * W, axis=-1)[labels][..., None]
    else:
        f_x_i = np.take_along_axis(f_x, labels[..., None], axis=-1)
    f_eps_i = np.take_along_axis(f_eps, labels[..., None], axis=-1)
    a = f_x_i - f_x
    b = f_eps - f_eps_i

    own = np.arange(table.K) == labels[..., None]
    # b == 0 never crosses; a < 0 means x0 already sits outside C_I
    invalid = own | (a < 0) | (b <= 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(invalid, np.inf, a / np.where(invalid, 1.0, b))
    j_star = np.argmin(q, axis=-1)
    q_min = np.take_along_axis(q, j_star[..., None], axis=-1)[..., 0]
    masked = np.all(invalid, axis=-1)
    q_min = np.where(masked, Q_SENTINEL, q_min)
    j_star = np.where(masked, -1, j_star)
    return q_min, j_star, masked


def boundary_coeffs(q, kind: str):
    """Coefficients ``(u_t0, v_t0)`` at the crossing for ratio ``q``.

    ``q = 0`` is accepted as the limit of a datum sitting on its boundary.
    """
    q = np.asarray(q, dtype=np.float64)
    if np.any(q < 0) or np.any(np.isnan(q)):
        raise ValueError("boundary ratio must be non-negative; mask degenerate elements first")
    if kind == "VP":
        s = np.sqrt(1.0 + q * q)
        return 1.0 / s, q / s
    if kind == "OT":
        return 1.0 / (1.0 + q), q / (1.0 + q)
    if kind == "VE":
        # u = 1 so the crossing u*a = v*b sits at v = a/b = q
        return np.ones_like(q), q.copy()
    raise ValueError(f"unknown schedule kind {kind!r}")


def stopping_time(q, schedule: Schedule, masked=None) -> np.ndarray:
    """Crossing time ``t0 = G(x0, eps)`` from the ratio ``q``.

    OT and VE are closed-form inversions and stay real valued; VP counts
    the ``sqrt(abar_t)`` table entries above ``u_t0``.  Masked elements take
    the sentinel-implied time (near ``T`` for VP/OT, clamped to ``T`` for
    VE since the sentinel lies beyond ``sigmaT``).
    """
    q = np.asarray(q, dtype=np.float64)
    if masked is None:
        masked = np.zeros(q.shape, dtype=bool)
    u, v = boundary_coeffs(q, schedule.kind)
    if schedule.kind == "OT":
        t0 = schedule.T * (1.0 - u)
    elif schedule.kind == "VE":
        t0, _ = schedule.time_from_v(v)
        t0 = np.where(masked, float(schedule.T), t0)
    else:
        t0, _ = schedule.time_from_u(u)
        t0 = t0.astype(np.float64)
    return np.clip(t0, 0.0, float(schedule.T))


def estimate_boundary(x0, eps, labels, table: EmbeddingTable, schedule: Schedule, self_dot: bool = True) -> BoundaryEstimate:
    q, j_star, masked = boundary_fraction(x0, eps, labels, table, self_dot=self_dot)
    u, v = boundary_coeffs(q, schedule.kind)
    t0 = stopping_time(q, schedule, masked)
    if schedule.kind == "VE" and np.any(masked):
        uT, vT = schedule.coeff(float(schedule.T))
        u = np.where(masked, uT, u)
        v = np.where(masked, vT, v)
    return BoundaryEstimate(t0=t0, u_t0=u, v_t0=v, masked=masked, j_star=j_star, q=q)


def psi(eps, x0, labels, table: EmbeddingTable, schedule: Schedule, estimate: BoundaryEstimate | None = None):
    """Boundary flow: ``eps -> (x_t0, t0)`` with ``x_t0 = u(t0) x0 + v(t0) eps``.

    The point is placed with the schedule's own coefficients at ``t0`` so
    that :func:`psi_inverse` recovers ``eps``; for VP this is the first grid
    point at or past the crossing.
    """
    if estimate is None:
        estimate = estimate_boundary(x0, eps, labels, table, schedule)
    u, v = schedule.coeff(estimate.t0)
    x_t0 = u[..., None] * x0 + v[..., None] * eps
    return x_t0, estimate.t0


def psi_inverse(x_t0, t0, x0, schedule: Schedule) -> np.ndarray:
    """``eps = (x_t0 - u(t0) x0) / v(t0)``; raises where ``v(t0) = 0``."""
    u, v = schedule.coeff(t0)
    v = np.asarray(v)
    if np.any(v <= 0):
        raise ValueError(f"degenerate inverse: v(t0) = 0 for {int(np.sum(v <= 0))} element(s)")
    return (x_t0 - u[..., None] * x0) / v[..., None]
