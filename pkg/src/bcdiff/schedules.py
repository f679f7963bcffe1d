"""Noise schedules on a discrete time grid ``0..T``.

Every schedule writes a noisy point as ``x_t = u_t * x0 + v_t * eps``.

* ``VP``: ``u_t = sqrt(abar_t)``, ``v_t = sqrt(1 - abar_t)`` from a linear beta table.
* ``VE``: ``u_t = 1``, ``v_t = sigma0 * (sigmaT / sigma0) ** (t / T)``.
* ``OT``: ``u_t = 1 - t / T``, ``v_t = t / T``.

Times may be real valued.  VP looks its coefficients up in a table, so a
real time is floored to the grid index below it; VE and OT are analytic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

KINDS = ("VP", "VE", "OT")

# tolerance for times that drift past the grid ends through float arithmetic
_T_SLACK = 1e-9


def linear_beta_sqrt_alphas_cumprod(T: int, beta_start: float = 1e-4, beta_end: float = 2e-2) -> np.ndarray:
    """Table ``sqrt(abar_t)`` for ``t = 0..T`` with ``abar_0 = 1``."""
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    abar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    return np.sqrt(abar)


@dataclass(frozen=True)
class Schedule:
    kind: str
    T: int
    sigma0: float = 0.01
    sigmaT: float = 50.0
    sqrt_alphas_cumprod: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}; expected one of {KINDS}")
        if int(self.T) != self.T or self.T < 2:
            raise ValueError(f"T must be an integer >= 2, got {self.T}")
        if self.kind == "VE" and not (0 < self.sigma0 < self.sigmaT):
            raise ValueError("VE needs 0 < sigma0 < sigmaT")
        if self.kind == "VP":
            table = self.sqrt_alphas_cumprod
            if table is None:
                table = linear_beta_sqrt_alphas_cumprod(self.T)
            table = np.asarray(table, dtype=np.float64)
            if table.shape != (self.T + 1,):
                raise ValueError("sqrt_alphas_cumprod must have T + 1 entries")
            if not np.all(np.diff(table) < 0):
                raise ValueError("sqrt_alphas_cumprod must be strictly decreasing")
            table.setflags(write=False)
            object.__setattr__(self, "sqrt_alphas_cumprod", table)
            object.__setattr__(self, "_v_table", np.sqrt(1.0 - table**2))

    # -- time handling -------------------------------------------------

    def check_time(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        slack = _T_SLACK * self.T
        if np.any(~np.isfinite(t)) or np.any(t < -slack) or np.any(t > self.T + slack):
            raise IndexError(f"time outside [0, {self.T}]: min={np.min(t)}, max={np.max(t)}")
        return np.clip(t, 0.0, float(self.T))

    def grid_index(self, t) -> np.ndarray:
        """Floor a (real) time to its grid index."""
        t = self.check_time(t)
        return np.minimum(np.floor(t + _T_SLACK).astype(np.int64), self.T)

    # -- coefficients --------------------------------------------------

    def coeff(self, t):
        """Return ``(u_t, v_t)`` broadcast to the shape of ``t``."""
        t = self.check_time(t)
        if self.kind == "OT":
            u = 1.0 - t / self.T
            return u, t / self.T
        if self.kind == "VE":
            v = self.sigma0 * (self.sigmaT / self.sigma0) ** (t / self.T)
            return np.ones_like(v), v
        k = self.grid_index(t)
        return self.sqrt_alphas_cumprod[k], self._v_table[k]

    def coeff_derivative(self, t):
        """Return ``(du/dt, dv/dt)``.

        VP uses the forward table difference at ``floor(t)`` (backward at ``T``).
        """
        t = self.check_time(t)
        if self.kind == "OT":
            ones = np.ones_like(t)
            return -ones / self.T, ones / self.T
        if self.kind == "VE":
            _, v = self.coeff(t)
            return np.zeros_like(v), v * np.log(self.sigmaT / self.sigma0) / self.T
        k = np.minimum(self.grid_index(t), self.T - 1)
        du = self.sqrt_alphas_cumprod[k + 1] - self.sqrt_alphas_cumprod[k]
        dv = self._v_table[k + 1] - self._v_table[k]
        return du, dv

    # -- inversion -----------------------------------------------------

    def time_from_u(self, u_target):
        """Invert ``u`` (VP, OT) onto the grid.

        Returns ``(t, clamped)``.  OT floors ``T * (1 - u)``; VP counts the
        table entries strictly above ``u``.  Targets outside ``(0, 1]`` are
        clamped to ``{0, T}`` and flagged.
        """
        if self.kind == "VE":
            raise ValueError("VE has u = 1 everywhere; invert v with time_from_v")
        u = np.asarray(u_target, dtype=np.float64)
        clamped = (u <= 0.0) | (u > 1.0) | ~np.isfinite(u)
        uc = np.clip(np.nan_to_num(u, nan=0.0), 0.0, 1.0)
        if self.kind == "OT":
            t = np.floor(self.T * (1.0 - uc) + _T_SLACK * self.T)
            t = np.clip(t, 0, self.T).astype(np.int64)
        else:
            t = np.sum(uc[..., None] < self.sqrt_alphas_cumprod, axis=-1).astype(np.int64)
            t = np.minimum(t, self.T)
        t = np.where(u <= 0.0, self.T, t)
        t = np.where(u > 1.0, 0, t)
        return t, clamped

    def time_from_v(self, v_target):
        """Invert the VE noise scale: ``T * log(v / sigma0) / log(sigmaT / sigma0)``.

        Returns ``(t, clamped)`` with real ``t`` clamped to ``[0, T]``.
        """
        if self.kind != "VE":
            raise ValueError("time_from_v is only defined for VE")
        v = np.asarray(v_target, dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = self.T * (np.log(v) - np.log(self.sigma0)) / (np.log(self.sigmaT) - np.log(self.sigma0))
        t = np.where(np.isnan(t), self.T, t)
        clamped = (t < 0) | (t > self.T)
        return np.clip(t, 0.0, float(self.T)), clamped


def make_schedule(kind: str = "VP", T: int = 2000, sigma0: float = 0.01, sigmaT: float = 50.0) -> Schedule:
    return Schedule(kind=str(kind).upper(), T=int(T), sigma0=float(sigma0), sigmaT=float(sigmaT))
