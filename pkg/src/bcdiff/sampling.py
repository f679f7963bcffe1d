"""Reverse processes on the boundary-conditional trajectory.

The sampler tracks the nominal time ``t``, the per-element rescaled time
``tau``, the state ``x~`` and a noise estimate ``eps_hat``.  Each step
predicts ``x0_hat``, optionally re-derives ``eps_hat`` from the current
state (trajectory alteration), recomputes the boundary time of
``(x0_hat, eps_hat)`` and re-places the state on that trajectory at the
next ``tau``.  The nominal time never drops below 1, which is where the
final prediction is read out.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from bcdiff.boundary import estimate_boundary
from bcdiff.denoiser import NumericalError
from bcdiff.discrete_space import DataSpace, round_to_discrete
from bcdiff.schedules import Schedule
from bcdiff.trajectory import forward_sample, rescale_time

MODES = ("deterministic", "gaussian")


def equal_intervals(T: int, steps: int) -> list[int]:
    """``steps`` positive integer intervals summing to ``T`` (larger ones first)."""
    if not 1 <= steps <= T:
        raise ValueError(f"steps must lie in [1, {T}]")
    base, extra = divmod(T, steps)
    return [base + 1] * extra + [base] * (steps - extra)


@dataclass
class SamplerConfig:
    steps: int = 20
    intervals: list | None = None
    r: float = 0.5
    alteration: bool = True
    mode: str = "deterministic"
    sigma_max: float = 0.1

    def resolve(self, T: int) -> list:
        if self.mode not in MODES:
            raise ValueError(f"unknown sampling mode {self.mode!r}")
        if not 0.0 <= self.r <= 1.0:
            raise ValueError("r must lie in [0, 1]")
        iv = list(self.intervals) if self.intervals is not None else equal_intervals(T, self.steps)
        if any(d <= 0 for d in iv) or sum(iv) != T:
            raise ValueError("intervals must be positive and sum to T")
        return iv


def boundary_time(x0_hat_e, eps_hat, space: DataSpace, schedule: Schedule) -> np.ndarray:
    """``G(x0_hat, eps_hat)`` with the rounded prediction as the own state."""
    labels = round_to_discrete(x0_hat_e, space.table)
    return estimate_boundary(x0_hat_e, eps_hat, labels, space.table, schedule, self_dot=False).t0


def _place(x0_e, eps_e, tau, schedule):
    u, v = schedule.coeff(tau)
    return u[..., None] * x0_e + v[..., None] * eps_e


def _invert(x_e, x0_e, tau, schedule):
    u, v = schedule.coeff(tau)
    return (x_e - u[..., None] * x0_e) / v[..., None]


def reverse(predict, space: DataSpace, schedule: Schedule, x, t_start: int, tau, intervals, r: float,
            alteration: bool, eps_hat=None, sigma_fn=None, rng=None):
    """Run the reverse loop from state ``x`` at nominal ``t_start``.

    ``sigma_fn(t)`` switches on Gaussian injection (alteration is then
    always applied, as the injected noise must be folded into ``eps_hat``).
    Returns ``(x0_continuous, symbols)`` in position view.
    """
    B = len(x)
    x_e = space.elements(np.asarray(x, dtype=np.float64))
    tau = np.broadcast_to(np.asarray(tau, dtype=np.float64), x_e.shape[:-1]).copy()
    eps_hat = x_e.copy() if eps_hat is None else space.elements(np.asarray(eps_hat, dtype=np.float64))
    t = int(t_start)
    for i, dt in enumerate(intervals):
        z = None
        if sigma_fn is not None:
            z = rng.standard_normal(x_e.shape) * sigma_fn(t)
        x0_hat = space.elements(predict(space.positions(x_e), np.full(B, float(t))))
        if alteration or sigma_fn is not None:
            eps_hat = _invert(x_e, x0_hat, tau, schedule)
        t = max(t - int(dt), 1)
        if r > 0:
            t0 = boundary_time(x0_hat, eps_hat, space, schedule)
        else:
            t0 = np.zeros(x_e.shape[:-1])
        tau = rescale_time(float(t), t0, r, schedule.T)
        x_e = _place(x0_hat, eps_hat, tau, schedule)
        if z is not None:
            x_e = x_e + z
        if not np.all(np.isfinite(x_e)):
            raise NumericalError(f"non-finite sampler state after step {i + 1}")
    x0 = predict(space.positions(x_e), np.full(B, float(t)))
    return x0, space.decode(x0)


def initial_noise(space: DataSpace, schedule: Schedule, shape, rng: np.random.Generator):
    """``x~_T`` and the matching ``eps_hat``; VE scales the prior by ``v_T``."""
    eps = rng.standard_normal(shape)
    if schedule.kind == "VE":
        return schedule.sigmaT * eps, eps
    return eps, eps


def sample_deterministic(predict, space: DataSpace, schedule: Schedule, config: SamplerConfig,
                         n_samples: int, n_positions: int, rng: np.random.Generator):
    intervals = config.resolve(schedule.T)
    x, eps = initial_noise(space, schedule, (n_samples, n_positions, space.D), rng)
    return reverse(predict, space, schedule, x, schedule.T, float(schedule.T), intervals, config.r,
                   config.alteration, eps_hat=eps)


def sample_gaussian(predict, space: DataSpace, schedule: Schedule, config: SamplerConfig,
                    n_samples: int, n_positions: int, rng: np.random.Generator):
    """Deterministic sampler plus ``z ~ N(0, sigma_t^2 I)`` injected after each step.

    ``sigma_t = v(t) / v(T) * sigma_max``, decreasing with ``t``.
    """
    intervals = config.resolve(schedule.T)
    x, eps = initial_noise(space, schedule, (n_samples, n_positions, space.D), rng)
    _, vT = schedule.coeff(float(schedule.T))

    def sigma_fn(t):
        _, v = schedule.coeff(float(t))
        return float(v / vT * config.sigma_max)

    return reverse(predict, space, schedule, x, schedule.T, float(schedule.T), intervals, config.r,
                   True, eps_hat=eps, sigma_fn=sigma_fn, rng=rng)


def sample(predict, space, schedule, config: SamplerConfig, n_samples, n_positions, rng):
    fn = sample_gaussian if config.mode == "gaussian" else sample_deterministic
    return fn(predict, space, schedule, config, n_samples, n_positions, rng)


def estimate_start(predict, space: DataSpace, schedule: Schedule, x, t: int, r: float, iters: int = 3):
    """Self-consistent ``(tau, eps_hat)`` for a state whose boundary time is unknown."""
    B = len(x)
    x_e = space.elements(x)
    x0_hat = space.elements(predict(x, np.full(B, float(t))))
    tau = np.full(x_e.shape[:-1], float(t))
    eps_hat = _invert(x_e, x0_hat, tau, schedule)
    for _ in range(iters if r > 0 else 0):
        tau = rescale_time(float(t), boundary_time(x0_hat, eps_hat, space, schedule), r, schedule.T)
        eps_hat = _invert(x_e, x0_hat, tau, schedule)
    return tau, space.positions(eps_hat)


def reconstruct(predict, space: DataSpace, schedule: Schedule, data, t_start: int, steps: int, r: float,
                rng: np.random.Generator, mode: str = "deterministic", alteration: bool = True,
                sigma_max: float = 0.1):
    """Noise ``data`` to ``t_start`` on its own rescaled trajectory, then run the reverse process.

    Returns ``(symbols, element_accuracy)`` where accuracy is measured
    per boundary element against the original data.
    """
    x0, labels = space.encode(data)
    x0e = space.elements(x0)
    eps = rng.standard_normal(x0e.shape)
    B = len(x0)
    pt = forward_sample(x0e, eps, np.full(B, float(t_start)), labels, space.table, schedule, r)
    x = space.positions(pt.x_tilde)
    tau, eps_hat = estimate_start(predict, space, schedule, x, t_start, r)
    intervals = equal_intervals(t_start, min(steps, t_start))
    sigma_fn = None
    if mode == "gaussian":
        _, vT = schedule.coeff(float(schedule.T))
        sigma_fn = lambda t: float(schedule.coeff(float(t))[1] / vT * sigma_max)  # noqa: E731
    x0_hat, symbols = reverse(predict, space, schedule, x, t_start, tau, intervals, r, alteration,
                              eps_hat=eps_hat, sigma_fn=sigma_fn, rng=rng)
    acc = float(np.mean(round_to_discrete(space.elements(x0_hat), space.table) == labels))
    return symbols, acc
