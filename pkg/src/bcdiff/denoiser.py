"""Small x0-predicting MLP with a hand-written backward pass.

Each position sees a window of ``ctx`` neighbouring noisy vectors (zero
padded at the ends), a sinusoidal embedding of the nominal time and,
optionally, the mean of all positions.  Two SiLU hidden layers map this to
an ``m``-dimensional prediction of the clean vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")


class NumericalError(RuntimeError):
    """Raised when activations, losses or gradients stop being finite."""


def time_embedding(t, dim: int) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)


def _silu(z):
    s = 1.0 / (1.0 + np.exp(-z))
    return z * s, s


def _silu_grad(z, s):
    return s * (1.0 + z * (1.0 - s))


@dataclass
class DenoiserNet:
    m: int
    hidden: int = 128
    time_dim: int = 32
    ctx: int = 3
    pool: bool = True
    params: dict = field(default_factory=dict)

    @property
    def in_dim(self) -> int:
        return self.m * self.ctx + self.time_dim + (self.m if self.pool else 0)

    @classmethod
    def init(cls, m: int, rng: np.random.Generator, hidden: int = 128, time_dim: int = 32,
             ctx: int = 3, pool: bool = True, zero_output: bool = True) -> "DenoiserNet":
        if ctx < 1 or ctx % 2 == 0:
            raise ValueError("ctx must be a positive odd window size")
        net = cls(m=m, hidden=hidden, time_dim=time_dim, ctx=ctx, pool=pool)
        d = net.in_dim
        net.params = {
            "W1": rng.standard_normal((d, hidden)) * np.sqrt(2.0 / d),
            "b1": np.zeros(hidden),
            "W2": rng.standard_normal((hidden, hidden)) * np.sqrt(2.0 / hidden),
            "b2": np.zeros(hidden),
            "W3": np.zeros((hidden, m)) if zero_output else rng.standard_normal((hidden, m)) / np.sqrt(hidden),
            "b3": np.zeros(m),
        }
        return net

    def features(self, x, t) -> np.ndarray:
        """Input features, shape ``(B, n, in_dim)``."""
        x = np.asarray(x, dtype=np.float64)
        B, n, m = x.shape
        if m != self.m:
            raise ValueError(f"expected feature dim {self.m}, got {m}")
        half = self.ctx // 2
        padded = np.pad(x, ((0, 0), (half, half), (0, 0)))
        parts = [padded[:, k:k + n] for k in range(self.ctx)]
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (B,))
        temb = time_embedding(t, self.time_dim)
        parts.append(np.broadcast_to(temb[:, None, :], (B, n, self.time_dim)))
        if self.pool:
            parts.append(np.broadcast_to(x.mean(axis=1, keepdims=True), (B, n, m)))
        return np.concatenate(parts, axis=-1)

    def forward(self, x, t, cache: bool = False):
        p = self.params
        feats = self.features(x, t)
        B, n, _ = feats.shape
        h0 = feats.reshape(B * n, -1)
        z1 = h0 @ p["W1"] + p["b1"]
        a1, s1 = _silu(z1)
        z2 = a1 @ p["W2"] + p["b2"]
        a2, s2 = _silu(z2)
        out = (a2 @ p["W3"] + p["b3"]).reshape(B, n, self.m)
        if not np.all(np.isfinite(out)):
            raise NumericalError("non-finite activations in denoiser forward pass")
        if cache:
            return out, (h0, z1, s1, a1, z2, s2, a2)
        return out

    def predict(self, x, t) -> np.ndarray:
        return self.forward(x, t)

    def backward(self, cache, grad_out, tape: dict | None = None) -> dict:
        """Accumulate parameter gradients for ``dL/d(out) = grad_out`` into ``tape``."""
        p = self.params
        h0, z1, s1, a1, z2, s2, a2 = cache
        g = np.asarray(grad_out, dtype=np.float64).reshape(-1, self.m)
        if tape is None:
            tape = zero_tape(self.params)
        tape["W3"] += a2.T @ g
        tape["b3"] += g.sum(axis=0)
        g2 = (g @ p["W3"].T) * _silu_grad(z2, s2)
        tape["W2"] += a1.T @ g2
        tape["b2"] += g2.sum(axis=0)
        g1 = (g2 @ p["W2"].T) * _silu_grad(z1, s1)
        tape["W1"] += h0.T @ g1
        tape["b1"] += g1.sum(axis=0)
        return tape

    def copy(self) -> "DenoiserNet":
        return DenoiserNet(self.m, self.hidden, self.time_dim, self.ctx, self.pool,
                           {k: v.copy() for k, v in self.params.items()})


def zero_tape(params: dict) -> dict:
    return {k: np.zeros_like(v) for k, v in params.items()}


class SGD:
    """SGD with momentum and global grad-norm clipping over a dict of arrays."""

    def __init__(self, lr: float = 1e-3, momentum: float = 0.9, clip: float | None = 1.0):
        self.lr = lr
        self.momentum = momentum
        self.clip = clip
        self.velocity: dict = {}

    def step(self, params: dict, tape: dict) -> float:
        norm = float(np.sqrt(sum(np.sum(g * g) for g in tape.values())))
        if not np.isfinite(norm):
            raise NumericalError("non-finite gradient")
        scale = 1.0
        if self.clip is not None and norm > self.clip:
            scale = self.clip / norm
        for k, g in tape.items():
            vel = self.velocity.get(k)
            if vel is None:
                vel = self.velocity[k] = np.zeros_like(g)
            vel *= self.momentum
            vel += scale * g
            params[k] -= self.lr * vel
            g[...] = 0.0
        return norm
