"""Gaussian diffusion: schedule, forward noising, ε-prediction loss, ancestral sampling.

Timesteps are 1-based (``1 <= t <= T``). ``gamma[t]`` is the cumulative
signal-retention product ``prod_{s<=t} (1 - beta_s)``.

A *denoiser* here is any object with

* ``forward(I_t, z, noise_level) -> eps_hat`` where ``noise_level`` holds
  ``sqrt(gamma_t)`` per batch item, and
* ``backward(d_eps_hat) -> d_z`` accumulating its parameter gradients.
"""
from dataclasses import dataclass

import numpy as np

from .nncore import DivergenceError, check_finite


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray
    alpha: np.ndarray
    gamma: np.ndarray

    @property
    def T(self):
        return len(self.beta)

    def _idx(self, t):
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T):
            raise IndexError(f"timestep out of range 1..{self.T}: {t}")
        return t - 1

    def beta_at(self, t):
        return self.beta[self._idx(t)]

    def alpha_at(self, t):
        return self.alpha[self._idx(t)]

    def gamma_at(self, t):
        return self.gamma[self._idx(t)]


def make_schedule(T=1000, beta_start=1e-4, beta_end=0.02):
    if T < 1 or not (0 < beta_start <= beta_end < 1):
        raise ValueError(f"invalid schedule T={T} beta=[{beta_start}, {beta_end}]")
    beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha = 1.0 - beta
    gamma = np.cumprod(alpha)
    return NoiseSchedule(beta=beta, alpha=alpha, gamma=gamma)


def _bcast(v, like):
    v = np.asarray(v, dtype=np.float64)
    return v.reshape(v.shape + (1,) * (like.ndim - v.ndim))


def q_sample(I0, t, eps, schedule):
    """``sqrt(gamma_t) * I0 + sqrt(1 - gamma_t) * eps``; ``t`` may be per batch item."""
    g = _bcast(schedule.gamma_at(t), I0)
    return (np.sqrt(g) * I0 + np.sqrt(1.0 - g) * eps).astype(I0.dtype, copy=False)


def training_loss(z, I0, denoiser, schedule, rng, loss="l2"):
    """Noise-prediction loss for one batch; gradients flow into ``denoiser``.

    Returns ``(loss, d_z, info)`` where ``info`` carries the drawn ``t``,
    ``eps`` and the prediction. The loss is averaged over batch and elements.
    """
    n = I0.shape[0]
    t = rng.integers(1, schedule.T + 1, size=n)
    eps = rng.standard_normal(I0.shape).astype(I0.dtype)
    return loss_at(z, I0, t, eps, denoiser, schedule, loss=loss)


def loss_at(z, I0, t, eps, denoiser, schedule, loss="l2", backward=True):
    """Loss for fixed timesteps and noise (used for held-out evaluation too)."""
    I_t = q_sample(I0, t, eps, schedule)
    level = np.sqrt(schedule.gamma_at(t))
    eps_hat = denoiser.forward(I_t, z, level)
    diff = eps_hat - eps
    if loss == "l2":
        value = float(np.mean(np.square(diff, dtype=np.float64)))
        grad = (2.0 / diff.size) * diff
    elif loss == "l1":
        value = float(np.mean(np.abs(diff, dtype=np.float64)))
        grad = np.sign(diff) / diff.size
    else:
        raise ValueError(f"unknown loss {loss!r}")
    if not np.isfinite(value):
        raise DivergenceError(f"non-finite training loss {value}")
    d_z = denoiser.backward(grad.astype(eps_hat.dtype, copy=False)) if backward else None
    return value, d_z, {"t": t, "eps": eps, "eps_hat": eps_hat, "I_t": I_t}


def p_sample_step(denoiser, I_t, z, t, schedule, rng, variance="beta", noise=True):
    """One ancestral step ``I_t -> I_{t-1}`` with ε-prediction (scalar ``t``)."""
    beta = schedule.beta_at(t)
    alpha = schedule.alpha_at(t)
    gamma = schedule.gamma_at(t)
    n = I_t.shape[0]
    eps_hat = denoiser.forward(I_t, z, np.full(n, np.sqrt(gamma)))
    mean = (I_t - (beta / np.sqrt(1.0 - gamma)) * eps_hat) / np.sqrt(alpha)
    if t > 1 and noise:
        if variance == "beta":
            var = beta
        elif variance == "posterior":
            var = beta * (1.0 - schedule.gamma_at(t - 1)) / (1.0 - gamma)
        else:
            raise ValueError(f"unknown variance {variance!r}")
        mean = mean + np.sqrt(var) * rng.standard_normal(I_t.shape)
    return check_finite(mean.astype(I_t.dtype, copy=False), f"sample at t={t}")


def sample(denoiser, z, schedule, rng, shape, variance="beta", noise=True, clamp=True):
    """Reverse chain from pure noise at ``t = T`` down to ``t = 1``.

    ``shape`` is ``[N, 3, H, W]`` (or ``[3, H, W]`` for a single image).
    """
    single = len(shape) == 3
    if single:
        shape = (1,) + tuple(shape)
        z = z[None]
    if z.shape[-2:] != tuple(shape[-2:]):
        raise ValueError(f"condition extents {z.shape[-2:]} differ from {shape[-2:]}")
    x = rng.standard_normal(shape).astype(z.dtype)
    for t in range(schedule.T, 0, -1):
        x = p_sample_step(denoiser, x, z, t, schedule, rng, variance=variance, noise=noise)
    if clamp:
        x = np.clip(x, -1.0, 1.0)
    return x[0] if single else x


def to_model_range(img):
    """[0, 1] -> [-1, 1]."""
    return img * 2.0 - 1.0


def from_model_range(img):
    """[-1, 1] -> [0, 1]."""
    return np.clip((img + 1.0) / 2.0, 0.0, 1.0)
