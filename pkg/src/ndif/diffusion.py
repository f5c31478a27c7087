"""Noise schedule, forward noising, the noise-prediction objective and the
ancestral reverse sampler.

Step indices run 1..T. Index 0 is the clean signal, with ``alpha_bar(0) == 1``.
A *denoiser* is any callable ``model(x_t: Tensor[B,1,L], t: int array[B]) -> Tensor``
that predicts the injected noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    T: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    beta_start: float
    beta_end: float

    def check_step(self, t: int, allow_zero: bool = False) -> None:
        lo = 0 if allow_zero else 1
        if not lo <= t <= self.T:
            raise ValueError(f"diffusion step {t} outside {lo}..{self.T}")

    def beta(self, t: int) -> float:
        self.check_step(t)
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        self.check_step(t)
        return float(self.alphas[t - 1])

    def alpha_bar(self, t):
        """Cumulative signal retention; accepts scalars or integer arrays, with step 0 -> 1."""
        t = np.asarray(t)
        if np.any(t < 0) or np.any(t > self.T):
            raise ValueError(f"diffusion step outside 0..{self.T}")
        padded = np.concatenate([[1.0], self.alpha_bars])
        out = padded[t]
        return float(out) if out.ndim == 0 else out

    def posterior_variance(self, t: int) -> float:
        """Variance of q(x_{t-1} | x_t, x_0); zero at t == 1."""
        self.check_step(t)
        if t == 1:
            return 0.0
        return (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t)) * self.beta(t)

    def to_dict(self) -> dict:
        return {"T": self.T, "beta_start": self.beta_start, "beta_end": self.beta_end}

    @classmethod
    def from_dict(cls, d: dict) -> NoiseSchedule:
        return linear_beta_schedule(int(d["T"]), float(d["beta_start"]), float(d["beta_end"]))


def linear_beta_schedule(T: int = 50, beta_start: float = 1e-4, beta_end: float = 0.25) -> NoiseSchedule:
    if T < 1:
        raise ValueError(f"T must be at least 1, got {T}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = np.linspace(beta_start, beta_end, T)
    alphas = 1.0 - betas
    alpha_bars = np.empty(T)
    running = 1.0
    for i, a in enumerate(alphas):
        running = running * a
        alpha_bars[i] = running
    for arr in (betas, alphas, alpha_bars):
        arr.setflags(write=False)
    return NoiseSchedule(T, betas, alphas, alpha_bars, float(beta_start), float(beta_end))


def forward_step(x_prev, t: int, schedule: NoiseSchedule, noise) -> np.ndarray:
    """One step of the forward chain: x_t given x_{t-1}."""
    beta = schedule.beta(t)
    return np.sqrt(1.0 - beta) * np.asarray(x_prev) + np.sqrt(beta) * np.asarray(noise)


def q_sample(x0, t, schedule: NoiseSchedule, noise) -> np.ndarray:
    """Draw x_t directly from x_0. ``t`` may be a scalar or one step per batch row."""
    x0 = np.asarray(x0)
    ab = np.asarray(schedule.alpha_bar(t), dtype=np.float64)
    if ab.ndim == 1:
        ab = ab.reshape((-1,) + (1,) * (x0.ndim - 1))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * np.asarray(noise)


def training_loss(model, x0_batch, schedule: NoiseSchedule, rng: np.random.Generator) -> Tensor:
    """Noise-prediction MSE at one uniformly drawn step per batch row."""
    x0 = np.asarray(x0_batch.data if isinstance(x0_batch, Tensor) else x0_batch, dtype=np.float64)
    t = rng.integers(1, schedule.T + 1, size=x0.shape[0])
    eps = rng.standard_normal(x0.shape)
    x_t = q_sample(x0, t, schedule, eps)
    return ad.mse_loss(model(Tensor(x_t), t), Tensor(eps))


def predict_noise(model, x_t: np.ndarray, t: int) -> np.ndarray:
    with ad.no_grad():
        out = model(Tensor(x_t), np.full(x_t.shape[0], t, dtype=np.int64))
    return np.asarray(out.data if isinstance(out, Tensor) else out)


def p_sample_step(model, x_t, t: int, schedule: NoiseSchedule, noise, sigma_scale: float = 1.0) -> np.ndarray:
    """One ancestral step x_t -> x_{t-1} with fixed posterior variance.

    ``sigma_scale=0`` returns the posterior mean (the deterministic variant).
    """
    schedule.check_step(t)
    x_t = np.asarray(x_t, dtype=np.float64)
    eps_hat = predict_noise(model, x_t, t)
    beta, alpha, ab = schedule.beta(t), schedule.alpha(t), schedule.alpha_bar(t)
    mean = (x_t - (beta / np.sqrt(1.0 - ab)) * eps_hat) / np.sqrt(alpha)
    if t == 1 or sigma_scale == 0.0:
        return mean
    return mean + sigma_scale * np.sqrt(schedule.posterior_variance(t)) * np.asarray(noise)


def sample_unconditional(
    model,
    schedule: NoiseSchedule,
    length: int,
    batch: int,
    rng: np.random.Generator,
    sigma_scale: float = 1.0,
    length_divisor: int = 1,
) -> np.ndarray:
    """Run the reverse chain from pure noise; returns normalized series [B, 1, L]."""
    if length < 1 or length % length_divisor:
        raise ValueError(f"length {length} must be a positive multiple of {length_divisor}")
    x = rng.standard_normal((batch, 1, length))
    for t in range(schedule.T, 0, -1):
        noise = rng.standard_normal(x.shape)
        x = p_sample_step(model, x, t, schedule, noise, sigma_scale)
    return x
