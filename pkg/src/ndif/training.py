"""Minibatch noise-prediction training."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .diffusion import NoiseSchedule, training_loss
from .inpaint import NumericError


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 16
    learning_rate: float = 2e-4
    seed: int = 7

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or not self.learning_rate > 0:
            raise ValueError("epochs >= 0, batch_size >= 1 and learning_rate > 0 required")


def make_optimizer(model, config: TrainConfig, state: ad.AdamState | None = None) -> ad.Adam:
    opt = ad.Adam(model.parameters(), lr=config.learning_rate)
    if state is not None:
        opt.state = state
        state.learning_rate = config.learning_rate
    return opt


def train_epoch(model, optimizer: ad.Adam, x0: np.ndarray, schedule: NoiseSchedule, config: TrainConfig, epoch: int) -> float:
    """One pass over ``x0`` [N, 1, L] in shuffled minibatches; returns the mean batch loss.

    The shuffle and the diffusion noise come from a stream keyed on (seed, epoch),
    so a resumed run draws the same batches as an uninterrupted one.
    """
    rng = np.random.default_rng([config.seed, epoch])
    order = rng.permutation(x0.shape[0])
    params = optimizer.params
    losses = []
    for start in range(0, len(order), config.batch_size):
        batch = x0[order[start : start + config.batch_size]]
        loss = training_loss(model, batch, schedule, rng)
        value = float(loss.data)
        if not np.isfinite(value):
            raise NumericError(f"non-finite loss at optimizer step {optimizer.state.step_count + 1}")
        ad.backward(loss, params)
        optimizer.step()
        losses.append(value)
    return float(np.mean(losses)) if losses else float("nan")


def train(model, x0: np.ndarray, schedule: NoiseSchedule, config: TrainConfig, optimizer=None, start_epoch: int = 0, on_epoch=None):
    """Train for ``config.epochs`` epochs starting at ``start_epoch``; returns the optimizer."""
    optimizer = optimizer or make_optimizer(model, config)
    for epoch in range(start_epoch, start_epoch + config.epochs):
        mean_loss = train_epoch(model, optimizer, x0, schedule, config, epoch)
        if on_epoch is not None:
            on_epoch(epoch, mean_loss, optimizer.state.step_count)
    return optimizer


def evaluation_loss(model, x0: np.ndarray, schedule: NoiseSchedule, seed: int = 0, draws: int = 8) -> float:
    """Noise-prediction loss averaged over a fixed set of (t, noise) draws, no gradients."""
    rng = np.random.default_rng([seed, 0xE7A1])
    with ad.no_grad():
        return float(np.mean([float(training_loss(model, x0, schedule, rng).data) for _ in range(draws)]))


def overfit_series(model, series: np.ndarray, schedule: NoiseSchedule, steps: int, batch_size: int = 1,
                   learning_rate: float = 2e-4, seed: int = 0, on_step=None):
    """Fit a single [1, L] series by repeating it across a minibatch; returns per-step losses."""
    x0 = np.broadcast_to(np.asarray(series, dtype=np.float64).reshape(1, 1, -1), (batch_size, 1, series.shape[-1]))
    opt = ad.Adam(model.parameters(), lr=learning_rate)
    rng = np.random.default_rng([seed, 0x0F17])
    losses = []
    for step in range(steps):
        loss = training_loss(model, x0, schedule, rng)
        value = float(loss.data)
        if not np.isfinite(value):
            raise NumericError(f"non-finite loss at optimizer step {step + 1}")
        ad.backward(loss, opt.params)
        opt.step()
        losses.append(value)
        if on_step is not None and on_step(step, value, losses):
            break
    return losses
