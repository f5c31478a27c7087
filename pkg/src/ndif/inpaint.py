"""Forecasting by masked reverse diffusion.

At every reverse step the known prefix is re-drawn from the closed-form forward
marginal of the conditioning series and the unknown suffix from the learned
reverse step; the two are fused by the mask. Optional resampling re-noises the
fused state and repeats segments of the chain.
"""

from __future__ import annotations

import csv
import io
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import GRID_LENGTH, GRID_TAU, ConjunctionEvent, DataError, grid_observations
from .diffusion import NoiseSchedule, forward_step, p_sample_step, q_sample


class NumericError(FloatingPointError):
    """The sampler produced non-finite values."""


@dataclass(frozen=True, eq=False)
class Mask:
    """Known prefix ``[0, cutoff_index)``, unknown suffix."""

    known: np.ndarray
    cutoff_index: int

    @classmethod
    def prefix(cls, cutoff_index: int, length: int = GRID_LENGTH) -> Mask:
        if not 1 <= cutoff_index <= length - 1:
            raise ValueError(f"cutoff_index {cutoff_index} must leave at least one known and one unknown step")
        known = np.arange(length) < cutoff_index
        known.setflags(write=False)
        return cls(known, int(cutoff_index))

    def __len__(self) -> int:
        return self.known.size


def cutoff_index_for(cutoff_days: float) -> int:
    """Number of grid steps at or before the cutoff (days-to-TCA >= cutoff)."""
    return int(np.count_nonzero(GRID_TAU >= cutoff_days - 1e-9))


def mask_combine(mask, known_part, unknown_part) -> np.ndarray:
    """Elementwise ``m * known + (1 - m) * unknown`` for a Boolean mask, as an exact selection."""
    known_part = np.asarray(known_part)
    unknown_part = np.asarray(unknown_part)
    m = mask.known if isinstance(mask, Mask) else np.asarray(mask, dtype=bool)
    if known_part.shape != unknown_part.shape or known_part.shape[-1] != m.shape[-1]:
        raise ValueError(f"mask_combine shapes differ: mask {m.shape}, {known_part.shape}, {unknown_part.shape}")
    return np.where(m, known_part, unknown_part)


def repaint_schedule(T: int, jump_length: int = 1, resample_count: int = 1) -> list[int]:
    """Sequence of chain levels visited, starting at T and ending at 0.

    A decrease is one fused reverse step, an increase one forward re-noising
    step. Every ``jump_length`` levels the chain climbs back ``jump_length``
    levels, ``resample_count - 1`` times.
    """
    if jump_length < 1 or resample_count < 1:
        raise ValueError("jump_length and resample_count must be >= 1")
    jumps = {s: resample_count - 1 for s in range(0, T - jump_length, jump_length)}
    s = T
    levels = [s]
    while s >= 1:
        s -= 1
        levels.append(s)
        if jumps.get(s, 0) > 0:
            jumps[s] -= 1
            for _ in range(jump_length):
                s += 1
                levels.append(s)
    return levels


def _draw(rngs, length: int) -> np.ndarray:
    return np.stack([r.standard_normal(length) for r in rngs])[:, None, :]


def repaint_sample_batch(
    model,
    schedule: NoiseSchedule,
    x0_known,
    mask: Mask,
    rngs,
    resample_count: int = 1,
    jump_length: int = 1,
    sigma_scale: float = 1.0,
    on_step=None,
) -> np.ndarray:
    """Masked reverse chains, one per generator in ``rngs``; returns [N, 1, L].

    Each chain draws its noise only from its own generator, so a chain's
    result does not depend on which other chains share the batch.
    """
    x0 = np.asarray(x0_known, dtype=np.float64).reshape(1, 1, -1)
    L = x0.shape[-1]
    if len(mask) != L:
        raise ValueError(f"mask length {len(mask)} does not match series length {L}")
    x = _draw(rngs, L)
    levels = repaint_schedule(schedule.T, jump_length, resample_count)
    for s_from, s_to in zip(levels[:-1], levels[1:]):
        if s_to < s_from:
            x_known = q_sample(x0, s_to, schedule, _draw(rngs, L))
            x_unknown = p_sample_step(model, x, s_from, schedule, _draw(rngs, L), sigma_scale)
            x = mask_combine(mask, np.broadcast_to(x_known, x_unknown.shape), x_unknown)
            kind = "reverse"
        else:
            x = forward_step(x, s_to, schedule, _draw(rngs, L))
            kind = "renoise"
        if on_step is not None:
            on_step(kind, s_from, s_to)
    if not np.all(np.isfinite(x)):
        raise NumericError("sampler produced non-finite values; check model parameters")
    return x


def repaint_sample(model, schedule, x0_known, mask: Mask, rng: np.random.Generator, **kwargs) -> np.ndarray:
    """Single masked reverse chain; returns [1, 1, L]."""
    return repaint_sample_batch(model, schedule, x0_known, mask, [rng], **kwargs)


# ---------------------------------------------------------------------------
# forecasting


@dataclass(frozen=True)
class ForecastConfig:
    num_samples: int = 32
    resample_count: int = 1
    jump_length: int = 1
    seed: int = 0
    point_estimate: str = "median"
    quantiles: tuple[float, float] = (0.05, 0.95)
    workers: int = 1
    chunk_size: int = 32

    def __post_init__(self):
        if self.num_samples < 1 or self.resample_count < 1 or self.jump_length < 1:
            raise ValueError("num_samples, resample_count and jump_length must all be >= 1")
        if self.point_estimate not in ("median", "mean"):
            raise ValueError(f"point_estimate must be 'median' or 'mean', got {self.point_estimate!r}")
        lo, hi = self.quantiles
        object.__setattr__(self, "quantiles", (float(lo), float(hi)))
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError(f"quantiles must satisfy 0 <= lo <= hi <= 1, got {self.quantiles}")
        if self.workers < 1 or self.chunk_size < 1:
            raise ValueError("workers and chunk_size must be >= 1")


def aggregate(trajectories, quantiles=(0.05, 0.95), point: str = "median"):
    """Per-step point estimate and quantile band (linear interpolation between order statistics)."""
    traj = np.asarray(trajectories, dtype=np.float64)
    if traj.ndim != 2 or traj.shape[0] < 1:
        raise ValueError("trajectories must be an N x L array with N >= 1")
    centre = np.median(traj, axis=0) if point == "median" else traj.mean(axis=0)
    lo, hi = np.quantile(traj, quantiles, axis=0, method="linear")
    return centre, lo, hi


@dataclass(frozen=True, eq=False)
class ForecastResult:
    trajectories: np.ndarray
    point_estimate: np.ndarray
    band_low: np.ndarray
    band_high: np.ndarray
    mask: Mask
    event_id: str = ""

    @property
    def tau(self) -> np.ndarray:
        return GRID_TAU

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("tau_days", "median_m", "q05_m", "q95_m", "known_flag"))
        for i in range(len(self.point_estimate)):
            w.writerow(
                (
                    repr(float(GRID_TAU[i])),
                    repr(float(self.point_estimate[i])),
                    repr(float(self.band_low[i])),
                    repr(float(self.band_high[i])),
                    int(self.mask.known[i]),
                )
            )
        return buf.getvalue()

    def trajectories_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["tau_days"] + [f"sample_{k}" for k in range(self.trajectories.shape[0])])
        for i in range(self.trajectories.shape[1]):
            w.writerow([repr(float(GRID_TAU[i]))] + [repr(float(v)) for v in self.trajectories[:, i]])
        return buf.getvalue()


def conditioning(event: ConjunctionEvent, normalizer, cutoff_days: float):
    """Grid the pre-cutoff observations and build the forecast mask.

    The known prefix ends at the cutoff or at the last pre-cutoff observation,
    whichever is earlier, so no known step carries right-padding.
    """
    tau, sigma = event.tau, event.sigma
    before = tau >= cutoff_days
    if not np.any(before):
        raise DataError(f"event {event.event_id}: no observation at or before cutoff {cutoff_days} days")
    grid = grid_observations(tau[before], sigma[before], normalizer, event.event_id, allow_single=True)
    last_obs = int(np.flatnonzero(grid.obs_mask)[-1])
    cut = min(cutoff_index_for(cutoff_days), last_obs + 1)
    return grid, Mask.prefix(cut, GRID_LENGTH)


def trajectory_rngs(seed: int, event_id: str, n: int) -> list[np.random.Generator]:
    key = zlib.crc32(event_id.encode("utf-8"))
    return [np.random.default_rng([seed, key, k]) for k in range(n)]


def forecast_grid(model, schedule, grid, mask: Mask, normalizer, config: ForecastConfig, event_id: str = "") -> ForecastResult:
    rngs = trajectory_rngs(config.seed, event_id, config.num_samples)
    x0 = np.where(mask.known, grid.values, 0.0)
    chunks = [rngs[i : i + config.chunk_size] for i in range(0, len(rngs), config.chunk_size)]

    def run(chunk):
        return repaint_sample_batch(
            model,
            schedule,
            x0,
            mask,
            chunk,
            resample_count=config.resample_count,
            jump_length=config.jump_length,
        )

    if config.workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    traj = normalizer.denormalize(np.concatenate(parts)[:, 0, :])
    centre, lo, hi = aggregate(traj, config.quantiles, config.point_estimate)
    return ForecastResult(traj, centre, lo, hi, mask, event_id)


def forecast(model, schedule, event: ConjunctionEvent, normalizer, cutoff_days: float, config: ForecastConfig) -> ForecastResult:
    grid, mask = conditioning(event, normalizer, cutoff_days)
    return forecast_grid(model, schedule, grid, mask, normalizer, config, event.event_id)
