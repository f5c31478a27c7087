"""Conjunction events: synthetic generation, hourly gridding, normalization,
splitting and the on-disk CSV/manifest formats."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

HORIZON_DAYS = 7.0
STEPS_PER_DAY = 24
GRID_LENGTH = 168
GRID_TAU = HORIZON_DAYS - np.arange(GRID_LENGTH) / STEPS_PER_DAY
GRID_TAU.setflags(write=False)

EVENT_HEADER = ("event_id", "tau_days", "sigma_t_m")


class DataError(ValueError):
    """Malformed, degenerate or insufficient event data."""


@dataclass(frozen=True)
class ConjunctionEvent:
    """Along-track uncertainty observations ordered by decreasing days-to-TCA."""

    event_id: str
    observations: tuple[tuple[float, float], ...]

    def __post_init__(self):
        obs = tuple((float(t), float(s)) for t, s in self.observations)
        object.__setattr__(self, "observations", obs)
        if len(obs) < 2:
            raise DataError(f"event {self.event_id}: needs at least 2 observations, got {len(obs)}")
        for i, (tau, sigma) in enumerate(obs):
            if not (0.0 <= tau <= HORIZON_DAYS):
                raise DataError(f"event {self.event_id}: tau {tau} outside [0, {HORIZON_DAYS}]")
            if not sigma > 0.0 or not math.isfinite(sigma):
                raise DataError(f"event {self.event_id}: sigma must be positive, got {sigma}")
            if i and tau >= obs[i - 1][0]:
                raise DataError(f"event {self.event_id}: tau must be strictly decreasing at observation {i}")

    @property
    def tau(self) -> np.ndarray:
        return np.array([o[0] for o in self.observations])

    @property
    def sigma(self) -> np.ndarray:
        return np.array([o[1] for o in self.observations])


# ---------------------------------------------------------------------------
# normalization


@dataclass(frozen=True)
class Normalizer:
    """log10 then affine, sending [lo, hi] to [-1, 1]; values below 1 m clamp to 1 m."""

    lo: float
    hi: float
    floor: float = 1.0

    def __post_init__(self):
        if not self.hi - self.lo >= 1e-9:
            raise ValueError(f"normalizer range degenerate: lo={self.lo}, hi={self.hi}")

    def normalize(self, v):
        logv = np.log10(np.maximum(np.asarray(v, dtype=np.float64), self.floor))
        out = 2.0 * (logv - self.lo) / (self.hi - self.lo) - 1.0
        return float(out) if out.ndim == 0 else out

    def denormalize(self, u):
        logv = (np.asarray(u, dtype=np.float64) + 1.0) * 0.5 * (self.hi - self.lo) + self.lo
        out = 10.0**logv
        return float(out) if out.ndim == 0 else out

    def to_dict(self) -> dict:
        return asdict(self)


def fit_normalizer(events) -> Normalizer:
    events = list(events)
    if not events:
        raise ValueError("cannot fit a normalizer on an empty training set")
    logs = np.log10(np.maximum(np.concatenate([e.sigma for e in events]), 1.0))
    lo, hi = float(logs.min()), float(logs.max())
    if hi - lo < 1e-9:
        raise ValueError("all training observations identical; normalizer range is degenerate")
    return Normalizer(lo, hi)


# ---------------------------------------------------------------------------
# gridding


@dataclass(frozen=True, eq=False)
class GriddedSeries:
    values: np.ndarray
    obs_mask: np.ndarray
    pad_mask: np.ndarray
    event_id: str = ""


def snap_index(tau) -> np.ndarray:
    """Nearest grid index for each tau; exact half-way ties go to the smaller index."""
    pos = (HORIZON_DAYS - np.asarray(tau, dtype=np.float64)) * STEPS_PER_DAY
    return np.ceil(pos - 0.5).astype(np.int64)


PAD_MODES = ("edge", "zero")


def grid_observations(
    tau, sigma, normalizer, event_id: str = "", allow_single: bool = False, pad_mode: str = "edge"
) -> GriddedSeries:
    """Snap observations to the hourly grid, interpolate interior gaps, pad both ends.

    ``pad_mode="edge"`` holds the first/last observed value outward; ``"zero"``
    fills with 0 in normalized space. Observations closer to TCA than half a
    step past the last grid point have no grid step within 30 minutes and are
    dropped.
    """
    if pad_mode not in PAD_MODES:
        raise ValueError(f"pad_mode must be one of {PAD_MODES}, got {pad_mode!r}")
    tau = np.asarray(tau, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    idx = snap_index(tau)
    keep = (idx >= 0) & (idx < GRID_LENGTH)
    idx, sigma = idx[keep], sigma[keep]
    if idx.size == 0:
        raise DataError(f"event {event_id}: no observation falls on the grid")
    snapped = {}
    for i, s in zip(idx, sigma):  # tau decreasing, so the later observation wins a collision
        snapped[int(i)] = s
    if len(snapped) < 2 and not allow_single:
        raise DataError(f"event {event_id}: all observations snap to one grid step")
    obs_idx = np.array(sorted(snapped))
    obs_val = np.asarray(normalizer.normalize(np.array([snapped[i] for i in obs_idx])), dtype=np.float64)

    values = np.zeros(GRID_LENGTH)
    pad_mask = np.ones(GRID_LENGTH, dtype=bool)
    first, last = obs_idx[0], obs_idx[-1]
    if pad_mode == "edge":
        values[:first] = obs_val[0]
        values[last + 1 :] = obs_val[-1]
    inner = np.arange(first, last + 1)
    values[first : last + 1] = np.interp(inner, obs_idx, obs_val)
    values[obs_idx] = obs_val
    pad_mask[first : last + 1] = False
    obs_mask = np.zeros(GRID_LENGTH, dtype=bool)
    obs_mask[obs_idx] = True
    return GriddedSeries(values, obs_mask, pad_mask, event_id)


def grid_event(event: ConjunctionEvent, normalizer, pad_mode: str = "edge") -> GriddedSeries:
    return grid_observations(event.tau, event.sigma, normalizer, event.event_id, pad_mode=pad_mode)


def stack_grids(grids) -> np.ndarray:
    """[N, 1, L] array of normalized values, ready for training."""
    return np.stack([g.values for g in grids])[:, None, :]


# ---------------------------------------------------------------------------
# synthetic events


@dataclass(frozen=True)
class SyntheticConfig:
    n_events: int = 1250
    cdm_rate: float = 3.0
    sigma7_range: tuple[float, float] = (2000.0, 50000.0)
    sigma0_range: tuple[float, float] = (50.0, 2000.0)
    jitter_std: float = 0.1
    jump_prob: float = 0.3
    jump_factor_range: tuple[float, float] = (0.5, 1.5)
    seed: int = 7
    max_redraws: int = 1000

    def __post_init__(self):
        for name in ("sigma7_range", "sigma0_range", "jump_factor_range"):
            lo, hi = getattr(self, name)
            object.__setattr__(self, name, (float(lo), float(hi)))
            if not 0 < lo <= hi:
                raise ValueError(f"{name} must satisfy 0 < lo <= hi, got {(lo, hi)}")
        if self.n_events < 0:
            raise ValueError("n_events must be non-negative")
        if self.cdm_rate <= 0:
            raise ValueError("cdm_rate must be positive")
        if self.jitter_std < 0 or not 0 <= self.jump_prob <= 1:
            raise ValueError("jitter_std must be >= 0 and jump_prob in [0, 1]")


def uncertainty_curve(tau, sigma7: float, sigma0: float):
    """Noise-free uncertainty, geometric between sigma0 at TCA and sigma7 seven days out."""
    return sigma0 * (sigma7 / sigma0) ** (np.asarray(tau) / HORIZON_DAYS)


def _log_uniform(rng: np.random.Generator, lo: float, hi: float) -> float:
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi)))) if hi > lo else lo


def _draw_event(cfg: SyntheticConfig, rng: np.random.Generator):
    sigma7 = _log_uniform(rng, *cfg.sigma7_range)
    sigma0 = _log_uniform(rng, *cfg.sigma0_range)
    n = rng.poisson(cfg.cdm_rate * HORIZON_DAYS)
    tau = np.sort(rng.uniform(0.0, HORIZON_DAYS, size=n))[::-1]
    sigma = uncertainty_curve(tau, sigma7, sigma0) * np.exp(cfg.jitter_std * rng.standard_normal(n))
    if rng.uniform() < cfg.jump_prob:
        t_jump = rng.uniform(0.0, HORIZON_DAYS)
        factor = _log_uniform(rng, *cfg.jump_factor_range)
        sigma = np.where(tau < t_jump, sigma * factor, sigma)
    return tau, sigma


def generate_event(cfg: SyntheticConfig, index: int) -> ConjunctionEvent:
    rng = np.random.default_rng([cfg.seed, index])
    for _ in range(cfg.max_redraws):
        tau, sigma = _draw_event(cfg, rng)
        if len(tau) >= 3 and np.count_nonzero(tau >= 2.0) >= 2 and np.all(np.diff(tau) < 0):
            return ConjunctionEvent(f"evt{index:05d}", tuple(zip(tau.tolist(), sigma.tolist())))
    raise RuntimeError(f"event {index}: no valid draw after {cfg.max_redraws} attempts; check SyntheticConfig")


def generate_synthetic_events(cfg: SyntheticConfig) -> list[ConjunctionEvent]:
    return [generate_event(cfg, i) for i in range(cfg.n_events)]


# ---------------------------------------------------------------------------
# splitting


def split_dataset(events, fractions=(0.8, 0.1, 0.1), seed: int = 0, warn=None):
    """Shuffle events and cut into train/validation/test.

    Partition sizes are ``floor(f * n)`` for validation and test; the remainder
    goes to train.
    """
    events = list(events)
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
    n = len(events)
    order = np.random.default_rng(seed).permutation(n)
    n_val = int(math.floor(fractions[1] * n + 1e-9))
    n_test = int(math.floor(fractions[2] * n + 1e-9))
    n_train = n - n_val - n_test
    parts = (
        [events[i] for i in order[:n_train]],
        [events[i] for i in order[n_train : n_train + n_val]],
        [events[i] for i in order[n_train + n_val :]],
    )
    if warn is not None:
        for name, part in zip(("train", "validation", "test"), parts):
            if not part:
                warn(f"partition {name!r} is empty")
    return parts


# ---------------------------------------------------------------------------
# files


def format_events(events) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EVENT_HEADER)
    for e in events:
        for tau, sigma in e.observations:
            w.writerow((e.event_id, repr(tau), repr(sigma)))
    return buf.getvalue()


def write_events(path, events) -> None:
    Path(path).write_text(format_events(events), encoding="utf-8", newline="\n")


def read_events(path) -> list[ConjunctionEvent]:
    text = Path(path).read_text(encoding="utf-8")
    rows = csv.reader(io.StringIO(text))
    header = next(rows, None)
    if header is None:
        return []
    if tuple(h.strip() for h in header) != EVENT_HEADER:
        raise DataError(f"{path}:1: expected header {','.join(EVENT_HEADER)}")
    grouped: dict[str, list[tuple[float, float]]] = {}
    first_line: dict[str, int] = {}
    last_id = None
    for lineno, row in enumerate(rows, start=2):
        if not row:
            continue
        if len(row) != 3:
            raise DataError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
        eid = row[0]
        try:
            tau, sigma = float(row[1]), float(row[2])
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric tau or sigma") from None
        if not sigma > 0:
            raise DataError(f"{path}:{lineno}: sigma_t_m must be positive, got {row[2]}")
        if eid != last_id and eid in grouped:
            raise DataError(f"{path}:{lineno}: rows of event {eid} are not contiguous")
        obs = grouped.setdefault(eid, [])
        first_line.setdefault(eid, lineno)
        if obs and tau >= obs[-1][0]:
            raise DataError(f"{path}:{lineno}: tau_days not strictly decreasing within event {eid}")
        obs.append((tau, sigma))
        last_id = eid
    events = []
    for eid, obs in grouped.items():
        try:
            events.append(ConjunctionEvent(eid, tuple(obs)))
        except DataError as exc:
            raise DataError(f"{path}:{first_line[eid]}: {exc}") from None
    return events


@dataclass
class Manifest:
    """Dataset index: partition file names plus the fitted normalizer."""

    partitions: dict[str, str]
    normalizer: Normalizer
    counts: dict[str, int] = field(default_factory=dict)
    synthetic: dict | None = None

    def to_json(self) -> str:
        doc = {
            "partitions": self.partitions,
            "counts": self.counts,
            "normalizer": self.normalizer.to_dict(),
        }
        if self.synthetic is not None:
            doc["synthetic"] = self.synthetic
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def load(cls, path) -> Manifest:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            partitions=doc["partitions"],
            normalizer=Normalizer(**doc["normalizer"]),
            counts=doc.get("counts", {}),
            synthetic=doc.get("synthetic"),
        )


class Dataset:
    """A directory holding ``manifest.json`` and its partition files."""

    MANIFEST = "manifest.json"

    def __init__(self, root):
        self.root = Path(root)
        path = self.root / self.MANIFEST
        if not path.exists():
            raise DataError(f"no dataset manifest at {path}")
        self.manifest = Manifest.load(path)

    @property
    def normalizer(self) -> Normalizer:
        return self.manifest.normalizer

    def partition(self, name: str) -> list[ConjunctionEvent]:
        if name not in self.manifest.partitions:
            raise DataError(f"dataset has no partition {name!r}")
        return read_events(self.root / self.manifest.partitions[name])

    def find(self, event_id: str) -> ConjunctionEvent:
        for name in self.manifest.partitions:
            for e in self.partition(name):
                if e.event_id == event_id:
                    return e
        raise DataError(f"unknown event id {event_id!r}")


def write_dataset(root, train, validation, test, normalizer: Normalizer, synthetic: dict | None = None) -> Manifest:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    parts = {"train": train, "validation": validation, "test": test}
    files = {}
    for name, events in parts.items():
        files[name] = f"{name}.csv"
        write_events(root / files[name], events)
    manifest = Manifest(files, normalizer, {k: len(v) for k, v in parts.items()}, synthetic)
    (root / Dataset.MANIFEST).write_text(manifest.to_json(), encoding="utf-8", newline="\n")
    return manifest
