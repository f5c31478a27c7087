"""Run configuration: defaults, then a JSON config file, then command-line flags."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .data import SyntheticConfig
from .inpaint import ForecastConfig
from .training import TrainConfig
from .unet import UNetConfig

DEFAULT_SEED = 7
SEED_ENV = "NDIF_SEED"


@dataclass(frozen=True)
class ScheduleConfig:
    T: int = 50
    beta_start: float = 1e-4
    beta_end: float = 0.25


@dataclass(frozen=True)
class RunConfig:
    seed: int = DEFAULT_SEED
    split_fractions: tuple[float, float, float] = (0.8, 0.04, 0.16)
    cutoff_days: float = 2.0
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    unet: UNetConfig = field(default_factory=UNetConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    forecast: ForecastConfig = field(default_factory=ForecastConfig)
    training: TrainConfig = field(default_factory=TrainConfig)

    def seeded(self) -> RunConfig:
        """Propagate the run seed into every section that draws random numbers."""
        return replace(
            self,
            synthetic=replace(self.synthetic, seed=self.seed),
            forecast=replace(self.forecast, seed=self.seed),
            training=replace(self.training, seed=self.seed),
        )

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


_SECTIONS = {
    "synthetic": SyntheticConfig,
    "unet": UNetConfig,
    "schedule": ScheduleConfig,
    "forecast": ForecastConfig,
    "training": TrainConfig,
}


def _coerce(cls, values: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown keys in config section {where!r}: {sorted(unknown)}")
    out = {}
    for k, v in values.items():
        out[k] = tuple(v) if isinstance(v, list) else v
    return out


def merge(base: RunConfig, overrides: dict) -> RunConfig:
    """Apply a nested dict of overrides; ``None`` values are ignored."""
    top = {}
    for key, value in overrides.items():
        if value is None:
            continue
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ValueError(f"config section {key!r} must be an object")
            section = {k: v for k, v in value.items() if v is not None}
            if section:
                top[key] = replace(getattr(base, key), **_coerce(_SECTIONS[key], section, key))
        elif key in {f.name for f in fields(RunConfig)}:
            top[key] = tuple(value) if isinstance(value, list) else value
        else:
            raise ValueError(f"unknown config key {key!r}")
    return replace(base, **top)


def build(config_file=None, flags: dict | None = None, seed_flag: int | None = None) -> RunConfig:
    """Defaults < config file < flags. The seed falls back to ``NDIF_SEED`` when
    neither the file nor a flag sets it."""
    cfg = RunConfig()
    file_doc = {}
    if config_file is not None:
        file_doc = json.loads(Path(config_file).read_text(encoding="utf-8"))
        if not isinstance(file_doc, dict):
            raise ValueError("config file must hold a JSON object")
    if "seed" not in file_doc and os.environ.get(SEED_ENV):
        try:
            cfg = replace(cfg, seed=int(os.environ[SEED_ENV]))
        except ValueError:
            raise ValueError(f"{SEED_ENV} must be an integer") from None
    cfg = merge(cfg, file_doc)
    cfg = merge(cfg, flags or {})
    if seed_flag is not None:
        cfg = replace(cfg, seed=seed_flag)
    return cfg.seeded()


def write(path, cfg: RunConfig) -> None:
    Path(path).write_text(cfg.to_json(), encoding="utf-8", newline="\n")
