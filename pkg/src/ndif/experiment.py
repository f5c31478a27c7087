"""Desk-scale end-to-end experiment: generate, train, evaluate via the CLI.

Every stage goes through :func:`ndif.cli.main` with default settings, so the
numbers reported here are what an operator gets from the shipped commands.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path

from .cli import main


@dataclass
class DeskResult:
    seed: int
    train_seconds: float
    eval_seconds: float
    metrics: dict  # model -> {"mae_m", "rmse_m", "n"}
    diagnostics: dict  # model -> {"n_events", "excluded_events", "band_coverage"}
    loss_log: list  # per-epoch mean loss

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def load(cls, path) -> DeskResult:
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


def _run(argv) -> None:
    code = main([str(a) for a in argv])
    if code != 0:
        raise RuntimeError(f"`ndif {' '.join(map(str, argv))}` exited with status {code}")


def run_desk_experiment(root, seed: int = 7, cutoff_days: float = 2.0, train_args=(), eval_args=()) -> DeskResult:
    """Run gen-data, train and eval under ``root``; extra flags pass through."""
    root = Path(root)
    data, run, ev = root / "data", root / "run", root / "eval"
    _run(["gen-data", "--out", data, "--seed", seed, "--force"])

    t0 = time.perf_counter()
    _run(["train", "--data", data, "--out", run, "--seed", seed, "--force", *train_args])
    train_seconds = time.perf_counter() - t0

    t0 = time.perf_counter()
    _run(["eval", "--checkpoint", run / "model.ndif", "--data", data, "--cutoff-days", cutoff_days,
          "--seed", seed, "--out", ev, "--force", "--verbose", *eval_args])
    eval_seconds = time.perf_counter() - t0

    with open(ev / "metrics.csv", encoding="utf-8") as fh:
        metrics = {r["model"]: {"mae_m": float(r["mae_m"]), "rmse_m": float(r["rmse_m"]), "n": int(r["n"])}
                   for r in csv.DictReader(fh)}
    with open(ev / "diagnostics.csv", encoding="utf-8") as fh:
        diagnostics = {
            r["model"]: {
                "n_events": int(r["n_events"]),
                "excluded_events": int(r["excluded_events"]),
                "band_coverage": float(r["band_coverage"]) if r["band_coverage"] else None,
            }
            for r in csv.DictReader(fh)
        }
    with open(run / "loss_log.csv", encoding="utf-8") as fh:
        loss_log = [float(r["mean_loss"]) for r in csv.DictReader(fh)]
    result = DeskResult(seed, train_seconds, eval_seconds, metrics, diagnostics, loss_log)
    (root / "summary.json").write_text(result.to_json(), encoding="utf-8")
    return result
