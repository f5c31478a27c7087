"""Last-value baseline, MAE/RMSE and the paired comparison protocol."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .data import GRID_LENGTH, GRID_TAU, STEPS_PER_DAY, ConjunctionEvent, DataError
from .inpaint import cutoff_index_for


class MetricError(ValueError):
    pass


def mae(y, yhat) -> float:
    y, yhat = np.asarray(y, dtype=np.float64), np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape or y.size == 0:
        raise MetricError(f"MAE undefined for shapes {y.shape} and {yhat.shape}")
    return float(np.mean(np.abs(y - yhat)))


def rmse(y, yhat) -> float:
    y, yhat = np.asarray(y, dtype=np.float64), np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape or y.size == 0:
        raise MetricError(f"RMSE undefined for shapes {y.shape} and {yhat.shape}")
    return float(np.sqrt(np.mean((y - yhat) ** 2)))


def baseline_forecast(event: ConjunctionEvent, cutoff_days: float) -> np.ndarray:
    """Hold the last pre-cutoff observation over every unknown step; known steps are NaN."""
    tau, sigma = event.tau, event.sigma
    before = np.flatnonzero(tau >= cutoff_days)
    if before.size == 0:
        raise DataError(f"event {event.event_id}: no observation at or before cutoff {cutoff_days} days")
    out = np.full(GRID_LENGTH, np.nan)
    out[cutoff_index_for(cutoff_days) :] = sigma[before[-1]]
    return out


def match_true_samples(event: ConjunctionEvent, cutoff_days: float, tolerance_hours: float = 0.5):
    """Pair post-cutoff observations with forecast grid steps within the tolerance.

    Each observation is a candidate only for its nearest grid step, and only if
    that step lies in the forecast region. Candidates are accepted closest
    first (ties to the smaller index); a step takes at most one observation.
    Returns a list of ``(grid_index, sigma_t)`` sorted by grid index.
    """
    first_unknown = cutoff_index_for(cutoff_days)
    candidates = []
    for tau, sigma in event.observations:
        if tau >= cutoff_days:
            continue
        pos = (GRID_TAU[0] - tau) * STEPS_PER_DAY
        i = int(np.ceil(pos - 0.5))
        if not first_unknown <= i < GRID_LENGTH:
            continue
        dist = abs(tau - GRID_TAU[i]) * 24.0
        if dist <= tolerance_hours + 1e-9:
            candidates.append((dist, i, sigma))
    taken: dict[int, float] = {}
    for dist, i, sigma in sorted(candidates, key=lambda c: (c[0], c[1])):
        if i not in taken:
            taken[i] = sigma
    return sorted(taken.items())


@dataclass
class EventMetrics:
    event_id: str
    mae: float
    rmse: float
    n: int


@dataclass
class MetricsReport:
    model: str
    cutoff_days: float
    mae: float
    rmse: float
    n: int
    n_events: int
    per_event: list[EventMetrics] = field(default_factory=list)
    coverage: float | None = None
    excluded_events: int = 0


def _point(pred):
    return np.asarray(getattr(pred, "point_estimate", pred), dtype=np.float64)


def evaluate(models: dict, events, cutoff_days: float, tolerance_hours: float = 0.5, progress=None) -> list[MetricsReport]:
    """Score every model on the same pool of matched true samples.

    ``models`` maps a name to ``forecaster(event, cutoff_days)`` returning a
    length-L metres vector (or an object with ``point_estimate`` and optionally
    ``band_low``/``band_high``). An event any forecaster rejects with
    :class:`DataError` is dropped for all models.
    """
    names = list(models)
    pooled = {n: ([], []) for n in names}
    per_event = {n: [] for n in names}
    covered = {n: [0, 0] for n in names}
    excluded = 0
    used = 0
    for k, event in enumerate(events):
        matches = match_true_samples(event, cutoff_days, tolerance_hours)
        if not matches:
            continue
        try:
            preds = {n: models[n](event, cutoff_days) for n in names}
        except DataError:
            excluded += 1
            continue
        used += 1
        idx = np.array([m[0] for m in matches])
        y = np.array([m[1] for m in matches])
        for n in names:
            yhat = _point(preds[n])[idx]
            if not np.all(np.isfinite(yhat)):
                raise MetricError(f"model {n} returned non-finite predictions for event {event.event_id}")
            pooled[n][0].append(y)
            pooled[n][1].append(yhat)
            per_event[n].append(EventMetrics(event.event_id, mae(y, yhat), rmse(y, yhat), len(y)))
            lo, hi = getattr(preds[n], "band_low", None), getattr(preds[n], "band_high", None)
            if lo is not None and hi is not None:
                covered[n][0] += int(np.count_nonzero((y >= lo[idx]) & (y <= hi[idx])))
                covered[n][1] += len(y)
        if progress is not None:
            progress(k, event)
    reports = []
    for n in names:
        if not pooled[n][0]:
            raise MetricError("no matched true samples in the evaluation pool")
        y = np.concatenate(pooled[n][0])
        yhat = np.concatenate(pooled[n][1])
        cov = covered[n][0] / covered[n][1] if covered[n][1] else None
        reports.append(
            MetricsReport(n, float(cutoff_days), mae(y, yhat), rmse(y, yhat), len(y), used, per_event[n], cov, excluded)
        )
    return reports


def reports_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("model", "cutoff_days", "n", "mae_m", "rmse_m"))
    for r in reports:
        w.writerow((r.model, repr(r.cutoff_days), r.n, repr(r.mae), repr(r.rmse)))
    return buf.getvalue()


def per_event_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("model", "event_id", "n", "mae_m", "rmse_m"))
    for r in reports:
        for e in r.per_event:
            w.writerow((r.model, e.event_id, e.n, repr(e.mae), repr(e.rmse)))
    return buf.getvalue()


def reports_table(reports) -> str:
    lines = [f"{'model':<12}{'cutoff':>8}{'events':>8}{'n':>8}{'MAE [m]':>12}{'RMSE [m]':>12}{'coverage':>10}"]
    for r in reports:
        cov = f"{r.coverage:.3f}" if r.coverage is not None else "-"
        lines.append(f"{r.model:<12}{r.cutoff_days:>8.2f}{r.n_events:>8d}{r.n:>8d}{r.mae:>12,.1f}{r.rmse:>12,.1f}{cov:>10}")
    if reports and reports[0].excluded_events:
        lines.append(f"excluded events (rejected by a forecaster): {reports[0].excluded_events}")
    return "\n".join(lines)
