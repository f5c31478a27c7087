"""Static SVG figures: forecast panels and unconditional samples."""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .data import GRID_TAU  # noqa: E402

_RC = {"svg.hashsalt": "ndif", "svg.fonttype": "path", "font.size": 9}


def _to_svg(fig) -> str:
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None, "Type": None, "Format": None})
    plt.close(fig)
    return buf.getvalue()


def forecast_svg(event, result, cutoff_days: float, baseline=None) -> str:
    """Observations, cutoff, baseline, diffusion median and the quantile band."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(7.0, 3.6))
        unknown = ~result.mask.known
        tau_u = GRID_TAU[unknown]
        ax.fill_between(tau_u, result.band_low[unknown], result.band_high[unknown], color="#b39ddb", alpha=0.45, lw=0, label="5-95% band")
        ax.plot(tau_u, result.point_estimate[unknown], "*", color="#6a1b9a", ms=4, label="diffusion median")
        if baseline is not None:
            ax.plot(tau_u, np.asarray(baseline)[unknown], "+", color="#2e7d32", ms=4, label="baseline")
        ax.plot(event.tau, event.sigma, "x", color="#0d47a1", ms=5, label="observed")
        ax.axvline(cutoff_days, color="0.3", ls="--", lw=1, label="cutoff")
        ax.set_xlim(7.0, 0.0)
        ax.set_xlabel("days to TCA")
        ax.set_ylabel("along-track sigma [m]")
        ax.set_title(f"event {event.event_id}")
        ax.legend(loc="best", fontsize=7)
        fig.tight_layout()
        return _to_svg(fig)


def samples_svg(samples_m) -> str:
    samples_m = np.atleast_2d(np.asarray(samples_m))
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(7.0, 3.6))
        for k, row in enumerate(samples_m):
            ax.plot(GRID_TAU, row, lw=1, label=f"sample {k}")
        ax.set_xlim(7.0, 0.0)
        ax.set_xlabel("days to TCA")
        ax.set_ylabel("along-track sigma [m]")
        if len(samples_m) <= 8:
            ax.legend(loc="best", fontsize=7)
        fig.tight_layout()
        return _to_svg(fig)
