"""Command-line entry point: ``ndif <command> [flags]``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import shutil
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from . import config as config_mod
from .data import GRID_TAU, DataError, Dataset, fit_normalizer, generate_synthetic_events, grid_event, split_dataset, stack_grids, write_dataset
from .diffusion import linear_beta_schedule, sample_unconditional
from .evaluation import baseline_forecast, evaluate, per_event_csv, reports_csv, reports_table
from .inpaint import NumericError, forecast
from .plotting import forecast_svg, samples_svg
from .training import make_optimizer, train
from .unet import UNet

log = logging.getLogger("ndif")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


class UsageError(Exception):
    pass


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _prepare_out(path: Path, force: bool, clear: bool = True) -> Path:
    occupied = path.is_file() or (path.is_dir() and any(path.iterdir()))
    if occupied and clear:
        if not force:
            raise UsageError(f"output {path} already exists; pass --force to overwrite")
        if path.is_dir():
            shutil.rmtree(path)
        else:
            path.unlink()
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8", newline="\n")


def _check_cutoff(cutoff: float) -> None:
    if not 1.0 / 24.0 < cutoff < 7.0:
        raise UsageError(f"--cutoff-days must lie in (1/24, 7), got {cutoff}")


def _run_config(args, flags: dict):
    try:
        return config_mod.build(args.config, flags, args.seed)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None


def _forecast_flags(args) -> dict:
    return {
        "num_samples": getattr(args, "num_samples", None),
        "resample_count": getattr(args, "resample_count", None),
        "jump_length": getattr(args, "jump_length", None),
        "point_estimate": getattr(args, "point_estimate", None),
        "workers": getattr(args, "workers", None),
        "chunk_size": getattr(args, "chunk_size", None),
    }


def _load_model(args):
    try:
        return ckpt_io.load(args.checkpoint)
    except FileNotFoundError as exc:
        raise DataError(str(exc)) from None


def _as_loaded(cfg, state):
    """Record the network and schedule that were actually used: the checkpoint's."""
    s = state.schedule
    return replace(cfg, unet=state.model.config, schedule=config_mod.ScheduleConfig(s.T, s.beta_start, s.beta_end))


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args) -> int:
    if args.n_events is not None and args.n_events < 1:
        raise UsageError("--n-events must be at least 1")
    cfg = _run_config(
        args,
        {
            "split_fractions": args.fractions,
            "synthetic": {
                "n_events": args.n_events,
                "cdm_rate": args.cdm_rate,
                "jitter_std": args.jitter_std,
                "jump_prob": args.jump_prob,
            },
        },
    )
    if cfg.synthetic.n_events < 1:
        raise UsageError("n_events must be at least 1")
    try:
        split_dataset([], cfg.split_fractions)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = _prepare_out(Path(args.out), args.force)
    events = generate_synthetic_events(cfg.synthetic)
    train_ev, val_ev, test_ev = split_dataset(events, cfg.split_fractions, cfg.seed, warn=log.warning)
    normalizer = fit_normalizer(train_ev)
    write_dataset(out, train_ev, val_ev, test_ev, normalizer, synthetic=cfg.to_dict()["synthetic"])
    config_mod.write(out / "run_config.json", cfg)
    log.info("wrote %d/%d/%d events to %s", len(train_ev), len(val_ev), len(test_ev), out)
    return 0


def cmd_train(args) -> int:
    flags = {
        "unet": {
            "base_channels": args.base_channels,
            "channel_mults": args.channel_mults,
            "res_blocks_per_level": args.res_blocks,
            "groups": args.groups,
            "time_embed_dim": args.time_embed_dim,
        },
        "schedule": {"T": args.diffusion_steps, "beta_start": args.beta_start, "beta_end": args.beta_end},
        "training": {"epochs": args.epochs, "batch_size": args.batch_size, "learning_rate": args.lr},
    }
    cfg = _run_config(args, flags)
    dataset = Dataset(args.data)
    normalizer = dataset.normalizer
    grids = [grid_event(e, normalizer) for e in dataset.partition("train")]
    if not grids:
        raise DataError("training partition is empty")
    x0 = stack_grids(grids)

    prior_log: list[list[str]] = []
    if args.resume:
        state = _load_model(argparse.Namespace(checkpoint=args.resume))
        model, schedule, start_epoch = state.model, state.schedule, state.epoch
        optimizer = make_optimizer(model, cfg.training, state.adam)
        resume_log = Path(args.resume).with_name("loss_log.csv")
        if resume_log.exists():
            rows = list(csv.reader(io.StringIO(resume_log.read_text(encoding="utf-8"))))[1:]
            prior_log = [r for r in rows if int(r[0]) < start_epoch]
        if model.config.grid_length != x0.shape[-1]:
            raise DataError("checkpoint grid length does not match the dataset")
    else:
        try:
            model = UNet(cfg.unet, seed=cfg.seed)
            schedule = linear_beta_schedule(cfg.schedule.T, cfg.schedule.beta_start, cfg.schedule.beta_end)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        optimizer = make_optimizer(model, cfg.training)
        start_epoch = 0

    out = _prepare_out(Path(args.out), args.force, clear=not args.resume)
    config_mod.write(out / "run_config.json", cfg)
    rows = list(prior_log)

    def on_epoch(epoch, loss, step):
        rows.append([str(epoch), str(step), repr(loss)])
        if epoch % 10 == 0 or epoch == start_epoch + cfg.training.epochs - 1:
            log.info("epoch %d step %d loss %.5f", epoch, step, loss)
        if args.checkpoint_every and (epoch + 1) % args.checkpoint_every == 0:
            _save(epoch + 1)

    def _save(epoch_done):
        ckpt_io.save(
            out / "model.ndif",
            ckpt_io.Checkpoint(model, schedule, normalizer, optimizer.state.step_count, epoch_done, optimizer.state),
        )
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("epoch", "step", "mean_loss"))
        w.writerows(rows)
        _write(out / "loss_log.csv", buf.getvalue())

    train(model, x0, schedule, cfg.training, optimizer, start_epoch, on_epoch)
    _save(start_epoch + cfg.training.epochs)
    return 0


def cmd_sample(args) -> int:
    cfg = _run_config(args, {})
    state = _load_model(args)
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    rng = np.random.default_rng([cfg.seed, 0x5A])
    L = state.model.config.grid_length
    x = sample_unconditional(state.model, state.schedule, L, args.n, rng, length_divisor=state.model.config.length_divisor)
    if not np.all(np.isfinite(x)):
        raise NumericError("unconditional sampling produced non-finite values")
    values = state.normalizer.denormalize(x[:, 0, :])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([repr(float(t)) for t in GRID_TAU[:L]])
    for row in values:
        w.writerow([repr(float(v)) for v in row])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write(out, buf.getvalue())
    if args.svg:
        _write(out.with_suffix(".svg"), samples_svg(values))
    return 0


def _forecast_one(args, cfg, state, dataset, event_id):
    try:
        event = dataset.find(event_id)
    except DataError:
        raise UsageError(f"unknown event id {event_id!r}") from None
    result = forecast(state.model, state.schedule, event, state.normalizer, args.cutoff_days, cfg.forecast)
    return event, result


def cmd_forecast(args) -> int:
    _check_cutoff(args.cutoff_days)
    cfg = _run_config(args, {"cutoff_days": args.cutoff_days, "forecast": _forecast_flags(args)})
    state = _load_model(args)
    dataset = Dataset(args.data)
    event, result = _forecast_one(args, cfg, state, dataset, args.event_id)
    out = _prepare_out(Path(args.out), args.force)
    _write(out / "forecast.csv", result.to_csv())
    if args.trajectories:
        _write(out / "trajectories.csv", result.trajectories_csv())
    config_mod.write(out / "run_config.json", _as_loaded(cfg, state))
    return 0


def cmd_eval(args) -> int:
    _check_cutoff(args.cutoff_days)
    cfg = _run_config(args, {"cutoff_days": args.cutoff_days, "forecast": _forecast_flags(args)})
    state = _load_model(args)
    dataset = Dataset(args.data)
    events = dataset.partition(args.partition)
    if args.max_events is not None:
        events = events[: args.max_events]

    def diffusion(event, cutoff):
        return forecast(state.model, state.schedule, event, state.normalizer, cutoff, cfg.forecast)

    reports = evaluate(
        {"baseline": baseline_forecast, "diffusion": diffusion},
        events,
        args.cutoff_days,
        progress=lambda k, e: log.debug("evaluated %s (%d/%d)", e.event_id, k + 1, len(events)),
    )
    out = _prepare_out(Path(args.out), args.force)
    _write(out / "metrics.csv", reports_csv(reports))
    diag = io.StringIO()
    w = csv.writer(diag, lineterminator="\n")
    w.writerow(("model", "n_events", "n_samples", "excluded_events", "band_coverage"))
    for r in reports:
        w.writerow((r.model, r.n_events, r.n, r.excluded_events, "" if r.coverage is None else repr(r.coverage)))
    _write(out / "diagnostics.csv", diag.getvalue())
    if args.verbose:
        _write(out / "per_event.csv", per_event_csv(reports))
    config_mod.write(out / "run_config.json", _as_loaded(cfg, state))
    print(reports_table(reports))
    return 0


def cmd_plot(args) -> int:
    _check_cutoff(args.cutoff_days)
    cfg = _run_config(args, {"cutoff_days": args.cutoff_days, "forecast": _forecast_flags(args)})
    state = _load_model(args)
    dataset = Dataset(args.data)
    event, result = _forecast_one(args, cfg, state, dataset, args.event_id)
    svg = forecast_svg(event, result, args.cutoff_days, baseline_forecast(event, args.cutoff_days))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write(out, svg)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ndif", description="Diffusion forecasting of conjunction position uncertainty.")
    p.add_argument("-v", "--verbose-log", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, help="JSON run configuration (overridden by flags)")
        sp.add_argument("--seed", type=int, help="run seed (falls back to $NDIF_SEED, then the config, then 7)")

    def forecast_opts(sp):
        sp.add_argument("--checkpoint", required=True, type=Path, help="model checkpoint (.ndif)")
        sp.add_argument("--data", required=True, type=Path, help="dataset directory with manifest.json")
        sp.add_argument("--cutoff-days", type=float, default=2.0, help="days-to-TCA boundary of the known prefix (default 2)")
        sp.add_argument("--num-samples", type=int, help="trajectories per event (default 32)")
        sp.add_argument("--resample-count", type=int, help="resampling repeats per segment (default 1 = off)")
        sp.add_argument("--jump-length", type=int, help="levels re-noised per resampling jump (default 1)")
        sp.add_argument("--point-estimate", choices=("median", "mean"), help="per-step point estimate (default median)")
        sp.add_argument("--workers", type=int, help="threads running trajectory chunks (default 1)")
        sp.add_argument("--chunk-size", type=int, help="trajectories batched per model call (default 32)")

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    common(g)
    g.add_argument("--out", required=True, type=Path, help="output directory")
    g.add_argument("--n-events", type=int, help="number of events (default 1250)")
    g.add_argument("--fractions", type=_floats, help="train,validation,test fractions (default 0.8,0.04,0.16)")
    g.add_argument("--cdm-rate", type=float, help="observations per day (default 3)")
    g.add_argument("--jitter-std", type=float, help="log-normal observation jitter (default 0.1)")
    g.add_argument("--jump-prob", type=float, help="probability of a multiplicative jump (default 0.3)")
    g.add_argument("--force", action="store_true", help="overwrite an existing output directory")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train the denoiser")
    common(t)
    t.add_argument("--data", required=True, type=Path, help="dataset directory")
    t.add_argument("--out", required=True, type=Path, help="run directory for checkpoint and loss log")
    t.add_argument("--epochs", type=int, help="epochs to train (default 200)")
    t.add_argument("--batch-size", type=int, help="minibatch size (default 16)")
    t.add_argument("--lr", type=float, help="Adam learning rate (default 2e-4)")
    t.add_argument("--base-channels", type=int, help="U-Net base width")
    t.add_argument("--channel-mults", type=_ints, help="per-level channel multipliers, e.g. 1,2,4")
    t.add_argument("--res-blocks", type=int, help="residual blocks per level")
    t.add_argument("--groups", type=int, help="group-norm groups")
    t.add_argument("--time-embed-dim", type=int, help="timestep embedding width")
    t.add_argument("--diffusion-steps", type=int, help="chain length T (default 50)")
    t.add_argument("--beta-start", type=float, help="first beta (default 1e-4)")
    t.add_argument("--beta-end", type=float, help="last beta (default 0.25)")
    t.add_argument("--resume", type=Path, help="continue from this checkpoint")
    t.add_argument("--checkpoint-every", type=int, help="also save every N epochs")
    t.add_argument("--force", action="store_true", help="overwrite an existing run directory")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="draw unconditional samples")
    common(s)
    s.add_argument("--checkpoint", required=True, type=Path, help="model checkpoint (.ndif)")
    s.add_argument("--out", required=True, type=Path, help="output CSV (one row per sample)")
    s.add_argument("--n", type=int, default=4, help="number of samples (default 4)")
    s.add_argument("--svg", action="store_true", help="also write an SVG plot next to the CSV")
    s.set_defaults(func=cmd_sample)

    f = sub.add_parser("forecast", help="forecast one event")
    common(f)
    forecast_opts(f)
    f.add_argument("--event-id", required=True, help="event to forecast")
    f.add_argument("--out", required=True, type=Path, help="output directory")
    f.add_argument("--trajectories", action="store_true", help="also write the raw trajectories")
    f.add_argument("--force", action="store_true", help="overwrite an existing output directory")
    f.set_defaults(func=cmd_forecast)

    e = sub.add_parser("eval", help="compare diffusion and baseline on a partition")
    common(e)
    forecast_opts(e)
    e.add_argument("--partition", default="test", help="dataset partition (default test)")
    e.add_argument("--max-events", type=int, help="evaluate only the first N events")
    e.add_argument("--out", required=True, type=Path, help="output directory")
    e.add_argument("--verbose", action="store_true", help="also write per-event metrics")
    e.add_argument("--force", action="store_true", help="overwrite an existing output directory")
    e.set_defaults(func=cmd_eval)

    pl = sub.add_parser("plot", help="render a forecast figure as SVG")
    common(pl)
    forecast_opts(pl)
    pl.add_argument("--event-id", required=True, help="event to plot")
    pl.add_argument("--out", required=True, type=Path, help="output .svg file")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose_log else logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"ndif {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ckpt_io.CheckpointError) as exc:
        print(f"ndif {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"ndif {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
