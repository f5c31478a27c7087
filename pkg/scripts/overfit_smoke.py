#!/usr/bin/env python3
"""Overfit the default network on one synthetic series; a quick sanity check of training."""

import argparse
import sys
import time

import numpy as np

from ndif.data import GRID_LENGTH, SyntheticConfig, fit_normalizer, generate_synthetic_events, grid_event
from ndif.diffusion import linear_beta_schedule
from ndif.training import evaluation_loss, overfit_series
from ndif.unet import UNet, UNetConfig


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--steps", type=int, default=2000, help="optimizer steps")
    p.add_argument("--batch-size", type=int, default=4, help="noise draws per step")
    p.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate")
    p.add_argument("--seed", type=int, default=10, help="seed for the series, weights and noise")
    args = p.parse_args(argv)

    ev = generate_synthetic_events(SyntheticConfig(n_events=1, seed=args.seed))[0]
    series = grid_event(ev, fit_normalizer([ev])).values
    schedule = linear_beta_schedule()
    net = UNet(UNetConfig(), seed=args.seed)
    start = time.perf_counter()

    def report(step, loss, losses):
        if (step + 1) % 200 == 0:
            print(f"step {step + 1:5d}  loss {np.mean(losses[-200:]):.4f}  {time.perf_counter() - start:6.1f}s")
        return False

    overfit_series(net, series, schedule, args.steps, args.batch_size, args.lr, args.seed, on_step=report)
    x0 = np.repeat(series.reshape(1, 1, GRID_LENGTH), 16, axis=0)
    print(f"loss on fresh noise draws: {evaluation_loss(net, x0, schedule, seed=args.seed, draws=4):.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
