#!/usr/bin/env python3
"""Calibration sweep behind the frozen training defaults.

Grids over initialization scale and score temperature, trains the toy task
for each cell over several seeds, and prints median eval T2A recall@1 plus
the final/initial loss ratio.  The shipped TrainConfig defaults
(init_scale=0.002, temperature=0.5) were picked from this sweep: small init
lets the learned directions dominate under the fixed AdamW movement budget
(lr * steps / 2 per coordinate), and cosine scoring makes the weight scale
itself irrelevant.
"""
import argparse
import sys
from dataclasses import replace
from pathlib import Path
from statistics import median

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from tempalign.synth import SynthConfig, synth_dataset
from tempalign.train import TrainConfig, train


def run_cell(init_scale: float, temperature: float, seeds: range, epochs: int) -> tuple[float, float]:
    recalls, ratios = [], []
    for seed in seeds:
        dataset = synth_dataset(SynthConfig(seed=seed).scaled(16))
        cfg = replace(
            TrainConfig(epochs=epochs, seed=seed),
            init_scale=init_scale,
            temperature=temperature,
        )
        result = train(cfg, dataset=dataset)
        recalls.append(result.epochs[-1]["recalls"]["t2a"]["recalls"]["1"])
        ratios.append(result.step_losses[-1] / result.step_losses[0])
    return median(recalls), median(ratios)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=3, help="seeds per cell")
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--init-scales", default="0.002,0.02,0.2")
    ap.add_argument("--temperatures", default="0.5,1.0")
    args = ap.parse_args()

    scales = [float(v) for v in args.init_scales.split(",")]
    temps = [float(v) for v in args.temperatures.split(",")]

    print(f"{'init_scale':>10} {'temperature':>11} {'med_R@1':>8} {'med_loss_ratio':>14}")
    for scale in scales:
        for temp in temps:
            r1, ratio = run_cell(scale, temp, range(args.seeds), args.epochs)
            print(f"{scale:>10g} {temp:>11g} {r1:>8.4f} {ratio:>14.4f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
