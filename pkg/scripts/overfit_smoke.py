"""Overfit the two-stage segmenter on a single phantom subject.

    python3 scripts/overfit_smoke.py [--steps 600] [--lr0 0.05] [--no-attention]

Prints the loss every 50 steps, the relative loss drop and the foreground
and mean per-ROI Dice of inference on the training subject.
"""
import argparse
import time
from dataclasses import replace

import numpy as np

from hydroseg.bench import BenchConfig, foreground_dice, roi_dice
from hydroseg.phantom import PhantomConfig, make_dataset
from hydroseg.segnet import infer, train_two_stage
from hydroseg.volcore import normalize_max


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--steps", type=int, default=BenchConfig.steps)
    p.add_argument("--lr0", type=float, default=BenchConfig.lr0)
    p.add_argument("--base-channels", type=int, default=BenchConfig.base_channels)
    p.add_argument("--no-attention", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    cfg = BenchConfig(steps=args.steps, lr0=args.lr0, base_channels=args.base_channels)
    subject = make_dataset(PhantomConfig(n_subjects=1, deform_amplitude=(2.0, 2.0)))[0]
    mod = normalize_max(subject.image)
    net = replace(cfg.net("base"), use_attention=not args.no_attention)
    t0 = time.time()
    result = train_two_stage([(mod, subject.labels)], None, net, cfg.sgd(), seed=args.seed, steps=cfg.steps,
                             flip=False, log_every=50)
    loss = np.asarray(result.combined_loss)
    pred = infer(result.model, mod)
    scores, present = roi_dice(pred, subject.labels)
    print(f"{cfg.steps} steps in {time.time() - t0:.0f}s")
    print(f"loss {loss[0]:.4f} -> {loss[-5:].mean():.4f} (drop {100 * (1 - loss[-5:].mean() / loss[0]):.1f}%)")
    print(f"foreground Dice {foreground_dice(pred, subject.labels):.4f}, "
          f"mean ROI Dice {scores[present].mean():.4f}")


if __name__ == "__main__":
    main()
