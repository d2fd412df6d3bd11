"""Multi-atlas consensus quality as a function of atlas count and deformation amplitude.

    python3 scripts/calibrate_mabs.py [--k 1,3,5] [--amplitudes 1,2,3] [--subjects 6]

Each subject is labelled from the first K of the others; the table lists
mean foreground Dice and mean per-ROI Dice. This is the run used to pick the
MABS acceptance threshold.
"""
import argparse

import numpy as np

from hydroseg.bench import DiceReport, PropagationCache, foreground_dice
from hydroseg.phantom import PhantomConfig, make_dataset
from hydroseg.register import RegConfig


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--k", default="1,3,5")
    p.add_argument("--amplitudes", default="1,2,3")
    p.add_argument("--subjects", type=int, default=6)
    p.add_argument("--seed", type=int, default=5)
    args = p.parse_args()
    ks = [int(v) for v in args.k.split(",")]
    if max(ks) >= args.subjects:
        p.error(f"--k values must be below --subjects ({args.subjects})")

    print(f"{'amplitude':>9} {'K':>3} {'fg Dice':>8} {'ROI Dice':>9}")
    for amp in (float(v) for v in args.amplitudes.split(",")):
        subjects = make_dataset(PhantomConfig(n_subjects=args.subjects, deform_amplitude=(amp, amp), seed=args.seed))
        cache = PropagationCache(subjects, RegConfig())
        for k in ks:
            report, fg = DiceReport("mabs_only"), []
            for q in range(len(subjects)):
                atlases = [a for a in range(len(subjects)) if a != q][:k]
                consensus, _ = cache.fuse(atlases, q)
                report.add(q, 0, consensus, subjects[q].labels)
                fg.append(foreground_dice(consensus, subjects[q].labels))
            print(f"{amp:9.1f} {k:3d} {np.mean(fg):8.4f} {report.overall()[0] / 100:9.4f}", flush=True)


if __name__ == "__main__":
    main()
