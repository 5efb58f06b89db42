"""Median error of the proposed estimator under each threshold design.

Runs the stationary setting with zero, mean-tracking, independent-sample random
and full-covariance random thresholds, for a random and for a known-magnitude
target amplitude prior.
"""

import argparse

import numpy as np

from onebit_radar import harness

DESIGNS = [
    ("zero", dict(thresholdPolicy="zero")),
    ("mean", dict(thresholdPolicy="mean")),
    ("random/diagonal", dict(thresholdPolicy="random", thresholdCovariance="diagonal")),
    ("random/full", dict(thresholdPolicy="random", thresholdCovariance="full")),
]


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--N", type=int, nargs="+", default=[10, 25, 50, 100])
    args = p.parse_args()

    for truth in ("random", 1 + 0.5j):
        print(f"\nalphaTruth = {truth}")
        print(f"{'design':>16}" + "".join(f"{'N=' + str(n):>10}" for n in args.N))
        for name, kw in DESIGNS:
            cfg = harness.ExperimentConfig(Nlist=args.N, trials=args.trials, alphaTruth=truth,
                                           methods=["proposed"], **kw)
            res = harness.run_campaign(cfg, workers=1)
            meds = [res.cell(n, 0.1, "proposed").median for n in args.N]
            print(f"{name:>16}" + "".join(f"{m:10.4f}" for m in meds))
        cfg = harness.ExperimentConfig(Nlist=args.N, trials=args.trials, alphaTruth=truth, methods=["fullPrecision"])
        res = harness.run_campaign(cfg, workers=1)
        print(f"{'fullPrecision':>16}" + "".join(f"{res.cell(n, 0.1, 'fullPrecision').median:10.4f}" for n in args.N))


if __name__ == "__main__":
    main()
