#!/usr/bin/env python3
"""Convergence of empirical grant frequencies to the weight proportions.

Draws an increasing number of probabilistic-arbiter grants for a fixed
weight vector and prints how far the measured per-request frequencies sit
from weight/sum(weights) at each sample size, per seed.
"""

import argparse

from fairmesh.arbitration import empirical_grant_frequencies


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--weights", nargs="+", type=float, default=[1.0, 1.0, 2.0])
    ap.add_argument("--seeds", nargs="+", type=int, default=[1, 2, 3])
    ap.add_argument("--max-exp", type=int, default=6,
                    help="largest sample size as a power of ten")
    args = ap.parse_args()

    total = sum(args.weights)
    expected = [w / total for w in args.weights]
    print("weights " + ":".join(f"{w:g}" for w in args.weights)
          + "  expected " + ", ".join(f"{e:.4f}" for e in expected) + "\n")
    print(f"{'trials':>9} " + " ".join(f"seed {s:>2} dev" for s in args.seeds))
    for exp in range(3, args.max_exp + 1):
        trials = 10 ** exp
        devs = []
        for seed in args.seeds:
            freqs = empirical_grant_frequencies(args.weights, trials, seed)
            devs.append(max(abs(f - e) for f, e in zip(freqs, expected)))
        print(f"{trials:>9} " + " ".join(f"{d:>11.5f}" for d in devs))


if __name__ == "__main__":
    main()
