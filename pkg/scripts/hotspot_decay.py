#!/usr/bin/env python3
"""Reproduce the per-source bandwidth series at a saturated hotspot.

Runs the k-node line with every source firing at the far-end sink, once with
plain round-robin port arbitration and once with contention-weighted
probabilistic arbitration, and prints the accepted share per source.  Under
round robin each merge point halves the upstream stream, so shares decay
geometrically with distance; the weighted arbiter flattens them.
"""

import argparse

from fairmesh import presets
from fairmesh.meshsim import run_mesh


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--k", type=int, default=8, help="routers in the line")
    ap.add_argument("--horizon", type=int, default=50_000)
    ap.add_argument("--warmup", type=int, default=5_000)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    reports = {}
    for arbiter in ("round_robin", "probabilistic"):
        cfg = presets.hotspot_config(
            args.seed, arbiter=arbiter, k=args.k,
            horizon=args.horizon, warmup=args.warmup,
        )
        reports[arbiter] = run_mesh(cfg)

    print(f"hotspot at node {args.k - 1}, {args.horizon} cycles "
          f"({args.warmup} warmup), seed {args.seed}\n")
    print(f"{'source':>6} {'rr share':>10} {'weighted':>10} {'ideal':>8}")
    for src in range(args.k - 1):
        # the first merge splits two injectors evenly, so the two farthest
        # sources share one value; every later merge halves the upstream
        ideal = 0.5 ** (args.k - 1 - max(src, 1))
        print(f"{src:>6} {reports['round_robin'].shares.get(src, 0.0):>10.4f} "
              f"{reports['probabilistic'].shares.get(src, 0.0):>10.4f} "
              f"{ideal:>8.4f}")
    for name, rep in reports.items():
        ratio = max(rep.shares.values()) / min(rep.shares.values())
        print(f"\n{name}: max/min share ratio {ratio:.2f}")


if __name__ == "__main__":
    main()
