"""Shared-slot collision rate of accepted SGTS merges versus the merge threshold.

    python scripts/merge_soundness.py --thresholds 5 8 10 12 15
"""
import argparse

from sgtsmac.harness import run_merge_soundness


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--thresholds", type=float, nargs="+", default=[5.0, 8.0, 10.0, 12.0, 15.0])
    p.add_argument("--sigma", type=float, default=2.0)
    p.add_argument("--topologies", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    print("threshold_db,accepted,topologies,occurrences,failures,collision_rate,worst_pair_rate")
    for th in args.thresholds:
        r = run_merge_soundness(args.topologies, 10_000, th, args.sigma, seed=args.seed)
        print(f"{th},{r.accepted},{r.topologies},{r.occurrences},{r.failures},"
              f"{r.collision_rate:.4f},{r.worst_pair_rate:.4f}")


if __name__ == "__main__":
    main()
