"""GTS access latency and slot exclusivity over randomised scenarios.

    python scripts/latency_study.py --scenarios 100
"""
import argparse

from sgtsmac.harness import (
    beacon_overlaps,
    exclusivity_violations,
    latency_from_trace,
    random_scenario,
    run_scenario,
)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--scenarios", type=int, default=100)
    p.add_argument("--first-seed", type=int, default=0)
    args = p.parse_args()
    print("seed,n_max,bo,so,gts_frames,worst_ratio,latency_violations,overlaps,sgts_merges")
    for seed in range(args.first_seed, args.first_seed + args.scenarios):
        s = random_scenario(seed)
        world, trace, end = run_scenario(s)
        stats = latency_from_trace(world, trace, end)
        bounded = [n for n in stats.nodes.values() if n.bound_us]
        worst = max((n.max_us / n.bound_us for n in bounded), default=0.0)
        overlaps = len(exclusivity_violations(world, trace)) + len(beacon_overlaps(trace))
        merges = sum(1 for e in trace if e.category == "schedule-change" and e.get("change") == "sgts")
        cfg = s.superframe
        print(f"{seed},{cfg.n_max},{cfg.bo},{cfg.so},{sum(n.count for n in bounded)},{worst:.3f},"
              f"{len(stats.violations)},{overlaps},{merges}")


if __name__ == "__main__":
    main()
