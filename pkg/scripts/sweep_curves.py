"""Shared-slot success curves for the asymmetric (fig7) and symmetric (fig9)
topologies, plus the clock-advance comparison.

    python scripts/sweep_curves.py --out results/sweep
"""
import argparse
from dataclasses import replace
from pathlib import Path

from sgtsmac.harness import estimate_window, run_sgts_sweep, sweep_table
from sgtsmac.scenario import load_scenario


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", type=Path, default=Path("results/sweep"))
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    args = p.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    fig7 = load_scenario("fig7.scenario")
    cases = {
        "fig7_advance": fig7,
        "fig7_aligned": replace(fig7, nodes=tuple(replace(n, clock_offset_us=0) for n in fig7.nodes)),
        "fig9": load_scenario("fig9.scenario"),
    }
    fig9 = cases["fig9"]
    cases["fig9_sigma0"] = replace(fig9, radio=replace(fig9.radio, shadowing_sigma_db=0.0))
    for name, s in cases.items():
        r = run_sgts_sweep(s, seed=args.seed, trials=args.trials)
        (args.out / f"{name}.csv").write_text(sweep_table(r))
        w = estimate_window(r)
        print(f"{name:14s} window {w.width_db:6.2f} dB  crossover {w.crossover_db:+6.2f} dB")


if __name__ == "__main__":
    main()
