#!/usr/bin/env python3
"""Train markup policies on the fixture and replay a synthetic weekday.

Equivalent to ``segmarket simulate --strategy train --synthetic day``; kept as a
script to print the per-interval PaC/SPaC cost ratio and the profit shares.
"""
import argparse
import time

from segmarket.agents import TrainingConfig, train_all_states
from segmarket.loadcurve import scale_load_curve, synthetic_day_curve
from segmarket.market import Mechanism
from segmarket.scenarios import build_pniec_scenario
from segmarket.sim import Strategy, compare_runs, profit_cost_ratio, simulate_day


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--episodes", type=int, default=2000)
    ap.add_argument("--states", type=int, default=100)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    sc = build_pniec_scenario()
    cfg = TrainingConfig(episodes_per_state=args.episodes, seed=args.seed, n_states=args.states)
    policies = {}
    for m in Mechanism:
        t0 = time.perf_counter()
        policies[m] = train_all_states(sc, m, cfg, workers=args.workers).policies()
        print(f"trained {m.value} in {time.perf_counter() - t0:.1f} s")

    c = sc.total_capacity
    curve = scale_load_curve(synthetic_day_curve(seed=args.seed), 0.25 * c, 0.80 * c)
    run = simulate_day(sc, curve, policies)
    for strat in Strategy:
        print(f"\n{strat.value}:")
        for m in Mechanism:
            s = run.get(m, strat)
            print(f"  {m.value:<5} cost {s.total_cost:>14,.0f}  profit/cost {profit_cost_ratio(s):5.1f}%")
    ratio = run.get("pac", "policy").cost / run.get("spac", "policy").cost
    print(f"\nCost PaC/SPaC per interval (policy): {ratio.min():.2f} .. {ratio.max():.2f}")
    m = compare_runs(run.get("spac", "policy"), run.get("pac", "policy"))
    print(f"mean PUN change SPaC vs PaC: {m.delta_pun_mean:.1f}%")


if __name__ == "__main__":
    main()
