#!/usr/bin/env python3
"""Year-long quarter-hourly run with policies saved by ``segmarket train``.

Writes monthly average PUN per market and strategy to ``--out``.
"""
import argparse
import json

from segmarket.agents import load_policies
from segmarket.loadcurve import read_load_curve_csv, scale_load_curve, synthetic_year_curve
from segmarket.market import Mechanism
from segmarket.scenarios import build_pniec_scenario
from segmarket.sim import compare_runs, simulate_year


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("policy_dir")
    ap.add_argument("--curve", help="timestamp_iso8601,demand_mw CSV; default is a synthetic year")
    ap.add_argument("--year", type=int, default=2024)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--out", default="monthly_pun.csv")
    args = ap.parse_args()

    sc = build_pniec_scenario()
    raw = read_load_curve_csv(args.curve) if args.curve else synthetic_year_curve(args.year, seed=args.seed)
    c = sc.total_capacity
    curve = scale_load_curve(raw, 0.25 * c, 0.80 * c)
    policies = {m: load_policies(args.policy_dir, m) for m in Mechanism}
    run = simulate_year(sc, curve, policies)
    run.monthly_pun().to_csv(args.out)
    print(f"{len(run)} intervals; monthly PUN written to {args.out}")
    for base in (Mechanism.PAB, Mechanism.PAC):
        m = compare_runs(run.get(Mechanism.SPAC, "policy"), run.get(base, "policy"))
        print(f"SPaC vs {base.value}:", json.dumps({k: round(v, 2) for k, v in m.to_dict().items()}))


if __name__ == "__main__":
    main()
