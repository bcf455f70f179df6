#!/usr/bin/env python3
"""Clear the two-operator 2030 fixture at marginal cost and with fixed markups,
then sweep demand levels; prints cost, PUN and profit tables."""
import argparse

from segmarket.market import Mechanism, clear
from segmarket.scenarios import PNIEC_RANDOM_MARKUPS, build_pniec_scenario

SWEEP = (581, 660, 838, 918, 1095, 1239, 1392, 1499, 1532, 1564, 1573, 1600)


def table(scenario, offers, demand):
    print(f"{'market':<6} {'cost EUR':>12} {'PUN':>8} {'profit EUR':>12}")
    for m in Mechanism:
        out = clear(m, offers, demand, scenario.costs)
        print(f"{m.value:<6} {out.total_cost:>12,.2f} {out.pun:>8.2f} {out.total_profit:>12,.2f}")
        if m is Mechanism.SPAC:
            print(f"       NMCS {out.d_r:.1f} MWh @ {out.nmcs_price or 0:.2f}, NNMCS {out.d_g:.1f} MWh @ {out.nnmcs_price or 0:.2f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--demand", type=float, default=1000.0)
    args = ap.parse_args()
    sc = build_pniec_scenario()
    print(f"== marginal-cost offers, D = {args.demand:g} MW")
    table(sc, sc.build_offers(), args.demand)
    print(f"\n== fixed markups, D = {args.demand:g} MW")
    table(sc, sc.build_offers(PNIEC_RANDOM_MARKUPS), args.demand)

    print("\n== demand sweep, marginal-cost offers (cost EUR)")
    print(f"{'D':>6} " + " ".join(f"{m.value:>12}" for m in Mechanism))
    offers = sc.build_offers()
    for d in SWEEP:
        costs = [clear(m, offers, d, sc.costs).total_cost for m in Mechanism]
        print(f"{d:>6} " + " ".join(f"{c:>12,.2f}" for c in costs))


if __name__ == "__main__":
    main()
