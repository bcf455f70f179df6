#!/usr/bin/env python3
"""Cluster a synthetic offer corpus and compare the clusters with the generating archetypes."""
import argparse

import pandas as pd

from segmarket.portfolio import operator_statistics, run_pipeline, synthetic_offer_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--operators", type=int, default=10)
    args = ap.parse_args()

    corpus = synthetic_offer_corpus(n_operators=args.operators, seed=args.seed)
    res = run_pipeline(corpus.drop(columns="archetype"), range(2, 9), seed=args.seed)
    print(f"removed {len(res.removed_units)} low-activity units; chosen k = {res.report.chosen_k}")
    for k in res.report.k_values:
        print(f"  k={k}: {res.report.mean_scores[k]:.3f}")
    truth = corpus.groupby("unit_id")["archetype"].first().loc[res.clusters.index]
    print("\ncluster x archetype:")
    print(pd.crosstab(res.clusters, truth))
    print("\nper-cluster means:")
    print(res.features.groupby(res.clusters)[["P_w", "Q_max", "h_night", "h_peak"]].mean().round(2))
    print("\noperators:")
    print(operator_statistics(res.scenario).round(1))


if __name__ == "__main__":
    main()
