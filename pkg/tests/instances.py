"""Random offer stacks shared by the property tests and the acceptance suite."""
from __future__ import annotations

import numpy as np

from segmarket.market import Segment, SupplyOffer


def random_instance(rng: np.random.Generator, max_offers: int = 50):
    """Mixed-segment stack with frequent price ties, a demand inside capacity and unit costs."""
    n = int(rng.integers(1, max_offers + 1))
    if rng.random() < 0.5:
        prices = rng.integers(0, 40, n).astype(float)  # many ties
    else:
        prices = np.round(rng.uniform(0, 200, n), 2)
    qty = np.round(rng.uniform(0.5, 50, n), 1)
    nmcs = rng.random(n) < rng.uniform(0.1, 0.9)
    offers = []
    costs = {}
    for i in range(n):
        uid = f"U{i:02d}"
        offers.append(SupplyOffer(uid, f"O{i % 4}", float(prices[i]), float(qty[i]),
                                  Segment.NMCS if nmcs[i] else Segment.NNMCS))
        costs[uid] = float(prices[i]) * float(rng.uniform(0.5, 1.0))
    cap = float(qty.sum())
    if rng.random() < 0.15:
        # land exactly on a cumulative breakpoint
        demand = float(np.cumsum(qty)[int(rng.integers(n))])
    else:
        demand = float(np.round(rng.uniform(0, cap), 2))
    return offers, min(demand, cap), costs


def instances(seed: int, count: int, max_offers: int = 50):
    rng = np.random.default_rng(seed)
    return [random_instance(rng, max_offers) for _ in range(count)]
