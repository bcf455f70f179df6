"""Clearing engine for a single-zone market with rigid demand.

Three price-formation rules share one merit-order dispatch:

* Pay-as-Bid (PaB): each accepted unit is paid its own offer price.
* Pay-as-Clear (PaC): every accepted unit is paid the price of the marginal offer.
* Segmented Pay-as-Clear (SPaC): offers are split into a low-cost segment (NMCS)
  and a conventional segment (NNMCS); the demand is divided between the two so
  that total expenditure is minimal, and each segment clears uniformly.

The SPaC split is found exactly by enumerating candidate NMCS quantities. On
every interval between two consecutive cumulative-capacity breakpoints (of either
segment) both segment prices are constant, so the expenditure is linear in the
NMCS quantity and its minimum sits on a breakpoint or on a bound of the feasible
interval. :func:`clear_spac_oracle` re-derives the optimum by grid search with an
independent vectorised price evaluation.

All functions are pure; they can be called from any number of workers.
"""
from __future__ import annotations

import csv
import json
import math
from bisect import bisect_left
from dataclasses import dataclass, field
from enum import Enum
from itertools import accumulate
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataIntegrityError, EmptyStackError, InfeasibleDemandError

ENERGY_TOL = 1e-6
# Remaining demand below this is treated as served; keeps float drift from
# promoting a zero-quantity offer to marginal.
_DISPATCH_EPS = 1e-9
_COST_TIE_TOL = 1e-7

OFFER_CSV_COLUMNS = ("unit_id", "operator_id", "technology", "segment", "price_eur_mwh", "quantity_mw")


class Segment(str, Enum):
    NMCS = "NMCS"
    NNMCS = "NNMCS"


class Mechanism(str, Enum):
    PAB = "PaB"
    PAC = "PaC"
    SPAC = "SPaC"

    @classmethod
    def parse(cls, value: "str | Mechanism") -> "Mechanism":
        if isinstance(value, Mechanism):
            return value
        key = str(value).strip().lower()
        for m in cls:
            if m.value.lower() == key:
                return m
        raise ValueError(f"unknown mechanism {value!r}; expected one of pab, pac, spac")


@dataclass(frozen=True, slots=True)
class SupplyOffer:
    """One price/quantity offer from a production unit."""

    unit_id: str
    operator_id: str
    price: float
    quantity: float
    segment: Segment = Segment.NNMCS
    technology: str = ""

    def __post_init__(self):
        if not self.quantity > 0:
            raise DataIntegrityError(f"offer {self.unit_id}: quantity must be > 0, got {self.quantity}")
        if not self.price >= 0:
            raise DataIntegrityError(f"offer {self.unit_id}: price must be >= 0, got {self.price}")


@dataclass(slots=True)
class ClearingOutcome:
    mechanism: Mechanism
    demand: float
    accepted: dict[str, float]
    unit_payment_price: dict[str, float]
    pun: float
    total_cost: float
    operator_profit: dict[str, float]
    unit_operator: dict[str, str] = field(default_factory=dict)
    nmcs_price: float | None = None
    nnmcs_price: float | None = None
    d_r: float | None = None
    d_g: float | None = None
    flags: dict[str, bool] = field(default_factory=dict)

    @property
    def total_profit(self) -> float:
        return sum(self.operator_profit.values())

    def to_dict(self) -> dict:
        return {
            "mechanism": self.mechanism.value,
            "demand_mwh": self.demand,
            "accepted_mwh": dict(self.accepted),
            "unit_payment_price_eur_mwh": dict(self.unit_payment_price),
            "pun_eur_mwh": self.pun,
            "total_cost_eur": self.total_cost,
            "nmcs_price_eur_mwh": self.nmcs_price,
            "nnmcs_price_eur_mwh": self.nnmcs_price,
            "d_r_mwh": self.d_r,
            "d_g_mwh": self.d_g,
            "operator_profit_eur": dict(self.operator_profit),
            "unit_operator": dict(self.unit_operator),
            "flags": dict(self.flags),
        }

    def to_json(self, **kwargs) -> str:
        kwargs.setdefault("indent", 2)
        return json.dumps(self.to_dict(), **kwargs)


def sort_merit(offers: Iterable[SupplyOffer]) -> list[SupplyOffer]:
    """Ascending price; equal prices ordered by ``unit_id``."""
    stack = sorted(offers, key=lambda o: (o.price, o.unit_id))
    if not stack:
        raise EmptyStackError("offer stack is empty")
    return stack


def _check_stack(offers: Sequence[SupplyOffer], demand: float) -> list[SupplyOffer]:
    if not demand >= 0 or math.isinf(demand):
        raise DataIntegrityError(f"demand must be finite and >= 0, got {demand}")
    stack = sort_merit(offers)
    seen = set()
    for o in stack:
        if o.unit_id in seen:
            raise DataIntegrityError(f"duplicate unit_id {o.unit_id!r} in offer stack")
        seen.add(o.unit_id)
    capacity = math.fsum(o.quantity for o in stack)
    if demand > capacity + ENERGY_TOL:
        raise InfeasibleDemandError(demand, capacity)
    return stack


def _dispatch(stack: Sequence[SupplyOffer], demand: float) -> tuple[list[float], int]:
    """Merit-order acceptance. Returns accepted quantities and the marginal index (-1 if none)."""
    accepted = [0.0] * len(stack)
    remaining = demand
    marginal = -1
    for i, o in enumerate(stack):
        if remaining <= _DISPATCH_EPS:
            break
        take = o.quantity if o.quantity < remaining else remaining
        accepted[i] = take
        remaining -= take
        marginal = i
    return accepted, marginal


def compute_profits(outcome: ClearingOutcome, costs: Mapping[str, float]) -> dict[str, float]:
    """Profit per operator: sum over its units of (paid price - marginal cost) * accepted."""
    profits = {op: 0.0 for op in outcome.unit_operator.values()}
    for uid, q in outcome.accepted.items():
        try:
            c = costs[uid]
        except KeyError:
            raise DataIntegrityError(f"no marginal cost for unit {uid!r}") from None
        profits[outcome.unit_operator[uid]] += (outcome.unit_payment_price[uid] - c) * q
    return profits


def _finish(mechanism: Mechanism, stack: Sequence[SupplyOffer], demand: float,
            accepted: Sequence[float], paid: Sequence[float], costs: Mapping[str, float],
            **extra) -> ClearingOutcome:
    acc = {}
    pay = {}
    owner = {}
    profit: dict[str, float] = {}
    total = 0.0
    for o, q, p in zip(stack, accepted, paid):
        uid = o.unit_id
        acc[uid] = q
        pay[uid] = p
        owner[uid] = o.operator_id
        try:
            c = costs[uid]
        except KeyError:
            raise DataIntegrityError(f"no marginal cost for unit {uid!r}") from None
        profit[o.operator_id] = profit.get(o.operator_id, 0.0) + (p - c) * q
        total += p * q
    pun = total / demand if demand > 0 else 0.0
    return ClearingOutcome(mechanism, demand, acc, pay, pun, total, profit, owner, **extra)


def clear_pab(offers: Sequence[SupplyOffer], demand: float, costs: Mapping[str, float]) -> ClearingOutcome:
    stack = _check_stack(offers, demand)
    accepted, _ = _dispatch(stack, demand)
    paid = [o.price for o in stack]
    return _finish(Mechanism.PAB, stack, demand, accepted, paid, costs)


def clear_pac(offers: Sequence[SupplyOffer], demand: float, costs: Mapping[str, float]) -> ClearingOutcome:
    stack = _check_stack(offers, demand)
    accepted, marginal = _dispatch(stack, demand)
    price = stack[marginal].price if marginal >= 0 else None
    paid = [price if price is not None else 0.0] * len(stack)
    return _finish(Mechanism.PAC, stack, demand, accepted, paid, costs, nnmcs_price=price)


def _segment_price(prices: Sequence[float], cum: Sequence[float], x: float) -> float | None:
    """Uniform price of a segment serving ``x``: the offer supplying the last increment."""
    if x <= _DISPATCH_EPS:
        return None
    i = bisect_left(cum, x - _DISPATCH_EPS)
    return prices[min(i, len(prices) - 1)]


def _split(stack: Sequence[SupplyOffer]):
    nmcs = [o for o in stack if o.segment is Segment.NMCS]
    nnmcs = [o for o in stack if o.segment is not Segment.NMCS]
    return nmcs, nnmcs


def _feasible_interval(demand: float, cap_r: float, cap_g: float) -> tuple[float, float]:
    lo = max(0.0, demand - cap_g)
    hi = min(demand, cap_r)
    if lo > hi:
        # only reachable through the ENERGY_TOL slack in the capacity check
        lo = hi
    return lo, hi


def _spac_curves(stack: Sequence[SupplyOffer]):
    nmcs, nnmcs = _split(stack)
    cum_r = list(accumulate(o.quantity for o in nmcs))
    cum_g = list(accumulate(o.quantity for o in nnmcs))
    return nmcs, nnmcs, cum_r, cum_g


def _candidates(demand: float, cum_r: Sequence[float], cum_g: Sequence[float]) -> list[float]:
    cap_r = cum_r[-1] if cum_r else 0.0
    cap_g = cum_g[-1] if cum_g else 0.0
    lo, hi = _feasible_interval(demand, cap_r, cap_g)
    points = {lo, hi}
    points.update(c for c in cum_r if lo <= c <= hi)
    points.update(demand - c for c in cum_g if lo <= demand - c <= hi)
    return sorted(points, reverse=True)


def spac_candidates(offers: Sequence[SupplyOffer], demand: float) -> list[float]:
    """Candidate NMCS quantities, descending, restricted to the feasible interval."""
    _, _, cum_r, cum_g = _spac_curves(sort_merit(offers))
    return _candidates(demand, cum_r, cum_g)


def clear_spac(offers: Sequence[SupplyOffer], demand: float, costs: Mapping[str, float]) -> ClearingOutcome:
    """Segmented clearing with the cost-minimising NMCS/NNMCS demand split.

    Among splits of equal cost (within 1e-7 EUR) the one with the largest NMCS
    quantity wins; ``flags['tie']`` records that a tie occurred. When the NMCS
    price ends up above the NNMCS price ``flags['nmcs_above_nnmcs']`` is set and
    the outcome is reported as found, not re-priced.
    """
    stack = _check_stack(offers, demand)
    nmcs, nnmcs, cum_r, cum_g = _spac_curves(stack)
    pr = [o.price for o in nmcs]
    pg = [o.price for o in nnmcs]

    best_x = None
    best_cost = math.inf
    tie = False
    for x in _candidates(demand, cum_r, cum_g):
        y = demand - x
        p_r = _segment_price(pr, cum_r, x)
        p_g = _segment_price(pg, cum_g, y)
        cost = (p_r * x if p_r is not None else 0.0) + (p_g * y if p_g is not None else 0.0)
        if cost < best_cost - _COST_TIE_TOL:
            best_x, best_cost, tie = x, cost, False
        elif abs(cost - best_cost) <= _COST_TIE_TOL:
            tie = True

    x = best_x
    y = demand - x
    p_r = _segment_price(pr, cum_r, x)
    p_g = _segment_price(pg, cum_g, y)
    acc_r, _ = _dispatch(nmcs, x)
    acc_g, _ = _dispatch(nnmcs, y)
    ordered = nmcs + nnmcs
    accepted = acc_r + acc_g
    paid = [p_r or 0.0] * len(nmcs) + [p_g or 0.0] * len(nnmcs)
    flags = {
        "tie": tie,
        "nmcs_above_nnmcs": p_r is not None and p_g is not None and p_r > p_g,
    }
    return _finish(Mechanism.SPAC, ordered, demand, accepted, paid, costs,
                   nmcs_price=p_r, nnmcs_price=p_g, d_r=x, d_g=y, flags=flags)


def clear_spac_oracle(offers: Sequence[SupplyOffer], demand: float, costs: Mapping[str, float],
                      step: float = 0.01) -> ClearingOutcome:
    """Brute-force SPaC: evaluate the split cost on a grid plus all breakpoints.

    Segment prices are evaluated with a vectorised step-function lookup that
    does not share code with :func:`clear_spac`.
    """
    if not step > 0:
        raise ValueError("step must be > 0")
    stack = _check_stack(offers, demand)
    seg = np.array([o.segment is Segment.NMCS for o in stack])
    price = np.array([o.price for o in stack])
    qty = np.array([o.quantity for o in stack])

    def price_curve(mask):
        p = price[mask]
        q = qty[mask]
        order = np.lexsort((np.arange(p.size), p))
        return p[order], np.cumsum(q[order])

    p_r, c_r = price_curve(seg)
    p_g, c_g = price_curve(~seg)
    cap_r = c_r[-1] if c_r.size else 0.0
    cap_g = c_g[-1] if c_g.size else 0.0
    lo = max(0.0, demand - cap_g)
    hi = max(lo, min(demand, cap_r))

    grid = np.arange(lo, hi, step)
    xs = np.concatenate([grid, [lo, hi], c_r, demand - c_g])
    xs = np.unique(xs[(xs >= lo) & (xs <= hi)])

    def seg_cost(p, c, amount):
        if p.size == 0:
            return np.zeros_like(amount)
        idx = np.searchsorted(c, amount - _DISPATCH_EPS, side="left")
        unit_price = p[np.minimum(idx, p.size - 1)]
        return np.where(amount > _DISPATCH_EPS, unit_price * amount, 0.0)

    total = seg_cost(p_r, c_r, xs) + seg_cost(p_g, c_g, demand - xs)
    best = total.min()
    # largest split among minimisers, same tie rule as the exact solver
    x = xs[np.flatnonzero(total <= best + _COST_TIE_TOL)[-1]]

    nmcs = [o for o, s in zip(stack, seg) if s]
    nnmcs = [o for o, s in zip(stack, seg) if not s]
    y = demand - x
    acc_r, m_r = _dispatch(nmcs, x)
    acc_g, m_g = _dispatch(nnmcs, y)
    pr_ = nmcs[m_r].price if m_r >= 0 else None
    pg_ = nnmcs[m_g].price if m_g >= 0 else None
    paid = [pr_ or 0.0] * len(nmcs) + [pg_ or 0.0] * len(nnmcs)
    return _finish(Mechanism.SPAC, nmcs + nnmcs, demand, acc_r + acc_g, paid, costs,
                   nmcs_price=pr_, nnmcs_price=pg_, d_r=float(x), d_g=float(y))


_CLEARERS = {
    Mechanism.PAB: clear_pab,
    Mechanism.PAC: clear_pac,
    Mechanism.SPAC: clear_spac,
}


def clear(mechanism: Mechanism | str, offers: Sequence[SupplyOffer], demand: float,
          costs: Mapping[str, float]) -> ClearingOutcome:
    return _CLEARERS[Mechanism.parse(mechanism)](offers, demand, costs)


def read_offer_stack_csv(path: str | Path) -> list[SupplyOffer]:
    """Read an offer stack (``unit_id,operator_id,technology,segment,price_eur_mwh,quantity_mw``)."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataIntegrityError(f"{path}: empty file")
        missing = [c for c in OFFER_CSV_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise DataIntegrityError(f"{path}: missing columns {missing}")
        offers = []
        for lineno, row in enumerate(reader, start=2):
            try:
                offers.append(SupplyOffer(
                    unit_id=row["unit_id"],
                    operator_id=row["operator_id"],
                    technology=row["technology"],
                    segment=Segment(row["segment"].strip().upper()),
                    price=float(row["price_eur_mwh"]),
                    quantity=float(row["quantity_mw"]),
                ))
            except (ValueError, DataIntegrityError) as exc:
                raise DataIntegrityError(f"{path}:{lineno}: {exc}") from None
    if not offers:
        raise DataIntegrityError(f"{path}: no offers")
    return offers


def write_offer_stack_csv(offers: Iterable[SupplyOffer], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(OFFER_CSV_COLUMNS)
        for o in offers:
            w.writerow([o.unit_id, o.operator_id, o.technology, o.segment.value, repr(o.price), repr(o.quantity)])
