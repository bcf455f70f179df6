"""Interval-by-interval market simulation and the comparison metrics between mechanisms."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

import numpy as np
import pandas as pd

from .agents import Policy, nearest_state
from .errors import DataIntegrityError, InfeasibleDemandError, InvalidEconomicsError
from .loadcurve import LoadCurve
from .market import ClearingOutcome, Mechanism, clear
from .scenarios import Scenario

log = logging.getLogger(__name__)


class Strategy(str, Enum):
    MARGINAL = "marginal"
    POLICY = "policy"


@dataclass
class MarketSeries:
    """One mechanism under one bidding strategy over every interval of a run."""

    mechanism: Mechanism
    strategy: Strategy
    pun: np.ndarray
    cost: np.ndarray
    profit: dict[str, np.ndarray]
    outcomes: list[ClearingOutcome] | None = None

    @property
    def profit_total(self) -> np.ndarray:
        return np.sum(list(self.profit.values()), axis=0) if self.profit else np.zeros_like(self.cost)

    @property
    def total_cost(self) -> float:
        return math.fsum(self.cost)

    @property
    def total_profit(self) -> float:
        return math.fsum(math.fsum(v) for v in self.profit.values())

    def operator_totals(self) -> dict[str, float]:
        return {op: math.fsum(v) for op, v in self.profit.items()}


@dataclass
class RunResult:
    timestamps: np.ndarray
    demand: np.ndarray
    series: dict[tuple[Mechanism, Strategy], MarketSeries] = field(default_factory=dict)

    def __len__(self) -> int:
        return self.demand.size

    def get(self, mechanism: Mechanism | str, strategy: Strategy | str = Strategy.MARGINAL) -> MarketSeries:
        return self.series[(Mechanism.parse(mechanism), Strategy(strategy))]

    def interval_frame(self) -> pd.DataFrame:
        """Long format: ``t, mechanism, strategy, demand_mw, pun, cost, profit_total``."""
        frames = []
        for (mech, strat), s in self.series.items():
            frames.append(pd.DataFrame({
                "t": self.timestamps.astype(str),
                "mechanism": mech.value,
                "strategy": strat.value,
                "demand_mw": self.demand,
                "pun": s.pun,
                "cost": s.cost,
                "profit_total": s.profit_total,
            }))
        cols = ["t", "mechanism", "strategy", "demand_mw", "pun", "cost", "profit_total"]
        return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=cols)

    def monthly_pun(self) -> pd.DataFrame:
        """Average PUN per calendar month, one column per (mechanism, strategy)."""
        idx = pd.DatetimeIndex(self.timestamps.astype("datetime64[ns]"))
        data = {f"{m.value}_{s.value}": ser.pun for (m, s), ser in self.series.items()}
        frame = pd.DataFrame(data, index=idx)
        out = frame.groupby(frame.index.to_period("M")).mean()
        out.index = out.index.astype(str)
        out.index.name = "month"
        return out

    def summary(self) -> dict:
        rows = {}
        for (mech, strat), s in self.series.items():
            cost = s.total_cost
            profit = s.total_profit
            rows.setdefault(strat.value, {})[mech.value] = {
                "market_cost_eur": cost,
                "operator_profit_eur": profit,
                "profit_cost_pct": profit_cost_ratio(s) if cost > 0 else None,
                "operator_profit_breakdown_eur": s.operator_totals(),
                "mean_pun_eur_mwh": float(np.mean(s.pun)) if s.pun.size else None,
            }
        return {"intervals": len(self), "strategies": rows}


def _check_policies(scenario: Scenario, policies: Mapping[str, Policy], mechanism: Mechanism) -> None:
    ops = set(scenario.operators)
    if set(policies) != ops:
        raise DataIntegrityError(
            f"{mechanism.value} policies cover operators {sorted(policies)}, scenario has {sorted(ops)}")
    for op, p in policies.items():
        if tuple(p.technologies) != scenario.technologies_of(op):
            raise DataIntegrityError(f"{mechanism.value} policy of {op} has technologies {p.technologies}, "
                                     f"scenario has {scenario.technologies_of(op)}")


def _simulate(scenario: Scenario, curve: LoadCurve, policies: Mapping | None,
              mechanisms: Iterable[Mechanism | str], keep_outcomes: bool) -> RunResult:
    mechanisms = [Mechanism.parse(m) for m in mechanisms]
    policies = {Mechanism.parse(k): v for k, v in (policies or {}).items()}
    result = RunResult(curve.timestamps, curve.demand)
    costs = scenario.costs
    operators = scenario.operators
    n = len(curve)
    marginal_offers = scenario.build_offers()

    for mech in mechanisms:
        runs: list[tuple[Strategy, Mapping[str, Policy] | None]] = [(Strategy.MARGINAL, None)]
        if mech in policies:
            _check_policies(scenario, policies[mech], mech)
            runs.append((Strategy.POLICY, policies[mech]))
        for strategy, pol in runs:
            pun = np.zeros(n)
            cost = np.zeros(n)
            profit = {op: np.zeros(n) for op in operators}
            outcomes = [] if keep_outcomes else None
            grids = {op: p.states for op, p in pol.items()} if pol else {}
            for i, d in enumerate(curve.demand):
                if pol is None:
                    offers = marginal_offers
                else:
                    markups = {}
                    for op, p in pol.items():
                        k = nearest_state(grids[op], d)
                        for tech, m in zip(p.technologies, p.markups[k]):
                            markups[(op, tech)] = float(m)
                    offers = scenario.build_offers(markups)
                try:
                    out = clear(mech, offers, float(d), costs)
                except InfeasibleDemandError as exc:
                    raise InfeasibleDemandError(exc.demand, exc.capacity,
                                                context=f"interval {curve.timestamps[i]}") from None
                pun[i] = out.pun
                cost[i] = out.total_cost
                for op, v in out.operator_profit.items():
                    profit[op][i] = v
                if outcomes is not None:
                    outcomes.append(out)
            result.series[(mech, strategy)] = MarketSeries(mech, strategy, pun, cost, profit, outcomes)
    return result


def simulate_day(scenario: Scenario, curve: LoadCurve, policies: Mapping | None = None,
                 mechanisms: Iterable[Mechanism | str] = tuple(Mechanism), keep_outcomes: bool = True) -> RunResult:
    """Clear every interval under marginal-cost offers and, where a policy set is
    given for the mechanism, under policy offers looked up at the nearest demand state.

    ``policies`` maps mechanism -> operator -> :class:`Policy`.
    """
    return _simulate(scenario, curve, policies, mechanisms, keep_outcomes)


def simulate_year(scenario: Scenario, curve: LoadCurve, policies: Mapping | None = None,
                  mechanisms: Iterable[Mechanism | str] = tuple(Mechanism), keep_outcomes: bool = False) -> RunResult:
    """Same loop as :func:`simulate_day` over a full year; capacities and costs stay fixed.

    Full outcomes are dropped by default to bound memory; monthly PUN averages
    come from :meth:`RunResult.monthly_pun`.
    """
    return _simulate(scenario, curve, policies, mechanisms, keep_outcomes)


@dataclass
class ComparisonMetrics:
    delta_pun: np.ndarray  # % per interval, NaN where the base PUN is zero
    delta_pun_mean: float
    delta_pun_min: float
    delta_pun_max: float
    delta_cost: float
    delta_profit: float
    markup: float
    markup_base: float
    excluded_intervals: int

    def to_dict(self) -> dict:
        return {
            "delta_pun_mean_pct": self.delta_pun_mean,
            "delta_pun_min_pct": self.delta_pun_min,
            "delta_pun_max_pct": self.delta_pun_max,
            "delta_cost_pct": self.delta_cost,
            "delta_profit_pct": self.delta_profit,
            "markup_pct": self.markup,
            "markup_base_pct": self.markup_base,
            "excluded_intervals": self.excluded_intervals,
        }


def _pct_change(new: float, base: float) -> float:
    if base == 0:
        return 0.0 if new == 0 else math.nan
    return (new - base) / base * 100.0


def _safe_markup(series: MarketSeries) -> float:
    try:
        return average_markup(series)
    except InvalidEconomicsError:
        return math.nan


def compare_runs(spac: MarketSeries, base: MarketSeries) -> ComparisonMetrics:
    """Percentage variations of ``spac`` relative to ``base`` on the same interval grid."""
    if spac.pun.shape != base.pun.shape:
        raise DataIntegrityError("runs have different interval grids")
    zero = base.pun == 0
    if zero.any():
        log.warning("%d interval(s) with zero base PUN excluded from PUN variation", int(zero.sum()))
    with np.errstate(divide="ignore", invalid="ignore"):
        delta = np.where(zero, np.nan, (spac.pun - base.pun) / np.where(zero, 1.0, base.pun) * 100.0)
    valid = delta[~zero]
    stats = (float(valid.mean()), float(valid.min()), float(valid.max())) if valid.size else (math.nan,) * 3
    return ComparisonMetrics(
        delta_pun=delta,
        delta_pun_mean=stats[0],
        delta_pun_min=stats[1],
        delta_pun_max=stats[2],
        delta_cost=_pct_change(spac.total_cost, base.total_cost),
        delta_profit=_pct_change(spac.total_profit, base.total_profit),
        markup=_safe_markup(spac),
        markup_base=_safe_markup(base),
        excluded_intervals=int(zero.sum()),
    )


def average_markup(series: MarketSeries) -> float:
    """Profits over production cost (cost net of profits), in percent."""
    return markup_pct(series.total_profit, series.total_cost)


def markup_pct(profit: float, cost: float) -> float:
    if not profit < cost:
        raise InvalidEconomicsError(f"profits {profit} not below market cost {cost}")
    return profit / (cost - profit) * 100.0


def profit_cost_ratio(series: MarketSeries) -> float:
    """Share of market cost that ends up as operator profit, in percent."""
    return profit_cost_pct(series.total_profit, series.total_cost)


def profit_cost_pct(profit: float, cost: float) -> float:
    if cost == 0:
        raise InvalidEconomicsError("market cost is zero")
    return profit / cost * 100.0
