"""Market scenarios: the built-in two-operator 2030 fixture and JSON round-tripping.

The offer-data pipeline that derives multi-operator portfolios from historical
offers lives in :mod:`segmarket.portfolio`.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping

from .errors import DataIntegrityError
from .market import Segment, SupplyOffer

SEGMENT_THRESHOLD = 110.0


@dataclass(frozen=True)
class ProductionUnit:
    unit_id: str
    operator_id: str
    technology: str
    capacity: float  # MW
    marginal_cost: float  # EUR/MWh
    segment: Segment = Segment.NNMCS

    def __post_init__(self):
        if not self.capacity > 0:
            raise DataIntegrityError(f"unit {self.unit_id}: capacity must be > 0")
        if not (self.marginal_cost >= 0 and math.isfinite(self.marginal_cost)):
            raise DataIntegrityError(f"unit {self.unit_id}: marginal cost must be finite and >= 0")


@dataclass(frozen=True)
class Scenario:
    name: str
    units: tuple[ProductionUnit, ...]
    _tech_cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(self.units))
        if not self.units:
            raise DataIntegrityError(f"scenario {self.name!r} has no units")
        ids = [u.unit_id for u in self.units]
        if len(set(ids)) != len(ids):
            raise DataIntegrityError(f"scenario {self.name!r} has duplicate unit ids")

    @property
    def total_capacity(self) -> float:
        return math.fsum(u.capacity for u in self.units)

    @property
    def operators(self) -> list[str]:
        """Operator ids in order of first appearance."""
        return list(dict.fromkeys(u.operator_id for u in self.units))

    @property
    def costs(self) -> dict[str, float]:
        return {u.unit_id: u.marginal_cost for u in self.units}

    def units_of(self, operator_id: str) -> list[ProductionUnit]:
        return [u for u in self.units if u.operator_id == operator_id]

    def technologies_of(self, operator_id: str) -> tuple[str, ...]:
        """Technologies owned by an operator, in order of first appearance."""
        if operator_id not in self._tech_cache:
            techs = tuple(dict.fromkeys(u.technology for u in self.units_of(operator_id)))
            if not techs:
                raise DataIntegrityError(f"operator {operator_id!r} not in scenario {self.name!r}")
            self._tech_cache[operator_id] = techs
        return self._tech_cache[operator_id]

    def segment_capacity(self, segment: Segment) -> float:
        return math.fsum(u.capacity for u in self.units if u.segment is segment)

    def build_offers(self, markups: Mapping[tuple[str, str], float] | None = None) -> list[SupplyOffer]:
        """Offers priced at ``cost * (1 + markup)``; markups keyed by (operator_id, technology)."""
        markups = markups or {}
        return [
            SupplyOffer(
                unit_id=u.unit_id,
                operator_id=u.operator_id,
                price=u.marginal_cost * (1.0 + markups.get((u.operator_id, u.technology), 0.0)),
                quantity=u.capacity,
                segment=u.segment,
                technology=u.technology,
            )
            for u in self.units
        ]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "units": [
                {
                    "unit_id": u.unit_id,
                    "operator_id": u.operator_id,
                    "technology": u.technology,
                    "segment": u.segment.value,
                    "capacity_mw": u.capacity,
                    "marginal_cost_eur_mwh": u.marginal_cost,
                }
                for u in self.units
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        try:
            units = [
                ProductionUnit(
                    unit_id=str(u["unit_id"]),
                    operator_id=str(u["operator_id"]),
                    technology=str(u["technology"]),
                    segment=Segment(u["segment"]),
                    capacity=float(u["capacity_mw"]),
                    marginal_cost=float(u["marginal_cost_eur_mwh"]),
                )
                for u in data["units"]
            ]
            return cls(name=str(data.get("name", "scenario")), units=tuple(units))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, DataIntegrityError):
                raise
            raise DataIntegrityError(f"invalid scenario JSON: {exc!r}") from None


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario.to_dict(), indent=2), encoding="utf-8")


def load_scenario(path: str | Path) -> Scenario:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataIntegrityError(f"{path}: {exc}") from None
    return Scenario.from_dict(data)


# (technology, OpA cost, OpB cost, capacity per operator)
_PNIEC_TABLE = (
    ("PV", 4.2, 2.7, 120.0),
    ("WIND", 5.0, 2.0, 120.0),
    ("HYDRO", 12.0, 20.0, 160.0),
    ("GAS", 94.0, 69.0, 420.0),
    ("COAL", 149.0, 139.0, 180.0),
)
_PNIEC_NMCS = {"PV", "WIND", "HYDRO"}

# Fixed markups of the random-markup experiment, per (operator, technology).
PNIEC_RANDOM_MARKUPS = {
    ("OpA", "COAL"): 0.00, ("OpA", "GAS"): 0.12, ("OpA", "HYDRO"): 0.16, ("OpA", "PV"): 0.15, ("OpA", "WIND"): 0.10,
    ("OpB", "COAL"): 0.00, ("OpB", "GAS"): 0.07, ("OpB", "HYDRO"): 0.11, ("OpB", "PV"): 0.18, ("OpB", "WIND"): 0.04,
}


def build_pniec_scenario() -> Scenario:
    """Two symmetric operators, 1 GW each, five technologies (2030 national plan mix)."""
    units = []
    for op, col in (("OpA", 1), ("OpB", 2)):
        for row in _PNIEC_TABLE:
            tech, cost, cap = row[0], row[col], row[3]
            units.append(ProductionUnit(
                unit_id=f"{op}-{tech}",
                operator_id=op,
                technology=tech,
                capacity=cap,
                marginal_cost=cost,
                segment=Segment.NMCS if tech in _PNIEC_NMCS else Segment.NNMCS,
            ))
    return Scenario(name="pniec2030", units=tuple(units))


BUILTIN_SCENARIOS = {"pniec2030": build_pniec_scenario}


def classify_segments(units: Iterable[ProductionUnit], threshold: float = SEGMENT_THRESHOLD) -> list[ProductionUnit]:
    """Cost strictly below ``threshold`` is NMCS; at or above it is NNMCS."""
    return [
        replace(u, segment=Segment.NMCS if u.marginal_cost < threshold else Segment.NNMCS)
        for u in units
    ]
