"""Segmented electricity market clearing with learning generators."""

__version__ = "0.1.0"

from .market import (  # noqa: E402
    ClearingOutcome,
    Mechanism,
    Segment,
    SupplyOffer,
    clear,
    clear_pab,
    clear_pac,
    clear_spac,
    compute_profits,
)
from .scenarios import ProductionUnit, Scenario, build_pniec_scenario  # noqa: E402

__all__ = [
    "ClearingOutcome", "Mechanism", "Segment", "SupplyOffer", "clear", "clear_pab", "clear_pac",
    "clear_spac", "compute_profits", "ProductionUnit", "Scenario", "build_pniec_scenario", "__version__",
]
