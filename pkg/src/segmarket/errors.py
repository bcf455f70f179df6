"""Exception hierarchy shared by the clearing engine, learners and the CLI."""
from __future__ import annotations


class SegmarketError(Exception):
    """Base class for all package errors."""


class EmptyStackError(SegmarketError, ValueError):
    pass


class InfeasibleDemandError(SegmarketError):
    """Offered capacity cannot cover the rigid demand."""

    def __init__(self, demand: float, capacity: float, context: str = ""):
        self.demand = demand
        self.capacity = capacity
        self.shortfall = demand - capacity
        msg = (
            f"demand {demand:.6g} MWh exceeds offered capacity {capacity:.6g} MWh "
            f"(shortfall {self.shortfall:.6g} MWh)"
        )
        if context:
            msg = f"{context}: {msg}"
        super().__init__(msg)


class DataIntegrityError(SegmarketError, ValueError):
    """Input data is malformed, incomplete or inconsistent."""


class FeatureError(DataIntegrityError):
    pass


class TrainingAbortError(SegmarketError):
    pass


class TrainingError(SegmarketError):
    """One or more demand states failed during training."""

    def __init__(self, failures: dict[int, BaseException]):
        self.failures = dict(sorted(failures.items()))
        detail = "; ".join(f"state {i}: {exc}" for i, exc in self.failures.items())
        super().__init__(f"{len(self.failures)} state(s) failed: {detail}")


class InvalidEconomicsError(SegmarketError, ValueError):
    pass


class ConfigError(SegmarketError, ValueError):
    """Configuration problem; ``field`` is the dotted path of the offending entry."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")
