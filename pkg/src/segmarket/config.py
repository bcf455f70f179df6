"""Experiment configuration: one YAML/JSON file, overridable from the command line."""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError
from .market import Mechanism

OUTPUT_DIR_ENV = "SEGMARKET_OUTPUT_DIR"
STRATEGIES = ("marginal", "policy", "train")
SYNTHETIC_CURVES = ("day", "year")


def default_output_dir() -> str:
    return os.environ.get(OUTPUT_DIR_ENV, "segmarket-out")


@dataclass
class ExperimentConfig:
    # scenario source: builtin name / scenario JSON path, or an offers CSV to
    # cluster; with neither, the builtin pniec2030 fixture is used
    scenario: str | None = None
    offers_csv: str | None = None
    k_min: int = 2
    k_max: int = 8
    activity_percentile: float = 0.20
    segment_threshold: float = 110.0

    mechanisms: list[str] = field(default_factory=lambda: ["PaB", "PaC", "SPaC"])
    strategy: str = "marginal"
    policy_dir: str | None = None

    episodes: int = 2000
    n_states: int = 100
    eps_max: float = 1.0
    eps_min: float = 0.05
    markup_grid: list[float] = field(default_factory=lambda: [0.0, 0.05, 0.10, 0.20])
    markup_grid_pab: list[float] = field(default_factory=lambda: [0.0, 0.50, 1.00, 2.00])
    monitor_demand: float | None = None
    seed: int | None = None

    demand: float | None = None
    curve: str | None = None
    synthetic: str | None = None
    synthetic_date: str = "2025-09-12"
    synthetic_year: int = 2024
    demand_low: float = 0.25
    demand_high: float = 0.80

    output_dir: str = field(default_factory=default_output_dir)
    workers: int | None = None

    def validate(self, command: str | None = None) -> "ExperimentConfig":
        if self.scenario and self.offers_csv:
            raise ConfigError("scenario", "give either a scenario or an offers_csv, not both")
        try:
            self.mechanisms = [Mechanism.parse(m).value for m in self.mechanisms]
        except ValueError as exc:
            raise ConfigError("mechanisms", str(exc)) from None
        if not self.mechanisms:
            raise ConfigError("mechanisms", "empty")
        if self.strategy not in STRATEGIES:
            raise ConfigError("strategy", f"expected one of {STRATEGIES}, got {self.strategy!r}")
        if self.strategy == "policy" and not self.policy_dir:
            raise ConfigError("policy_dir", "required when strategy is 'policy'")
        if self.synthetic is not None and self.synthetic not in SYNTHETIC_CURVES:
            raise ConfigError("synthetic", f"expected one of {SYNTHETIC_CURVES}")
        if self.curve and self.synthetic:
            raise ConfigError("curve", "give either a curve path or synthetic curve parameters, not both")
        if self.episodes < 1:
            raise ConfigError("episodes", "must be >= 1")
        if self.n_states < 1:
            raise ConfigError("n_states", "must be >= 1")
        if not 0 < self.eps_min <= self.eps_max <= 1:
            raise ConfigError("eps_min", "need 0 < eps_min <= eps_max <= 1")
        for name in ("markup_grid", "markup_grid_pab"):
            grid = getattr(self, name)
            if not grid or any(m < 0 for m in grid):
                raise ConfigError(name, "must be a non-empty list of markups >= 0")
        if not 2 <= self.k_min <= self.k_max:
            raise ConfigError("k_min", "need 2 <= k_min <= k_max")
        if self.workers is not None and self.workers < 1:
            raise ConfigError("workers", "must be >= 1")
        needs_seed = (command == "train" or self.strategy == "train" or self.synthetic is not None
                      or (command == "cluster" and self.offers_csv is None))
        if needs_seed and self.seed is None:
            raise ConfigError("seed", "required for training and synthetic data generation")
        if command == "clear" and self.demand is None:
            raise ConfigError("demand", "required for 'clear'")
        if command == "simulate" and not (self.curve or self.synthetic):
            raise ConfigError("curve", "'simulate' needs a curve path or synthetic = day|year")
        return self

    @property
    def scenario_source(self) -> str:
        return self.scenario or ("offers" if self.offers_csv else "pniec2030")

    def markup_grids(self) -> dict[Mechanism, tuple[float, ...]]:
        return {
            Mechanism.PAB: tuple(self.markup_grid_pab),
            Mechanism.PAC: tuple(self.markup_grid),
            Mechanism.SPAC: tuple(self.markup_grid),
        }

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(unknown[0], "unknown configuration key")
        cfg = cls(**data)
        for f in dataclasses.fields(cls):
            value = getattr(cfg, f.name)
            if value is None:
                continue
            expected = f.type if isinstance(f.type, str) else ""
            try:
                if expected.startswith("int"):
                    setattr(cfg, f.name, int(value))
                elif expected.startswith("float"):
                    setattr(cfg, f.name, float(value))
                elif expected.startswith("list[float]"):
                    setattr(cfg, f.name, [float(v) for v in value])
                elif expected.startswith("list[str]"):
                    setattr(cfg, f.name, [str(v) for v in value])
                elif expected.startswith("str"):
                    setattr(cfg, f.name, str(value))
            except (TypeError, ValueError):
                raise ConfigError(f.name, f"cannot interpret {value!r} as {expected}") from None
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        text = Path(path).read_text(encoding="utf-8")
        try:
            data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
        except (json.JSONDecodeError, yaml.YAMLError) as exc:
            raise ConfigError(str(path), f"unparseable config: {exc}") from None
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError(str(path), "top level must be a mapping")
        return cls.from_dict(data)

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(yaml.safe_load(text) or {})
