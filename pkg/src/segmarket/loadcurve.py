"""Quarter-hourly demand curves: CSV I/O, affine rescaling and synthetic generators."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

import numpy as np

from .errors import DataIntegrityError

QUARTER_HOUR = np.timedelta64(15, "m")


@dataclass(frozen=True)
class LoadCurve:
    timestamps: np.ndarray  # datetime64[m]
    demand: np.ndarray  # MW, one clearing per sample
    source_min: float | None = None
    source_max: float | None = None
    target_min: float | None = None
    target_max: float | None = None

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype="datetime64[m]")
        d = np.asarray(self.demand, dtype=float)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "demand", d)
        if ts.shape != d.shape or ts.ndim != 1:
            raise DataIntegrityError("timestamps and demand must be 1-D arrays of equal length")
        if ts.size > 1 and not np.all(np.diff(ts) > np.timedelta64(0, "m")):
            raise DataIntegrityError("timestamps must be strictly increasing")
        if np.any(~np.isfinite(d)) or np.any(d < 0):
            raise DataIntegrityError("demand must be finite and >= 0")

    def __len__(self) -> int:
        return self.demand.size


def scale_load_curve(curve: LoadCurve, target_min: float, target_max: float) -> LoadCurve:
    """Affine map of the curve onto [target_min, target_max]."""
    if len(curve) == 0:
        return LoadCurve(curve.timestamps, curve.demand, None, None, target_min, target_max)
    y_min = float(curve.demand.min())
    y_max = float(curve.demand.max())
    if not y_max > y_min:
        raise DataIntegrityError("cannot rescale a constant load curve")
    y = (curve.demand - y_min) / (y_max - y_min) * (target_max - target_min) + target_min
    return LoadCurve(curve.timestamps, y, y_min, y_max, target_min, target_max)


def read_load_curve_csv(path: str | Path) -> LoadCurve:
    """``timestamp_iso8601,demand_mw`` with header."""
    path = Path(path)
    ts, d = [], []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataIntegrityError(f"{path}: empty file")
        if [h.strip() for h in header[:2]] != ["timestamp_iso8601", "demand_mw"]:
            raise DataIntegrityError(f"{path}: expected header timestamp_iso8601,demand_mw")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                t = datetime.fromisoformat(row[0].strip())
                if t.tzinfo is not None:
                    t = t.replace(tzinfo=None)
                ts.append(np.datetime64(t, "m"))
                d.append(float(row[1]))
            except (ValueError, IndexError) as exc:
                raise DataIntegrityError(f"{path}:{lineno}: {exc}") from None
    try:
        return LoadCurve(np.array(ts, dtype="datetime64[m]"), np.array(d))
    except DataIntegrityError as exc:
        raise DataIntegrityError(f"{path}: {exc}") from None


def write_load_curve_csv(curve: LoadCurve, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp_iso8601", "demand_mw"])
        for t, d in zip(curve.timestamps, curve.demand):
            w.writerow([str(t), repr(float(d))])


def _daily_shape(hours: np.ndarray) -> np.ndarray:
    """Dimensionless weekday load profile: night trough, late-morning plateau, evening peak."""
    base = 0.62
    morning = 0.30 * np.exp(-0.5 * ((hours - 11.0) / 2.8) ** 2)
    afternoon = 0.18 * np.exp(-0.5 * ((hours - 16.0) / 2.5) ** 2)
    evening = 0.28 * np.exp(-0.5 * ((hours - 20.0) / 1.6) ** 2)
    return base + morning + afternoon + evening


def synthetic_day_curve(date: str = "2025-09-12", seed: int = 0, noise: float = 0.01) -> LoadCurve:
    """96 quarter-hours of a typical weekday, unscaled (arbitrary MW)."""
    start = np.datetime64(date, "D").astype("datetime64[m]")
    ts = start + np.arange(96) * QUARTER_HOUR
    hours = np.arange(96) / 4.0
    rng = np.random.default_rng(seed)
    y = 30000.0 * _daily_shape(hours) * (1.0 + noise * rng.standard_normal(96))
    return LoadCurve(ts, y)


def synthetic_year_curve(year: int = 2024, seed: int = 0, noise: float = 0.01) -> LoadCurve:
    """Quarter-hourly curve for a calendar year with a summer peak, spring/autumn lows
    and weekend dips; unscaled (arbitrary MW)."""
    start = np.datetime64(f"{year}-01-01", "m")
    end = np.datetime64(f"{year + 1}-01-01", "m")
    n = int((end - start) // QUARTER_HOUR)
    ts = start + np.arange(n) * QUARTER_HOUR
    hours = (np.arange(n) % 96) / 4.0
    day_of_year = np.arange(n) // 96
    # July peak plus a weaker January bump
    season = (1.0 + 0.12 * np.exp(-0.5 * ((day_of_year - 196) / 25.0) ** 2)
              + 0.06 * np.exp(-0.5 * ((np.minimum(day_of_year, 365 - day_of_year) - 15) / 30.0) ** 2))
    weekday = ((ts.astype("datetime64[D]").view("int64") + 3) % 7)  # 0 = Monday
    weekend = np.where(weekday >= 5, 0.85, 1.0)
    rng = np.random.default_rng(seed)
    y = 30000.0 * _daily_shape(hours) * season * weekend * (1.0 + noise * rng.standard_normal(n))
    return LoadCurve(ts, y)
