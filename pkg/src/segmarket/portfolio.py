"""Operator portfolios from historical offers.

Pipeline: load offers -> drop low-activity units -> eight behavioural features
per unit -> z-score -> k-means over a range of k -> pick k by the mean of five
normalised validity indices -> label clusters as technologies -> split segments
by a cost threshold -> :class:`~segmarket.scenarios.Scenario`.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd
from sklearn.metrics import calinski_harabasz_score, davies_bouldin_score, silhouette_score

from .errors import DataIntegrityError, FeatureError
from .scenarios import SEGMENT_THRESHOLD, ProductionUnit, Scenario, classify_segments

OFFER_RECORD_COLUMNS = ("timestamp_iso8601", "unit_id", "operator_id", "price_eur_mwh", "quantity_mw")
FEATURES = ("P_w", "Q_max", "CV", "FlexQ", "V_h", "V_m", "h_night", "h_peak")
NIGHT_HOURS = frozenset((22, 23, 0, 1, 2, 3, 4, 5))
PEAK_HOURS = frozenset((9, 10, 11, 18, 19))


def load_offers_csv(path: str | Path) -> pd.DataFrame:
    """Historical offers, one row per (timestamp, unit). Any malformed row aborts
    the load; the error lists every offending line number."""
    path = Path(path)
    rows, problems = [], []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataIntegrityError(f"{path}: empty file")
        missing = [c for c in OFFER_RECORD_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise DataIntegrityError(f"{path}: missing columns {missing}")
        for lineno, r in enumerate(reader, start=2):
            try:
                ts = pd.Timestamp(r["timestamp_iso8601"])
                price = float(r["price_eur_mwh"])
                qty = float(r["quantity_mw"])
            except (ValueError, TypeError) as exc:
                problems.append(f"line {lineno}: {exc}")
                continue
            if not (math.isfinite(price) and math.isfinite(qty)):
                problems.append(f"line {lineno}: non-finite value")
            elif qty < 0:
                problems.append(f"line {lineno}: negative quantity {qty}")
            elif price < 0:
                problems.append(f"line {lineno}: negative price {price}")
            elif not r["unit_id"] or not r["operator_id"]:
                problems.append(f"line {lineno}: missing unit or operator id")
            else:
                rows.append((ts.tz_localize(None) if ts.tzinfo else ts, r["unit_id"], r["operator_id"], price, qty))
    if problems:
        raise DataIntegrityError(f"{path}: {len(problems)} malformed row(s): " + "; ".join(problems[:20]))
    if not rows:
        raise DataIntegrityError(f"{path}: no offer records")
    return pd.DataFrame(rows, columns=["timestamp", "unit_id", "operator_id", "price", "quantity"])


def write_offers_csv(records: pd.DataFrame, path: str | Path) -> None:
    out = pd.DataFrame({
        "timestamp_iso8601": pd.to_datetime(records["timestamp"]).dt.strftime("%Y-%m-%dT%H:%M:%S"),
        "unit_id": records["unit_id"],
        "operator_id": records["operator_id"],
        "price_eur_mwh": records["price"],
        "quantity_mw": records["quantity"],
    })
    out.to_csv(path, index=False)


def group_units(records: pd.DataFrame) -> dict[str, pd.DataFrame]:
    return {uid: g.reset_index(drop=True) for uid, g in records.groupby("unit_id", sort=True)}


def nearest_rank(values: Sequence[float], fraction: float) -> float:
    """Nearest-rank percentile: the ceil(p*N)-th smallest value."""
    v = sorted(values)
    if not v:
        raise ValueError("empty sequence")
    rank = max(1, math.ceil(fraction * len(v) - 1e-12))
    return v[min(rank, len(v)) - 1]


def filter_low_activity_units(records: pd.DataFrame, percentile: float = 0.20) -> pd.DataFrame:
    """Drop units whose offer count is strictly below the given percentile of per-unit counts."""
    if records.empty:
        raise DataIntegrityError("no records to filter")
    counts = records.groupby("unit_id").size()
    threshold = nearest_rank(counts.tolist(), percentile)
    keep = counts.index[counts >= threshold]
    return records[records["unit_id"].isin(keep)].reset_index(drop=True)


@dataclass(frozen=True)
class UnitFeatures:
    P_w: float
    Q_max: float
    CV: float
    FlexQ: float
    V_h: float
    V_m: float
    h_night: float
    h_peak: float

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, f) for f in FEATURES)


def compute_unit_features(series: pd.DataFrame) -> UnitFeatures:
    """Features of one unit's offers (columns ``timestamp``, ``price``, ``quantity``).

    Standard deviations are population-style; hourly/monthly means are taken
    over the buckets that contain offers.
    """
    if series.empty:
        raise FeatureError("empty offer series")
    q = series["quantity"].to_numpy(dtype=float)
    p = series["price"].to_numpy(dtype=float)
    ts = pd.DatetimeIndex(series["timestamp"])
    q_sum = q.sum()
    q_max = q.max()
    if q_sum <= 0 or q_max <= 0:
        raise FeatureError("all offered quantities are zero; price weighting and CV undefined")
    hours = ts.hour.to_numpy()
    hourly = pd.Series(q).groupby(hours).mean()
    monthly = pd.Series(q).groupby(ts.month.to_numpy()).mean()
    n = q.size
    return UnitFeatures(
        P_w=float((p * q).sum() / q_sum),
        Q_max=float(q_max),
        CV=float(q.std() / q.mean()),
        FlexQ=float((q_max - q.min()) / q_max),
        V_h=float(hourly.to_numpy().std()),
        V_m=float(monthly.to_numpy().std()),
        h_night=100.0 * float(np.isin(hours, list(NIGHT_HOURS)).sum()) / n,
        h_peak=100.0 * float(np.isin(hours, list(PEAK_HOURS)).sum()) / n,
    )


def feature_table(records: pd.DataFrame) -> pd.DataFrame:
    """One row per unit: the eight features plus ``Q_mean`` and ``operator_id``."""
    rows = {}
    for uid, g in group_units(records).items():
        ops = g["operator_id"].unique()
        if len(ops) != 1:
            raise DataIntegrityError(f"unit {uid} is offered by several operators: {list(ops)}")
        f = compute_unit_features(g)
        rows[uid] = {**asdict(f), "Q_mean": float(g["quantity"].mean()), "operator_id": ops[0]}
    out = pd.DataFrame.from_dict(rows, orient="index")
    out.index.name = "unit_id"
    return out


def zscore_normalize(matrix) -> np.ndarray:
    """Column-wise (x - mean) / std with population std; constant columns become 0."""
    x = np.asarray(matrix, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DataIntegrityError("z-score normalisation needs at least two rows")
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    flat = sd <= 1e-12 * np.maximum(1.0, np.abs(mu))
    if flat.any():
        warnings.warn(f"zero-variance column(s) {np.flatnonzero(flat).tolist()} set to 0", RuntimeWarning,
                      stacklevel=2)
    z = (x - mu) / np.where(flat, 1.0, sd)
    z[:, flat] = 0.0
    return z


@dataclass
class KMeansResult:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    n_iter: int
    inertia_history: list[float] = field(default_factory=list)


def _sq_dist(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    return ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = ((x - x[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            # every point coincides with a centre already; take an unused index
            unused = np.setdiff1d(np.arange(n), chosen)
            nxt = int(unused[0])
        chosen.append(nxt)
        d2 = np.minimum(d2, ((x - x[nxt]) ** 2).sum(axis=1))
    return x[chosen].copy()


def kmeans_cluster(matrix, k: int, seed: int = 0, max_iter: int = 300) -> KMeansResult:
    """Lloyd iterations from a k-means++ start; stops when assignments stop changing."""
    x = np.asarray(matrix, dtype=float)
    n = x.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of rows ({n})")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(x, k, rng)
    labels = np.full(n, -1)
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        d = _sq_dist(x, centroids)
        new = d.argmin(axis=1)
        history.append(float(d[np.arange(n), new].sum()))
        if np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            members = x[labels == j]
            # an emptied cluster keeps its previous centre
            if len(members):
                centroids[j] = members.mean(axis=0)
    inertia = float(((x - centroids[labels]) ** 2).sum())
    return KMeansResult(labels, centroids, inertia, it, history)


def dunn_index(x: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> float:
    """Minimum centroid separation over the largest cluster diameter."""
    k = centroids.shape[0]
    sep = min(float(np.linalg.norm(centroids[i] - centroids[j])) for i in range(k) for j in range(i + 1, k))
    diam = 0.0
    for j in range(k):
        m = x[labels == j]
        if len(m) > 1:
            diam = max(diam, float(np.sqrt(_sq_dist(m, m).max())))
    return math.inf if diam == 0 else sep / diam


def xie_beni_index(x: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> float:
    """Within-cluster squared error over N times the minimum squared centroid separation."""
    k = centroids.shape[0]
    inertia = float(((x - centroids[labels]) ** 2).sum())
    sep2 = min(float(((centroids[i] - centroids[j]) ** 2).sum()) for i in range(k) for j in range(i + 1, k))
    return math.inf if sep2 == 0 else inertia / (x.shape[0] * sep2)


MAXIMIZE = ("silhouette", "calinski_harabasz", "dunn")
MINIMIZE = ("davies_bouldin", "xie_beni")


@dataclass
class ClusteringReport:
    k_values: list[int]
    indices: dict[int, dict[str, float | None]]
    normalized_scores: dict[int, dict[str, float | None]]
    mean_scores: dict[int, float | None]
    chosen_k: int
    assignments: np.ndarray
    centroids: np.ndarray
    seed: int

    def to_dict(self) -> dict:
        return {
            "k_values": self.k_values,
            "chosen_k": self.chosen_k,
            "seed": self.seed,
            "indices": {str(k): v for k, v in self.indices.items()},
            "normalized_scores": {str(k): v for k, v in self.normalized_scores.items()},
            "mean_scores": {str(k): v for k, v in self.mean_scores.items()},
            "assignments": self.assignments.tolist(),
            "centroids": self.centroids.tolist(),
        }


def _validity_indices(x: np.ndarray, res: KMeansResult, k: int) -> dict[str, float | None]:
    sizes = np.bincount(res.assignments, minlength=k)
    if k < 2 or (sizes == 0).any() or k >= x.shape[0]:
        return {name: None for name in MAXIMIZE + MINIMIZE}
    out = {
        "silhouette": float(silhouette_score(x, res.assignments)),
        "calinski_harabasz": float(calinski_harabasz_score(x, res.assignments)),
        "dunn": dunn_index(x, res.assignments, res.centroids),
        "davies_bouldin": float(davies_bouldin_score(x, res.assignments)),
        "xie_beni": xie_beni_index(x, res.assignments, res.centroids),
    }
    return {name: (v if math.isfinite(v) else None) for name, v in out.items()}


def _normalize(values: dict[int, float | None], maximize: bool) -> dict[int, float | None]:
    valid = [v for v in values.values() if v is not None]
    if not valid:
        return {k: None for k in values}
    lo, hi = min(valid), max(valid)
    out = {}
    for k, v in values.items():
        if v is None:
            out[k] = None
        elif hi == lo:
            out[k] = 1.0
        else:
            out[k] = (v - lo) / (hi - lo) if maximize else (hi - v) / (hi - lo)
    return out


def select_k(matrix, k_range: Iterable[int], seed: int = 0) -> ClusteringReport:
    """Cluster for every k and keep the k with the best mean normalised validity score.

    Ties go to the smaller k. A k whose clustering leaves an empty cluster (or
    for which an index is undefined) has that index marked invalid and is
    scored on the remaining ones.
    """
    x = np.asarray(matrix, dtype=float)
    ks = sorted(set(int(k) for k in k_range))
    if not ks:
        raise ValueError("k_range is empty")
    results = {k: kmeans_cluster(x, k, seed) for k in ks}
    indices = {k: _validity_indices(x, results[k], k) for k in ks}
    norm: dict[int, dict[str, float | None]] = {k: {} for k in ks}
    for name in MAXIMIZE + MINIMIZE:
        col = _normalize({k: indices[k][name] for k in ks}, maximize=name in MAXIMIZE)
        for k in ks:
            norm[k][name] = col[k]
    means = {}
    for k in ks:
        vals = [v for v in norm[k].values() if v is not None]
        means[k] = float(np.mean(vals)) if vals else None
    scored = [k for k in ks if means[k] is not None]
    chosen = max(scored, key=lambda k: (means[k], -k)) if scored else ks[0]
    best = results[chosen]
    return ClusteringReport(ks, indices, norm, means, chosen, best.assignments, best.centroids, seed)


def label_clusters_by_price(features: pd.DataFrame, assignments: np.ndarray) -> pd.Series:
    """Cluster labels ``C1..Ck`` ordered by ascending mean weighted price."""
    s = pd.Series(assignments, index=features.index)
    order = features["P_w"].groupby(s).mean().sort_values(kind="stable").index
    names = {c: f"C{i + 1}" for i, c in enumerate(order)}
    return s.map(names)


def build_operator_portfolios(features: pd.DataFrame, clusters: pd.Series,
                              threshold: float = SEGMENT_THRESHOLD, name: str = "clustered") -> Scenario:
    """Each unit becomes a production unit with capacity = mean offered quantity,
    cost = weighted average offered price, technology = its cluster label."""
    units = []
    for uid, row in features.sort_index().iterrows():
        q = float(row["Q_mean"])
        if q <= 0:
            # never offered anything; no capacity to dispatch
            continue
        units.append(ProductionUnit(
            unit_id=str(uid),
            operator_id=str(row["operator_id"]),
            technology=str(clusters[uid]),
            capacity=q,
            marginal_cost=float(row["P_w"]),
        ))
    if not units:
        raise DataIntegrityError("no unit with positive capacity")
    return Scenario(name=name, units=tuple(classify_segments(units, threshold)))


def operator_statistics(scenario: Scenario) -> pd.DataFrame:
    """Capacity, share and unit count per operator, overall and per segment."""
    rows = []
    total = scenario.total_capacity
    for op in scenario.operators:
        us = scenario.units_of(op)
        cap = math.fsum(u.capacity for u in us)
        rows.append({
            "operator_id": op,
            "capacity_mw": cap,
            "share_pct": 100.0 * cap / total,
            "n_units": len(us),
            "nmcs_mw": math.fsum(u.capacity for u in us if u.segment.value == "NMCS"),
            "nnmcs_mw": math.fsum(u.capacity for u in us if u.segment.value == "NNMCS"),
        })
    return pd.DataFrame(rows).set_index("operator_id")


@dataclass
class PipelineResult:
    features: pd.DataFrame
    normalized: np.ndarray
    report: ClusteringReport
    clusters: pd.Series
    scenario: Scenario
    removed_units: list[str]


def run_pipeline(records: pd.DataFrame, k_range: Iterable[int] = range(2, 9), seed: int = 0,
                 percentile: float = 0.20, threshold: float = SEGMENT_THRESHOLD,
                 name: str = "clustered") -> PipelineResult:
    kept = filter_low_activity_units(records, percentile)
    removed = sorted(set(records["unit_id"]) - set(kept["unit_id"]))
    feats = feature_table(kept)
    z = zscore_normalize(feats[list(FEATURES)].to_numpy())
    report = select_k(z, k_range, seed)
    clusters = label_clusters_by_price(feats, report.assignments)
    scenario = build_operator_portfolios(feats, clusters, threshold, name)
    return PipelineResult(feats, z, report, clusters, scenario, removed)


def save_report(report: ClusteringReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2), encoding="utf-8")


# Offer behaviour archetypes for the synthetic corpus:
# (name, price, price jitter, base MW, active hours, hourly amplitude, monthly amplitude, on-probability)
_ARCHETYPES = (
    ("solar", 3.0, 0.8, 25.0, tuple(range(7, 19)), 0.9, 0.35, 1.0),
    ("wind", 2.0, 0.6, 30.0, tuple(range(24)), 0.2, 0.15, 0.55),
    ("hydro", 97.0, 3.0, 130.0, tuple(range(24)), 0.0, 0.05, 1.0),
    ("ccgt", 156.0, 4.0, 700.0, tuple(range(6, 23)), 0.6, 0.30, 1.0),
    ("peaker", 174.0, 4.0, 200.0, (8, 9, 10, 11, 12, 17, 18, 19, 20, 21), 0.3, 0.10, 0.9),
)


def synthetic_offer_corpus(n_operators: int = 10, units_per_archetype: int = 8, seed: int = 0,
                           days_per_month: int = 2, year: int = 2024) -> pd.DataFrame:
    """Hourly offers for units drawn from five well-separated behaviour archetypes.

    Stand-in for proprietary exchange data: the archetype of each unit is the
    ground-truth cluster (``archetype`` column, not part of the CSV schema).
    A handful of sporadic units (archetype -1, a few offers each) is added;
    their number is chosen so that the 20th-percentile activity filter removes
    exactly them.
    """
    rng = np.random.default_rng(seed)
    rows = []
    uid = 0
    days = [1 + (d * 27) // days_per_month for d in range(days_per_month)]
    for a_idx, (name, price, jitter, base, hours, h_amp, m_amp, p_on) in enumerate(_ARCHETYPES):
        for _ in range(units_per_archetype):
            uid += 1
            unit = f"UP{uid:04d}"
            op = f"OP{int(rng.integers(n_operators)) + 1}"
            size = base * rng.uniform(0.8, 1.2)
            unit_price = price + jitter * rng.standard_normal()
            for month in range(1, 13):
                m_fac = 1.0 + m_amp * math.sin(2 * math.pi * (month - 4) / 12)
                for day in days:
                    for hour in hours:
                        if rng.random() > p_on:
                            continue
                        h_fac = 1.0 + h_amp * math.sin(math.pi * (hour - hours[0] + 0.5) / len(hours))
                        q = max(0.1, size * m_fac * h_fac * (1.0 + 0.05 * rng.standard_normal()))
                        if name == "wind":
                            q = size * rng.uniform(0.05, 1.0)
                        rows.append((pd.Timestamp(year, month, day, hour), unit, op,
                                     max(0.0, unit_price + 0.5 * rng.standard_normal()), q, a_idx))
    n_real = uid
    for _ in range((n_real - 1) // 4):
        uid += 1
        unit = f"UP{uid:04d}"
        op = f"OP{int(rng.integers(n_operators)) + 1}"
        for j in range(5):
            rows.append((pd.Timestamp(year, 1 + 2 * j, 5, 12), unit, op, float(rng.uniform(0, 200)),
                         float(rng.uniform(1, 50)), -1))
    return pd.DataFrame(rows, columns=["timestamp", "unit_id", "operator_id", "price", "quantity", "archetype"])
