"""Command-line entry point: ``segmarket {clear,train,simulate,cluster}``.

Settings come from an optional ``--config`` file (YAML or JSON) and are
overridden by explicit flags. Outputs are deterministic given the config and
seed; run timestamps and wall-clock times go to ``metadata.json`` only.

Exit codes: 0 success, 2 configuration error, 3 infeasible market, 4 data error.
"""
from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .agents import TrainedAgents, TrainingConfig, load_policies, nearest_state, save_agents, train_all_states, train_state
from .config import ExperimentConfig
from .errors import ConfigError, DataIntegrityError, InfeasibleDemandError, TrainingAbortError, TrainingError
from .loadcurve import read_load_curve_csv, scale_load_curve, synthetic_day_curve, synthetic_year_curve
from .market import Mechanism, clear
from .portfolio import (
    load_offers_csv,
    operator_statistics,
    run_pipeline,
    save_report,
    synthetic_offer_corpus,
)
from .scenarios import BUILTIN_SCENARIOS, Scenario, load_scenario, save_scenario
from .sim import Strategy, compare_runs, simulate_day, simulate_year

log = logging.getLogger("segmarket")

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_DATA = 0, 2, 3, 4


def resolve_scenario(cfg: ExperimentConfig) -> Scenario:
    if cfg.offers_csv:
        records = load_offers_csv(cfg.offers_csv)
        res = run_pipeline(records, range(cfg.k_min, cfg.k_max + 1), cfg.seed or 0,
                           cfg.activity_percentile, cfg.segment_threshold, name=Path(cfg.offers_csv).stem)
        return res.scenario
    name = cfg.scenario_source
    if name in BUILTIN_SCENARIOS:
        return BUILTIN_SCENARIOS[name]()
    path = Path(name)
    if not path.exists():
        raise ConfigError("scenario", f"not a builtin scenario ({', '.join(BUILTIN_SCENARIOS)}) nor a file: {name}")
    return load_scenario(path)


def training_config(cfg: ExperimentConfig) -> TrainingConfig:
    return TrainingConfig(
        episodes_per_state=cfg.episodes,
        seed=cfg.seed if cfg.seed is not None else 0,
        eps_max=cfg.eps_max,
        eps_min=cfg.eps_min,
        n_states=cfg.n_states,
        demand_low=cfg.demand_low,
        demand_high=cfg.demand_high,
        markup_grids=cfg.markup_grids(),
    )


def _json_safe(obj):
    # NaN/inf are not valid JSON; undefined metrics are written as null
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def _write_json(path: Path, data) -> Path:
    text = json.dumps(_json_safe(data), indent=2, sort_keys=True, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def _write_metadata(out: Path, cfg: ExperimentConfig, command: str, extra: dict | None = None) -> None:
    meta = {
        "command": command,
        "created_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "seed": cfg.seed,
        "segmarket_version": __version__,
        "python": platform.python_version(),
        "config": cfg.to_dict(),
    }
    meta.update(extra or {})
    _write_json(out / "metadata.json", meta)


def _output_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_clear(cfg: ExperimentConfig) -> list[Path]:
    cfg.validate("clear")
    scenario = resolve_scenario(cfg)
    out = _output_dir(cfg)
    offers = scenario.build_offers()
    written = []
    lines = [f"{'Market':<6} {'Total cost [EUR]':>18} {'PUN [EUR/MWh]':>14}"]
    for m in cfg.mechanisms:
        res = clear(m, offers, cfg.demand, scenario.costs)
        written.append(_write_json(out / f"outcome_{res.mechanism.value.lower()}.json", res.to_dict()))
        lines.append(f"{res.mechanism.value:<6} {res.total_cost:>18,.2f} {res.pun:>14.2f}")
        if res.mechanism is Mechanism.SPAC:
            parts = []
            if res.nmcs_price is not None:
                parts.append(f"NMCS {res.d_r:,.2f} MWh @ {res.nmcs_price:.2f}")
            if res.nnmcs_price is not None:
                parts.append(f"NNMCS {res.d_g:,.2f} MWh @ {res.nnmcs_price:.2f}")
            lines.append("       split: " + ", ".join(parts))
    print(f"{scenario.name}, demand {cfg.demand:g} MW")
    print("\n".join(lines))
    _write_metadata(out, cfg, "clear")
    return written


def _monitor_state(cfg: ExperimentConfig, scenario: Scenario, tcfg: TrainingConfig) -> tuple[int, float]:
    levels = tcfg.state_space(scenario).levels
    target = cfg.monitor_demand if cfg.monitor_demand is not None else 0.5 * scenario.total_capacity
    i = nearest_state(levels, target)
    return i, float(levels[i])


def _train(cfg: ExperimentConfig, scenario: Scenario, out: Path) -> tuple[dict[Mechanism, TrainedAgents], dict]:
    tcfg = training_config(cfg)
    trained, timings = {}, {}
    idx, level = _monitor_state(cfg, scenario, tcfg)
    for m in cfg.mechanisms:
        mech = Mechanism.parse(m)
        t0 = time.perf_counter()
        agents = train_all_states(scenario, mech, tcfg, workers=cfg.workers)
        timings[mech.value] = time.perf_counter() - t0
        save_agents(agents, out)
        trained[mech] = agents
        # convergence trace of one state, replayed with the same derived seed
        episodes = []
        train_state(scenario, mech, idx, level, tcfg, log=episodes)
        ops = list(agents.tables)
        with (out / f"training_log_{mech.value.lower()}.csv").open("w", encoding="utf-8") as fh:
            fh.write("mechanism,state_mw,episode,operator_id,reward,pun\n")
            for ep, rewards, pun in episodes:
                for op, r in zip(ops, rewards):
                    fh.write(f"{mech.value},{level!r},{ep},{op},{r!r},{pun!r}\n")
        log.info("trained %s in %.1f s", mech.value, timings[mech.value])
    return trained, timings


def cmd_train(cfg: ExperimentConfig) -> Path:
    cfg.validate("train")
    scenario = resolve_scenario(cfg)
    out = _output_dir(cfg)
    t0 = time.perf_counter()
    _, timings = _train(cfg, scenario, out)
    wall = time.perf_counter() - t0
    for mech, secs in timings.items():
        print(f"{mech}: {secs:.1f} s")
    print(f"total wall-clock {wall:.1f} s; artifacts in {out}")
    _write_metadata(out, cfg, "train", {"wall_clock_s": wall, "per_mechanism_s": timings})
    return out


def resolve_curve(cfg: ExperimentConfig, scenario: Scenario):
    if cfg.curve:
        raw = read_load_curve_csv(cfg.curve)
    elif cfg.synthetic == "day":
        raw = synthetic_day_curve(cfg.synthetic_date, seed=cfg.seed)
    else:
        raw = synthetic_year_curve(cfg.synthetic_year, seed=cfg.seed)
    c = scenario.total_capacity
    return scale_load_curve(raw, cfg.demand_low * c, cfg.demand_high * c)


def cmd_simulate(cfg: ExperimentConfig) -> Path:
    cfg.validate("simulate")
    scenario = resolve_scenario(cfg)
    out = _output_dir(cfg)
    curve = resolve_curve(cfg, scenario)
    mechanisms = [Mechanism.parse(m) for m in cfg.mechanisms]

    policies = None
    extra = {}
    if cfg.strategy == "policy":
        policies = {m: load_policies(cfg.policy_dir, m) for m in mechanisms}
    elif cfg.strategy == "train":
        t0 = time.perf_counter()
        trained, timings = _train(cfg, scenario, out)
        extra["training_wall_clock_s"] = time.perf_counter() - t0
        policies = {m: a.policies() for m, a in trained.items()}

    runner = simulate_year if cfg.synthetic == "year" or len(curve) > 96 * 7 else simulate_day
    t0 = time.perf_counter()
    result = runner(scenario, curve, policies, mechanisms, keep_outcomes=False)
    extra["simulation_wall_clock_s"] = time.perf_counter() - t0

    result.interval_frame().to_csv(out / "intervals.csv", index=False)
    result.monthly_pun().to_csv(out / "monthly_pun.csv")
    summary = result.summary()
    _write_json(out / "summary.json", summary)

    comparison = {}
    strategies = [Strategy.MARGINAL] + ([Strategy.POLICY] if policies else [])
    if Mechanism.SPAC in mechanisms:
        for strat in strategies:
            spac = result.get(Mechanism.SPAC, strat)
            for base in (Mechanism.PAB, Mechanism.PAC):
                if base in mechanisms:
                    metrics = compare_runs(spac, result.get(base, strat))
                    comparison.setdefault(strat.value, {})[f"SPaC_vs_{base.value}"] = metrics.to_dict()
    _write_json(out / "comparison.json", comparison)

    print(f"{len(result)} intervals, scenario {scenario.name}")
    for strat, rows in summary["strategies"].items():
        print(f"strategy: {strat}")
        for mech, row in rows.items():
            pct = row["profit_cost_pct"]
            print(f"  {mech:<5} cost {row['market_cost_eur']:>16,.2f}  profits {row['operator_profit_eur']:>16,.2f}"
                  f"  profit/cost {pct:5.1f}%" if pct is not None else f"  {mech:<5} cost 0")
    _write_metadata(out, cfg, "simulate", extra)
    return out


def cmd_cluster(cfg: ExperimentConfig) -> Path:
    cfg.validate("cluster")
    out = _output_dir(cfg)
    if cfg.offers_csv:
        records = load_offers_csv(cfg.offers_csv)
        name = Path(cfg.offers_csv).stem
    else:
        records = synthetic_offer_corpus(seed=cfg.seed).drop(columns="archetype")
        name = "synthetic"
    seed = cfg.seed if cfg.seed is not None else 0
    res = run_pipeline(records, range(cfg.k_min, cfg.k_max + 1), seed,
                       cfg.activity_percentile, cfg.segment_threshold, name=name)
    save_report(res.report, out / "clustering_report.json")
    save_scenario(res.scenario, out / "scenario.json")
    feats = res.features.copy()
    feats["cluster"] = res.clusters
    feats.to_csv(out / "unit_features.csv")
    operator_statistics(res.scenario).to_csv(out / "operator_stats.csv")
    print(f"{len(feats)} units kept ({len(res.removed_units)} removed by the activity filter); "
          f"chosen k = {res.report.chosen_k}")
    for k in res.report.k_values:
        score = res.report.mean_scores[k]
        print(f"  k={k}: mean normalised score {score:.3f}" if score is not None else f"  k={k}: invalid")
    _write_metadata(out, cfg, "cluster", {"removed_units": res.removed_units})
    return out


COMMANDS = {"clear": cmd_clear, "train": cmd_train, "simulate": cmd_simulate, "cluster": cmd_cluster}


def _csv_list(cast):
    def parse(text: str):
        try:
            return [cast(x) for x in text.split(",") if x.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    return parse


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON experiment config; flags override it")
    common.add_argument("--scenario", help="builtin scenario name (pniec2030) or scenario JSON path")
    common.add_argument("--offers-csv", help="historical offers CSV to derive the scenario from")
    common.add_argument("--mechanisms", type=_csv_list(str), help="comma list of pab,pac,spac")
    common.add_argument("--seed", type=int)
    common.add_argument("--output-dir")
    common.add_argument("--workers", type=int, help="worker processes (default: available cores)")
    common.add_argument("-v", "--verbose", action="store_true")

    train = argparse.ArgumentParser(add_help=False)
    train.add_argument("--episodes", type=int, help="episodes per demand state")
    train.add_argument("--n-states", type=int)
    train.add_argument("--eps-max", type=float)
    train.add_argument("--eps-min", type=float)
    train.add_argument("--markup-grid", type=_csv_list(float), help="PaC/SPaC markups as fractions")
    train.add_argument("--markup-grid-pab", type=_csv_list(float))
    train.add_argument("--monitor-demand", type=float, help="demand level whose training trace is logged")

    cluster = argparse.ArgumentParser(add_help=False)
    cluster.add_argument("--k-min", type=int)
    cluster.add_argument("--k-max", type=int)
    cluster.add_argument("--activity-percentile", type=float)
    cluster.add_argument("--segment-threshold", type=float)

    parser = argparse.ArgumentParser(prog="segmarket", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("clear", parents=[common, cluster], help="clear one demand level")
    p.add_argument("--demand", type=float)
    sub.add_parser("train", parents=[common, train, cluster], help="train markup policies")
    p = sub.add_parser("simulate", parents=[common, train, cluster], help="simulate a day or a year")
    p.add_argument("--strategy", choices=("marginal", "policy", "train"))
    p.add_argument("--policy-dir")
    p.add_argument("--curve", help="load curve CSV (timestamp_iso8601,demand_mw)")
    p.add_argument("--synthetic", choices=("day", "year"))
    p.add_argument("--synthetic-date")
    p.add_argument("--synthetic-year", type=int)
    sub.add_parser("cluster", parents=[common, cluster], help="cluster offers into operator portfolios")
    return parser


_NOT_CONFIG = {"command", "config", "verbose"}


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    for key, value in vars(args).items():
        if key in _NOT_CONFIG or value is None:
            continue
        setattr(cfg, key, value)
    if args.offers_csv and not args.scenario:
        cfg.scenario = None
    if args.workers is None and cfg.workers is None:
        cfg.workers = len(_available_cpus())
    return cfg


def _available_cpus():
    import os
    try:
        return os.sched_getaffinity(0)
    except AttributeError:
        return range(os.cpu_count() or 1)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
        COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleDemandError as exc:
        print(f"infeasible market: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (DataIntegrityError, TrainingError, TrainingAbortError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
