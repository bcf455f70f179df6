"""Tabular Q-learning for operator markup policies.

Each operator is an independent learner with a private Q-table indexed by
(demand state, markup tuple). Episodes are single-shot (no successor state),
so the update reduces to a running mean of the observed profit at the visited
cell when the learning rate is ``1 / visits``.

Demand states are independent, so :func:`train_all_states` farms them out to
worker processes. Every state draws from its own RNG whose seed is derived
from (master seed, state index, mechanism), which makes the merged result
independent of the worker count.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import DataIntegrityError, TrainingAbortError, TrainingError
from .market import Mechanism, clear
from .scenarios import Scenario

PAC_MARKUPS = (0.0, 0.05, 0.10, 0.20)
PAB_MARKUPS = (0.0, 0.50, 1.00, 2.00)
DEFAULT_MARKUP_GRIDS = {
    Mechanism.PAB: PAB_MARKUPS,
    Mechanism.PAC: PAC_MARKUPS,
    Mechanism.SPAC: PAC_MARKUPS,
}

_MECH_CODE = {Mechanism.PAB: 1, Mechanism.PAC: 2, Mechanism.SPAC: 3}
_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, state_index: int, mechanism: Mechanism | str) -> int:
    """Seed for one (state, mechanism) training unit: chained splitmix64 mixing."""
    code = _MECH_CODE[Mechanism.parse(mechanism)]
    x = splitmix64(master & _MASK64)
    x = splitmix64(x ^ (state_index & _MASK64))
    return splitmix64(x ^ code)


@dataclass(frozen=True)
class ActionSpace:
    """All markup tuples over ``markup_grid``, one entry per technology, in lexicographic order."""

    technologies: tuple[str, ...]
    markup_grid: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "technologies", tuple(self.technologies))
        object.__setattr__(self, "markup_grid", tuple(float(m) for m in self.markup_grid))
        if any(m < 0 for m in self.markup_grid):
            raise ValueError("markups must be >= 0")
        if not self.markup_grid:
            raise ValueError("markup grid is empty")

    @property
    def actions(self) -> list[tuple[float, ...]]:
        return list(itertools.product(self.markup_grid, repeat=len(self.technologies)))

    def __len__(self) -> int:
        return len(self.markup_grid) ** len(self.technologies)

    def markups(self, index: int) -> tuple[float, ...]:
        """Markup tuple of an action index (mixed-radix decode, first technology most significant)."""
        g = len(self.markup_grid)
        out = []
        for _ in self.technologies:
            index, r = divmod(index, g)
            out.append(self.markup_grid[r])
        return tuple(reversed(out))


@dataclass(frozen=True)
class StateSpace:
    levels: np.ndarray

    @classmethod
    def from_capacity(cls, total_capacity: float, n: int = 100, low: float = 0.25, high: float = 0.80) -> "StateSpace":
        return cls(np.linspace(low * total_capacity, high * total_capacity, n))

    def __len__(self) -> int:
        return len(self.levels)


@dataclass(frozen=True)
class EpsilonSchedule:
    eps_max: float = 1.0
    eps_min: float = 0.05
    total_episodes: int = 2000

    def __post_init__(self):
        if not 0 < self.eps_min <= self.eps_max <= 1:
            raise ValueError("need 0 < eps_min <= eps_max <= 1")
        if self.total_episodes < 1:
            raise ValueError("total_episodes must be >= 1")

    @property
    def decay_rate(self) -> float:
        return -math.log(self.eps_min / self.eps_max) / self.total_episodes


def epsilon_at(schedule: EpsilonSchedule, episode: int) -> float:
    if not 0 <= episode <= schedule.total_episodes:
        raise ValueError(f"episode {episode} outside [0, {schedule.total_episodes}]")
    if episode == schedule.total_episodes:
        # exp(log(x)) is not exact in floating point
        return schedule.eps_min
    return schedule.eps_max * math.exp(-schedule.decay_rate * episode)


@dataclass
class QTable:
    values: np.ndarray
    counts: np.ndarray

    @classmethod
    def zeros(cls, n_states: int, n_actions: int) -> "QTable":
        return cls(np.zeros((n_states, n_actions)), np.zeros((n_states, n_actions), dtype=np.int64))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def select_action(qtable: QTable, state: int, epsilon: float, rng: random.Random) -> int:
    """Epsilon-greedy; greedy ties go to the lowest action index."""
    n = qtable.values.shape[1]
    if rng.random() < epsilon:
        return rng.randrange(n)
    return int(np.argmax(qtable.values[state]))


def update_q(qtable: QTable, state: int, action: int, reward: float) -> QTable:
    """In-place sample-average update; returns the same table."""
    if not math.isfinite(reward):
        raise TrainingAbortError(f"non-finite reward {reward!r} at state {state}, action {action}")
    qtable.counts[state, action] += 1
    alpha = 1.0 / qtable.counts[state, action]
    qtable.values[state, action] += alpha * (reward - qtable.values[state, action])
    return qtable


@dataclass
class TrainingConfig:
    episodes_per_state: int = 2000
    seed: int = 0
    eps_max: float = 1.0
    eps_min: float = 0.05
    n_states: int = 100
    demand_low: float = 0.25
    demand_high: float = 0.80
    markup_grids: dict = field(default_factory=lambda: dict(DEFAULT_MARKUP_GRIDS))

    def __post_init__(self):
        if self.episodes_per_state < 0:
            raise ValueError("episodes_per_state must be >= 0")
        self.markup_grids = {Mechanism.parse(k): tuple(v) for k, v in self.markup_grids.items()}

    def schedule(self) -> EpsilonSchedule:
        return EpsilonSchedule(self.eps_max, self.eps_min, max(1, self.episodes_per_state))

    def state_space(self, scenario: Scenario) -> StateSpace:
        return StateSpace.from_capacity(scenario.total_capacity, self.n_states, self.demand_low, self.demand_high)

    def action_spaces(self, scenario: Scenario, mechanism: Mechanism | str) -> dict[str, ActionSpace]:
        grid = self.markup_grids[Mechanism.parse(mechanism)]
        return {op: ActionSpace(scenario.technologies_of(op), grid) for op in scenario.operators}


EpisodeLog = list  # rows of (episode, rewards tuple, pun)


def run_episodes(tables: Sequence[QTable], state: int, reward_fn: Callable[[list[int]], tuple[Sequence[float], float]],
                 episodes: int, schedule: EpsilonSchedule, rng: random.Random,
                 log: EpisodeLog | None = None) -> None:
    """Joint-action episodes on one state.

    Every agent draws its own exploration coin under the episode's shared
    epsilon; ``reward_fn`` maps the joint action to (rewards, pun).
    """
    for episode in range(1, episodes + 1):
        eps = epsilon_at(schedule, episode)
        actions = [select_action(q, state, eps, rng) for q in tables]
        rewards, pun = reward_fn(actions)
        for q, a, r in zip(tables, actions, rewards):
            update_q(q, state, a, r)
        if log is not None:
            log.append((episode, tuple(rewards), pun))


def market_reward_fn(scenario: Scenario, mechanism: Mechanism | str, demand: float,
                     spaces: Mapping[str, ActionSpace]):
    """Clearing-as-black-box reward: offers at cost * (1 + markup), reward = operator profit."""
    mechanism = Mechanism.parse(mechanism)
    operators = list(spaces)
    costs = scenario.costs

    def reward(actions: list[int]):
        markups = {}
        for op, a in zip(operators, actions):
            space = spaces[op]
            for tech, m in zip(space.technologies, space.markups(a)):
                markups[(op, tech)] = m
        outcome = clear(mechanism, scenario.build_offers(markups), demand, costs)
        return [outcome.operator_profit.get(op, 0.0) for op in operators], outcome.pun

    return reward


def train_state(scenario: Scenario, mechanism: Mechanism | str, state_index: int, demand: float,
                config: TrainingConfig, log: EpisodeLog | None = None) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Train every operator on one demand level. Returns operator -> (q row, counts row)."""
    mechanism = Mechanism.parse(mechanism)
    spaces = config.action_spaces(scenario, mechanism)
    tables = [QTable.zeros(1, len(s)) for s in spaces.values()]
    rng = random.Random(derive_seed(config.seed, state_index, mechanism))
    reward_fn = market_reward_fn(scenario, mechanism, demand, spaces)
    run_episodes(tables, 0, reward_fn, config.episodes_per_state, config.schedule(), rng, log)
    return {op: (q.values[0], q.counts[0]) for op, q in zip(spaces, tables)}


def _train_state_job(args):
    scenario, mechanism, index, demand, config = args
    try:
        return index, train_state(scenario, mechanism, index, demand, config), None
    except Exception as exc:  # collected and re-raised with state indices
        return index, None, exc


@dataclass
class TrainedAgents:
    """Q-tables of every operator for one mechanism over a demand grid."""

    mechanism: Mechanism
    states: np.ndarray
    spaces: dict[str, ActionSpace]
    tables: dict[str, QTable]

    def policies(self) -> dict[str, "Policy"]:
        return {op: extract_policy(self.tables[op], self.states, self.spaces[op], self.mechanism, op)
                for op in self.tables}


def train_all_states(scenario: Scenario, mechanism: Mechanism | str, config: TrainingConfig,
                     workers: int | None = 1, states: Iterable[float] | None = None) -> TrainedAgents:
    mechanism = Mechanism.parse(mechanism)
    levels = np.asarray(list(states) if states is not None else config.state_space(scenario).levels, dtype=float)
    spaces = config.action_spaces(scenario, mechanism)
    tables = {op: QTable.zeros(len(levels), len(s)) for op, s in spaces.items()}
    jobs = [(scenario, mechanism, i, float(d), config) for i, d in enumerate(levels)]

    if workers is not None and workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_train_state_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_train_state_job(j) for j in jobs]

    failures = {}
    for index, rows, exc in results:
        if exc is not None:
            failures[index] = exc
            continue
        for op, (q, n) in rows.items():
            tables[op].values[index] = q
            tables[op].counts[index] = n
    if failures:
        raise TrainingError(failures)
    return TrainedAgents(mechanism, levels, spaces, tables)


@dataclass
class Policy:
    """Greedy markup policy of one operator on a demand grid."""

    mechanism: Mechanism
    operator_id: str
    technologies: tuple[str, ...]
    states: np.ndarray
    action_index: np.ndarray
    markups: np.ndarray  # (n_states, n_technologies)
    cold: np.ndarray  # states never visited during training

    def markups_for(self, state_index: int) -> dict[str, float]:
        return dict(zip(self.technologies, (float(m) for m in self.markups[state_index])))


def extract_policy(qtable: QTable, states: Sequence[float], space: ActionSpace,
                   mechanism: Mechanism | str = Mechanism.PAC, operator_id: str = "") -> Policy:
    idx = np.argmax(qtable.values, axis=1)
    markups = np.array([space.markups(int(a)) for a in idx], dtype=float).reshape(len(idx), len(space.technologies))
    cold = qtable.counts.sum(axis=1) == 0
    return Policy(Mechanism.parse(mechanism), operator_id, space.technologies,
                  np.asarray(states, dtype=float), idx, markups, cold)


def nearest_state(states: np.ndarray, demand: float) -> int:
    """Index of the grid level closest to ``demand``; ties go to the lower level."""
    return int(np.argmin(np.abs(states - demand)))


def nearest_state_policy(policy: Policy, demand: float) -> dict[str, float]:
    return policy.markups_for(nearest_state(policy.states, demand))


# serialisation

def qtable_to_dict(agents: TrainedAgents, operator_id: str) -> dict:
    q = agents.tables[operator_id]
    space = agents.spaces[operator_id]
    return {
        "mechanism": agents.mechanism.value,
        "operator_id": operator_id,
        "technologies": list(space.technologies),
        "markup_grid": list(space.markup_grid),
        "states": [float(s) for s in agents.states],
        "actions": [list(a) for a in space.actions],
        "q": q.values.tolist(),
        "counts": q.counts.tolist(),
    }


def qtable_from_dict(data: dict) -> tuple[Mechanism, str, np.ndarray, ActionSpace, QTable]:
    try:
        space = ActionSpace(tuple(data["technologies"]), tuple(data["markup_grid"]))
        values = np.asarray(data["q"], dtype=float)
        counts = np.asarray(data["counts"], dtype=np.int64)
        states = np.asarray(data["states"], dtype=float)
        mech = Mechanism.parse(data["mechanism"])
        op = str(data["operator_id"])
    except (KeyError, ValueError, TypeError) as exc:
        raise DataIntegrityError(f"invalid Q-table JSON: {exc!r}") from None
    if values.shape != (len(states), len(space)) or counts.shape != values.shape:
        raise DataIntegrityError("Q-table shape does not match states x actions")
    return mech, op, states, space, QTable(values, counts)


def save_agents(agents: TrainedAgents, directory: str | Path) -> list[Path]:
    """Write one Q-table JSON and one policy JSON per operator plus a policy CSV."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    mech = agents.mechanism.value.lower()
    written = []
    policies = agents.policies()
    for op in agents.tables:
        p = directory / f"qtable_{mech}_{op}.json"
        p.write_text(json.dumps(qtable_to_dict(agents, op)), encoding="utf-8")
        written.append(p)
        p = directory / f"policy_{mech}_{op}.json"
        p.write_text(json.dumps(policy_to_dict(policies[op]), indent=1), encoding="utf-8")
        written.append(p)
    p = directory / f"policy_{mech}.csv"
    write_policy_csv(policies.values(), p)
    written.append(p)
    return written


def load_policies(directory: str | Path, mechanism: Mechanism | str) -> dict[str, Policy]:
    """Rebuild greedy policies from the Q-table files of one mechanism."""
    mechanism = Mechanism.parse(mechanism)
    files = sorted(Path(directory).glob(f"qtable_{mechanism.value.lower()}_*.json"))
    if not files:
        raise DataIntegrityError(f"no {mechanism.value} Q-tables in {directory}")
    out = {}
    for f in files:
        mech, op, states, space, q = qtable_from_dict(json.loads(f.read_text(encoding="utf-8")))
        if mech is not mechanism:
            raise DataIntegrityError(f"{f}: mechanism {mech.value} != {mechanism.value}")
        out[op] = extract_policy(q, states, space, mech, op)
    return out


def policy_to_dict(policy: Policy) -> dict:
    return {
        "mechanism": policy.mechanism.value,
        "operator_id": policy.operator_id,
        "technologies": list(policy.technologies),
        "states": policy.states.tolist(),
        "action_index": policy.action_index.tolist(),
        "markups": policy.markups.tolist(),
        "cold": policy.cold.tolist(),
    }


def write_policy_csv(policies: Iterable[Policy], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["state_mw", "operator_id", "technology", "markup_pct"])
        for p in policies:
            for s, row in zip(p.states, p.markups):
                for tech, m in zip(p.technologies, row):
                    w.writerow([repr(float(s)), p.operator_id, tech, repr(round(100 * float(m), 10))])
