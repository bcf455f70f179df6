import json
import math
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from segmarket.agents import (
    PAB_MARKUPS,
    PAC_MARKUPS,
    ActionSpace,
    EpsilonSchedule,
    QTable,
    StateSpace,
    TrainingConfig,
    derive_seed,
    epsilon_at,
    extract_policy,
    load_policies,
    nearest_state,
    nearest_state_policy,
    qtable_from_dict,
    qtable_to_dict,
    run_episodes,
    save_agents,
    select_action,
    splitmix64,
    train_all_states,
    train_state,
    update_q,
)
from segmarket.errors import DataIntegrityError, TrainingAbortError, TrainingError
from segmarket.market import Mechanism
from segmarket.scenarios import Scenario

# chi-square 0.999 quantiles
CHI2_999 = {3: 16.266, 15: 37.697}


def test_epsilon_schedule_values():
    s = EpsilonSchedule(1.0, 0.05, 2000)
    assert epsilon_at(s, 0) == 1.0
    assert epsilon_at(s, 2000) == 0.05
    assert epsilon_at(s, 1000) == pytest.approx(math.sqrt(0.05), rel=1e-12)
    assert s.decay_rate == pytest.approx(math.log(20) / 2000)
    eps = [epsilon_at(s, t) for t in range(2001)]
    assert all(a > b for a, b in zip(eps, eps[1:]))
    with pytest.raises(ValueError):
        epsilon_at(s, 2001)
    with pytest.raises(ValueError):
        EpsilonSchedule(0.05, 1.0, 10)


def test_action_space_order():
    space = ActionSpace(("PV", "GAS"), (0.0, 0.1, 0.2))
    assert len(space) == 9
    assert space.actions[:4] == [(0.0, 0.0), (0.0, 0.1), (0.0, 0.2), (0.1, 0.0)]
    assert [space.markups(i) for i in range(9)] == space.actions
    assert len(ActionSpace(tuple("ABCDE"), PAC_MARKUPS)) == 4 ** 5


def test_state_space_grid():
    s = StateSpace.from_capacity(2000.0)
    assert len(s) == 100
    assert s.levels[0] == 500.0 and s.levels[-1] == 1600.0
    assert np.allclose(np.diff(s.levels), 1100 / 99)


def test_greedy_ties_go_to_lowest_index():
    q = QTable.zeros(1, 5)
    q.values[0] = [1.0, 3.0, 3.0, 0.0, 3.0]
    rng = random.Random(0)
    assert {select_action(q, 0, 0.0, rng) for _ in range(50)} == {1}


def _chi2(counts):
    expected = counts.sum() / counts.size
    return float(((counts - expected) ** 2 / expected).sum())


def test_exploration_is_uniform():
    q = QTable.zeros(1, 16)
    q.values[0, 3] = 10.0
    rng = random.Random(123)
    counts = np.bincount([select_action(q, 0, 1.0, rng) for _ in range(100_000)], minlength=16)
    assert _chi2(counts) < CHI2_999[15]


def test_epsilon_greedy_mixture():
    q = QTable.zeros(1, 4)
    q.values[0, 2] = 1.0
    rng = random.Random(5)
    n = 100_000
    counts = np.bincount([select_action(q, 0, 0.3, rng) for _ in range(n)], minlength=4)
    expected = np.array([0.075, 0.075, 0.775, 0.075]) * n
    assert float(((counts - expected) ** 2 / expected).sum()) < CHI2_999[3]


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=200))
def test_update_is_sample_mean(rewards):
    q = QTable.zeros(1, 1)
    for r in rewards:
        update_q(q, 0, 0, r)
    assert q.counts[0, 0] == len(rewards)
    mean = math.fsum(rewards) / len(rewards)
    assert q.values[0, 0] == pytest.approx(mean, rel=1e-9, abs=1e-9 * max(1.0, max(map(abs, rewards))))


def test_non_finite_reward_aborts():
    with pytest.raises(TrainingAbortError):
        update_q(QTable.zeros(1, 2), 0, 1, math.inf)


@pytest.mark.parametrize("n_actions", [2, 4, 9, 16])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_deterministic_bandit_converges(n_actions, seed):
    payoff = np.random.default_rng(seed).uniform(-5, 5, n_actions)
    q = QTable.zeros(1, n_actions)
    run_episodes([q], 0, lambda a: ([payoff[a[0]]], 0.0), 2000, EpsilonSchedule(1, 0.05, 2000), random.Random(seed))
    assert int(np.argmax(q.values[0])) == int(np.argmax(payoff))
    visited = q.counts[0] > 0
    assert np.allclose(q.values[0][visited], payoff[visited])


def test_seed_derivation_is_stable():
    assert splitmix64(0) == 0xE220A8397B1DCDAF
    seeds = {derive_seed(7, i, m) for i in range(100) for m in Mechanism}
    assert len(seeds) == 300
    assert derive_seed(7, 3, "pac") == derive_seed(7, 3, Mechanism.PAC)


def small_config(**kw):
    base = dict(episodes_per_state=60, seed=11, n_states=5)
    base.update(kw)
    return TrainingConfig(**base)


def test_training_is_deterministic_across_workers(pniec):
    cfg = small_config()
    a = train_all_states(pniec, "spac", cfg, workers=1)
    b = train_all_states(pniec, "spac", cfg, workers=2)
    for op in a.tables:
        assert json.dumps(qtable_to_dict(a, op)) == json.dumps(qtable_to_dict(b, op))


def test_state_training_is_independent_of_other_states(pniec):
    cfg = small_config()
    full = train_all_states(pniec, "pac", cfg)
    i = 3
    alone = train_state(pniec, "pac", i, float(full.states[i]), cfg)
    for op, (values, counts) in alone.items():
        assert np.array_equal(values, full.tables[op].values[i])
        assert np.array_equal(counts, full.tables[op].counts[i])


def test_learned_markups_stay_on_grid(pniec):
    cfg = small_config()
    for mech, grid in ((Mechanism.PAB, PAB_MARKUPS), (Mechanism.SPAC, PAC_MARKUPS)):
        for p in train_all_states(pniec, mech, cfg).policies().values():
            assert set(np.unique(p.markups)) <= set(grid)
            assert p.technologies == pniec.technologies_of(p.operator_id)


def test_training_failures_are_collected():
    class Broken(Scenario):
        def build_offers(self, markups=None):
            raise RuntimeError("boom")

    from segmarket.scenarios import build_pniec_scenario
    broken = Broken("broken", build_pniec_scenario().units)
    with pytest.raises(TrainingError) as err:
        train_all_states(broken, "pac", small_config(n_states=3))
    assert sorted(err.value.failures) == [0, 1, 2]


def test_extract_policy_and_cold_states():
    space = ActionSpace(("PV",), (0.0, 0.5))
    q = QTable.zeros(3, 2)
    q.values[0] = [1.0, 2.0]
    q.counts[0] = [1, 1]
    q.values[1] = [4.0, 4.0]
    q.counts[1] = [2, 2]
    p = extract_policy(q, [10.0, 20.0, 30.0], space, "pab", "A")
    assert p.action_index.tolist() == [1, 0, 0]
    assert p.markups[:, 0].tolist() == [0.5, 0.0, 0.0]
    assert p.cold.tolist() == [False, False, True]


def test_nearest_state_lookup():
    states = np.array([10.0, 20.0, 30.0])
    assert nearest_state(states, 14.9) == 0
    assert nearest_state(states, 15.0) == 0  # tie goes low
    assert nearest_state(states, 15.1) == 1
    assert nearest_state(states, -5.0) == 0
    assert nearest_state(states, 99.0) == 2


def test_nearest_state_policy():
    space = ActionSpace(("PV", "GAS"), (0.0, 0.1))
    q = QTable.zeros(2, 4)
    q.values[1, 3] = 1.0
    p = extract_policy(q, [100.0, 200.0], space)
    assert nearest_state_policy(p, 180) == {"PV": 0.1, "GAS": 0.1}
    assert nearest_state_policy(p, 120) == {"PV": 0.0, "GAS": 0.0}


def test_agents_round_trip(tmp_path, pniec):
    agents = train_all_states(pniec, "pac", small_config(n_states=3))
    save_agents(agents, tmp_path)
    loaded = load_policies(tmp_path, "pac")
    for op, p in agents.policies().items():
        assert np.array_equal(loaded[op].markups, p.markups)
        assert np.array_equal(loaded[op].states, p.states)
    mech, op, states, space, q = qtable_from_dict(qtable_to_dict(agents, "OpA"))
    assert mech is Mechanism.PAC and op == "OpA"
    assert np.array_equal(q.values, agents.tables["OpA"].values)
    with pytest.raises(DataIntegrityError):
        load_policies(tmp_path, "pab")
    bad = qtable_to_dict(agents, "OpA")
    bad["q"] = bad["q"][:-1]
    with pytest.raises(DataIntegrityError):
        qtable_from_dict(bad)
