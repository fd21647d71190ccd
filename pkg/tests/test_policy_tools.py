from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from l2run import nncore as nn
from l2run.agents import (PatternTable, PlateauDetector, SwitchingPolicy, TwoStageSchedule, blend_policies,
                          mine_patterns, pattern_dqn_select, transition_schedule, two_stage_finetune)
from l2run.agents import DDPGConfig, create_ddpg
from l2run.env import RunnerEnv
from l2run.errors import ConfigurationError

# ------------------------------------------------------------------ blending


def test_blend_endpoints_exact():
    a, b = np.array([0.13, 0.77, 0.5]), np.array([0.9, 0.1, 0.0])
    assert blend_policies(a, b, 1.0).tobytes() == a.tobytes()
    assert blend_policies(a, b, 0.0).tobytes() == b.tobytes()


def test_blend_arithmetic():
    assert blend_policies([1.0], [0.0], 0.1)[0] == pytest.approx(0.1)


def test_blend_errors():
    with pytest.raises(ConfigurationError):
        blend_policies([1.0, 0.0], [0.0], 0.5)
    with pytest.raises(ConfigurationError):
        blend_policies([1.0], [0.0], 1.5)


@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4), st.lists(st.floats(-3, 3), min_size=4, max_size=4),
       st.floats(0, 1))
def test_blend_stays_in_box(a, b, alpha):
    out = blend_policies(a, b, alpha)
    assert ((out >= 0) & (out <= 1)).all()


def test_schedule_points():
    assert transition_schedule(0, 150) == 1.0
    assert transition_schedule(75, 150) == 0.5
    assert transition_schedule(150, 150) == 0.0
    with pytest.raises(ConfigurationError):
        transition_schedule(151, 150)


def test_switching_policy_hands_over():
    pol = SwitchingPolicy(lambda o: np.ones(2), lambda o: np.zeros(2), n=4, start=2)
    outs = [pol(None)[0] for _ in range(8)]
    assert outs == [1.0, 1.0, 1.0, 0.75, 0.5, 0.25, 0.0, 0.0]


# ------------------------------------------------------------------ patterns


def test_constant_policy_one_pattern():
    env = RunnerEnv(repeat=5)
    table = mine_patterns(lambda o: np.array([0.9, 0.1, 0.2, 0.8]), env, seeds=[0, 1])
    assert table.patterns == [(1, 0, 0, 1)]
    assert table.counts[0] == table.total
    assert table.rows()[0][2:] == (100.0, 100.0)


def test_alternating_policy_two_patterns():
    state = {"t": 0}

    def alt(_obs):
        state["t"] += 1
        return np.array([1.0, 0, 1.0, 0]) if state["t"] % 2 else np.array([0, 1.0, 0, 1.0])

    table = mine_patterns(alt, RunnerEnv(repeat=5), seeds=[3])
    assert len(table) == 2
    assert abs(table.counts[0] - table.counts[1]) <= 1
    assert table.saturation == 1.0


def test_table_rows_prefix_sum():
    table = PatternTable([(0, 1), (1, 1), (0, 0)], [5, 3, 12])
    rows = table.rows()
    assert [r[0] for r in rows] == ["00", "01", "11"]
    assert np.cumsum([r[2] for r in rows]) == pytest.approx([r[3] for r in rows])
    assert rows[-1][3] == pytest.approx(100.0)


def test_table_invariants():
    with pytest.raises(ConfigurationError):
        PatternTable([(0,), (0,)], [1, 2])
    with pytest.raises(ConfigurationError):
        PatternTable([(0,)], [0])


def test_saturation_diagnostic():
    table = PatternTable.from_actions([[0.02, 0.5], [0.97, 0.99]])
    assert table.saturation == pytest.approx(0.75)


def _l2_critic(obs_dim, act_dim, target):
    """Q(s, a) = -|a - target|_1 (relu construction)."""
    spec = nn.NetworkSpec(obs_dim + act_dim, (nn.dense(2 * act_dim, "relu"), nn.dense(1)))
    W = np.zeros((obs_dim + act_dim, 2 * act_dim))
    W[obs_dim:, :act_dim] = np.eye(act_dim)
    W[obs_dim:, act_dim:] = -np.eye(act_dim)
    return spec, nn.NetworkParams({"body.0.W": W, "body.0.b": np.concatenate([-target, target]),
                                   "body.1.W": -np.ones((2 * act_dim, 1)), "body.1.b": np.zeros(1)})


def test_pattern_select_prefers_critic_optimum():
    table = PatternTable([(0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 0)], [9, 5, 3, 1])
    spec, critic = _l2_critic(2, 3, np.array([1.0, 1.0, 1.0]))
    np.testing.assert_array_equal(pattern_dqn_select(spec, critic, np.zeros(2), table), [1, 1, 1])
    np.testing.assert_array_equal(pattern_dqn_select(spec, critic, np.zeros(2), table, top_m=1), [0, 0, 1])


def test_single_pattern_always_chosen():
    table = PatternTable([(1, 0)], [4])
    agent = create_ddpg(3, 2, DDPGConfig(final_scale=1.0), np.random.default_rng(0))
    for s in np.random.default_rng(1).normal(size=(10, 3)).astype(np.float32):
        np.testing.assert_array_equal(pattern_dqn_select(agent.critic_spec, agent.critic, s, table), [1, 0])


def test_empty_table():
    with pytest.raises(ConfigurationError):
        pattern_dqn_select(None, None, np.zeros(2), PatternTable([], []))


# ----------------------------------------------------------------- fine-tune


def test_forced_plateau_switches_at_first_window():
    det = PlateauDetector(eps=0.01, window=5)
    fired = [det.observe(1.0) for _ in range(5)]
    assert fired == [False] * 4 + [True]


def test_improving_returns_do_not_plateau():
    det = PlateauDetector(eps=0.01, window=3)
    assert not any(det.observe(float(v)) for v in np.linspace(1, 10, 30))


def test_two_stage_switch_latches():
    agent = create_ddpg(3, 2, DDPGConfig(), np.random.default_rng(0))
    sched = TwoStageSchedule(window=2)
    agent.critic_opt.m["x"] = np.ones(1)
    for _ in range(10):
        two_stage_finetune(agent, sched, 1.0)
    assert sched.stage == 2 and sched.switched_at == 2
    for opt in (agent.actor_opt, agent.critic_opt):
        assert opt.kind == "sgd" and opt.learning_rate() == 5e-5
        assert not opt.m
