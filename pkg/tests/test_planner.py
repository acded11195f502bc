import math

import numpy as np
import pytest

from impactlab.baselines import BaselineKind, BaselineSpec
from impactlab.envs import ENV_NAMES, Config, load_named
from impactlab.mdp_core import Trajectory, random_mdp, rng_for, sample_trajectory
from impactlab.measures import MeasureSpec
from impactlab.planner import (
    Behavior,
    ImpactTables,
    PenaltyConfig,
    SweepRow,
    classify_behavior,
    detect_offsetting,
    discounted_point,
    episode_return,
    find_safe_effective_range,
    is_non_dominated,
    mu_sweep,
    penalized_reward,
    policy_cloud,
    policy_hash,
    solve_penalized,
)
from impactlab.solvers import value_iteration


class Ann:
    """Minimal annotation stand-in: goal and side effect given as state sets."""

    def __init__(self, goal=(), side=()):
        self.goal, self.side = set(goal), set(side)

    def goal_predicate(self, s):
        return s in self.goal

    def side_effect_predicate(self, s):
        return s in self.side


def traj(states):
    return Trajectory(tuple(states), tuple(0 for _ in states[1:]), seed=0)


def rr(ann):
    return MeasureSpec.for_env("rr", ann)


def test_penalty_config_validation():
    m = MeasureSpec("rr")
    with pytest.raises(ValueError):
        PenaltyConfig(-1.0, m)
    with pytest.raises(ValueError):
        PenaltyConfig(math.inf, m)


def test_mu_zero_is_the_unpenalized_optimum():
    c = load_named("box_corner")
    cfg = PenaltyConfig(0.0, rr(c.annotations))
    assert np.array_equal(penalized_reward(c.task, cfg, c.mdp), c.task.table)
    _, res = solve_penalized(c.mdp, c.task, cfg)
    oracle = value_iteration(c.mdp, c.task.table, 1e-10).v
    assert np.allclose(res.v, oracle, atol=1e-8)


def test_penalty_is_reward_minus_mu_impact():
    c = load_named("box_corner")
    cfg = PenaltyConfig(1.0, rr(c.annotations))
    tables = ImpactTables(c.mdp, cfg.measure, cfg.baseline)
    shaped = penalized_reward(c.task, cfg, c.mdp, tables=tables)
    assert np.allclose(shaped, c.task.table - tables.at(0))
    # the corner push is penalised more than any other first move
    drop = c.task.table[0] - shaped[0]
    assert np.argmax(drop) == c.annotations.action("down")


@pytest.mark.parametrize("env", ENV_NAMES)
def test_huge_mu_gives_the_noop_policy(env):
    c = load_named(env)
    cfg = PenaltyConfig(1e6, rr(c.annotations))
    policy, _ = solve_penalized(c.mdp, c.task, cfg)
    assert np.all(policy == 0)


def test_initial_inaction_policy_is_time_indexed():
    c = load_named("box_corner")
    cfg = PenaltyConfig(1.0, rr(c.annotations), BaselineSpec(BaselineKind.INITIAL_INACTION))
    policy, _ = solve_penalized(c.mdp, c.task, cfg, horizon=7)
    assert policy.shape == (7, c.mdp.n_states)


def test_two_point_grid_box_corner():
    c = load_named("box_corner")
    ann = c.annotations
    rows = mu_sweep(c.mdp, c.task, rr(ann), BaselineSpec(), [0.0, 1e6], annotations=ann)
    assert rows[0].behavior is Behavior.HARMFUL_EFFECTIVE
    assert rows[1].behavior is Behavior.SAFE_INEFFECTIVE
    assert rows[1].task_return == 0.0 and rows[1].total_impact == 0.0
    assert set(rows[1].trajectory.actions) == {0}


def test_box_corner_has_a_safe_effective_range():
    c = load_named("box_corner")
    ann = c.annotations
    grid = np.logspace(-3, 3, 20)
    rows = mu_sweep(c.mdp, c.task, rr(ann), BaselineSpec(), grid, annotations=ann)
    ranges = find_safe_effective_range(rows)
    assert len(ranges) == 1
    lo, hi = ranges[0]
    assert 1.0 < lo <= hi < 200.0
    # below the range the agent corners the box, above it does nothing
    assert rows[0].behavior is Behavior.HARMFUL_EFFECTIVE
    assert rows[-1].behavior is Behavior.SAFE_INEFFECTIVE


def test_vase_mid_mu_rescues_without_breaking():
    c = load_named("vase_belt")
    ann = c.annotations
    rows = mu_sweep(c.mdp, c.task, rr(ann), BaselineSpec(), [1.0], annotations=ann)
    assert rows[0].behavior is Behavior.SAFE_EFFECTIVE


def test_offsetting_after_rescue_only_with_initial_inaction():
    c = load_named("vase_belt")
    ann = c.annotations
    start = ann.state_of(Config((1, 3), 0, False, ((3, 3, False),), (True,)))
    fd = MeasureSpec.for_env("fd", ann)
    flags = {}
    for kind in (BaselineKind.INITIAL_INACTION, BaselineKind.STEPWISE_INACTION):
        rows = mu_sweep(c.mdp, c.task, fd, BaselineSpec(kind), [1.0], annotations=ann,
                        start_state=start, start_time=2, horizon=ann.horizon - 2)
        flags[kind] = detect_offsetting(rows[0].trajectory, ann)
    assert flags[BaselineKind.INITIAL_INACTION]
    assert not flags[BaselineKind.STEPWISE_INACTION]


def test_classify_examples():
    ann = Ann(goal={2}, side={3})
    assert classify_behavior(traj([0, 1, 2]), ann, 1.0) is Behavior.SAFE_EFFECTIVE
    assert classify_behavior(traj([0, 3, 2]), ann, 1.0) is Behavior.HARMFUL_EFFECTIVE
    assert classify_behavior(traj([0, 0, 0]), ann, 0.0) is Behavior.SAFE_INEFFECTIVE
    assert classify_behavior(traj([0, 3, 3]), ann, 0.0) is Behavior.HARMFUL_INEFFECTIVE
    assert classify_behavior(traj([0, 1, 2]), ann, 0.5, task_threshold=1.0) is Behavior.SAFE_INEFFECTIVE
    assert Behavior.SAFE_EFFECTIVE.safe and Behavior.SAFE_EFFECTIVE.effective
    assert not Behavior.HARMFUL_INEFFECTIVE.safe and not Behavior.HARMFUL_INEFFECTIVE.effective


def test_detect_offsetting_examples():
    ann = Ann(goal={2}, side={3})
    assert detect_offsetting(traj([0, 2, 3]), ann)
    assert not detect_offsetting(traj([0, 3, 2, 3]), ann)  # harm came first
    assert not detect_offsetting(traj([0, 2, 2]), ann)
    assert not detect_offsetting(traj([0, 3, 3]), ann)  # goal never reached


def row(mu, behavior):
    return SweepRow(mu, 0.0, 0.0, 0.0, behavior, "")


def test_find_safe_effective_range_examples():
    se, he, si = Behavior.SAFE_EFFECTIVE, Behavior.HARMFUL_EFFECTIVE, Behavior.SAFE_INEFFECTIVE
    assert find_safe_effective_range([row(0, he), row(1, se), row(2, se), row(3, si)]) == [(1, 2)]
    assert find_safe_effective_range([row(0, se), row(1, he), row(2, se)]) == [(0, 0), (2, 2)]
    assert find_safe_effective_range([row(0, he), row(1, si)]) == []
    assert find_safe_effective_range([]) == []


def test_sweep_grid_validation():
    c = load_named("box_corner")
    ann = c.annotations
    for grid in ([], [2.0, 1.0], [-1.0], [math.nan]):
        with pytest.raises(ValueError):
            mu_sweep(c.mdp, c.task, rr(ann), BaselineSpec(), grid, annotations=ann)


def test_failing_mu_becomes_an_error_row():
    c = load_named("box_corner")
    ann = c.annotations
    dead_aux = MeasureSpec("aup", aux_rewards=np.zeros((1, c.mdp.n_states, c.mdp.n_actions)))
    rows = mu_sweep(c.mdp, c.task, dead_aux, BaselineSpec(), [1.0, 2.0], annotations=ann)
    assert [r.behavior for r in rows] == [Behavior.ERROR, Behavior.ERROR]
    assert "auxiliary Q values are zero" in rows[0].error
    assert math.isnan(rows[0].task_return)


def test_sweep_is_deterministic_and_thread_independent():
    c = load_named("sushi_belt")
    ann = c.annotations
    grid = [0.0, 0.5, 5.0, 50.0]
    m = rr(ann)
    b = BaselineSpec(BaselineKind.INITIAL_STATE)
    a = mu_sweep(c.mdp, c.task, m, b, grid, annotations=ann)
    again = mu_sweep(c.mdp, c.task, m, b, grid, annotations=ann)
    threaded = mu_sweep(c.mdp, c.task, m, b, grid, annotations=ann, workers=3)
    assert a == again == threaded
    assert [r.mu for r in a] == grid


def test_sushi_initial_state_baseline_interferes():
    c = load_named("sushi_belt")
    ann = c.annotations
    rows = mu_sweep(c.mdp, c.task, rr(ann), BaselineSpec(BaselineKind.INITIAL_STATE),
                    [0.0, 10.0, 100.0], annotations=ann)
    assert rows[0].behavior is Behavior.SAFE_EFFECTIVE
    assert all(not r.behavior.safe for r in rows[1:])


def test_policy_hash_depends_on_shape_and_content():
    p = np.array([0, 1, 2])
    assert policy_hash(p) == policy_hash(p.copy())
    assert policy_hash(p) != policy_hash(np.array([0, 1, 1]))
    assert policy_hash(p) != policy_hash(p.reshape(1, 3))
    assert len(policy_hash(p)) == 16


def test_policy_cloud_contains_the_scalarized_optimum():
    rng = rng_for(11)
    mdp = random_mdp(rng, 4, 3, 0.9)
    reward = rng.random(size=(4, 3))
    impact = rng.random(size=(4, 3))
    impact[:, 0] = 0.0
    cloud = policy_cloud(mdp, reward, impact)
    assert len(cloud.policies) == 3**4
    for mu in (0.1, 1.0, 10.0):
        res = value_iteration(mdp, reward - mu * impact, 1e-12)
        policy = np.argmax(res.q, axis=1)
        point = discounted_point(mdp, reward, impact, policy)
        assert is_non_dominated(point, cloud)
    assert all(is_non_dominated(cloud.point(i), cloud) for i in cloud.frontier)
    # the task-worst policy is never on the frontier unless it also has the least impact
    worst = int(np.argmin(cloud.values))
    if worst in cloud.frontier:
        assert cloud.impacts[worst] <= cloud.impacts.min() + 1e-9


def test_box_corner_quadrants_from_real_trajectories():
    c = load_named("box_corner")
    ann = c.annotations
    idle = sample_trajectory(c.mdp, np.zeros(c.mdp.n_states, dtype=int), 0, ann.horizon, seed=0)
    assert classify_behavior(idle, ann, episode_return(idle, c.task.table)) is Behavior.SAFE_INEFFECTIVE
    rows = mu_sweep(c.mdp, c.task, rr(ann), BaselineSpec(), [0.0, 10.0], annotations=ann)
    corner, sideways = rows[0].trajectory, rows[1].trajectory
    assert rows[0].behavior is Behavior.HARMFUL_EFFECTIVE
    assert any(ann.side_effect[s] for s in corner.states)
    assert rows[1].behavior is Behavior.SAFE_EFFECTIVE
    assert len(corner.states) == len(sideways.states)
    # the harmful route reaches the goal sooner
    first_goal = [next(i for i, s in enumerate(t.states) if ann.goal[s]) for t in (corner, sideways)]
    assert first_goal[0] < first_goal[1]
