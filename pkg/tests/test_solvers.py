import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from impactlab.mdp_core import Mdp, random_mdp, rng_for
from impactlab.solvers import (
    EnumerationRefused,
    count_policies,
    discount_power,
    enumerate_policies,
    evaluate_policies,
    evaluate_policy,
    finite_horizon,
    greedy_policy,
    min_steps,
    pareto_frontier,
    policy_block,
    reachability,
    reachability_matrix,
    reachability_values,
    value_iteration,
)


def two_state(gamma=0.9):
    # state 0: action 0 stays, action 1 jumps to the trap 1; state 1 absorbing
    t = np.zeros((2, 2, 2))
    t[0, 0, 0] = 1.0
    t[0, 1, 1] = 1.0
    t[1, :, 1] = 1.0
    return Mdp(t, gamma)


def test_two_state_closed_form():
    mdp = two_state(0.9)
    reward = np.array([[1.0, 1.0], [0.0, 0.0]])
    res = value_iteration(mdp, reward, 1e-12)
    assert res.v[0] == pytest.approx(1 / (1 - 0.9), abs=1e-9)
    assert res.q[0, 1] == pytest.approx(1.0, abs=1e-9)
    assert res.v[1] == 0.0
    assert res.residuals[-1] <= 1e-12


def test_value_iteration_rejects_bad_reward():
    mdp = two_state()
    with pytest.raises(ValueError):
        value_iteration(mdp, np.zeros((3, 2)))
    with pytest.raises(ValueError):
        value_iteration(mdp, np.full((2, 2), np.inf))
    with pytest.raises(ValueError):
        value_iteration(mdp, np.zeros((2, 2)), tol=0.0)


def test_greedy_prefers_lowest_index_on_ties():
    q = np.array([[1.0, 1.0, 0.5], [0.0, 2.0, 2.0]])
    assert list(greedy_policy(q)) == [0, 1]
    assert list(greedy_policy(np.array([[1.0, 1.0 + 1e-12]]), atol=1e-9)) == [0]


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_value_iteration_matches_enumeration(n, k, seed):
    rng = rng_for(seed)
    mdp = random_mdp(rng, n, k, 0.9)
    reward = rng.normal(size=(n, k))
    oracle = max(evaluate_policy(mdp, reward, p)[0] for p in enumerate_policies(mdp))
    assert value_iteration(mdp, reward, 1e-12).v[0] == pytest.approx(oracle, abs=1e-6)


def test_batched_evaluation_agrees():
    rng = rng_for(5)
    mdp = random_mdp(rng, 4, 2)
    reward = rng.normal(size=(4, 2))
    block = policy_block(mdp)
    batched = evaluate_policies(mdp, reward, block)
    for i, p in enumerate(enumerate_policies(mdp)):
        assert np.array_equal(block[i], p)
        assert np.allclose(batched[i], evaluate_policy(mdp, reward, p))


def test_enumeration_cap():
    mdp = random_mdp(rng_for(0), 6, 3)
    assert count_policies(mdp) == 3**6
    with pytest.raises(EnumerationRefused):
        next(enumerate_policies(mdp, cap=100))
    with pytest.raises(EnumerationRefused):
        policy_block(mdp, cap=100)


def test_finite_horizon_approaches_infinite_horizon():
    rng = rng_for(9)
    mdp = random_mdp(rng, 5, 3, 0.5)
    reward = rng.random(size=(5, 3))
    v, q = finite_horizon(mdp, [reward] * 80)
    assert v.shape == (81, 5) and q.shape == (80, 5, 3)
    assert np.allclose(v[0], value_iteration(mdp, reward, 1e-12).v, atol=1e-9)
    assert np.all(v[-1] == 0)


def chain(n, gamma=0.9):
    t = np.zeros((n, 2, n))
    for s in range(n):
        t[s, 0, s] = 1.0
        t[s, 1, min(s + 1, n - 1)] = 1.0
    return Mdp(t, gamma)


def test_reachability_k_step_path():
    mdp = chain(5, 0.8)
    for k in range(5):
        assert reachability(mdp, 0, k, 1e-13) == pytest.approx(0.8**k, abs=1e-10)
    assert reachability(mdp, 4, 0) == 0.0
    assert reachability(mdp, 2, 2) == 1.0


def test_reachability_routes_agree():
    for seed in range(10):
        mdp = random_mdp(rng_for(seed), 6, 3, 0.9, branching=2)
        mat = reachability_matrix(mdp, 1e-13)
        cols = np.stack([reachability_values(mdp, y, 1e-13) for y in range(6)], axis=1)
        assert np.allclose(mat, cols, atol=1e-9)
        assert np.all(np.diag(mat) == 1.0)
        assert mat.min() >= 0.0 and mat.max() <= 1.0


def test_reachability_first_hit_stochastic():
    # from 0: a coin flip between reaching 1 and an absorbing sink 2
    t = np.zeros((3, 1, 3))
    t[0, 0, [1, 2]] = 0.5
    t[1, 0, 1] = 1.0
    t[2, 0, 2] = 1.0
    mdp = Mdp(t, 0.9)
    assert reachability(mdp, 0, 1, 1e-13) == pytest.approx(0.45, abs=1e-10)


def test_min_steps_and_discount_power():
    steps = min_steps(chain(4), 1)
    assert list(steps[1:]) == [0, 1, 2]
    assert math.isinf(steps[0])
    assert list(discount_power(0.5, steps)) == [0.0, 1.0, 0.5, 0.25]


def test_pareto_frontier_examples():
    pts = [(1.0, 1.0), (2.0, 2.0), (1.0, 2.0), (0.5, 0.5), (2.0, 2.0)]
    assert pareto_frontier(pts) == [1, 4, 0, 3]
    assert pareto_frontier([(0.0, 0.0)]) == [0]
    with pytest.raises(ValueError):
        pareto_frontier([(np.nan, 0.0)])
    # tolerance treats near-equal points as ties
    assert pareto_frontier([(1.0, 1.0), (1.0 + 1e-12, 1.0)], tol=1e-9) == [1, 0]
