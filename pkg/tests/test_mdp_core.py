import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from impactlab.mdp_core import (
    Mdp,
    Trajectory,
    as_dist,
    inaction_pushforward,
    point_mass,
    policy_action,
    propagate,
    random_mdp,
    rng_for,
    sample_trajectory,
    support,
    transition_support_edges,
    validate_mdp,
)


def chain(n=3, gamma=0.9):
    """Deterministic chain: action 0 stays, action 1 moves right (last state absorbing)."""
    t = np.zeros((n, 2, n))
    for s in range(n):
        t[s, 0, s] = 1.0
        t[s, 1, min(s + 1, n - 1)] = 1.0
    return Mdp(t, gamma)


def test_valid_mdp_has_no_problems():
    assert validate_mdp(chain()) == []


def test_row_sum_violation_names_state_and_action():
    t = np.array(chain().transition)
    t[1, 1, 2] = 0.9
    problems = validate_mdp(Mdp(t, 0.9))
    assert len(problems) == 1
    assert "state=1" in problems[0] and "action=1" in problems[0]


def test_gamma_one_is_rejected():
    problems = validate_mdp(chain(gamma=1.0))
    assert any("gamma" in p for p in problems)


def test_negative_and_nonfinite_entries_reported():
    t = np.array(chain().transition)
    t[0, 0, 0] = 1.5
    t[0, 0, 1] = -0.5
    assert any("negative" in p for p in validate_mdp(Mdp(t, 0.5)))
    t[0, 0, 1] = np.nan
    assert any("non-finite" in p for p in validate_mdp(Mdp(t, 0.5)))


def test_noop_index_out_of_range():
    assert any("noop" in p for p in validate_mdp(Mdp(chain().transition, 0.9, noop=5)))


def test_transition_is_read_only():
    mdp = chain()
    with pytest.raises(ValueError):
        mdp.transition[0, 0, 0] = 0.0


def test_bad_shape_rejected():
    with pytest.raises(ValueError):
        Mdp(np.zeros((2, 2, 3)), 0.9)


def test_propagate_and_pushforward():
    mdp = chain(4)
    d = propagate(mdp, point_mass(4, 0), 1)
    assert np.array_equal(d, point_mass(4, 1))
    assert np.array_equal(inaction_pushforward(mdp, d, 5), d)
    with pytest.raises(IndexError):
        propagate(mdp, d, 2)
    with pytest.raises(ValueError):
        inaction_pushforward(mdp, d, -1)


def test_as_dist_checks_normalisation():
    with pytest.raises(ValueError):
        as_dist([0.5, 0.2])
    with pytest.raises(ValueError):
        as_dist([[1.0]])
    assert list(support(as_dist([0.0, 1.0, 0.0]))) == [1]


def test_policy_action_forms():
    arr = np.array([1, 0, 1])
    assert policy_action(arr, 0) == 1
    timed = np.array([[0, 0, 0], [1, 1, 1]])
    assert policy_action(timed, 2, t=0) == 0
    assert policy_action(timed, 2, t=7) == 1  # clamped to the last row
    assert policy_action({2: 1}, 2) == 1
    assert policy_action(lambda s: s % 2, 3) == 1


def test_trajectory_length_invariant():
    with pytest.raises(ValueError):
        Trajectory((0, 1), (0, 0), seed=0)


def test_sampling_replays_with_same_seed():
    mdp = random_mdp(rng_for(3), 6, 3)
    pol = np.array([0, 1, 2, 0, 1, 2])
    a = sample_trajectory(mdp, pol, 0, 30, seed=42)
    b = sample_trajectory(mdp, pol, 0, 30, seed=42)
    c = sample_trajectory(mdp, pol, 0, 30, seed=43)
    assert a == b
    assert a.states != c.states


def test_sampling_frequencies_match_transition():
    t = np.zeros((2, 1, 2))
    t[:, 0] = [0.25, 0.75]
    mdp = Mdp(t, 0.9)
    traj = sample_trajectory(mdp, np.zeros(2, dtype=int), 0, 20000, seed=1)
    frac = np.mean(np.array(traj.states[1:]) == 1)
    assert abs(frac - 0.75) < 0.02


def test_support_edges():
    assert transition_support_edges(chain(3)) == [[0, 1], [1, 2], [2]]


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 7), st.integers(1, 4), st.booleans(), st.integers(0, 2**31 - 1))
def test_random_mdp_is_valid(n, k, det, seed):
    mdp = random_mdp(rng_for(seed), n, k, deterministic=det)
    assert validate_mdp(mdp) == []
    assert mdp.is_deterministic or not det
