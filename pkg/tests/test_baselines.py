import numpy as np
import pytest

from impactlab.baselines import BaselineKind, BaselineSpec, baseline_dist, rollout_pair
from impactlab.envs import Config, load_named
from impactlab.mdp_core import Mdp, point_mass, random_mdp, rng_for


def drifting(n=4):
    """No-op drifts one state right; action 1 jumps to the last state."""
    t = np.zeros((n, 2, n))
    for s in range(n):
        t[s, 0, min(s + 1, n - 1)] = 1.0
        t[s, 1, n - 1] = 1.0
    return Mdp(t, 0.9)


@pytest.mark.parametrize("text,kind", [
    ("initial-state", BaselineKind.INITIAL_STATE),
    ("Initial_Inaction", BaselineKind.INITIAL_INACTION),
    ("stepwise", BaselineKind.STEPWISE_INACTION),
    ("stepwise-inaction", BaselineKind.STEPWISE_INACTION),
    ("future-inaction", BaselineKind.STEPWISE_INACTION),
])
def test_parse(text, kind):
    assert BaselineKind.parse(text) is kind


def test_parse_unknown():
    with pytest.raises(ValueError):
        BaselineKind.parse("yesterday")


def test_spec_validation_and_flags():
    with pytest.raises(ValueError):
        BaselineSpec(BaselineKind.STEPWISE_INACTION, 0)
    assert not BaselineSpec().history_required
    assert BaselineSpec(BaselineKind.INITIAL_STATE).history_required
    assert BaselineSpec(BaselineKind.INITIAL_INACTION).time_dependent
    assert BaselineSpec(BaselineKind.STEPWISE_INACTION, 3).describe() == "stepwise(tau=3)"


def test_initial_state_ignores_time():
    mdp = drifting()
    spec = BaselineSpec(BaselineKind.INITIAL_STATE)
    for t in range(5):
        assert np.array_equal(baseline_dist(spec, mdp, 0, t, 2), point_mass(4, 0))


def test_initial_inaction_follows_noop_from_start():
    mdp = drifting()
    spec = BaselineSpec(BaselineKind.INITIAL_INACTION)
    assert np.array_equal(baseline_dist(spec, mdp, 0, 2, current=3), point_mass(4, 2))
    assert np.array_equal(baseline_dist(spec, mdp, 0, 9, current=0), point_mass(4, 3))
    with pytest.raises(ValueError):
        baseline_dist(spec, mdp, 0, -1, 0)


def test_stepwise_branches_at_current_state():
    mdp = drifting()
    assert np.array_equal(baseline_dist(BaselineSpec(), mdp, 0, 7, current=1), point_mass(4, 1))


def test_rollout_pair_definition():
    mdp = drifting(6)
    acted, base = rollout_pair(mdp, 0, 1, 3)
    assert np.array_equal(acted, point_mass(6, 5))
    assert np.array_equal(base, point_mass(6, 3))
    with pytest.raises(ValueError):
        rollout_pair(mdp, 0, 1, 0)


def test_rollout_pair_noop_arms_identical():
    mdp = random_mdp(rng_for(1), 5, 3)
    for tau in (1, 2, 5):
        acted, base = rollout_pair(mdp, 2, mdp.noop, tau)
        assert np.array_equal(acted, base)


def test_rollout_pair_with_policy():
    mdp = drifting(6)
    acted, _ = rollout_pair(mdp, 0, 0, 3, policy=np.zeros(6, dtype=int))
    assert np.array_equal(acted, point_mass(6, 3))


def test_future_inaction_crashes_the_car():
    c = load_named("car_curve")
    ann = c.annotations
    bend = ann.state_of(Config((1, 1), 1, False, (), ()))
    acted, base = rollout_pair(c.mdp, bend, ann.action("right"), 3)
    assert base @ ann.side_effect == 1.0
    assert acted @ ann.side_effect == 0.0
