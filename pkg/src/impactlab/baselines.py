"""Comparison worlds for impact: initial state, initial inaction, stepwise inaction.

Note that ``InitialInaction`` ignores everything the agent did after ``s0``.
That is what makes it an offsetting trap: undoing an earlier change moves the
world back toward the baseline and is rewarded, however harmful the undoing.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .mdp_core import (
    Mdp,
    StateDist,
    inaction_pushforward,
    point_mass,
    policy_action,
    propagate,
)


class BaselineKind(enum.Enum):
    INITIAL_STATE = "initial-state"
    INITIAL_INACTION = "initial-inaction"
    STEPWISE_INACTION = "stepwise"

    @classmethod
    def parse(cls, text: str) -> BaselineKind:
        key = text.strip().lower().replace("_", "").replace("-", "")
        table = {
            "initialstate": cls.INITIAL_STATE,
            "initialinaction": cls.INITIAL_INACTION,
            "stepwise": cls.STEPWISE_INACTION,
            "stepwiseinaction": cls.STEPWISE_INACTION,
            "futureinaction": cls.STEPWISE_INACTION,
        }
        if key not in table:
            raise ValueError(f"unknown baseline kind {text!r}; choose from {[k.value for k in cls]}")
        return table[key]


@dataclass(frozen=True)
class BaselineSpec:
    kind: BaselineKind = BaselineKind.STEPWISE_INACTION
    rollout_horizon: int = 1

    def __post_init__(self):
        if self.kind is BaselineKind.STEPWISE_INACTION and self.rollout_horizon < 1:
            raise ValueError("stepwise inaction needs a rollout horizon of at least 1")

    @property
    def history_required(self) -> bool:
        """Whether the baseline depends on the episode start rather than only the current state."""
        return self.kind is not BaselineKind.STEPWISE_INACTION

    @property
    def time_dependent(self) -> bool:
        return self.kind is BaselineKind.INITIAL_INACTION

    def describe(self) -> str:
        if self.kind is BaselineKind.STEPWISE_INACTION:
            return f"{self.kind.value}(tau={self.rollout_horizon})"
        return self.kind.value


def baseline_dist(spec: BaselineSpec, mdp: Mdp, s0: int, t: int, current: int) -> StateDist:
    """Distribution of the baseline state at time ``t``.

    For stepwise inaction this is the branch point ``current`` itself; both arms
    are rolled forward from there by :func:`rollout_pair`.
    """
    if t < 0:
        raise ValueError("time must be non-negative")
    if spec.kind is BaselineKind.INITIAL_STATE:
        return point_mass(mdp.n_states, s0)
    if spec.kind is BaselineKind.INITIAL_INACTION:
        return inaction_pushforward(mdp, point_mass(mdp.n_states, s0), t)
    return point_mass(mdp.n_states, current)


def rollout_pair(mdp: Mdp, s_t: int, a_t: int, tau: int, policy=None) -> tuple[StateDist, StateDist]:
    """Advance an acted arm and an inaction arm ``tau`` steps from ``s_t``.

    acted = T_noop^(tau-1)(T(s_t, a_t)), baseline = T_noop^tau(s_t).  With
    ``policy`` the acted arm follows it (state -> action) for the remaining
    ``tau - 1`` steps instead of idling.
    """
    if tau < 1:
        raise ValueError("rollout horizon must be at least 1")
    start = point_mass(mdp.n_states, s_t)
    acted = propagate(mdp, start, a_t)
    if policy is None:
        acted = inaction_pushforward(mdp, acted, tau - 1)
    else:
        for _ in range(tau - 1):
            acted = _policy_step(mdp, acted, policy)
    baseline = inaction_pushforward(mdp, start, tau)
    return acted, baseline


def _policy_step(mdp: Mdp, dist: StateDist, policy) -> StateDist:
    out = np.zeros(mdp.n_states)
    for s in np.flatnonzero(dist):
        out += dist[s] * mdp.transition[s, policy_action(policy, int(s))]
    return out
