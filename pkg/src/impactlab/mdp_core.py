"""Finite MDP representation, exact distribution propagation and sampling.

Everything downstream computes on :class:`Mdp`.  Transitions are a dense
``(n_states, n_actions, n_states)`` array; state distributions are plain
1-d float arrays (see :func:`as_dist`).
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import sparse

PROB_TOL = 1e-9

# A state distribution is a float vector over states summing to one.
StateDist = np.ndarray


@dataclass(frozen=True, eq=False)
class Mdp:
    """A finite MDP/R: states, actions, transition table, discount and no-op.

    Rewards are deliberately not part of the model; they are supplied per
    analysis as ``(n_states, n_actions)`` tables.
    """

    transition: np.ndarray
    gamma: float
    noop: int = 0

    def __post_init__(self):
        t = np.array(self.transition, dtype=float)  # private copy; the caller's array stays writable
        if t.ndim != 3 or t.shape[0] != t.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {t.shape}")
        t.setflags(write=False)
        object.__setattr__(self, "transition", t)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "noop", int(self.noop))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @cached_property
    def flat(self) -> sparse.csr_matrix:
        """Sparse view of the transition table with rows indexed ``s * A + a``."""
        return sparse.csr_matrix(self.transition.reshape(-1, self.n_states))

    @cached_property
    def noop_matrix(self) -> sparse.csr_matrix:
        return sparse.csr_matrix(self.transition[:, self.noop, :])

    @cached_property
    def is_deterministic(self) -> bool:
        return bool(np.all(np.isclose(self.transition.max(axis=2), 1.0, atol=PROB_TOL)))

    def with_gamma(self, gamma: float) -> Mdp:
        return Mdp(self.transition, gamma, self.noop)


@dataclass(frozen=True)
class Trajectory:
    states: tuple[int, ...]
    actions: tuple[int, ...]
    seed: int
    start_time: int = 0

    def __post_init__(self):
        if len(self.actions) != len(self.states) - 1:
            raise ValueError("a trajectory needs exactly one more state than actions")

    def __len__(self) -> int:
        return len(self.actions)


def validate_mdp(mdp: Mdp) -> list[str]:
    """Return one message per violated invariant; an empty list means valid."""
    problems = []
    t = mdp.transition
    if not 0.0 < mdp.gamma < 1.0:
        problems.append(f"gamma out of range: {mdp.gamma} not in (0, 1)")
    if not 0 <= mdp.noop < mdp.n_actions:
        problems.append(f"noop index {mdp.noop} not below n_actions={mdp.n_actions}")
    if not np.all(np.isfinite(t)):
        problems.append("transition table has non-finite entries")
        return problems
    for s, a in zip(*np.nonzero((t < 0).any(axis=2))):
        problems.append(f"row (state={s}, action={a}) has negative entries")
    sums = t.sum(axis=2)
    for s, a in zip(*np.nonzero(np.abs(sums - 1.0) > PROB_TOL)):
        problems.append(f"row (state={s}, action={a}) sums to {sums[s, a]:.12g}, not 1")
    return problems


def as_dist(probs, n_states: int | None = None) -> StateDist:
    """Coerce to a float distribution vector and check it sums to one."""
    d = np.asarray(probs, dtype=float)
    if d.ndim != 1:
        raise ValueError("a state distribution must be one-dimensional")
    if n_states is not None and d.shape[0] != n_states:
        raise ValueError(f"distribution has length {d.shape[0]}, expected {n_states}")
    if np.any(d < -PROB_TOL) or abs(d.sum() - 1.0) > PROB_TOL:
        raise ValueError("not a probability vector")
    return d


def point_mass(n_states: int, s: int) -> StateDist:
    d = np.zeros(n_states)
    d[s] = 1.0
    return d


def support(dist: StateDist) -> np.ndarray:
    return np.flatnonzero(dist > 0.0)


def propagate(mdp: Mdp, dist: StateDist, action: int) -> StateDist:
    """One application of the transition operator for a fixed action."""
    if not 0 <= action < mdp.n_actions:
        raise IndexError(f"action {action} out of range for {mdp.n_actions} actions")
    dist = as_dist(dist, mdp.n_states)
    return dist @ mdp.transition[:, action, :]


def inaction_pushforward(mdp: Mdp, dist: StateDist, k: int) -> StateDist:
    """Apply the no-op transition ``k`` times."""
    if k < 0:
        raise ValueError("step count must be non-negative")
    out = as_dist(dist, mdp.n_states)
    m = mdp.noop_matrix.T.tocsr()
    for _ in range(k):
        out = m @ out
    return out


def policy_action(policy, state: int, t: int = 0) -> int:
    """Look up an action in a stationary or time-indexed policy.

    Accepted forms: a 1-d array (stationary), a 2-d array whose row ``t`` is the
    policy at time ``t`` (clamped to the last row), a mapping, or a callable.
    """
    if isinstance(policy, np.ndarray):
        if policy.ndim == 2:
            return int(policy[min(t, policy.shape[0] - 1), state])
        return int(policy[state])
    if isinstance(policy, Mapping):
        return int(policy[state])
    if callable(policy):
        return int(policy(state))
    return int(policy[state])


def rng_for(seed: int) -> np.random.Generator:
    """Counter-based generator; the same seed replays bit-exactly."""
    return np.random.Generator(np.random.Philox(int(seed)))


def sample_trajectory(
    mdp: Mdp,
    policy,
    s0: int,
    horizon: int,
    seed: int,
    start_time: int = 0,
) -> Trajectory:
    rng = rng_for(seed)
    states = [int(s0)]
    actions = []
    s = int(s0)
    for k in range(horizon):
        a = policy_action(policy, s, start_time + k)
        row = mdp.transition[s, a]
        nz = np.flatnonzero(row)
        if len(nz) == 1:
            s = int(nz[0])
        else:
            # inverse-CDF on the support keeps draws stable under reordering of zeros
            u = rng.random()
            cdf = np.cumsum(row[nz])
            s = int(nz[min(np.searchsorted(cdf, u * cdf[-1], side="right"), len(nz) - 1)])
        actions.append(a)
        states.append(s)
    return Trajectory(tuple(states), tuple(actions), int(seed), start_time)


def random_mdp(
    rng: np.random.Generator,
    n_states: int,
    n_actions: int,
    gamma: float = 0.9,
    deterministic: bool = False,
    branching: int | None = None,
) -> Mdp:
    """Random MDP for property tests; action 0 is the no-op.

    ``branching`` caps how many successors each row has (sparser rows make
    reachability structure more interesting than fully-connected Dirichlet rows).
    """
    t = np.zeros((n_states, n_actions, n_states))
    for s in range(n_states):
        for a in range(n_actions):
            if deterministic:
                t[s, a, rng.integers(n_states)] = 1.0
                continue
            k = branching or n_states
            succ = rng.choice(n_states, size=min(k, n_states), replace=False)
            t[s, a, succ] = rng.dirichlet(np.ones(len(succ)))
    return Mdp(t, gamma, 0)


def transition_support_edges(mdp: Mdp) -> list[list[int]]:
    """Adjacency lists of the support graph (an edge if any action can move there)."""
    reach = mdp.transition.max(axis=1) > 0.0
    return [list(np.flatnonzero(reach[s])) for s in range(mdp.n_states)]
