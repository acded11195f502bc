"""Exact dynamic programming over :class:`~impactlab.mdp_core.Mdp`.

Greedy extraction always breaks ties toward the lowest action index; the
bundled environments put the no-op at index 0, so "do nothing" wins exact ties.
"""

from __future__ import annotations

import itertools
import math
from collections import deque
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field

import numpy as np

from .mdp_core import Mdp

DEFAULT_TOL = 1e-10
ENUMERATION_CAP = 10**7
MAX_ITERATIONS = 1_000_000


class EnumerationRefused(RuntimeError):
    pass


@dataclass(frozen=True)
class ValueResult:
    v: np.ndarray
    q: np.ndarray
    residual: float
    iterations: int
    residuals: tuple[float, ...] = field(default=(), repr=False)

    def greedy(self, atol: float = 0.0) -> np.ndarray:
        return greedy_policy(self.q, atol)


def greedy_policy(q: np.ndarray, atol: float = 0.0) -> np.ndarray:
    """Argmax over actions, lowest index among entries within ``atol`` of the max."""
    best = q.max(axis=1, keepdims=True)
    return np.argmax(q >= best - atol, axis=1)


def _check_reward(mdp: Mdp, reward: np.ndarray) -> np.ndarray:
    r = np.asarray(reward, dtype=float)
    if r.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(f"reward table must have shape {(mdp.n_states, mdp.n_actions)}, got {r.shape}")
    if not np.all(np.isfinite(r)):
        raise ValueError("reward table has non-finite entries")
    return r


def bellman_q(mdp: Mdp, reward: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``reward + gamma * E[v(s')]`` for every (state, action); ``v`` may be 2-d (S, k)."""
    nxt = mdp.flat @ v
    if v.ndim == 1:
        return reward + mdp.gamma * nxt.reshape(mdp.n_states, mdp.n_actions)
    return reward[..., None] + mdp.gamma * nxt.reshape(mdp.n_states, mdp.n_actions, -1)


def value_iteration(mdp: Mdp, reward, tol: float = DEFAULT_TOL) -> ValueResult:
    """Optimal values by value iteration from zero until the sup-norm residual is below ``tol``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    r = _check_reward(mdp, reward)
    v = np.zeros(mdp.n_states)
    residuals = []
    for it in range(1, MAX_ITERATIONS + 1):
        q = bellman_q(mdp, r, v)
        v_new = q.max(axis=1)
        res = float(np.max(np.abs(v_new - v))) if v.size else 0.0
        residuals.append(res)
        v = v_new
        if res <= tol:
            break
    # one last backup so q is consistent with the returned v
    q = bellman_q(mdp, r, v)
    return ValueResult(q.max(axis=1), q, res, it, tuple(residuals))


def evaluate_policy(mdp: Mdp, reward, policy: np.ndarray) -> np.ndarray:
    """Exact discounted value of a deterministic stationary policy (linear solve)."""
    r = _check_reward(mdp, reward)
    idx = np.arange(mdp.n_states)
    p = mdp.transition[idx, policy]
    return np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * p, r[idx, policy])


def evaluate_policies(mdp: Mdp, reward, policies: np.ndarray) -> np.ndarray:
    """Batched :func:`evaluate_policy`; ``policies`` has shape (k, S), result (k, S)."""
    r = _check_reward(mdp, reward)
    idx = np.arange(mdp.n_states)
    p = mdp.transition[idx[None, :], policies]  # (k, S, S)
    rhs = r[idx[None, :], policies]
    lhs = np.eye(mdp.n_states)[None] - mdp.gamma * p
    return np.linalg.solve(lhs, rhs[..., None])[..., 0]


def finite_horizon(
    mdp: Mdp,
    rewards: Sequence[np.ndarray],
) -> tuple[np.ndarray, np.ndarray]:
    """Backward induction for time-indexed rewards ``rewards[t]`` over ``len(rewards)`` steps.

    Returns ``(v, q)`` with shapes (H + 1, S) and (H, S, A); ``v[H]`` is zero.
    """
    horizon = len(rewards)
    v = np.zeros((horizon + 1, mdp.n_states))
    q = np.zeros((horizon, mdp.n_states, mdp.n_actions))
    for t in range(horizon - 1, -1, -1):
        q[t] = bellman_q(mdp, _check_reward(mdp, rewards[t]), v[t + 1])
        v[t] = q[t].max(axis=1)
    return v, q


def reachability_values(mdp: Mdp, y: int, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Optimal ``E[gamma ** N]`` of first hitting ``y`` from every state.

    Built as ordinary value iteration on a modified problem: ``y`` becomes an
    absorbing zero-reward state and every transition into it pays ``gamma``.
    The hitting value is that optimum everywhere except at ``y`` itself (= 1).
    """
    t = np.array(mdp.transition)
    into_y = t[:, :, y].copy()
    t[y] = 0.0
    t[y, :, y] = 1.0
    reward = mdp.gamma * into_y
    reward[y] = 0.0
    res = value_iteration(Mdp(t, mdp.gamma, mdp.noop), reward, tol)
    out = res.v.copy()
    out[y] = 1.0
    return out


def reachability(mdp: Mdp, x: int, y: int, tol: float = DEFAULT_TOL) -> float:
    if x == y:
        return 1.0
    return float(reachability_values(mdp, y, tol)[x])


def reachability_matrix(mdp: Mdp, tol: float = DEFAULT_TOL) -> np.ndarray:
    """``R[x, y]`` for all pairs, solving every target at once.

    Iterates ``V[:, y] <- max_a gamma * E[V(s', y)]`` with the diagonal pinned
    at one; deterministic models converge exactly after diameter-many sweeps.
    """
    n = mdp.n_states
    v = np.eye(n)
    diag = np.arange(n)
    for _ in range(MAX_ITERATIONS):
        nxt = (mdp.flat @ v).reshape(n, mdp.n_actions, n)
        v_new = mdp.gamma * nxt.max(axis=1)
        v_new[diag, diag] = 1.0
        res = np.max(np.abs(v_new - v))
        v = v_new
        if res <= tol:
            break
    return np.clip(v, 0.0, 1.0)


def min_steps(mdp: Mdp, start: int) -> np.ndarray:
    """Breadth-first step counts over the support graph; ``inf`` where unreachable."""
    succ = mdp.transition.max(axis=1) > 0.0
    dist = np.full(mdp.n_states, math.inf)
    dist[start] = 0
    frontier = deque([start])
    while frontier:
        s = frontier.popleft()
        for nxt in np.flatnonzero(succ[s]):
            if dist[nxt] == math.inf:
                dist[nxt] = dist[s] + 1
                frontier.append(nxt)
    return dist


def min_steps_matrix(mdp: Mdp) -> np.ndarray:
    return np.stack([min_steps(mdp, s) for s in range(mdp.n_states)])


def discount_power(gamma: float, steps) -> np.ndarray:
    """``gamma ** steps`` with ``gamma ** inf`` defined as 0."""
    steps = np.asarray(steps, dtype=float)
    out = np.zeros_like(steps)
    finite = np.isfinite(steps)
    out[finite] = gamma ** steps[finite]
    return out


def count_policies(mdp: Mdp) -> int:
    return mdp.n_actions ** mdp.n_states


def enumerate_policies(mdp: Mdp, cap: int = ENUMERATION_CAP) -> Iterator[np.ndarray]:
    """Every deterministic stationary policy once, in lexicographic order."""
    n = count_policies(mdp)
    if n > cap:
        raise EnumerationRefused(f"{mdp.n_actions}^{mdp.n_states} = {n} policies exceeds cap {cap}")
    for combo in itertools.product(range(mdp.n_actions), repeat=mdp.n_states):
        yield np.array(combo, dtype=int)


def policy_block(mdp: Mdp, cap: int = ENUMERATION_CAP) -> np.ndarray:
    """All policies as one (k, S) array, same order as :func:`enumerate_policies`."""
    n = count_policies(mdp)
    if n > cap:
        raise EnumerationRefused(f"{mdp.n_actions}^{mdp.n_states} = {n} policies exceeds cap {cap}")
    grids = np.indices((mdp.n_actions,) * mdp.n_states).reshape(mdp.n_states, -1)
    return grids.T.copy()


def pareto_frontier(points: Sequence[tuple[float, float]], tol: float = 0.0) -> list[int]:
    """Indices of the non-dominated (value, impact) pairs.

    Higher value and lower impact are better.  Output is ordered by value
    descending, then impact ascending, then index.  ``tol`` treats
    differences below it as ties when checking dominance.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    val, imp = pts[:, 0], pts[:, 1]
    keep = []
    for i in range(len(pts)):
        geq = val >= val[i] - tol
        leq = imp <= imp[i] + tol
        strict = (val > val[i] + tol) | (imp < imp[i] - tol)
        if not np.any(geq & leq & strict):
            keep.append(i)
    return sorted(keep, key=lambda i: (-val[i], imp[i], i))
