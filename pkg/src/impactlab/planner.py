"""Regularized planning: maximize task reward minus ``mu`` times the impact penalty.

The penalty enters as per-step reward shaping, ``r'(s, a) = r(s, a) - mu *
impact(s, a)``.  Stationary baselines give a stationary problem solved by value
iteration; the initial-inaction baseline makes the penalty depend on time,
so that case is solved by backward induction over the episode horizon and
yields a time-indexed policy of shape (H, S).
"""

from __future__ import annotations

import enum
import hashlib
import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .baselines import BaselineSpec
from .mdp_core import Mdp, Trajectory, sample_trajectory
from .measures import ImpactEvaluator, MeasureKind, MeasureSpec
from .solvers import (
    DEFAULT_TOL,
    ValueResult,
    evaluate_policies,
    evaluate_policy,
    finite_horizon,
    greedy_policy,
    pareto_frontier,
    policy_block,
    value_iteration,
)

TIE_ATOL = 1e-9


class Behavior(str, enum.Enum):
    SAFE_EFFECTIVE = "safe_effective"
    SAFE_INEFFECTIVE = "safe_ineffective"
    HARMFUL_EFFECTIVE = "harmful_effective"
    HARMFUL_INEFFECTIVE = "harmful_ineffective"
    ERROR = "error"

    @property
    def safe(self) -> bool:
        return self in (Behavior.SAFE_EFFECTIVE, Behavior.SAFE_INEFFECTIVE)

    @property
    def effective(self) -> bool:
        return self in (Behavior.SAFE_EFFECTIVE, Behavior.HARMFUL_EFFECTIVE)


class PlanningError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class PenaltyConfig:
    mu: float
    measure: MeasureSpec
    baseline: BaselineSpec = BaselineSpec()

    def __post_init__(self):
        if not (self.mu >= 0 and math.isfinite(self.mu)):
            raise ValueError(f"mu must be a finite non-negative number, got {self.mu}")


@dataclass(frozen=True)
class SweepRow:
    mu: float
    task_return: float
    total_impact: float
    audit_impact: float
    behavior: Behavior
    policy_hash: str
    error: str = ""
    trajectory: Trajectory | None = field(default=None, compare=False, repr=False)

    def as_csv_fields(self) -> list[str]:
        return [repr(float(self.mu)), f"{self.task_return:.12g}", f"{self.total_impact:.12g}",
                f"{self.audit_impact:.12g}", self.behavior.value, self.policy_hash]


def policy_hash(policy: np.ndarray) -> str:
    arr = np.ascontiguousarray(policy, dtype=np.int64)
    digest = hashlib.sha256(str(arr.shape).encode() + arr.tobytes()).hexdigest()
    return digest[:16]


class ImpactTables:
    """Per-(state, action) impacts for one measure/baseline, computed once and reused across mu."""

    def __init__(self, mdp: Mdp, measure: MeasureSpec, baseline: BaselineSpec, episode_start: int = 0):
        self.evaluator = ImpactEvaluator(mdp, measure, baseline, episode_start)
        self.time_dependent = baseline.time_dependent
        self._tables: dict[int, np.ndarray] = {}

    def at(self, t: int) -> np.ndarray:
        key = t if self.time_dependent else 0
        if key not in self._tables:
            try:
                self._tables[key] = self.evaluator.table(key)
            except Exception as exc:
                raise PlanningError(f"impact evaluation failed: {exc}") from exc
        return self._tables[key]


def penalized_reward(
    task, cfg: PenaltyConfig, mdp: Mdp, t: int = 0, tables: ImpactTables | None = None, episode_start: int = 0
) -> np.ndarray:
    """Shaped reward ``r - mu * impact`` at time ``t`` (the time only matters for history baselines)."""
    r = np.asarray(getattr(task, "table", task), dtype=float)
    if cfg.mu == 0.0:
        return r.copy()
    tables = tables or ImpactTables(mdp, cfg.measure, cfg.baseline, episode_start)
    shaped = r - cfg.mu * tables.at(t)
    if not np.all(np.isfinite(shaped)):
        s, a = np.argwhere(~np.isfinite(shaped))[0]
        raise PlanningError(f"non-finite shaped reward at state {s}, action {a}")
    return shaped


def solve_penalized(
    mdp: Mdp,
    task,
    cfg: PenaltyConfig,
    tol: float = DEFAULT_TOL,
    *,
    horizon: int = 20,
    start_time: int = 0,
    episode_start: int = 0,
    tables: ImpactTables | None = None,
) -> tuple[np.ndarray, ValueResult]:
    """Optimal policy of the shaped problem with no-op-first tie breaking.

    Returns a stationary policy (S,) unless the penalty depends on time, in
    which case the policy is (horizon, S) indexed from ``start_time``.
    """
    tables = tables or ImpactTables(mdp, cfg.measure, cfg.baseline, episode_start)
    if cfg.mu == 0.0 or not tables.time_dependent:
        res = value_iteration(mdp, penalized_reward(task, cfg, mdp, 0, tables), tol)
        return greedy_policy(res.q, TIE_ATOL), res
    rewards = [penalized_reward(task, cfg, mdp, start_time + k, tables) for k in range(horizon)]
    v, q = finite_horizon(mdp, rewards)
    policy = np.stack([greedy_policy(q[k], TIE_ATOL) for k in range(horizon)])
    return policy, ValueResult(v[0], q[0], 0.0, horizon)


def classify_behavior(
    trajectory: Trajectory, annotations, task_return: float, task_threshold: float | None = None
) -> Behavior:
    """Quadrant of an episode: effective iff the return clears the threshold
    (default: strictly positive), harmful iff the side effect holds at any visited state."""
    effective = task_return > 0.0 if task_threshold is None else task_return >= task_threshold
    harmful = any(annotations.side_effect_predicate(s) for s in trajectory.states)
    if harmful:
        return Behavior.HARMFUL_EFFECTIVE if effective else Behavior.HARMFUL_INEFFECTIVE
    return Behavior.SAFE_EFFECTIVE if effective else Behavior.SAFE_INEFFECTIVE


def detect_offsetting(trajectory: Trajectory, annotations) -> bool:
    """True if the side effect first appears only after the task was achieved.

    That is the signature of undoing a completed, beneficial change.
    """
    states = trajectory.states
    for i, s in enumerate(states):
        if annotations.goal_predicate(s):
            if any(annotations.side_effect_predicate(x) for x in states[: i + 1]):
                return False
            return any(annotations.side_effect_predicate(x) for x in states[i + 1:])
    return False


def episode_return(trajectory: Trajectory, reward: np.ndarray) -> float:
    return float(sum(reward[s, a] for s, a in zip(trajectory.states, trajectory.actions)))


def episode_impact(trajectory: Trajectory, tables: ImpactTables) -> float:
    t0 = trajectory.start_time
    return float(sum(tables.at(t0 + k)[s, a]
                     for k, (s, a) in enumerate(zip(trajectory.states, trajectory.actions))))


def audit_spec(annotations) -> MeasureSpec:
    return MeasureSpec(MeasureKind.FEATURE_DIVERGENCE, features=annotations.features)


def mu_sweep(
    mdp: Mdp,
    task,
    measure: MeasureSpec,
    baseline: BaselineSpec,
    mu_grid: Sequence[float],
    seed: int = 0,
    *,
    annotations,
    tol: float = DEFAULT_TOL,
    horizon: int | None = None,
    start_state: int | None = None,
    start_time: int = 0,
    episode_start: int | None = None,
    task_threshold: float | None = None,
    workers: int = 1,
) -> list[SweepRow]:
    """Solve and roll out the shaped problem for every mu.

    Rows are evaluated from the highest mu down and returned in grid order.
    A mu whose solve fails becomes an ``error`` row.
    """
    grid = [float(m) for m in mu_grid]
    if not grid:
        raise ValueError("mu grid is empty")
    if any(not (m >= 0 and math.isfinite(m)) for m in grid):
        raise ValueError("mu grid values must be finite and non-negative")
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ValueError("mu grid must be ascending")
    horizon = annotations.horizon if horizon is None else horizon
    episode_start = annotations.start_state if episode_start is None else episode_start
    start = episode_start if start_state is None else start_state
    reward = np.asarray(getattr(task, "table", task), dtype=float)
    tables = ImpactTables(mdp, measure, baseline, episode_start)
    audit = ImpactTables(mdp, audit_spec(annotations), baseline, episode_start)

    def one(mu: float) -> SweepRow:
        try:
            cfg = PenaltyConfig(mu, measure, baseline)
            policy, _ = solve_penalized(mdp, reward, cfg, tol, horizon=horizon, start_time=start_time,
                                        episode_start=episode_start, tables=tables)
            traj = sample_trajectory(mdp, policy, start, horizon, seed, start_time=start_time)
            ret = episode_return(traj, reward)
            return SweepRow(
                mu=mu,
                task_return=ret,
                total_impact=episode_impact(traj, tables),
                audit_impact=episode_impact(traj, audit),
                behavior=classify_behavior(traj, annotations, ret, task_threshold),
                policy_hash=policy_hash(policy),
                trajectory=traj,
            )
        except Exception as exc:  # recorded, not dropped
            return SweepRow(mu, math.nan, math.nan, math.nan, Behavior.ERROR, "", f"{type(exc).__name__}: {exc}")

    order = sorted(range(len(grid)), key=lambda i: -grid[i])
    rows: list[SweepRow | None] = [None] * len(grid)
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        # warm the shared caches once so worker threads only read them
        for t in range(start_time, start_time + horizon if tables.time_dependent else start_time + 1):
            try:
                tables.at(t)
                audit.at(t)
            except PlanningError:
                break
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {i: pool.submit(one, grid[i]) for i in order}
            for i in order:
                rows[i] = futures[i].result()
    else:
        for i in order:
            rows[i] = one(grid[i])
    return rows  # type: ignore[return-value]


def find_safe_effective_range(rows: Sequence[SweepRow]) -> list[tuple[float, float]]:
    """Maximal runs of consecutive safe_effective rows, as (first mu, last mu) pairs."""
    out = []
    run_start = None
    prev = None
    for row in rows:
        if row.behavior is Behavior.SAFE_EFFECTIVE:
            if run_start is None:
                run_start = row.mu
            prev = row.mu
        elif run_start is not None:
            out.append((run_start, prev))
            run_start = None
    if run_start is not None:
        out.append((run_start, prev))
    return out


# ---------------------------------------------------------------------------
# policy-level frontier (small problems only)


@dataclass(frozen=True, eq=False)
class PolicyCloud:
    """Discounted (task value, impact) from ``start`` for every deterministic stationary policy."""

    policies: np.ndarray
    values: np.ndarray
    impacts: np.ndarray
    frontier: list[int]

    def point(self, i: int) -> tuple[float, float]:
        return float(self.values[i]), float(self.impacts[i])


def policy_cloud(mdp: Mdp, reward: np.ndarray, impact: np.ndarray, start: int = 0,
                 tol: float = 1e-9, cap: int | None = None) -> PolicyCloud:
    kwargs = {} if cap is None else {"cap": cap}
    block = policy_block(mdp, **kwargs)
    values = np.empty(len(block))
    impacts = np.empty(len(block))
    chunk = 4096
    for lo in range(0, len(block), chunk):
        part = block[lo:lo + chunk]
        values[lo:lo + chunk] = evaluate_policies(mdp, reward, part)[:, start]
        impacts[lo:lo + chunk] = evaluate_policies(mdp, impact, part)[:, start]
    front = pareto_frontier(np.column_stack([values, impacts]), tol)
    return PolicyCloud(block, values, impacts, front)


def discounted_point(mdp: Mdp, reward: np.ndarray, impact: np.ndarray, policy: np.ndarray,
                     start: int = 0) -> tuple[float, float]:
    return (float(evaluate_policy(mdp, reward, policy)[start]),
            float(evaluate_policy(mdp, impact, policy)[start]))


def is_non_dominated(point: tuple[float, float], cloud: PolicyCloud, tol: float = 1e-9) -> bool:
    v, p = point
    better = (cloud.values >= v - tol) & (cloud.impacts <= p + tol)
    strict = (cloud.values > v + tol) | (cloud.impacts < p - tol)
    return not bool(np.any(better & strict))
