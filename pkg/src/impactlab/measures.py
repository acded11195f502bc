"""Impact measures between an acted world and a baseline world.

State-pair measures (feature divergence, unreachability, relative
reachability, value difference, future tasks) take state distributions and
lift the pointwise formula by expectation under the independent product
coupling of the two marginals.  AUP, the utility/fact measure and
undetectability compare an action with the no-op at the same state, so they
do not use a baseline world at all.
"""

from __future__ import annotations

import enum
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .baselines import BaselineKind, BaselineSpec, baseline_dist, rollout_pair
from .mdp_core import Mdp, StateDist, as_dist, point_mass, propagate, support
from .solvers import (
    DEFAULT_TOL,
    discount_power,
    min_steps_matrix,
    reachability_matrix,
    reachability_values,
    value_iteration,
)


class MeasureError(ValueError):
    pass


class DegenerateNormalization(MeasureError):
    """AUP denominator is zero: the auxiliary set carries no signal at this state."""


class ConditioningError(MeasureError):
    pass


class MeasureKind(enum.Enum):
    FEATURE_DIVERGENCE = "feature-divergence"
    AUP = "aup"
    UNREACHABILITY = "unreachability"
    RELATIVE_REACHABILITY = "relative-reachability"
    VALUE_DIFFERENCE = "value-difference"
    FUTURE_TASKS = "future-tasks"
    RELATIVE_FEATURE = "relative-feature"
    UTILITY_FACT = "utility-fact"
    UNDETECTABILITY = "undetectability"

    @classmethod
    def parse(cls, text: str) -> MeasureKind:
        key = text.strip().lower().replace("_", "-")
        short = {"fd": cls.FEATURE_DIVERGENCE, "ur": cls.UNREACHABILITY, "rr": cls.RELATIVE_REACHABILITY,
                 "vd": cls.VALUE_DIFFERENCE, "ft": cls.FUTURE_TASKS, "rfp": cls.RELATIVE_FEATURE,
                 "uf": cls.UTILITY_FACT, "ud": cls.UNDETECTABILITY}
        if key in short:
            return short[key]
        for kind in cls:
            if kind.value == key:
                return kind
        raise ValueError(f"unknown measure kind {text!r}; choose from {[k.value for k in cls]}")

    @property
    def pairwise(self) -> bool:
        return self in _PAIRWISE


_PAIRWISE = {
    MeasureKind.FEATURE_DIVERGENCE,
    MeasureKind.UNREACHABILITY,
    MeasureKind.RELATIVE_REACHABILITY,
    MeasureKind.VALUE_DIFFERENCE,
    MeasureKind.FUTURE_TASKS,
}


@dataclass(frozen=True)
class ImpactResult:
    """``value`` is the sum (or max) of ``components``; ``details`` holds extras."""

    value: float
    components: np.ndarray = field(repr=False)
    labels: tuple = field(default=(), repr=False)
    aggregation: str = "sum"
    details: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        comps = np.asarray(self.components, dtype=float).ravel()
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "value", float(self.value))
        if self.aggregation not in ("sum", "max"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        agg = comps.sum() if self.aggregation == "sum" else comps.max(initial=0.0)
        if abs(agg - self.value) > 1e-9 * max(1.0, abs(self.value)):
            raise ValueError(f"value {self.value} disagrees with {self.aggregation} of components {agg}")

    def __float__(self) -> float:
        return self.value

    def top(self, k: int = 3) -> list[tuple]:
        order = np.argsort(-np.abs(self.components), kind="stable")[:k]
        labels = self.labels or tuple(range(len(self.components)))
        return [(labels[i], float(self.components[i])) for i in order]


def _result(components, labels=(), aggregation="sum", **details) -> ImpactResult:
    comps = np.asarray(components, dtype=float).ravel()
    value = comps.sum() if aggregation == "sum" else comps.max(initial=0.0)
    return ImpactResult(float(value), comps, tuple(labels), aggregation, details)


def _pairs(acted: StateDist, baseline: StateDist):
    """Support pairs and their weights under the product coupling."""
    xs, bs = support(acted), support(baseline)
    return xs, bs, np.outer(acted[xs], baseline[bs])


# ---------------------------------------------------------------------------
# state-pair measures


def feature_divergence(features: np.ndarray, acted: StateDist, baseline: StateDist) -> ImpactResult:
    """Expected max-norm distance between feature vectors; components are per support pair."""
    phi = np.asarray(features, dtype=float)
    if phi.ndim != 2:
        raise MeasureError("feature table must be 2-d (states, features)")
    acted, baseline = as_dist(acted), as_dist(baseline)
    if len(acted) != phi.shape[0] or len(baseline) != phi.shape[0]:
        raise MeasureError(f"feature table has {phi.shape[0]} rows; distributions cover {len(acted)} states")
    xs, bs, w = _pairs(acted, baseline)
    diff = np.abs(phi[xs][:, None, :] - phi[bs][None, :, :])  # (|xs|, |bs|, N)
    norms = diff.max(axis=2, initial=0.0)
    per_feature = np.einsum("ij,ijk->k", w, diff)
    labels = [(int(x), int(b)) for x in xs for b in bs]
    return _result((w * norms).ravel(), labels, per_feature=per_feature)


def unreachability(
    mdp: Mdp, acted: StateDist, baseline: StateDist, tol: float = DEFAULT_TOL, reach: np.ndarray | None = None
) -> ImpactResult:
    """``E[1 - R(x; b)]``: how hard it is to get from the acted state back to the baseline state."""
    reach = reachability_matrix(mdp, tol) if reach is None else reach
    acted, baseline = as_dist(acted, mdp.n_states), as_dist(baseline, mdp.n_states)
    xs, bs, w = _pairs(acted, baseline)
    comps = w * (1.0 - reach[np.ix_(xs, bs)])
    labels = [(int(x), int(b)) for x in xs for b in bs]
    return _result(comps.ravel(), labels)


def _pairwise_targets(acted, baseline, table_x, table_b, fn):
    """``E_{x,b}[fn(table_b[b] - table_x[x])]`` per column of the tables."""
    xs, bs, w = _pairs(acted, baseline)
    out = np.zeros(table_x.shape[1])
    for i, x in enumerate(xs):
        for j, b in enumerate(bs):
            out += w[i, j] * fn(table_b[b] - table_x[x])
    return out


def _relu(x):
    return np.maximum(x, 0.0)


SHAPING = {"relu": _relu, "abs": np.abs}


def relative_reachability(
    mdp: Mdp, acted: StateDist, baseline: StateDist, tol: float = DEFAULT_TOL, reach: np.ndarray | None = None
) -> ImpactResult:
    """Average clipped loss of reachability of every state; components are per target."""
    reach = reachability_matrix(mdp, tol) if reach is None else reach
    acted, baseline = as_dist(acted, mdp.n_states), as_dist(baseline, mdp.n_states)
    comps = _pairwise_targets(acted, baseline, reach, reach, _relu) / mdp.n_states
    return _result(comps, range(mdp.n_states))


def reward_values(mdp: Mdp, rewards: np.ndarray, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Optimal state values for a stack of reward tables, shape (S, K)."""
    rewards = np.asarray(rewards, dtype=float)
    if rewards.ndim != 3:
        raise MeasureError("reward set must have shape (K, S, A)")
    return np.stack([value_iteration(mdp, r, tol).v for r in rewards], axis=1)


def reachability_reward_values(mdp: Mdp, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Values of the per-target reachability rewards, column ``s`` = ``R(.; s)``."""
    return np.stack([reachability_values(mdp, y, tol) for y in range(mdp.n_states)], axis=1)


def value_difference_from_values(
    values: np.ndarray, acted: StateDist, baseline: StateDist, shaping: str = "relu", weights=None
) -> ImpactResult:
    """``sum_r w_r f(V_r(b) - V_r(x))`` given a precomputed (S, K) value table."""
    values = np.asarray(values, dtype=float)
    k = values.shape[1]
    w = np.ones(k) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (k,):
        raise MeasureError(f"{w.size} weights for {k} rewards")
    if np.any(w < 0):
        raise MeasureError("weights must be non-negative")
    if shaping not in SHAPING:
        raise MeasureError(f"shaping must be one of {sorted(SHAPING)}")
    acted, baseline = as_dist(acted, values.shape[0]), as_dist(baseline, values.shape[0])
    comps = w * _pairwise_targets(acted, baseline, values, values, SHAPING[shaping])
    return _result(comps, range(k))


def value_difference(
    mdp: Mdp,
    shaping: str,
    weights,
    rewards,
    acted: StateDist,
    baseline: StateDist,
    tol: float = DEFAULT_TOL,
) -> ImpactResult:
    """General value-difference measure.

    ``rewards`` is a (K, S, A) stack of reward tables, or the string
    ``"reachability"`` for the per-target reachability rewards (then
    ``weights=None`` means ``1/|S|`` each).
    """
    if isinstance(rewards, str):
        if rewards != "reachability":
            raise MeasureError(f"unknown reward family {rewards!r}")
        values = reachability_reward_values(mdp, tol)
        if weights is None:
            weights = np.full(mdp.n_states, 1.0 / mdp.n_states)
    else:
        values = reward_values(mdp, rewards, tol)
    return value_difference_from_values(values, acted, baseline, shaping, weights)


def future_tasks(
    mdp: Mdp,
    acted: StateDist,
    baseline: StateDist,
    terminal: bool = False,
    steps: np.ndarray | None = None,
) -> ImpactResult:
    """Future-tasks deviation from step counts.

    The raw score ``1 - (D/|S|) sum_s g^max(Nx-Nb, 0) g^Nb`` is not zero for
    identical arms, so the value reported is its excess over the identical-arm
    score, ``(D/|S|) sum_s g^Nb (1 - g^max(Nx-Nb, 0))``.  The raw score is kept
    in ``details["raw"]``.  ``D`` is 1 for terminal acted states, else 1 - g.
    """
    steps = min_steps_matrix(mdp) if steps is None else steps
    g = mdp.gamma
    acted, baseline = as_dist(acted, mdp.n_states), as_dist(baseline, mdp.n_states)
    xs, bs, w = _pairs(acted, baseline)
    term = np.broadcast_to(np.asarray(terminal, dtype=bool), (mdp.n_states,))
    comps = np.zeros(mdp.n_states)
    raw = 0.0
    for i, x in enumerate(xs):
        d = 1.0 if term[x] else 1.0 - g
        for j, b in enumerate(bs):
            nb = steps[b]
            with np.errstate(invalid="ignore"):
                gap = np.where(np.isfinite(nb), np.maximum(steps[x] - nb, 0.0), np.inf)
            weight_b = discount_power(g, nb)
            kept = weight_b * discount_power(g, gap)
            comps += w[i, j] * d / mdp.n_states * (weight_b - kept)
            raw += w[i, j] * (1.0 - d / mdp.n_states * kept.sum())
    return _result(comps, range(mdp.n_states), raw=raw)


# ---------------------------------------------------------------------------
# action-relative measures


def aux_q_tables(mdp: Mdp, aux_rewards: np.ndarray, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Optimal Q tables, shape (K, S, A)."""
    aux = np.asarray(aux_rewards, dtype=float)
    if aux.ndim != 3 or aux.shape[0] < 1:
        raise MeasureError("auxiliary reward set must be a non-empty (K, S, A) stack")
    return np.stack([value_iteration(mdp, r, tol).q for r in aux])


def aup_penalty(
    mdp: Mdp, aux_rewards, s_t: int, a_t: int, tol: float = DEFAULT_TOL, q_tables: np.ndarray | None = None
) -> ImpactResult:
    """``sum_i |Q_i(s,a) - Q_i(s,noop)| / sum_i |Q_i(s,noop)|``; components are per auxiliary reward."""
    q = aux_q_tables(mdp, aux_rewards, tol) if q_tables is None else q_tables
    base = q[:, s_t, mdp.noop]
    denom = np.abs(base).sum()
    if denom == 0.0:
        raise DegenerateNormalization(f"all auxiliary Q values are zero at state {s_t} under the no-op")
    numer = np.abs(q[:, s_t, a_t] - base)
    return _result(numer / denom, range(q.shape[0]), numerator=float(numer.sum()), denominator=float(denom))


def _horizon_arms(mdp: Mdp, s: int, a: int, horizon: int):
    acted, idle = rollout_pair(mdp, s, a, horizon)
    return acted, idle


def utility_fact_measure(
    mdp: Mdp, utilities: np.ndarray, facts: np.ndarray, s: int, a: int, horizon: int = 1
) -> ImpactResult:
    """``max_{u,f} |E[u | f, a] - E[u | f, noop]|`` with both arms rolled to the horizon.

    ``utilities`` is (S, U) real, ``facts`` is (S, F) boolean; facts must have
    positive probability under both arms.
    """
    u = np.asarray(utilities, dtype=float)
    f = np.asarray(facts, dtype=bool)
    if u.ndim != 2 or f.ndim != 2 or u.shape[1] < 1 or f.shape[1] < 1:
        raise MeasureError("utilities and facts must be non-empty (S, k) tables")
    acted, idle = _horizon_arms(mdp, s, a, horizon)
    p_act, p_idle = acted @ f, idle @ f
    if np.any(p_act <= 0.0) or np.any(p_idle <= 0.0):
        bad = int(np.flatnonzero((p_act <= 0.0) | (p_idle <= 0.0))[0])
        raise ConditioningError(f"fact {bad} has zero probability under one arm")
    e_act = ((acted[:, None] * f).T @ u) / p_act[:, None]  # (F, U)
    e_idle = ((idle[:, None] * f).T @ u) / p_idle[:, None]
    gaps = np.abs(e_act - e_idle)
    labels = [(i, j) for i in range(gaps.shape[0]) for j in range(gaps.shape[1])]
    res = _result(gaps.ravel(), labels, aggregation="max")
    res.details["argmax"] = labels[int(np.argmax(gaps))]
    return res


def undetectability_measure(mdp: Mdp, events: np.ndarray, b: int, a: int, horizon: int = 1) -> ImpactResult:
    """``max_g |P(g | a, b) - P(g | noop, b)|`` with the exact model as estimator."""
    g = np.asarray(events, dtype=bool)
    if g.ndim != 2 or g.shape[1] < 1:
        raise MeasureError("event set must be a non-empty (S, G) table")
    acted, idle = _horizon_arms(mdp, b, a, horizon)
    return _result(np.abs(acted @ g - idle @ g), range(g.shape[1]), aggregation="max")


def relative_feature_penalty(
    features: np.ndarray,
    trajectory: Sequence[int],
    baseline_trajectory: Sequence[int],
    gamma: float,
    distance=None,
) -> np.ndarray:
    """Per-step penalties ``gamma d(t+1) - d(t)`` along a pair of state sequences.

    ``distance`` maps two feature vectors to a non-negative real; the default
    is the max-norm.  Discounted sums telescope to
    ``gamma^T d(T) - d(0)``.
    """
    if len(trajectory) != len(baseline_trajectory):
        raise MeasureError("trajectory and baseline trajectory differ in length")
    phi = np.asarray(features, dtype=float)
    dist = distance or (lambda x, y: float(np.max(np.abs(x - y), initial=0.0)))
    d = np.array([dist(phi[s], phi[b]) for s, b in zip(trajectory, baseline_trajectory)])
    return gamma * d[1:] - d[:-1]


def aggregate_max(results: Sequence[ImpactResult]) -> ImpactResult:
    """Conservative combination over several stakeholders' measures."""
    results = list(results)
    if not results:
        raise MeasureError("aggregate_max needs at least one result")
    values = [r.value for r in results]
    return _result(values, range(len(values)), aggregation="max")


# ---------------------------------------------------------------------------
# dispatch


@dataclass(frozen=True, eq=False)
class MeasureSpec:
    """A measure kind plus whatever parameters that kind needs.

    ``rewards`` (value difference) is a (K, S, A) stack or ``"reachability"``;
    ``horizon`` (utility/fact, undetectability) defaults to the baseline's
    rollout horizon.
    """

    kind: MeasureKind
    features: np.ndarray | None = None
    aux_rewards: np.ndarray | None = None
    shaping: str = "relu"
    weights: np.ndarray | None = None
    rewards: object = "reachability"
    utilities: np.ndarray | None = None
    facts: np.ndarray | None = None
    events: np.ndarray | None = None
    terminal: np.ndarray | None = None
    horizon: int | None = None
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        if isinstance(self.kind, str):
            object.__setattr__(self, "kind", MeasureKind.parse(self.kind))
        need = {
            MeasureKind.FEATURE_DIVERGENCE: ("features",),
            MeasureKind.RELATIVE_FEATURE: ("features",),
            MeasureKind.AUP: ("aux_rewards",),
            MeasureKind.UTILITY_FACT: ("utilities", "facts"),
            MeasureKind.UNDETECTABILITY: ("events",),
        }.get(self.kind, ())
        missing = [name for name in need if getattr(self, name) is None]
        if missing:
            raise MeasureError(f"{self.kind.value} needs parameters: {', '.join(missing)}")
        if self.shaping not in SHAPING:
            raise MeasureError(f"shaping must be one of {sorted(SHAPING)}")
        if self.weights is not None and np.any(np.asarray(self.weights) < 0):
            raise MeasureError("weights must be non-negative")
        if self.horizon is not None and self.horizon < 1:
            raise MeasureError("horizon must be at least 1")
        if self.tol <= 0:
            raise MeasureError("tol must be positive")

    @classmethod
    def for_env(cls, kind, annotations, **overrides) -> MeasureSpec:
        """Defaults from an environment's annotation tables."""
        kind = MeasureKind.parse(kind) if isinstance(kind, str) else kind
        n = annotations.features.shape[0]
        params = dict(
            features=annotations.features,
            aux_rewards=annotations.aux_rewards,
            utilities=annotations.features,
            facts=np.ones((n, 1), dtype=bool),
            events=annotations.events,
        )
        params.update(overrides)
        return cls(kind, **params)


def _arms(baseline: BaselineSpec, mdp: Mdp, s_t: int, a_t: int, s0: int, t: int):
    if baseline.kind is BaselineKind.STEPWISE_INACTION:
        return rollout_pair(mdp, s_t, a_t, baseline.rollout_horizon)
    acted = propagate(mdp, point_mass(mdp.n_states, s_t), a_t)
    return acted, baseline_dist(baseline, mdp, s0, t + 1, s_t)


class ImpactEvaluator:
    """Scores actions for one (mdp, measure, baseline) and caches the heavy tables."""

    def __init__(self, mdp: Mdp, measure: MeasureSpec, baseline: BaselineSpec, s0: int = 0):
        self.mdp = mdp
        self.measure = measure
        self.baseline = baseline
        self.s0 = s0
        self._cache: dict = {}

    def _get(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    @property
    def reach(self) -> np.ndarray:
        return self._get("reach", lambda: reachability_matrix(self.mdp, self.measure.tol))

    @property
    def steps(self) -> np.ndarray:
        return self._get("steps", lambda: min_steps_matrix(self.mdp))

    @property
    def q_tables(self) -> np.ndarray:
        return self._get("q", lambda: aux_q_tables(self.mdp, self.measure.aux_rewards, self.measure.tol))

    @property
    def vd_values(self) -> np.ndarray:
        m = self.measure
        if isinstance(m.rewards, str):
            build = lambda: reachability_reward_values(self.mdp, m.tol)
        else:
            build = lambda: reward_values(self.mdp, m.rewards, m.tol)
        return self._get("vd", build)

    @property
    def horizon(self) -> int:
        if self.measure.horizon is not None:
            return self.measure.horizon
        return self.baseline.rollout_horizon

    def pair(self, acted: StateDist, baseline: StateDist) -> ImpactResult:
        """Score a given (acted, baseline) pair with a state-pair measure."""
        m, mdp = self.measure, self.mdp
        kind = m.kind
        if kind is MeasureKind.FEATURE_DIVERGENCE:
            return feature_divergence(m.features, acted, baseline)
        if kind is MeasureKind.UNREACHABILITY:
            return unreachability(mdp, acted, baseline, reach=self.reach)
        if kind is MeasureKind.RELATIVE_REACHABILITY:
            return relative_reachability(mdp, acted, baseline, reach=self.reach)
        if kind is MeasureKind.VALUE_DIFFERENCE:
            weights = m.weights
            if weights is None and isinstance(m.rewards, str):
                weights = np.full(mdp.n_states, 1.0 / mdp.n_states)
            return value_difference_from_values(self.vd_values, acted, baseline, m.shaping, weights)
        if kind is MeasureKind.FUTURE_TASKS:
            terminal = False if m.terminal is None else m.terminal
            return future_tasks(mdp, acted, baseline, terminal, steps=self.steps)
        raise MeasureError(f"{kind.value} is not a state-pair measure")

    def action(self, s_t: int, a_t: int, t: int = 0) -> ImpactResult:
        """Impact of taking ``a_t`` in ``s_t`` at time ``t`` of an episode started in ``s0``."""
        m, mdp = self.measure, self.mdp
        kind = m.kind
        if kind is MeasureKind.AUP:
            return aup_penalty(mdp, m.aux_rewards, s_t, a_t, q_tables=self.q_tables)
        if kind is MeasureKind.UTILITY_FACT:
            return utility_fact_measure(mdp, m.utilities, m.facts, s_t, a_t, self.horizon)
        if kind is MeasureKind.UNDETECTABILITY:
            return undetectability_measure(mdp, m.events, s_t, a_t, self.horizon)
        acted, base = _arms(self.baseline, mdp, s_t, a_t, self.s0, t)
        if kind is MeasureKind.RELATIVE_FEATURE:
            after = feature_divergence(m.features, acted, base).value
            if self.baseline.kind is BaselineKind.STEPWISE_INACTION:
                before = 0.0
            else:
                now = baseline_dist(self.baseline, mdp, self.s0, t, s_t)
                before = feature_divergence(m.features, point_mass(mdp.n_states, s_t), now).value
            # signed: the step penalty is negative when the agent closes the gap
            step = mdp.gamma * after - before
            return ImpactResult(step, np.array([mdp.gamma * after, -before]), ("next", "current"),
                                details={"signed": True})
        return self.pair(acted, base)

    def table(self, t: int = 0) -> np.ndarray:
        """(S, A) array of action impacts at time ``t``.

        Vectorized equivalent of calling :meth:`action` for every pair: the
        state-pair lifts are linear in the acted distribution, so each row is
        an expectation of per-state scores against a fixed baseline.
        """
        m, mdp = self.measure, self.mdp
        n, k = mdp.n_states, mdp.n_actions
        kind = m.kind
        if kind is MeasureKind.AUP:
            q = self.q_tables
            base = q[:, :, mdp.noop]
            denom = np.abs(base).sum(axis=0)
            if np.any(denom == 0.0):
                s = int(np.flatnonzero(denom == 0.0)[0])
                raise DegenerateNormalization(f"all auxiliary Q values are zero at state {s} under the no-op")
            return np.abs(q - base[:, :, None]).sum(axis=0) / denom[:, None]
        if kind in (MeasureKind.UTILITY_FACT, MeasureKind.UNDETECTABILITY):
            return self._horizon_table()
        stepwise = self.baseline.kind is BaselineKind.STEPWISE_INACTION
        pair_kind = MeasureKind.FEATURE_DIVERGENCE if kind is MeasureKind.RELATIVE_FEATURE else kind
        if stepwise:
            tau = self.baseline.rollout_horizon
            idle = self._noop_power(tau - 1)
            acted_all = (mdp.flat @ idle).reshape(n, k, n)
            out = np.zeros((n, k))
            for s in range(n):
                base = acted_all[s, mdp.noop]
                xs = np.flatnonzero(acted_all[s].max(axis=0) > 0.0)
                out[s] = acted_all[s][:, xs] @ self._scores(pair_kind, xs, base)
        else:
            base = baseline_dist(self.baseline, mdp, self.s0, t + 1, 0)
            out = (mdp.flat @ self._scores(pair_kind, np.arange(n), base)).reshape(n, k)
        if kind is not MeasureKind.RELATIVE_FEATURE:
            return out
        out = mdp.gamma * out
        if not stepwise:
            now = baseline_dist(self.baseline, mdp, self.s0, t, 0)
            out -= self._scores(pair_kind, np.arange(n), now)[:, None]
        return out

    def _noop_power(self, k: int) -> np.ndarray:
        out = np.eye(self.mdp.n_states)
        step = self.mdp.transition[:, self.mdp.noop, :]
        for _ in range(k):
            out = step @ out
        return out

    def _scores(self, kind: MeasureKind, xs: np.ndarray, base: StateDist) -> np.ndarray:
        """Score of each point mass ``x`` in ``xs`` against the distribution ``base``."""
        m = self.measure
        bs = support(base)
        wb = base[bs]
        if kind is MeasureKind.FEATURE_DIVERGENCE:
            phi = np.asarray(m.features, dtype=float)
            diff = np.abs(phi[xs][:, None, :] - phi[bs][None, :, :]).max(axis=2, initial=0.0)
            return diff @ wb
        if kind is MeasureKind.UNREACHABILITY:
            return (1.0 - self.reach[np.ix_(xs, bs)]) @ wb
        if kind in (MeasureKind.RELATIVE_REACHABILITY, MeasureKind.VALUE_DIFFERENCE):
            if kind is MeasureKind.RELATIVE_REACHABILITY:
                table, fn, w = self.reach, _relu, np.full(self.mdp.n_states, 1.0 / self.mdp.n_states)
            else:
                table, fn = self.vd_values, SHAPING[m.shaping]
                w = m.weights
                if w is None:
                    w = (np.full(table.shape[1], 1.0 / self.mdp.n_states) if isinstance(m.rewards, str)
                         else np.ones(table.shape[1]))
            out = np.zeros(len(xs))
            for b, p in zip(bs, wb):
                out += p * (fn(table[b][None, :] - table[xs]) @ np.asarray(w, dtype=float))
            return out
        if kind is MeasureKind.FUTURE_TASKS:
            g = self.mdp.gamma
            term = np.broadcast_to(np.asarray(False if m.terminal is None else m.terminal, dtype=bool),
                                   (self.mdp.n_states,))
            d = np.where(term[xs], 1.0, 1.0 - g)
            out = np.zeros(len(xs))
            for b, p in zip(bs, wb):
                nb = self.steps[b]
                with np.errstate(invalid="ignore"):
                    gap = np.where(np.isfinite(nb), np.maximum(self.steps[xs] - nb, 0.0), np.inf)
                weight_b = discount_power(g, nb)
                out += p * d * (weight_b[None, :] * (1.0 - discount_power(g, gap))).sum(axis=1)
            return out / self.mdp.n_states
        raise MeasureError(f"{kind.value} is not a state-pair measure")

    def _horizon_table(self) -> np.ndarray:
        m, mdp = self.measure, self.mdp
        n, k = mdp.n_states, mdp.n_actions
        h = self.horizon
        idle_tail = self._noop_power(h - 1)
        acted = (mdp.flat @ idle_tail).reshape(n, k, n)
        idle = acted[:, mdp.noop]
        if m.kind is MeasureKind.UNDETECTABILITY:
            g = np.asarray(m.events, dtype=float)
            return np.abs(acted @ g - (idle @ g)[:, None, :]).max(axis=2, initial=0.0)
        u = np.asarray(m.utilities, dtype=float)
        facts = np.asarray(m.facts, dtype=bool)
        out = np.zeros((n, k))
        for j in range(facts.shape[1]):
            f = facts[:, j].astype(float)
            p_act, p_idle = acted @ f, idle @ f
            if np.any(p_act <= 0.0) or np.any(p_idle <= 0.0):
                raise ConditioningError(f"fact {j} has zero probability under one arm")
            e_act = (acted @ (f[:, None] * u)) / p_act[..., None]
            e_idle = (idle @ (f[:, None] * u)) / p_idle[:, None]
            out = np.maximum(out, np.abs(e_act - e_idle[:, None, :]).max(axis=2, initial=0.0))
        return out


def action_impact(
    measure: MeasureSpec, baseline: BaselineSpec, mdp: Mdp, s_t: int, a_t: int, *, s0: int = 0, t: int = 0
) -> ImpactResult:
    return ImpactEvaluator(mdp, measure, baseline, s0).action(s_t, a_t, t)
