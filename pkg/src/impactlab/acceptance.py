"""Acceptance checks, shared by ``impactlab verify`` and the test suite.

Each check returns a :class:`CriterionResult`; a check passes only if its
property holds and it finishes inside its time budget.
"""

from __future__ import annotations

import io
import tempfile
import time
from collections.abc import Callable
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .baselines import BaselineKind, BaselineSpec, rollout_pair
from .envs import ENV_NAMES, Config, GridworldEnv, compile_env, load_named
from .mdp_core import point_mass, random_mdp, rng_for, sample_trajectory
from .measures import (
    ImpactEvaluator,
    MeasureKind,
    MeasureSpec,
    aup_penalty,
    aux_q_tables,
    relative_feature_penalty,
    relative_reachability,
    unreachability,
    value_difference,
    value_difference_from_values,
)
from .planner import (
    ImpactTables,
    PenaltyConfig,
    detect_offsetting,
    discounted_point,
    find_safe_effective_range,
    is_non_dominated,
    mu_sweep,
    policy_cloud,
    solve_penalized,
)
from .solvers import (
    evaluate_policies,
    policy_block,
    reachability_matrix,
    value_iteration,
)

# frozen from the calibration run of subagent_workshop (tau = 1, default annotations)
SUBAGENT_AUP_ASSEMBLE = 0.0
SUBAGENT_AUP_DIRECT = 0.475  # 19 / 40: only the vase auxiliary moves, by 1/(1-g) - 1
SUBAGENT_FD_ASSEMBLE = 1.0
SUBAGENT_FD_DIRECT = 1.0

BOX_CORNER_GRID = [float(x) for x in np.logspace(-3, 3, 20)]


@dataclass(frozen=True)
class CriterionResult:
    name: str
    passed: bool
    detail: str
    seconds: float
    budget: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name:<16} {self.seconds:6.2f}s (budget {self.budget:g}s)  {self.detail}"


def _small_mdps(count: int, seed: int, max_states: int, max_actions: int, gamma: float = 0.9):
    rng = rng_for(seed)
    for _ in range(count):
        n = int(rng.integers(1, max_states + 1))
        k = int(rng.integers(1, max_actions + 1))
        det = bool(rng.random() < 0.3)
        branching = None if det else int(rng.integers(1, n + 1))
        yield rng, random_mdp(rng, n, k, gamma, deterministic=det, branching=branching)


# ---------------------------------------------------------------------------
# 1. oracle equivalence


def check_oracle(count: int = 100, seed: int = 1) -> tuple[bool, str]:
    worst = 0.0
    for rng, mdp in _small_mdps(count, seed, 5, 3):
        reward = rng.normal(size=(mdp.n_states, mdp.n_actions))
        vi = value_iteration(mdp, reward, 1e-12).v
        oracle = evaluate_policies(mdp, reward, policy_block(mdp)).max(axis=0)
        worst = max(worst, float(np.max(np.abs(vi - oracle))))
    return worst <= 1e-6, f"max |VI - enumeration| = {worst:.2e} over {count} MDPs"


# ---------------------------------------------------------------------------
# 2. family collapse


def check_family_collapse(count: int = 100, seed: int = 2, rr_impl: Callable | None = None) -> tuple[bool, str]:
    """``rr_impl`` lets the test suite inject a broken relative reachability."""
    rr_impl = rr_impl or relative_reachability
    worst_rr = worst_aup = 0.0
    for rng, mdp in _small_mdps(count, seed, 6, 3):
        n = mdp.n_states
        reach = reachability_matrix(mdp, 1e-13)
        x, b = int(rng.integers(n)), int(rng.integers(n))
        mix_x, mix_b = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
        for acted, base in ((point_mass(n, x), point_mass(n, b)), (mix_x, mix_b)):
            rr = rr_impl(mdp, acted, base, reach=reach)
            vd = value_difference(mdp, "relu", None, "reachability", acted, base, tol=1e-13)
            worst_rr = max(worst_rr, float(np.max(np.abs(rr.components - vd.components))),
                           abs(rr.value - vd.value))
        aux = rng.random(size=(int(rng.integers(1, 4)), n, mdp.n_actions))
        q = aux_q_tables(mdp, aux, 1e-12)
        s, a = int(rng.integers(n)), int(rng.integers(mdp.n_actions))
        if np.abs(q[:, s, mdp.noop]).sum() == 0.0:
            continue
        numer = aup_penalty(mdp, aux, s, a, q_tables=q).details["numerator"]
        rows = np.stack([q[:, s, a], q[:, s, mdp.noop]])
        vd = value_difference_from_values(rows, point_mass(2, 0), point_mass(2, 1), "abs", np.ones(len(aux)))
        worst_aup = max(worst_aup, abs(numer - vd.value))
    ok = worst_rr <= 1e-9 and worst_aup <= 1e-9
    return ok, f"max |VD(relu) - RR| = {worst_rr:.1e}, max |VD(abs) - AUP numerator| = {worst_aup:.1e}"


# ---------------------------------------------------------------------------
# 3. bounds and identities


def check_bounds(count: int = 50, seed: int = 3) -> tuple[bool, str]:
    problems = []
    for rng, mdp in _small_mdps(count, seed, 6, 3):
        reach = reachability_matrix(mdp)
        n = mdp.n_states
        for _ in range(3):
            acted, base = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
            d = unreachability(mdp, acted, base, reach=reach).value
            if not -1e-12 <= d <= 1 + 1e-12:
                problems.append(f"d_UR={d}")
    for name in ENV_NAMES:
        c = load_named(name)
        mdp, ann = c.mdp, c.annotations
        for kind in MeasureKind:
            ev = ImpactEvaluator(mdp, MeasureSpec.for_env(kind, ann), BaselineSpec())
            noop = ev.table()[:, mdp.noop]
            if np.any(noop != 0.0):
                problems.append(f"{name}/{kind.value}: no-op impact {np.abs(noop).max():.2e}")
            if kind.pairwise:
                for s in (0, mdp.n_states // 2, mdp.n_states - 1):
                    v = ev.pair(point_mass(mdp.n_states, s), point_mass(mdp.n_states, s)).value
                    if v != 0.0:
                        problems.append(f"{name}/{kind.value}: identical arms gave {v}")
            if kind is MeasureKind.UNREACHABILITY:
                ur = ev.table()
                if ur.min() < -1e-12 or ur.max() > 1 + 1e-12:
                    problems.append(f"{name}: d_UR outside [0, 1]")
    ok = not problems
    return ok, "all in range, zero on identical arms and no-ops" if ok else "; ".join(problems[:5])


# ---------------------------------------------------------------------------
# 4. telescoping


def check_telescoping(count: int = 50, seed: int = 4) -> tuple[bool, str]:
    rng = rng_for(seed)
    worst = 0.0
    for i in range(count):
        n, k = int(rng.integers(2, 9)), int(rng.integers(2, 4))
        mdp = random_mdp(rng, n, k, float(rng.uniform(0.5, 0.99)), deterministic=True)
        phi = rng.normal(size=(n, int(rng.integers(1, 4))))
        horizon = int(rng.integers(1, 12))
        policy = rng.integers(k, size=n)
        s0 = int(rng.integers(n))
        traj = sample_trajectory(mdp, policy, s0, horizon, seed=i).states
        base = sample_trajectory(mdp, np.zeros(n, dtype=int), s0, horizon, seed=i).states
        pen = relative_feature_penalty(phi, traj, base, mdp.gamma)
        total = float(np.sum(mdp.gamma ** np.arange(horizon) * pen))
        d_end = np.max(np.abs(phi[traj[-1]] - phi[base[-1]]))
        d_start = np.max(np.abs(phi[traj[0]] - phi[base[0]]))
        worst = max(worst, abs(total - (mdp.gamma ** horizon * d_end - d_start)))
    return worst <= 1e-9, f"max telescoping error {worst:.1e} over {count} trajectories"


# ---------------------------------------------------------------------------
# 5. baseline pathologies


def _post_rescue_state(ann) -> int:
    return ann.state_of(Config((1, 3), 0, False, ((3, 3, False),), (True,)))


def pathology_sushi() -> tuple[bool, str]:
    c = load_named("sushi_belt")
    ann = c.annotations
    rows = mu_sweep(c.mdp, c.task, MeasureSpec.for_env("relative-reachability", ann),
                    BaselineSpec(BaselineKind.INITIAL_STATE), [0.0, 10.0, 100.0], annotations=ann)
    removed = [r.behavior.value for r in rows]
    ok = rows[0].behavior.safe and all(not r.behavior.safe for r in rows[1:])
    return ok, f"initial-state baseline, mu 0/10/100 -> {removed}"


def pathology_vase() -> tuple[bool, str]:
    c = load_named("vase_belt")
    ann = c.annotations
    start = _post_rescue_state(ann)
    measure = MeasureSpec.for_env("feature-divergence", ann)
    flags = {}
    for kind in (BaselineKind.INITIAL_INACTION, BaselineKind.STEPWISE_INACTION):
        rows = mu_sweep(c.mdp, c.task, measure, BaselineSpec(kind), [1.0], annotations=ann,
                        start_state=start, start_time=2, horizon=ann.horizon - 2)
        flags[kind] = detect_offsetting(rows[0].trajectory, ann)
    ok = flags[BaselineKind.INITIAL_INACTION] and not flags[BaselineKind.STEPWISE_INACTION]
    return ok, (f"after rescue: offsetting under initial-inaction={flags[BaselineKind.INITIAL_INACTION]}, "
                f"under stepwise={flags[BaselineKind.STEPWISE_INACTION]}")


def pathology_car() -> tuple[bool, str]:
    c = load_named("car_curve")
    mdp, ann = c.mdp, c.annotations
    mid = ann.state_of(Config((1, 1), 1, False, (), ()))
    acted, base = rollout_pair(mdp, mid, ann.action("right"), 3)
    crash_base = float(base @ ann.side_effect)
    crash_acted = float(acted @ ann.side_effect)
    ok = crash_base == 1.0 and crash_acted == 0.0
    return ok, f"3-step rollout from the bend: P(crash | idle) = {crash_base}, P(crash | steer) = {crash_acted}"


def pathology_box() -> tuple[bool, str]:
    c = load_named("box_corner")
    rows = mu_sweep(c.mdp, c.task, MeasureSpec.for_env("relative-reachability", c.annotations),
                    BaselineSpec(), BOX_CORNER_GRID, annotations=c.annotations)
    ranges = find_safe_effective_range(rows)
    return bool(ranges), f"safe_effective mu ranges: {[(round(a, 3), round(b, 3)) for a, b in ranges]}"


PATHOLOGIES = {"sushi": pathology_sushi, "vase": pathology_vase, "car": pathology_car, "box": pathology_box}


def check_pathologies() -> tuple[bool, str]:
    parts, ok = [], True
    for name, fn in PATHOLOGIES.items():
        t0 = time.perf_counter()
        passed, _ = fn()
        dt = time.perf_counter() - t0
        passed = passed and dt < 10.0
        ok &= passed
        parts.append(f"{name}:{'ok' if passed else 'FAIL'}({dt:.1f}s)")
    return ok, " ".join(parts)


# ---------------------------------------------------------------------------
# 6. subagent bypass


def subagent_scores(tau: int = 1) -> dict:
    c = load_named("subagent_workshop")
    mdp, ann = c.mdp, c.annotations
    s0 = ann.start_state
    assemble, direct = ann.action("left"), ann.action("right")
    out = {}
    for kind in ("aup", "feature-divergence"):
        ev = ImpactEvaluator(mdp, MeasureSpec.for_env(kind, ann), BaselineSpec(BaselineKind.STEPWISE_INACTION, tau))
        out[kind] = (ev.action(s0, assemble).value, ev.action(s0, direct).value)
    return out


def check_subagent() -> tuple[bool, str]:
    scores = subagent_scores()
    aup_a, aup_d = scores["aup"]
    fd_a, fd_d = scores["feature-divergence"]
    ratio_ok = aup_d > 0 and aup_a <= 0.1 * aup_d
    fd_ok = min(fd_a, fd_d) > 0 and max(fd_a, fd_d) <= 2.0 * min(fd_a, fd_d)
    frozen = (abs(aup_a - SUBAGENT_AUP_ASSEMBLE) <= 1e-6 and abs(aup_d - SUBAGENT_AUP_DIRECT) <= 1e-3
              and abs(fd_a - SUBAGENT_FD_ASSEMBLE) <= 1e-9 and abs(fd_d - SUBAGENT_FD_DIRECT) <= 1e-9)
    detail = f"AUP assemble={aup_a:.4f} direct={aup_d:.4f}; FD assemble={fd_a:.3f} direct={fd_d:.3f}"
    return ratio_ok and fd_ok and frozen, detail


# ---------------------------------------------------------------------------
# 7. scalarization soundness


def corridor_env() -> GridworldEnv:
    """Tiny enumerable gridworld: an L-shaped corridor with the goal at one end."""
    return GridworldEnv(
        name="corridor",
        grid=("#####", "#A.G#", "##.##", "#####"),
        objects=(),
        rewards=(("level", "at_goal()", 1.0),),
        features=(("at_goal", "at_goal()"),),
        goal="at_goal()",
    )


def check_scalarization(count: int = 20, seed: int = 7) -> tuple[bool, str]:
    grid = [0.0, 0.01, 0.1, 0.3, 1.0, 3.0, 10.0, 100.0]
    cases = []
    rng = rng_for(seed)
    for _, mdp in _small_mdps(count, seed, 5, 3):
        cases.append((mdp, rng.normal(size=(mdp.n_states, mdp.n_actions)), 0))
    corridor = compile_env(corridor_env())
    cases.append((corridor.mdp, corridor.task.table, 0))
    failures, checked = 0, 0
    for mdp, reward, start in cases:
        for baseline in (BaselineSpec(), BaselineSpec(BaselineKind.INITIAL_STATE)):
            spec = MeasureSpec(MeasureKind.RELATIVE_REACHABILITY)
            tables = ImpactTables(mdp, spec, baseline, start)
            impact = tables.at(0)
            cloud = policy_cloud(mdp, reward, impact, start)
            for mu in grid:
                if mu == 0.0:
                    continue
                policy, _ = solve_penalized(mdp, reward, PenaltyConfig(mu, spec, baseline), 1e-12, tables=tables)
                point = discounted_point(mdp, reward, impact, policy, start)
                checked += 1
                if not is_non_dominated(point, cloud, 1e-9):
                    failures += 1
    return failures == 0, f"{checked} solved policies checked against enumerated clouds, {failures} dominated"


# ---------------------------------------------------------------------------
# 8. determinism


def check_determinism() -> tuple[bool, str]:
    from .cli import RunConfig, cmd_run

    digests = []
    with tempfile.TemporaryDirectory() as tmp:
        for i in range(2):
            out = Path(tmp) / f"run{i}"
            cfg = RunConfig(env="sushi_belt", baseline="initial-state", measure="relative-reachability",
                            mu_grid=[0.0, 1.0, 10.0], seed=11, out=str(out))
            cmd_run(cfg, stream=io.StringIO())
            digests.append({p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))})
    ok = digests[0] == digests[1] and bool(digests[0])
    return ok, f"{len(digests[0])} CSV file(s) byte-identical across two runs" if ok else "CSV output differs"


CRITERIA: dict[str, tuple[Callable[[], tuple[bool, str]], float]] = {
    "oracle": (check_oracle, 30.0),
    "family-collapse": (check_family_collapse, 60.0),
    "bounds": (check_bounds, 60.0),
    "telescoping": (check_telescoping, 60.0),
    "pathologies": (check_pathologies, 40.0),
    "subagent": (check_subagent, 60.0),
    "scalarization": (check_scalarization, 120.0),
    "determinism": (check_determinism, 60.0),
}


def run_criterion(name: str) -> CriterionResult:
    fn, budget = CRITERIA[name]
    t0 = time.perf_counter()
    try:
        passed, detail = fn()
    except Exception as exc:  # a crash is a failure, reported like one
        passed, detail = False, f"{type(exc).__name__}: {exc}"
    dt = time.perf_counter() - t0
    if dt > budget:
        passed, detail = False, f"over budget: {detail}"
    return CriterionResult(name, passed, detail, dt, budget)


def run_criteria(only: str | None = None) -> list[CriterionResult]:
    if only is not None and only not in CRITERIA:
        raise KeyError(f"unknown criterion {only!r}; choose from {', '.join(CRITERIA)}")
    names = [only] if only else list(CRITERIA)
    return [run_criterion(n) for n in names]
