"""Command line: ``impactlab list-envs | run | verify``.

A run sweeps the penalty weight ``mu`` for one environment, baseline and
measure, and writes ``sweep.csv``, ``sweep.svg``, ``run.meta`` and, when
every stationary policy can be enumerated, ``frontier.csv``.

Exit codes: 0 success, 2 configuration error, 3 runtime or measure error,
4 verification failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import math
import os
import platform
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import BaselineKind, BaselineSpec
from .envs import (
    ENV_NAMES,
    FORMAT_VERSION,
    EnvError,
    build_named_env,
    compile_env,
    load_env,
)
from .measures import MeasureKind, MeasureSpec
from .planner import (
    Behavior,
    ImpactTables,
    PlanningError,
    detect_offsetting,
    find_safe_effective_range,
    mu_sweep,
    policy_cloud,
    policy_hash,
)
from .solvers import DEFAULT_TOL, ENUMERATION_CAP, count_policies

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_VERIFY = 0, 2, 3, 4
SWEEP_COLUMNS = ["mu", "task_return", "total_impact", "audit_impact", "behavior", "policy_hash"]
DEFAULT_GRID = "1e-3:1e3:20log"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    env: str = "box_corner"
    env_file: str | None = None
    baseline: str = "stepwise"
    tau: int = 1
    measure: str = "relative-reachability"
    shaping: str = "relu"
    mu_grid: list = field(default_factory=lambda: parse_mu_grid(DEFAULT_GRID))
    gamma: float | None = None
    tol: float = DEFAULT_TOL
    seed: int = 0
    horizon: int | None = None
    prefix: list = field(default_factory=list)
    out: str = "runs/latest"

    def validate(self) -> None:
        if self.env_file is None and self.env not in ENV_NAMES:
            raise ConfigError(f"env: unknown environment {self.env!r} (known: {', '.join(ENV_NAMES)})")
        try:
            BaselineKind.parse(self.baseline)
        except ValueError as exc:
            raise ConfigError(f"baseline: {exc}") from None
        try:
            MeasureKind.parse(self.measure)
        except ValueError as exc:
            raise ConfigError(f"measure: {exc}") from None
        if self.tau < 1:
            raise ConfigError("tau: must be at least 1")
        if self.shaping not in ("relu", "abs"):
            raise ConfigError("shaping: must be relu or abs")
        if not self.mu_grid:
            raise ConfigError("mu_grid: empty")
        if any(not (m >= 0 and math.isfinite(m)) for m in self.mu_grid):
            raise ConfigError("mu_grid: values must be finite and non-negative")
        if any(b < a for a, b in zip(self.mu_grid, self.mu_grid[1:])):
            raise ConfigError("mu_grid: must be ascending")
        if not self.tol > 0:
            raise ConfigError("tol: must be positive")
        if self.gamma is not None and not 0.0 < self.gamma < 1.0:
            raise ConfigError("gamma: must be in (0, 1)")
        if self.horizon is not None and self.horizon < 1:
            raise ConfigError("horizon: must be at least 1")


def parse_mu_grid(text: str) -> list[float]:
    """``a:b:nlog``, ``a:b:nlin`` or a comma separated list of values."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"mu_grid: expected a:b:n(log|lin), got {text!r}")
        spacing = "log" if parts[2].endswith("log") else "lin" if parts[2].endswith("lin") else None
        if spacing is None:
            raise ConfigError("mu_grid: point count must end in 'log' or 'lin'")
        try:
            lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2][:-3])
        except ValueError:
            raise ConfigError(f"mu_grid: cannot parse {text!r}") from None
        if n < 1 or hi < lo:
            raise ConfigError("mu_grid: need n >= 1 and a <= b")
        if spacing == "log":
            if lo <= 0:
                raise ConfigError("mu_grid: log spacing needs a > 0")
            return [float(x) for x in np.logspace(math.log10(lo), math.log10(hi), n)]
        return [float(x) for x in np.linspace(lo, hi, n)]
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"mu_grid: cannot parse {text!r}") from None


# ---------------------------------------------------------------------------
# config assembly

_FILE_KEYS = {
    ("env", "name"): ("env", str),
    ("env", "file"): ("env_file", str),
    ("env", "gamma"): ("gamma", float),
    ("baseline", "kind"): ("baseline", str),
    ("baseline", "tau"): ("tau", int),
    ("measure", "kind"): ("measure", str),
    ("measure", "shaping"): ("shaping", str),
    ("planner", "mu_grid"): ("mu_grid", parse_mu_grid),
    ("planner", "tol"): ("tol", float),
    ("planner", "seed"): ("seed", int),
    ("planner", "horizon"): ("horizon", int),
    ("planner", "prefix"): ("prefix", lambda v: [a for a in v.split(",") if a]),
    ("output", "dir"): ("out", str),
}


def read_config_file(path) -> dict:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"config file {path}: {exc}") from None
    values = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            if (section, key) not in _FILE_KEYS:
                raise ConfigError(f"config file {path}: unknown key [{section}] {key}")
            name, conv = _FILE_KEYS[(section, key)]
            try:
                values[name] = conv(raw)
            except (ValueError, ConfigError) as exc:
                raise ConfigError(f"config file {path}: [{section}] {key}: {exc}") from None
    return values


def build_run_config(args: argparse.Namespace) -> RunConfig:
    values = read_config_file(args.config) if args.config else {}
    flags = {
        "env": args.env, "env_file": args.env_file, "baseline": args.baseline, "tau": args.tau,
        "measure": args.measure, "shaping": args.shaping, "gamma": args.gamma, "tol": args.tol,
        "seed": args.seed, "horizon": args.horizon, "out": args.out,
    }
    values.update({k: v for k, v in flags.items() if v is not None})
    if args.mu_grid is not None:
        values["mu_grid"] = parse_mu_grid(args.mu_grid)
    if args.prefix is not None:
        values["prefix"] = [a for a in args.prefix.split(",") if a]
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# commands


def cmd_list_envs(verbose: bool = False, stream=None) -> int:
    stream = stream or sys.stdout
    for name in ENV_NAMES:
        env = build_named_env(name)
        line = f"{name:<18} {env.description}"
        if verbose:
            c = compile_env(env)
            line = f"{name:<18} states={c.mdp.n_states:<5} actions={c.mdp.n_actions}  {env.description}"
        print(line, file=stream)
    return EXIT_OK


def _load(cfg: RunConfig):
    env = load_env(cfg.env_file) if cfg.env_file else build_named_env(cfg.env)
    return env, compile_env(env, cfg.gamma)


def _start_after_prefix(compiled, prefix):
    mdp, ann = compiled.mdp, compiled.annotations
    s = ann.start_state
    for name in prefix:
        if name not in ann.action_names:
            raise ConfigError(f"prefix: unknown action {name!r} (actions: {', '.join(ann.action_names)})")
        row = mdp.transition[s, ann.action(name)]
        if np.count_nonzero(row) != 1:
            raise ConfigError("prefix: only supported where the prefix actions are deterministic")
        s = int(np.flatnonzero(row)[0])
    return s


def write_sweep_csv(rows, path: Path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for row in rows:
        writer.writerow(row.as_csv_fields())
    path.write_bytes(buf.getvalue().encode("utf-8"))


def write_sweep_svg(rows, path: Path, title: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "impactlab"
    ok = [r for r in rows if r.behavior is not Behavior.ERROR]
    mus = np.array([r.mu for r in ok])
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.plot(mus, [r.task_return for r in ok], "o-", color="tab:blue", label="task return")
    ax.set_xlabel("mu")
    ax.set_ylabel("task return", color="tab:blue")
    ax2 = ax.twinx()
    ax2.plot(mus, [r.total_impact for r in ok], "s--", color="tab:red", label="impact")
    ax2.plot(mus, [r.audit_impact for r in ok], "^:", color="tab:gray", label="audit impact")
    ax2.set_ylabel("episode impact", color="tab:red")
    positive = mus[mus > 0]
    if len(positive) and np.all(mus > 0):
        ax.set_xscale("log")
    elif len(positive):
        ax.set_xscale("symlog", linthresh=float(positive.min()))
    for lo, hi in find_safe_effective_range(rows):
        ax.axvspan(lo, hi, color="tab:green", alpha=0.15, lw=0)
    ax.set_title(title, fontsize=9)
    fig.legend(loc="upper right", fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def write_frontier_csv(compiled, cfg: RunConfig, measure: MeasureSpec, baseline: BaselineSpec,
                       start: int, path: Path) -> bool:
    mdp = compiled.mdp
    if count_policies(mdp) > ENUMERATION_CAP or baseline.time_dependent:
        return False
    tables = ImpactTables(mdp, measure, baseline, compiled.annotations.start_state)
    if tables.time_dependent:
        return False
    try:
        impact = tables.at(0)
    except PlanningError:
        return False  # already reported as error rows
    cloud = policy_cloud(mdp, compiled.task.table, impact, start)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["value", "impact", "policy_hash"])
    for i in cloud.frontier:
        writer.writerow([f"{cloud.values[i]:.12g}", f"{cloud.impacts[i]:.12g}", policy_hash(cloud.policies[i])])
    path.write_bytes(buf.getvalue().encode("utf-8"))
    return True


def _versions() -> dict:
    import matplotlib
    import scipy

    return {"impactlab": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "matplotlib": matplotlib.__version__}


def _workers() -> int:
    raw = os.environ.get("IMPACTLAB_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"IMPACTLAB_THREADS: not an integer: {raw!r}") from None


def cmd_run(cfg: RunConfig, stream=None) -> int:
    stream = stream or sys.stdout
    cfg.validate()
    env, compiled = _load(cfg)
    mdp, ann = compiled.mdp, compiled.annotations
    start = _start_after_prefix(compiled, cfg.prefix)
    baseline = BaselineSpec(BaselineKind.parse(cfg.baseline), cfg.tau)
    measure = MeasureSpec.for_env(cfg.measure, ann, shaping=cfg.shaping, tol=cfg.tol)
    horizon = (cfg.horizon or ann.horizon) - len(cfg.prefix)
    if horizon < 1:
        raise ConfigError("prefix: longer than the episode horizon")
    rows = mu_sweep(mdp, compiled.task, measure, baseline, cfg.mu_grid, cfg.seed, annotations=ann,
                    tol=cfg.tol, horizon=horizon, start_state=start, start_time=len(cfg.prefix),
                    workers=_workers())

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(rows, out / "sweep.csv")
    title = f"{env.name} | {baseline.describe()} | {measure.kind.value}"
    write_sweep_svg(rows, out / "sweep.svg", title)
    frontier = write_frontier_csv(compiled, cfg, measure, baseline, start, out / "frontier.csv")
    ranges = find_safe_effective_range(rows)
    offsetting = [r.mu for r in rows if r.trajectory is not None and detect_offsetting(r.trajectory, ann)]
    errors = [(r.mu, r.error) for r in rows if r.behavior is Behavior.ERROR]
    meta = {
        "config": asdict(cfg),
        "env": {"name": env.name, "layout": env.layout, "format": FORMAT_VERSION,
                "states": mdp.n_states, "actions": list(ann.action_names), "start_state": start},
        "versions": _versions(),
        "frontier_written": frontier,
        "safe_effective_ranges": ranges,
        "offsetting_mus": offsetting,
        "errors": errors,
        "rerun": _rerun_command(cfg),
    }
    (out / "run.meta").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    for row in rows:
        flag = "  offsetting" if row.mu in offsetting else ""
        note = f"  {row.error}" if row.error else ""
        print(f"mu={row.mu:<12.6g} {row.behavior.value:<20} return={row.task_return:<8.4g} "
              f"impact={row.total_impact:<10.4g}{flag}{note}", file=stream)
    print(f"safe_effective ranges: {ranges or 'none'}", file=stream)
    print(f"wrote {out}", file=stream)
    return EXIT_RUNTIME if errors else EXIT_OK


def _rerun_command(cfg: RunConfig) -> list[str]:
    cmd = ["impactlab", "run"]
    cmd += ["--env-file", cfg.env_file] if cfg.env_file else ["--env", cfg.env]
    cmd += ["--baseline", cfg.baseline, "--tau", str(cfg.tau), "--measure", cfg.measure,
            "--shaping", cfg.shaping, "--mu-grid", ",".join(repr(m) for m in cfg.mu_grid),
            "--tol", repr(cfg.tol), "--seed", str(cfg.seed), "--out", cfg.out]
    if cfg.gamma is not None:
        cmd += ["--gamma", repr(cfg.gamma)]
    if cfg.horizon is not None:
        cmd += ["--horizon", str(cfg.horizon)]
    if cfg.prefix:
        cmd += ["--prefix", ",".join(cfg.prefix)]
    return cmd


def cmd_verify(only: str | None = None, stream=None) -> int:
    from .acceptance import run_criteria

    stream = stream or sys.stdout
    try:
        results = run_criteria(only)
    except KeyError as exc:
        raise ConfigError(f"filter: {exc.args[0]}") from None
    for r in results:
        print(r.line(), file=stream)
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="impactlab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"impactlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_list = sub.add_parser("list-envs", help="list the built-in environments")
    p_list.add_argument("--verbose", action="store_true", help="also compile and show state counts")

    p_run = sub.add_parser("run", help="sweep mu for one env/baseline/measure")
    p_run.add_argument("--config", help="config file with [env] [baseline] [measure] [planner] [output] sections")
    p_run.add_argument("--env", help=f"built-in environment ({', '.join(ENV_NAMES)})")
    p_run.add_argument("--env-file", help="environment file (overrides --env)")
    p_run.add_argument("--baseline", help="initial-state | initial-inaction | stepwise")
    p_run.add_argument("--tau", type=int, help="inaction rollout horizon for the stepwise baseline")
    p_run.add_argument("--measure", help="measure kind, e.g. relative-reachability, aup, feature-divergence")
    p_run.add_argument("--shaping", choices=["relu", "abs"], help="value-difference shaping function")
    p_run.add_argument("--mu-grid", help=f"a:b:n(log|lin) or comma list (default {DEFAULT_GRID})")
    p_run.add_argument("--gamma", type=float, help="override the environment discount")
    p_run.add_argument("--tol", type=float, help="solver tolerance")
    p_run.add_argument("--seed", type=int, help="rollout seed")
    p_run.add_argument("--horizon", type=int, help="override the episode horizon")
    p_run.add_argument("--prefix", help="comma separated actions taken before planning starts")
    p_run.add_argument("--out", help="output directory")

    p_verify = sub.add_parser("verify", help="run the acceptance suite")
    p_verify.add_argument("--filter", help="run only this criterion")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "list-envs":
            return cmd_list_envs(args.verbose)
        if args.command == "run":
            return cmd_run(build_run_config(args))
        return cmd_verify(args.filter)
    except (ConfigError, EnvError, KeyError) as exc:
        print(f"impactlab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - top-level runtime failure
        print(f"impactlab: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
