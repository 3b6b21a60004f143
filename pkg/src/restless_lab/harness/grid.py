"""Seeded replication grids: one CSV per (scenario, replication), one JSON summary per scenario."""
from __future__ import annotations

import csv
import json
import math
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..env import reset
from ..learner import (
    BASELINES,
    LearnerConfig,
    run_baseline,
    run_colored_ucrl2,
    run_with_doubling,
    run_with_mixing_guess,
    run_with_state_discovery,
)
from ..trace import RegretTrace
from .regret import Oracle, arm_caps, arm_periods, build_oracle
from .scenarios import Scenario


def replication_seeds(master: int, replications: int) -> list[int]:
    """Independent per-replication seeds derived from the scenario's master seed."""
    children = np.random.SeedSequence(master).spawn(replications)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


def learner_config(sc: Scenario, horizon: int | None = None) -> LearnerConfig:
    """Learner inputs for a scenario: state counts, periods and ``T_mix^j(1/sqrt(T))`` caps."""
    inst = sc.instance
    T = horizon or sc.horizon
    eps = 1.0 / math.sqrt(T)
    return LearnerConfig(
        delta=sc.delta,
        horizon=T,
        epsilon=eps,
        state_counts=inst.state_counts,
        caps=arm_caps(inst, eps, sc.periodic),
        periods=arm_periods(inst, sc.periodic),
    )


@dataclass
class CellResult:
    scenario: str
    replication: int
    seed: int
    trace: RegretTrace | None = None
    episodes: int | None = None
    error: str | None = None
    wall_time: float = 0.0
    extra: dict = field(default_factory=dict)


def run_algorithm(sc: Scenario, seed: int, oracle: Oracle | None = None) -> tuple[RegretTrace, int | None, dict]:
    """One replication of ``sc.algorithm``; returns the trace, episode count and extras."""
    env = reset(sc.instance, seed)
    T = sc.horizon
    algo = sc.algorithm
    if algo in BASELINES:
        if oracle is None:
            oracle = build_oracle(sc.instance, sc.eps_oracle, sc.periodic, with_diameter=False)
        return run_baseline(env, oracle.mdp, algo, T), None, {}
    cfg = learner_config(sc)
    if algo == "colored_ucrl2":
        run = run_colored_ucrl2(env, cfg)
        return run.trace, run.n_episodes, {}
    if algo == "doubling":
        trace, runs = run_with_doubling(env, cfg, T, caps_for=lambda e: arm_caps(sc.instance, e, sc.periodic))
        return trace, sum(r.n_episodes for r in runs), {"rounds": len(runs)}
    if algo == "mixing_guess":
        trace, runs = run_with_mixing_guess(env, cfg, T)
        return trace, sum(r.n_episodes for r in runs), {"rounds": len(runs)}
    if algo == "state_discovery":
        run = run_with_state_discovery(env, LearnerConfig(
            delta=cfg.delta, horizon=T, epsilon=cfg.epsilon, caps=cfg.caps, periods=cfg.periods))
        return run.trace, run.n_episodes, {"exploration_steps": int(sum(n for _, n in run.exploration_steps))}
    raise ValueError(f"unknown algorithm {algo!r}")


def _run_cell(args) -> CellResult:
    sc, rep, seed, oracle = args
    start = time.perf_counter()
    cell = CellResult(sc.name, rep, seed)
    try:
        trace, episodes, extra = run_algorithm(sc, seed, oracle)
        cell.trace = trace.with_oracle(oracle.rho_star, oracle.tolerance)
        cell.episodes = episodes
        cell.extra = extra
    except Exception:  # recorded per cell, the grid goes on
        cell.error = traceback.format_exc(limit=5)
    cell.wall_time = time.perf_counter() - start
    return cell


def write_trace_csv(path: Path, trace: RegretTrace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "cum_reward", "regret"])
        for t, cum, reg in trace.rows():
            w.writerow([t, repr(cum), repr(reg)])


def summarize(sc: Scenario, oracle: Oracle, cells: list[CellResult], wall_time: float) -> dict:
    ok = [c for c in cells if c.error is None]
    finals = np.array([c.trace.final_regret for c in ok])
    eps = [c.episodes for c in ok if c.episodes is not None]
    return {
        "scenario": sc.name,
        "algorithm": sc.algorithm,
        "horizon": sc.horizon,
        "rho_star": oracle.rho_star,
        "rho_star_tolerance": oracle.tolerance,
        "d_eps": oracle.d_eps,
        "eps_oracle": oracle.eps,
        "episodes_mean": float(np.mean(eps)) if eps else None,
        "regret_final_mean": float(finals.mean()) if finals.size else None,
        "regret_final_std": float(finals.std(ddof=1)) if finals.size > 1 else 0.0 if finals.size else None,
        "seeds": [c.seed for c in cells],
        "failures": [{"replication": c.replication, "seed": c.seed, "error": c.error} for c in cells if c.error],
        "wall_time": wall_time,
    }


def run_grid(scenarios: list[Scenario], out_dir, *, workers: int = 1, with_diameter: bool = True) -> dict:
    """Run every (scenario, replication) cell and write CSVs plus per-scenario JSON summaries.

    Returns ``{scenario name: summary}``.  A failing cell is recorded in its
    scenario's summary and does not stop the grid.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summaries = {}
    for sc in scenarios:
        start = time.perf_counter()
        oracle = build_oracle(sc.instance, sc.eps_oracle, sc.periodic, with_diameter=with_diameter)
        seeds = replication_seeds(sc.seed, sc.replications)
        jobs = [(sc, r, s, oracle) for r, s in enumerate(seeds)]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                cells = list(pool.map(_run_cell, jobs))
        else:
            cells = [_run_cell(j) for j in jobs]
        for c in cells:
            if c.trace is not None:
                write_trace_csv(out / f"{sc.name}_rep{c.replication:03d}.csv", c.trace)
        summary = summarize(sc, oracle, cells, time.perf_counter() - start)
        (out / f"{sc.name}_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
        summaries[sc.name] = summary
    return summaries
