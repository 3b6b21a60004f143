"""Command line: ``restless-lab {run,oracle,analyze,search-witness}``."""
from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .. import chain
from .grid import run_grid
from .regret import build_oracle
from .scenarios import ALGORITHMS, BUNDLED, ScenarioError, resolve
from .witness import exploration_witness, index_suboptimality_search


def _scenario(args):
    sc = resolve(args.scenario)
    overrides = {}
    for key in ("seed", "replications", "horizon", "algorithm", "eps_oracle"):
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = val
    return replace(sc, **overrides) if overrides else sc


def _emit(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, indent=2, default=_jsonable)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n")
    print(text)


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, tuple):
        return list(x)
    return str(x)


def cmd_run(args) -> int:
    sc = _scenario(args)
    out = Path(args.out or f"runs/{sc.name}")
    summaries = run_grid([sc], out, workers=args.workers, with_diameter=not args.no_diameter)
    s = summaries[sc.name]
    print(json.dumps(s, indent=2))
    return 1 if s["failures"] else 0


def cmd_oracle(args) -> int:
    sc = _scenario(args)
    o = build_oracle(sc.instance, sc.eps_oracle, sc.periodic)
    counts = np.bincount(o.policy, minlength=sc.instance.n_arms)
    payload = {
        "scenario": sc.name,
        "rho_star": o.rho_star,
        "rho_star_tolerance": o.tolerance if math.isfinite(o.tolerance) else None,
        "d_eps": o.d_eps if o.d_eps is not None and math.isfinite(o.d_eps) else None,
        "eps_oracle": o.eps,
        "caps": list(o.caps),
        "periods": list(o.periods),
        "mixing_quarter": [chain.mixing_time(a.P, 0.25, periodic=sc.periodic) for a in sc.instance.arms],
        "meta_states": o.mdp.n_states,
        "policy_arm_counts": counts.tolist(),
    }
    _emit(payload, args.out)
    return 0


def cmd_analyze(args) -> int:
    sc = _scenario(args)
    arms = []
    for j, arm in enumerate(sc.instance.arms):
        prof = chain.profile(arm.P)
        arms.append({
            "arm": j,
            "states": arm.n_states,
            "stationary": prof.stationary,
            "stationary_mean_reward": arm.stationary_mean,
            "period": prof.period,
            "diameter": prof.diameter,
            "mixing_quarter": prof.mix_quarter,
        })
    _emit({"scenario": sc.name, "arms": arms}, args.out)
    return 0


def cmd_search_witness(args) -> int:
    report = index_suboptimality_search(args.budget, args.seed if args.seed is not None else 0, caps=args.caps)
    payload: dict = {"tried": report.tried, "conclusive": report.conclusive}
    w = report.witness
    if w is not None:
        payload["index_witness"] = {
            "arms": [{"transitions": a.P.matrix, "rewards": a.rewards} for a in w.instance_large.arms],
            "caps": w.caps,
            "state_two_arms": w.state_small,
            "state_three_arms": w.state_large,
            "optimal_arm_two_arms": w.choice_small,
            "optimal_arm_three_arms": w.choice_large,
            "rho_two_arms": w.rho_small,
            "rho_three_arms": w.rho_large,
            "loss_two_arms": w.loss_small,
            "losses_three_arms": w.losses_large,
            "brute_force_rho_two_arms": w.brute_force_rho_small,
            "notes": w.notes,
        }
    else:
        payload["index_witness"] = None
    if args.scenario:
        sc = resolve(args.scenario)
        o = build_oracle(sc.instance, args.eps_oracle or sc.eps_oracle, sc.periodic, with_diameter=False)
        ew = exploration_witness(o.mdp)
        payload["exploration_witness"] = None if ew is None else vars(ew)
    _emit(payload, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="restless-lab", description="Restless bandit learning experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    scen_help = f"bundled scenario ({', '.join(BUNDLED)}) or path to a .cfg file"

    def common(sp, scenario=True):
        if scenario:
            sp.add_argument("scenario", help=scen_help)
        sp.add_argument("--seed", type=int, help="master seed (overrides the scenario)")
        sp.add_argument("--out", help="output directory (run) or JSON file")
        sp.add_argument("--eps-oracle", dest="eps_oracle", type=float, help="aggregation accuracy of the oracle")

    r = sub.add_parser("run", help="run a scenario's replications and write CSV/JSON")
    common(r)
    r.add_argument("--replications", type=int)
    r.add_argument("--horizon", type=int)
    r.add_argument("--algorithm", choices=ALGORITHMS)
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--no-diameter", action="store_true", help="skip the oracle diameter (faster, no tolerance)")
    r.set_defaults(func=cmd_run)

    o = sub.add_parser("oracle", help="optimal gain, policy summary, diameter and mixing times")
    common(o)
    o.set_defaults(func=cmd_oracle)

    a = sub.add_parser("analyze", help="per-arm chain analysis")
    common(a)
    a.set_defaults(func=cmd_analyze)

    w = sub.add_parser("search-witness", help="search for an index-policy counterexample")
    common(w, scenario=False)
    w.add_argument("--budget", type=int, default=200)
    w.add_argument("--caps", type=int, default=3)
    w.add_argument("--scenario", help="also report an exploration witness for this scenario")
    w.set_defaults(func=cmd_search_witness)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
