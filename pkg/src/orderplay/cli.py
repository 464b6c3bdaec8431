"""Command-line entry point: single simulation runs and multi-seed sweeps,
with JSON-lines trace output and a delimited summary table.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from typing import Optional, Sequence, TextIO

from .bnp import BnpOptions, Exploration
from .harness import SUMMARY_COLUMNS, Metrics, Planner, TrialConfig, aggregate, run_trial, sample_scenario
from .types import AgentState, CapExceededError, OrderPlayError, SamplingFailedError, Scenario

SCHEMA_VERSION = 1

_SCENARIO_FIELDS = {f.name for f in dataclasses.fields(Scenario)}

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FAILURE = 3


def scenario_to_dict(sc: Scenario, seed: Optional[int] = None) -> dict:
    d = {
        "n": sc.n,
        "dt": sc.dt,
        "horizon": sc.horizon,
        "starts": [[s.px, s.py, s.v, s.theta] for s in sc.starts],
        "targets": [[s.px, s.py, s.v, s.theta] for s in sc.targets],
        "zone_center": list(sc.zone_center),
        "zone_radius": sc.zone_radius,
        "d_col": sc.d_col,
        "d_plan": sc.d_plan,
        "mu": sc.mu,
        "w_track": sc.w_track,
        "w_ctrl": sc.w_ctrl,
        "timeout": sc.timeout,
        "arrive_radius": sc.arrive_radius,
        "control_bounds": [list(b) for b in sc.control_bounds] if sc.control_bounds else None,
    }
    if seed is not None:
        d["seed"] = seed
    return d


def parse_scenario(data: dict) -> Scenario:
    """Build a scenario from a JSON object; round-trips with scenario_to_dict.

    Keys must be scenario field names (plus an optional ``seed``); anything
    else is rejected so typos fail loudly.
    """
    data = dict(data)
    seed = data.pop("seed", None)
    unknown = set(data) - _SCENARIO_FIELDS
    if unknown:
        raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
    if "zone_center" in data:
        data["zone_center"] = tuple(data["zone_center"])
    if data.get("control_bounds") is not None and "control_bounds" in data:
        data["control_bounds"] = tuple(tuple(b) for b in data["control_bounds"])
    if "starts" not in data and "targets" not in data:
        # Minimal form: n + seed, everything else defaulted or overridden.
        if seed is None or "n" not in data:
            raise ValueError("scenario needs either starts/targets or n and seed")
        sc = sample_scenario(seed, data.pop("n"))
        return dataclasses.replace(sc, **data) if data else sc
    missing = {"n", "dt", "horizon", "starts", "targets"} - set(data)
    if missing:
        raise ValueError(f"missing scenario keys: {sorted(missing)}")
    data["starts"] = tuple(AgentState(*map(float, s)) for s in data["starts"])
    data["targets"] = tuple(AgentState(*map(float, s)) for s in data["targets"])
    return Scenario(**data)


def load_scenario(path: str) -> Scenario:
    with open(path) as f:
        return parse_scenario(json.load(f))


def _bnp_opts(args) -> BnpOptions:
    return BnpOptions(
        exploration=Exploration.BEST_FIRST if args.exploration == "best" else Exploration.DEPTH_FIRST,
        pairwise_pruning=not args.no_pairwise_prune,
        enforce_admissibility=not args.no_admissibility,
    )


def _write_trace(path: str, scenario_dict: dict, records: Sequence[dict]):
    with open(path, "w") as f:
        f.write(json.dumps({"schema_version": SCHEMA_VERSION, "scenario": scenario_dict}) + "\n")
        for r in records:
            f.write(json.dumps(r) + "\n")


def _print_summary(rows: Sequence[dict], out: TextIO):
    extra = [k for k in rows[0] if k not in SUMMARY_COLUMNS]
    columns = list(SUMMARY_COLUMNS) + extra
    out.write("\t".join(columns) + "\n")
    for row in rows:
        cells = []
        for c in columns:
            v = row[c]
            cells.append(f"{v:.4f}" if isinstance(v, float) else str(v))
        out.write("\t".join(cells) + "\n")


def _trial_config(args, seed: int, sc: Scenario) -> TrialConfig:
    return TrialConfig(
        seed=seed,
        n=sc.n,
        planner=Planner(args.planner),
        replan_every=args.replan_every,
        sim_dt=args.dt if args.dt is not None else sc.dt,
        max_sim_time=args.timeout,
        verify_oracle=args.verify_oracle,
        bnp_opts=_bnp_opts(args),
    )


def _scenario_for(args, seed: int, n: int) -> Scenario:
    if args.scenario:
        sc = load_scenario(args.scenario)
    else:
        sc = sample_scenario(seed, n)
    if args.horizon is not None:
        sc = dataclasses.replace(sc, horizon=args.horizon)
    if args.dt is not None:
        sc = dataclasses.replace(sc, dt=args.dt)
    return sc


def cmd_run(args) -> int:
    sc = _scenario_for(args, args.seed, args.n)
    cfg = _trial_config(args, args.seed, sc)
    metrics, trace = run_trial(cfg, sc)
    if args.out:
        import os

        path = args.out
        if os.path.isdir(path) or path.endswith(os.sep):
            os.makedirs(path, exist_ok=True)
            path = os.path.join(path, f"trace_{args.planner}_seed{args.seed}.jsonl")
        _write_trace(path, scenario_to_dict(sc, args.seed), trace)
    rows = aggregate([metrics])
    _print_summary(rows, sys.stdout)
    if metrics.collided or metrics.filter_failed or metrics.verify_ok is False:
        return EXIT_FAILURE
    return EXIT_OK


def cmd_sweep(args) -> int:
    seeds = list(range(args.seeds))
    planners = args.planner.split(",")
    all_metrics: list[Metrics] = []
    failed = False
    for planner in planners:
        for seed in seeds:
            sc = _scenario_for(args, seed, args.n)
            ns = argparse.Namespace(**vars(args))
            ns.planner = planner
            cfg = _trial_config(ns, seed, sc)
            try:
                m, _ = run_trial(cfg, sc)
            except OrderPlayError as e:
                print(f"trial failed (planner={planner} seed={seed}): {e}", file=sys.stderr)
                failed = True
                continue
            all_metrics.append(m)
            if m.verify_ok is False:
                failed = True
    if not all_metrics:
        return EXIT_FAILURE
    rows = aggregate(all_metrics)
    if args.out:
        with open(args.out, "w") as f:
            payload = {
                "schema_version": SCHEMA_VERSION,
                "rows": rows,
                "trials": [dataclasses.asdict(m) for m in all_metrics],
            }
            f.write(json.dumps(payload) + "\n")
    _print_summary(rows, sys.stdout)
    return EXIT_FAILURE if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="orderplay", description="Order-of-play trajectory game simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--scenario", help="path to a scenario JSON file")
        p.add_argument("--n", type=int, default=4, help="number of agents (sampled scenarios)")
        p.add_argument("--dt", type=float, default=None, help="simulation/planning time step override")
        p.add_argument("--horizon", type=int, default=None, help="planning horizon override (steps)")
        p.add_argument("--replan-every", type=int, default=5, help="steps between order recomputations")
        p.add_argument("--timeout", type=float, default=55.0, help="simulated time limit (s)")
        p.add_argument("--out", help="output path (trace for run, summary JSON for sweep)")
        p.add_argument("--exploration", choices=["best", "depth"], default="best")
        p.add_argument("--no-pairwise-prune", action="store_true")
        p.add_argument("--no-admissibility", action="store_true")
        p.add_argument("--verify-oracle", action="store_true", help="cross-check tree search against enumeration")
        p.add_argument("--threads", type=int, default=1, help="reserved; runs are sequential")

    run_p = sub.add_parser("run", help="run one trial")
    common(run_p)
    run_p.add_argument("--planner", choices=[p.value for p in Planner], default="bnp")
    run_p.add_argument("--seed", type=int, default=0)
    run_p.set_defaults(func=cmd_run)

    sweep_p = sub.add_parser("sweep", help="run many seeds and aggregate")
    common(sweep_p)
    sweep_p.add_argument("--planner", default="bnp", help="comma-separated planner list")
    sweep_p.add_argument("--seeds", type=int, default=10, help="number of seeds (0..seeds-1)")
    sweep_p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ValueError, OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (SamplingFailedError, CapExceededError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OrderPlayError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
