"""Receding-horizon closed-loop simulation of air-traffic-control scenarios
with the tree-search planner and FCFS / randomized / brute-force baselines,
randomized trial generation, and metric aggregation.
"""

from __future__ import annotations

import dataclasses
import enum
import itertools
import math
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import costs, dynamics
from .bnp import BnpOptions, branch_and_play, make_warmstart
from .costs import CostWeights
from .stp import SolveCache, solve_stp
from .trajopt import IlqrOptions
from .types import (
    AgentControl,
    AgentState,
    CapExceededError,
    IncompletePermutation,
    InfeasibleError,
    JointState,
    Permutation,
    SamplingFailedError,
    Scenario,
    SubgameSolution,
    Trajectory,
    UnassignedMode,
)


class Planner(enum.Enum):
    BNP = "bnp"
    FCFS = "fcfs"
    RANDOMIZED = "random"
    BRUTE_FORCE = "brute"


@dataclass(frozen=True)
class TrialConfig:
    seed: int
    n: int
    planner: Planner
    replan_every: int = 5
    sim_dt: float = 0.1
    max_sim_time: float = 55.0
    brute_cap: int = 8
    verify_oracle: bool = False
    bnp_opts: BnpOptions = BnpOptions()

    def __post_init__(self):
        if self.replan_every < 1:
            raise ValueError("replan_every must be >= 1")
        if self.max_sim_time <= 0:
            raise ValueError("max_sim_time must be positive")


@dataclass
class Metrics:
    closed_loop_cost: float
    group_time: float
    timed_out: bool
    min_separation: float
    collided: bool
    nodes_explored_mean: float
    wall_time: float
    filter_failed: bool = False
    verify_ok: Optional[bool] = None
    planner: str = ""
    n: int = 0
    seed: int = 0


# The planning horizon covers a whole zone crossing and the actuation limits
# keep speeds low enough that conflicts near the center are real; with loose
# limits every order resolves identically and the order of play is moot.
DEFAULT_TEMPLATE = Scenario(
    n=2,
    dt=0.1,
    horizon=60,
    starts=(AgentState(2.5, 0, 0.5, math.pi), AgentState(-2.5, 0, 0.5, 0.0)),
    targets=(AgentState(-2.5, 0, 0.0, math.pi), AgentState(2.5, 0, 0.0, 0.0)),
    control_bounds=((-0.6, 0.6), (-1.0, 1.0)),
)


def sample_scenario(
    seed: int,
    n: int,
    template: Scenario = DEFAULT_TEMPLATE,
    jitter: float = 0.3,
    speed: float = 0.5,
) -> Scenario:
    """Collision-course construction: agents start at jittered angles on the
    zone circle, heading toward the antipodal point, which is their target.
    Deterministic in the seed; rejection-resamples until every initial pair
    is separated by more than the planning margin.
    """
    if n < 2:
        raise ValueError("need at least 2 agents")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), n]))
    r = template.zone_radius
    cx, cy = template.zone_center
    for _ in range(100):
        angles = np.array([2 * math.pi * k / n for k in range(n)])
        angles = angles + rng.uniform(-jitter, jitter, size=n)
        # Varied start radii and speeds give the agents different urgency, so
        # the order of play actually matters; some agents begin outside the
        # zone and fly in.
        radii = r * rng.uniform(0.9, 1.2, size=n)
        speeds = speed * rng.uniform(0.8, 1.4, size=n)
        starts = tuple(
            AgentState(cx + ri * math.cos(a), cy + ri * math.sin(a), vi, costs.wrap_angle(a + math.pi))
            for a, ri, vi in zip(angles, radii, speeds)
        )
        targets = tuple(
            AgentState(cx - r * math.cos(a), cy - r * math.sin(a), 0.0, costs.wrap_angle(a + math.pi))
            for a in angles
        )
        sep = min(
            math.hypot(starts[i].px - starts[j].px, starts[i].py - starts[j].py)
            for i in range(n)
            for j in range(i + 1, n)
        )
        if sep > template.d_plan:
            return dataclasses.replace(template, n=n, starts=starts, targets=targets)
    raise SamplingFailedError(f"could not place {n} agents after 100 draws")


def _predicted_entry_time(s: AgentState, scenario: Scenario) -> float:
    """Straight-line constant-speed extrapolation to the zone boundary."""
    cx, cy = scenario.zone_center
    px, py = s.px - cx, s.py - cy
    vx, vy = s.v * math.cos(s.theta), s.v * math.sin(s.theta)
    a = vx * vx + vy * vy
    b = 2 * (px * vx + py * vy)
    c = px * px + py * py - scenario.zone_radius**2
    if c <= 0:
        return 0.0
    if a < 1e-12:
        return math.inf
    disc = b * b - 4 * a * c
    if disc < 0:
        return math.inf
    t1 = (-b - math.sqrt(disc)) / (2 * a)
    t2 = (-b + math.sqrt(disc)) / (2 * a)
    for t in (t1, t2):
        if t >= 0:
            return t
    return math.inf


def fcfs_order(
    x: JointState,
    scenario: Scenario,
    entry_times: Optional[dict[int, float]] = None,
) -> Permutation:
    """Earlier zone entry plays earlier; agents still outside are appended by
    predicted entry time; ties break by agent index."""
    entry_times = entry_times or {}
    inside, outside = [], []
    for i, s in enumerate(x.agents):
        if i in entry_times or scenario.in_zone(s):
            inside.append((entry_times.get(i, 0.0), i))
        else:
            outside.append((_predicted_entry_time(s, scenario), i))
    order = [i for _, i in sorted(inside)] + [i for _, i in sorted(outside)]
    return Permutation(tuple(order))


def brute_force_order(
    scenario: Scenario,
    x0: JointState,
    opts: Optional[BnpOptions] = None,
    *,
    cap: int = 8,
    solo: frozenset = frozenset(),
    obstacles: tuple = (),
    cache: Optional[SolveCache] = None,
    counters: Optional[dict] = None,
    return_table: bool = False,
):
    """Enumerate all N! orders; value of each is the running maximum of raw
    sequential-planning values along its prefix path (the same enforcement
    rule the tree search applies). Returns the feasible minimum.
    """
    opts = opts or BnpOptions()
    n = scenario.n
    if n > cap:
        raise CapExceededError(f"N={n} exceeds brute-force cap {cap}")
    if cache is None:
        cache = SolveCache()

    prefix_memo: dict[tuple, SubgameSolution] = {}

    def prefix_solution(prefix: tuple) -> SubgameSolution:
        if prefix not in prefix_memo:
            perm = IncompletePermutation(prefix, frozenset(range(n)) - set(prefix), opts.unassigned_mode)
            prefix_memo[prefix] = solve_stp(
                perm,
                x0,
                scenario,
                opts.ilqr,
                mode=opts.unassigned_mode,
                solo=solo,
                obstacles=obstacles,
                cache=cache,
                counters=counters,
            )
        return prefix_memo[prefix]

    table = []
    best = None
    for order in itertools.permutations(range(n)):
        value = -math.inf
        for rho in range(0, n + 1):
            sol = prefix_solution(order[:rho])
            if opts.enforce_admissibility:
                value = max(value, sol.social_cost)
            else:
                value = sol.social_cost
        complete = prefix_solution(order)
        feasible = complete.feasible and math.isfinite(value)
        table.append((Permutation(order), value, feasible))
        if feasible and (best is None or value < best[1]):
            best = (Permutation(order), value, complete)
    if best is None:
        raise InfeasibleError("no collision-free complete permutation found")
    if return_table:
        return best[0], best[1], table
    return best[0], best[1]


def _social_stage_cost(states: Sequence[AgentState], controls: Sequence[AgentControl], scenario: Scenario, w: CostWeights) -> float:
    total = 0.0
    n = len(states)
    for i in range(n):
        total += costs.individual_stage_cost(states[i], controls[i], scenario.targets[i], w)
        for j in range(n):
            if j != i:
                total += costs.safety_stage_cost(states[i].position, states[j].position, w)
    return total


def _min_pairwise(states: Sequence[AgentState]) -> float:
    n = len(states)
    best = math.inf
    for i in range(n):
        for j in range(i + 1, n):
            best = min(best, math.hypot(states[i].px - states[j].px, states[i].py - states[j].py))
    return best


def _constant_trajectory(s: AgentState, scenario: Scenario) -> Trajectory:
    xs = np.repeat(s.as_array()[None, :], scenario.horizon + 1, axis=0)
    us = np.zeros((scenario.horizon, 2))
    return Trajectory(xs, us)


def _sub_scenario(scenario: Scenario, active: list[int], states: list[AgentState]) -> Scenario:
    return dataclasses.replace(
        scenario,
        n=len(active),
        starts=tuple(states[i] for i in active),
        targets=tuple(scenario.targets[i] for i in active),
    )


def run_trial(cfg: TrialConfig, scenario: Scenario) -> tuple[Metrics, list[dict]]:
    """Closed-loop receding-horizon simulation of one trial.

    Every ``replan_every`` steps the order of play over not-yet-arrived
    agents is recomputed; every step a single sequential-planning pass runs
    from the current joint state and each agent applies its first control.
    Agents outside the control zone plan ignoring others; arrived agents are
    frozen and act as static obstacles. Deterministic in the config.
    """
    t_start = time.perf_counter()
    w = CostWeights.from_scenario(scenario)
    n = scenario.n
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), 1000 + n]))
    dt = cfg.sim_dt
    if abs(dt - scenario.dt) > 1e-12:
        scenario = dataclasses.replace(scenario, dt=dt)

    states: list[AgentState] = list(scenario.starts)
    arrived = [False] * n
    arrive_time = [math.inf] * n
    entry_times: dict[int, float] = {}
    order: Optional[list[int]] = None  # active agents, original ids
    prev_active: Optional[list[int]] = None
    prev_tree = None
    prev_plan_controls: Optional[dict[int, np.ndarray]] = None

    total_cost = 0.0
    min_sep = math.inf
    filter_failed = False
    nodes_counts: list[int] = []
    verify_ok = True if cfg.verify_oracle else None
    trace: list[dict] = []

    max_steps = int(round(cfg.max_sim_time / dt))
    step_idx = 0
    for step_idx in range(max_steps):
        t = step_idx * dt
        for i in range(n):
            if i not in entry_times and scenario.in_zone(states[i]):
                entry_times[i] = t
            if not arrived[i]:
                d = math.hypot(states[i].px - scenario.targets[i].px, states[i].py - scenario.targets[i].py)
                if d <= scenario.arrive_radius:
                    arrived[i] = True
                    arrive_time[i] = t
        active = [i for i in range(n) if not arrived[i]]
        if not active:
            break

        sub = _sub_scenario(scenario, active, states)
        x0 = JointState(tuple(states[i] for i in active), t=step_idx)
        obstacles = tuple(_constant_trajectory(states[i], scenario) for i in range(n) if arrived[i])
        solo = frozenset(k for k, i in enumerate(active) if not scenario.in_zone(states[i]))

        need_replan = order is None or step_idx % cfg.replan_every == 0 or active != prev_active
        if need_replan:
            if active != prev_active:
                prev_tree = None
            order, nodes = _compute_order(cfg, sub, x0, active, solo, obstacles, rng, entry_times, prev_tree)
            if isinstance(nodes, tuple):
                prev_tree, explored = nodes
                nodes_counts.append(explored)
            if cfg.verify_oracle and cfg.planner in (Planner.BNP,) and len(active) <= 4:
                res = branch_and_play(sub, x0, cfg.bnp_opts, solo=solo, obstacles=obstacles)
                _, bf_val = brute_force_order(sub, x0, cfg.bnp_opts, cap=cfg.brute_cap, solo=solo, obstacles=obstacles)
                verify_ok = verify_ok and (res.value == bf_val)
            prev_active = list(active)

        # One sequential-planning pass for the current order, warm-shifted.
        perm_local = Permutation(tuple(active.index(i) for i in order))
        inits = None
        if prev_plan_controls is not None:
            inits = {
                k: prev_plan_controls[i]
                for k, i in enumerate(active)
                if i in prev_plan_controls
            }
        sol = solve_stp(
            perm_local,
            x0,
            sub,
            cfg.bnp_opts.ilqr,
            mode=UnassignedMode.AVOID_ASSIGNED,
            init_controls=inits,
            solo=solo,
            obstacles=obstacles,
        )
        controls: list[AgentControl] = [AgentControl(0.0, 0.0)] * n
        if sol.failure is not None:
            filter_failed = True
        for k, i in enumerate(active):
            controls[i] = AgentControl.from_array(sol.trajectories[k].us[0])
        prev_plan_controls = {
            i: np.vstack([sol.trajectories[k].us[1:], sol.trajectories[k].us[-1:]])
            for k, i in enumerate(active)
        }

        total_cost += _social_stage_cost(states, controls, scenario, w)
        min_sep = min(min_sep, _min_pairwise(states))
        trace.append(
            {
                "t": round(t, 9),
                "states": [[s.px, s.py, s.v, s.theta] for s in states],
                "controls": [[c.a, c.omega] for c in controls],
                "permutation": list(order),
                "stage_cost": _social_stage_cost(states, controls, scenario, w),
                "planner": cfg.planner.value,
            }
        )

        for i in range(n):
            if not arrived[i]:
                states[i] = dynamics.step(states[i], controls[i], dt, scenario.control_bounds)

    min_sep = min(min_sep, _min_pairwise(states))
    timed_out = any(not a for a in arrived)
    group_time = cfg.max_sim_time if timed_out else max((at for at in arrive_time if math.isfinite(at)), default=0.0)
    metrics = Metrics(
        closed_loop_cost=total_cost,
        group_time=group_time,
        timed_out=timed_out,
        min_separation=min_sep,
        collided=min_sep <= scenario.d_col,
        nodes_explored_mean=float(np.mean(nodes_counts)) if nodes_counts else 0.0,
        wall_time=time.perf_counter() - t_start,
        filter_failed=filter_failed,
        verify_ok=verify_ok,
        planner=cfg.planner.value,
        n=n,
        seed=cfg.seed,
    )
    return metrics, trace


def _compute_order(cfg, sub, x0, active, solo, obstacles, rng, entry_times, prev_tree):
    """Returns (order over original agent ids, bookkeeping)."""
    k = len(active)
    if cfg.planner is Planner.FCFS:
        sub_entries = {a: entry_times[i] for a, i in enumerate(active) if i in entry_times}
        p = fcfs_order(x0, sub, sub_entries)
        return [active[a] for a in p.order], None
    if cfg.planner is Planner.RANDOMIZED:
        return [active[a] for a in rng.permutation(k)], None
    if cfg.planner is Planner.BRUTE_FORCE:
        counters: dict = {}
        try:
            p, _ = brute_force_order(sub, x0, cfg.bnp_opts, cap=cfg.brute_cap, solo=solo, obstacles=obstacles, counters=counters)
        except InfeasibleError:
            return list(active), None
        return [active[a] for a in p.order], None
    # Tree search, warmstarted from the previous planning cycle when the
    # active set is unchanged.
    warm = None
    if prev_tree is not None:
        warm = make_warmstart(prev_tree, sub, x0, cfg.bnp_opts, solo=solo, obstacles=obstacles, shift=cfg.replan_every)
    try:
        res = branch_and_play(sub, x0, cfg.bnp_opts, warm, solo=solo, obstacles=obstacles)
    except InfeasibleError:
        return list(active), (None, 0)
    return [active[a] for a in res.permutation.order], (res.nodes, res.stats.nodes_explored)


SUMMARY_COLUMNS = (
    "planner",
    "N",
    "cost_mean",
    "cost_std",
    "group_mean",
    "group_std",
    "timeout_rate",
    "collision_rate",
    "nodes_mean",
)


def aggregate(metrics: Sequence[Metrics]) -> list[dict]:
    """Mean and sample standard deviation per (planner, N) group.

    Closed-loop costs are normalized by the mean raw FCFS cost over the same
    group of seeds (FCFS maps to 1.0); groups without an FCFS reference keep
    raw costs. The timeout and collision rates are percentages.
    """
    if not metrics:
        raise ValueError("need at least one trial")
    by_n_fcfs: dict[int, float] = {}
    for n_val in {m.n for m in metrics}:
        fcfs = [m.closed_loop_cost for m in metrics if m.n == n_val and m.planner == Planner.FCFS.value]
        by_n_fcfs[n_val] = float(np.mean(fcfs)) if fcfs else 1.0

    rows = []
    groups = sorted({(m.planner, m.n) for m in metrics})
    for planner, n_val in groups:
        ms = [m for m in metrics if m.planner == planner and m.n == n_val]
        norm = by_n_fcfs[n_val]
        cost = np.array([m.closed_loop_cost / norm for m in ms])
        group = np.array([m.group_time for m in ms])
        rows.append(
            {
                "planner": planner,
                "N": n_val,
                "cost_mean": float(np.mean(cost)),
                "cost_std": float(np.std(cost, ddof=1)) if len(cost) > 1 else 0.0,
                "group_mean": float(np.mean(group)),
                "group_std": float(np.std(group, ddof=1)) if len(group) > 1 else 0.0,
                "timeout_rate": 100.0 * sum(m.timed_out for m in ms) / len(ms),
                "collision_rate": 100.0 * sum(m.collided for m in ms) / len(ms),
                "nodes_mean": float(np.mean([m.nodes_explored_mean for m in ms])),
            }
        )
        checked = [m.verify_ok for m in ms if m.verify_ok is not None]
        if checked:
            rows[-1]["verify_ok"] = all(checked)
    return rows
