"""Sequential trajectory planning: one single-agent solve per agent, in
priority order, each avoiding only its predecessors, then assembly of the
subgame solution and its full social cost.

A call is deterministic: identical inputs produce bitwise-identical
solutions. Exactly one single-agent solve is performed per (non-fixed)
agent.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence, Union

import numpy as np

from . import costs, dynamics, trajopt
from .costs import CostWeights
from .trajopt import IlqrOptions
from .types import (
    FilterFailedError,
    IncompletePermutation,
    JointState,
    NonFiniteError,
    Permutation,
    Policy,
    Scenario,
    SubgameSolution,
    Trajectory,
    UnassignedMode,
)

PermLike = Union[Permutation, IncompletePermutation]


def _as_incomplete(p: PermLike, mode: UnassignedMode) -> IncompletePermutation:
    if isinstance(p, Permutation):
        return IncompletePermutation.complete(p.order, mode)
    return p


def _traj_key(t: Trajectory) -> bytes:
    return t.xs.tobytes()


class SolveCache:
    """Memo for single-agent solves keyed by the exact solve inputs.

    Safe because solves are pure: a hit returns the bitwise-identical result
    that a fresh solve would produce.
    """

    def __init__(self):
        self._data: dict = {}
        self.hits = 0
        self.misses = 0

    def get(self, key):
        if key in self._data:
            self.hits += 1
            return self._data[key]
        self.misses += 1
        return None

    def put(self, key, value):
        self._data[key] = value


def _zero_policy(traj: Trajectory) -> Policy:
    return Policy(traj, np.zeros((traj.horizon, 2, 4)))


def solve_stp(
    perm: PermLike,
    x0: JointState,
    scenario: Scenario,
    opts: IlqrOptions,
    *,
    mode: UnassignedMode = UnassignedMode.AVOID_ASSIGNED,
    weights: Optional[CostWeights] = None,
    init_controls: Optional[dict[int, np.ndarray]] = None,
    solo: frozenset[int] = frozenset(),
    fixed: Optional[dict[int, Trajectory]] = None,
    obstacles: Sequence[Trajectory] = (),
    cache: Optional[SolveCache] = None,
    counters: Optional[dict] = None,
) -> SubgameSolution:
    """One sequential-planning pass for a complete or partial order of play.

    Assigned agents are solved in prefix order, each avoiding the already
    planned assigned agents before it. Unassigned agents are then solved in
    ascending index: avoiding all assigned agents (AVOID_ASSIGNED) or nobody
    (UNAWARE). Every solved agent's plan goes through the safety filter
    against its predecessors; solver or filter failures yield an infeasible
    solution with social cost +inf.

    ``solo`` agents plan ignoring everyone (and skip the filter) but still
    appear in their successors' constraints. ``fixed`` agents are not solved;
    their given trajectories act as predecessors to every solved agent.
    ``obstacles`` are out-of-game trajectories avoided by every non-solo
    agent; they do not enter the social cost.
    """
    p = _as_incomplete(perm, mode)
    n = p.n
    if len(x0) != n:
        raise ValueError("joint state size mismatch")
    w = weights if weights is not None else CostWeights.from_scenario(scenario)
    fixed = fixed or {}
    init_controls = init_controls or {}
    T = scenario.horizon

    trajs: dict[int, Trajectory] = dict(fixed)
    policies: dict[int, Policy] = {i: _zero_policy(t) for i, t in fixed.items()}

    fixed_ids = sorted(fixed)
    assigned_seen: list[int] = []
    solve_order = [i for i in p.assigned if i not in fixed] + [i for i in sorted(p.unassigned) if i not in fixed]

    failure = None
    for i in solve_order:
        if i in p.unassigned:
            pred_ids = list(p.assigned) if p.mode is UnassignedMode.AVOID_ASSIGNED else []
        else:
            pred_ids = list(assigned_seen)
            assigned_seen.append(i)
        pred_ids = sorted(set(pred_ids) | set(fixed_ids))
        if i in solo:
            pred_ids = []
            preds = []
        else:
            preds = list(obstacles) + [trajs[j] for j in pred_ids]

        init = init_controls.get(i)
        key = None
        if cache is not None:
            key = (
                i,
                x0.agents[i].as_array().tobytes(),
                tuple(("obs", k, _traj_key(o)) for k, o in enumerate(obstacles)) if i not in solo else (),
                tuple((j, _traj_key(trajs[j])) for j in pred_ids),
                None if init is None else np.asarray(init, dtype=float).tobytes(),
            )
            hit = cache.get(key)
            if hit is not None:
                trajs[i], policies[i] = hit
                continue
        if counters is not None:
            counters["solves"] = counters.get("solves", 0) + 1
        try:
            traj, pol = _solve_relevant(
                i, x0.agents[i], scenario.targets[i], preds, w, opts, scenario, init, cache
            )
            if i not in solo:
                traj = trajopt.safety_filter(traj, pol, preds, scenario)
        except (NonFiniteError, FilterFailedError) as e:
            failure = f"{type(e).__name__}: {e}"
            xs, us = dynamics.rollout_array(x0.agents[i].as_array(), np.zeros((T, 2)), scenario.dt, scenario.control_bounds)
            traj, pol = Trajectory(xs, us), None
        if pol is None:
            pol = _zero_policy(traj)
        trajs[i], policies[i] = traj, pol
        if cache is not None and failure is None:
            cache.put(key, (traj, pol))

    all_trajs = tuple(trajs[i] for i in range(n))
    # The value counts safety terms only over constrained pairs: with
    # AVOID_ASSIGNED everything except unassigned-unassigned pairs, with
    # UNAWARE only committed-committed pairs. A complete permutation counts
    # every pair, so adding an agent to the prefix only ever adds
    # (nonnegative) safety terms -- the optimistic-bound property the search
    # relies on.
    committed = set(p.assigned) | set(fixed_ids)
    if p.mode is UnassignedMode.AVOID_ASSIGNED:
        partners = [
            [j for j in range(n) if j != i and (i in committed or j in committed)]
            for i in range(n)
        ]
    else:
        partners = [
            [j for j in range(n) if j != i and i in committed and j in committed]
            for i in range(n)
        ]
    social, breakdown = costs.social_cost(all_trajs, scenario.targets, w, partners)

    if failure is not None:
        return SubgameSolution(
            profile=tuple(policies[i] for i in range(n)),
            trajectories=all_trajs,
            costs=breakdown,
            social_cost=math.inf,
            feasible=False,
            failure=failure,
        )

    feasible = _constrained_pairs_safe(p, all_trajs, scenario, fixed_ids, solo)
    if feasible and obstacles:
        for i in range(n):
            if i in solo:
                continue
            if any(_pair_min_dist(all_trajs[i], o) <= scenario.d_col for o in obstacles):
                feasible = False
                break
    return SubgameSolution(
        profile=tuple(policies[i] for i in range(n)),
        trajectories=all_trajs,
        costs=breakdown,
        social_cost=float(social),
        feasible=feasible,
    )


def _solve_relevant(
    agent: int,
    x0_state,
    target,
    preds: list,
    w: CostWeights,
    opts: IlqrOptions,
    scenario: Scenario,
    init,
    cache: Optional[SolveCache],
):
    """Single-agent solve that is exactly invariant to irrelevant predecessors.

    Solves with an initially empty predecessor set, then repeatedly adds the
    predecessors that come within the penalty margin of the current solution
    and re-solves, until the relevant set is stable. A predecessor that never
    enters the relevant set has bitwise-zero influence on the result, so two
    solves whose predecessor sets differ only in such trajectories return
    identical plans -- the property the search's order-equivalence pruning
    relies on.
    """
    active: set[int] = set()
    while True:
        sel = [preds[k] for k in sorted(active)]
        key = None
        if cache is not None:
            key = (
                "ilqr",
                agent,
                x0_state.as_array().tobytes(),
                tuple(_traj_key(p) for p in sel),
                None if init is None else np.asarray(init, dtype=float).tobytes(),
            )
            hit = cache.get(key)
        else:
            hit = None
        if hit is not None:
            traj, pol = hit
        else:
            traj, pol, _ = trajopt.solve_single_agent(
                x0_state,
                target,
                sel,
                w,
                opts,
                dt=scenario.dt,
                horizon=scenario.horizon,
                bounds=scenario.control_bounds,
                init_controls=init,
            )
            if cache is not None:
                cache.put(key, (traj, pol))
        near = {k for k in range(len(preds)) if _pair_min_dist(traj, preds[k]) < w.d}
        if near <= active:
            return traj, pol
        active |= near


def _pair_min_dist(a: Trajectory, b: Trajectory) -> float:
    return float(np.min(np.hypot(a.xs[:, 0] - b.xs[:, 0], a.xs[:, 1] - b.xs[:, 1])))


def _constrained_pairs_safe(p: IncompletePermutation, trajs, scenario: Scenario, fixed_ids, solo=frozenset()) -> bool:
    """Strict separation above d_col among pairs that are mutually constrained.

    Assigned (and fixed) agents are constrained against each other; in
    AVOID_ASSIGNED mode unassigned agents are additionally constrained
    against every assigned agent. Unassigned pairs are never constrained, and
    neither is any pair involving a solo agent (solo plans ignore everyone by
    construction, so their overlaps carry no information).
    """
    committed = sorted((set(p.assigned) | set(fixed_ids)) - set(solo))
    for a_idx, i in enumerate(committed):
        for j in committed[a_idx + 1 :]:
            if _pair_min_dist(trajs[i], trajs[j]) <= scenario.d_col:
                return False
    if p.mode is UnassignedMode.AVOID_ASSIGNED:
        for i in sorted(p.unassigned - set(solo)):
            for j in committed:
                if _pair_min_dist(trajs[i], trajs[j]) <= scenario.d_col:
                    return False
    return True


def pairwise_collision_free(
    sol: SubgameSolution, i: int, j: int, scenario: Scenario, threshold: Optional[float] = None
) -> bool:
    """True iff agents i and j stay strictly farther apart than the threshold
    (the collision distance by default) at every step of the solution."""
    if i == j:
        raise ValueError("i and j must differ")
    thr = scenario.d_col if threshold is None else threshold
    return _pair_min_dist(sol.trajectories[i], sol.trajectories[j]) > thr
