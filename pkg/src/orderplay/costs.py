"""Stage and total costs: quadratic tracking, hinge collision penalty,
predecessor-only surrogate totals, and the full symmetric social cost.

The hinge penalty mu * max(d - |p_i - p_j|, 0) is nonsmooth at separation d;
its quadratization uses the one-sided derivative from the violated side and
drops the (indefinite) curvature term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .types import AgentControl, AgentState, Scenario, Trajectory


def wrap_angle(a: float) -> float:
    """Map an angle difference to (-pi, pi]."""
    w = math.fmod(a + math.pi, 2.0 * math.pi)
    if w <= 0.0:
        w += 2.0 * math.pi
    return w - math.pi


@dataclass(frozen=True)
class CostWeights:
    """Tracking, control-regularization, and safety-penalty weights.

    ``d`` is the active safety distance of the hinge (the planning margin),
    ``mu`` the penalty coefficient.
    """

    w_pos: float = 1.0
    w_v: float = 0.1
    w_theta: float = 0.1
    w_a: float = 0.1
    w_omega: float = 0.1
    mu: float = 100.0
    d: float = 0.4

    def __post_init__(self):
        if min(self.w_pos, self.w_v, self.w_theta, self.w_a, self.w_omega) < 0:
            raise ValueError("weights must be nonnegative")
        if self.mu <= 0 or self.d <= 0:
            raise ValueError("mu and d must be positive")

    @staticmethod
    def from_scenario(sc: Scenario) -> "CostWeights":
        """Map the scenario's coarse weights onto per-term weights.

        Position tracking carries w_track; speed and heading tracking get a
        tenth of it; both control channels get w_ctrl.
        """
        return CostWeights(
            w_pos=sc.w_track,
            w_v=0.1 * sc.w_track,
            w_theta=0.1 * sc.w_track,
            w_a=sc.w_ctrl,
            w_omega=sc.w_ctrl,
            mu=sc.mu,
            d=sc.d_plan,
        )


def individual_stage_cost(s: AgentState, u: AgentControl, target: AgentState, w: CostWeights) -> float:
    """Quadratic tracking plus control regularization; heading error is wrapped."""
    dp2 = (s.px - target.px) ** 2 + (s.py - target.py) ** 2
    dth = wrap_angle(s.theta - target.theta)
    return (
        w.w_pos * dp2
        + w.w_v * (s.v - target.v) ** 2
        + w.w_theta * dth**2
        + w.w_a * u.a**2
        + w.w_omega * u.omega**2
    )


def safety_stage_cost(p_i: np.ndarray, p_j: np.ndarray, w: CostWeights) -> float:
    """Hinge penalty mu * max(d - |p_i - p_j|, 0); symmetric in its arguments."""
    dist = math.hypot(float(p_i[0] - p_j[0]), float(p_i[1] - p_j[1]))
    return w.mu * max(w.d - dist, 0.0)


# Array-level totals used by the optimizer; xs has shape (T+1, 4), us (T, 2).


def individual_total_array(xs: np.ndarray, us: np.ndarray, target: np.ndarray, w: CostWeights) -> float:
    dp2 = np.sum((xs[:, :2] - target[:2]) ** 2, axis=1)
    dv2 = (xs[:, 2] - target[2]) ** 2
    dth = np.mod(xs[:, 3] - target[3] + np.pi, 2 * np.pi) - np.pi
    state_cost = float(np.sum(w.w_pos * dp2 + w.w_v * dv2 + w.w_theta * dth**2))
    ctrl_cost = float(np.sum(w.w_a * us[:, 0] ** 2 + w.w_omega * us[:, 1] ** 2))
    return state_cost + ctrl_cost


def safety_total_array(xs: np.ndarray, pred_xs: Sequence[np.ndarray], w: CostWeights) -> float:
    """Sum of hinge penalties against each predecessor over all T+1 states."""
    total = 0.0
    for q in pred_xs:
        dist = np.hypot(xs[:, 0] - q[:, 0], xs[:, 1] - q[:, 1])
        total += float(np.sum(w.mu * np.maximum(w.d - dist, 0.0)))
    return total


def surrogate_total_array(xs: np.ndarray, us: np.ndarray, target: np.ndarray, pred_xs: Sequence[np.ndarray], w: CostWeights) -> float:
    return individual_total_array(xs, us, target, w) + safety_total_array(xs, pred_xs, w)


def surrogate_total_cost(traj: Trajectory, predecessors: Sequence[Trajectory], target: AgentState, w: CostWeights) -> float:
    """Individual total plus hinge penalties against predecessors only.

    With no predecessors this equals the pure individual total.
    """
    for p in predecessors:
        if p.horizon != traj.horizon:
            raise ValueError("predecessor horizon mismatch")
    return surrogate_total_array(traj.xs, traj.us, target.as_array(), [p.xs for p in predecessors], w)


def social_cost(
    trajectories: Sequence[Trajectory],
    targets: Sequence[AgentState],
    w: CostWeights,
    partners: Optional[Sequence[Sequence[int]]] = None,
) -> tuple[float, tuple[tuple[float, float], ...]]:
    """Social cost and per-agent (individual, safety) breakdown.

    Each agent's safety term sums over its ``partners`` (all other agents by
    default), so every counted unordered pair contributes once per endpoint
    (twice in the social total). Partner sums run in ascending index for
    reproducibility.
    """
    n = len(trajectories)
    horizons = {t.horizon for t in trajectories}
    if len(horizons) > 1:
        raise ValueError("trajectories must share a horizon")
    breakdown = []
    total = 0.0
    for i in range(n):
        others = sorted(partners[i]) if partners is not None else [j for j in range(n) if j != i]
        indiv = individual_total_array(trajectories[i].xs, trajectories[i].us, targets[i].as_array(), w)
        safe = safety_total_array(trajectories[i].xs, [trajectories[j].xs for j in others], w)
        breakdown.append((indiv, safe))
        total += indiv + safe
    return total, tuple(breakdown)


def quadratize_stage(
    x: np.ndarray,
    u: np.ndarray,
    target: np.ndarray,
    pred_positions: Sequence[np.ndarray],
    w: CostWeights,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Gradient and (positive semidefinite) Hessian blocks of one stage cost.

    Returns (l_x, l_u, l_xx, l_uu); the state-control cross term is zero.
    The hinge contributes only its gradient (Gauss-Newton treatment).
    """
    l_x = np.zeros(4)
    l_x[0] = 2.0 * w.w_pos * (x[0] - target[0])
    l_x[1] = 2.0 * w.w_pos * (x[1] - target[1])
    l_x[2] = 2.0 * w.w_v * (x[2] - target[2])
    l_x[3] = 2.0 * w.w_theta * wrap_angle(float(x[3] - target[3]))
    l_xx = np.diag([2.0 * w.w_pos, 2.0 * w.w_pos, 2.0 * w.w_v, 2.0 * w.w_theta])
    for q in pred_positions:
        dx = float(x[0] - q[0])
        dy = float(x[1] - q[1])
        r = math.hypot(dx, dy)
        if r < w.d and r > 1e-12:
            l_x[0] += -w.mu * dx / r
            l_x[1] += -w.mu * dy / r
    l_u = np.array([2.0 * w.w_a * u[0], 2.0 * w.w_omega * u[1]])
    l_uu = np.diag([2.0 * w.w_a, 2.0 * w.w_omega])
    return l_x, l_u, l_xx, l_uu
