"""Single-agent iLQR over the predecessor-only surrogate cost, plus the
rollout-based safety filter that guarantees collision-free execution
against predecessors.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import costs, dynamics
from ._kernels import backward_kernel, forward_kernel, rollout_kernel, surrogate_cost_kernel
from .costs import CostWeights
from .types import AgentState, FilterFailedError, NonFiniteError, Policy, Scenario, Trajectory

_UNBOUNDED = ((-math.inf, math.inf), (-math.inf, math.inf))

DEFAULT_ALPHAS = tuple(0.5**k for k in range(7))  # 1, 1/2, ..., 1/64


class InitStrategy(enum.Enum):
    ZERO_CONTROLS = "zero"
    PREVIOUS_SHIFTED = "previous_shifted"


@dataclass(frozen=True)
class IlqrOptions:
    max_iters: int = 60
    cost_tolerance: float = 1e-6
    reg_init: float = 1.0
    reg_min: float = 1e-6
    reg_max: float = 1e8
    line_search_alphas: tuple[float, ...] = DEFAULT_ALPHAS
    init_strategy: InitStrategy = InitStrategy.ZERO_CONTROLS
    record_model_check: bool = False

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.cost_tolerance <= 0:
            raise ValueError("cost_tolerance must be positive")


@dataclass(frozen=True)
class IterTrace:
    """One accepted iLQR iteration (for debugging and descent assertions)."""

    iteration: int
    cost: float
    reg: float
    alpha: float
    expected_decrease: float
    actual_decrease: float
    model_check: Optional[tuple[float, float]] = None  # (expected, actual) at smallest alpha


def _backward_pass(xs, us, target, pred_xs, w: CostWeights, dt: float, reg: float):
    """Riccati sweep; returns (k_ff, K, dV1, dV2) or None if Quu is not PD."""
    T = us.shape[0]
    k_ff = np.zeros((T, 2))
    K = np.zeros((T, 2, 4))
    # Terminal stage: state cost only.
    l_x, _, l_xx, _ = costs.quadratize_stage(xs[T], np.zeros(2), target, [q[T] for q in pred_xs], w)
    Vx, Vxx = l_x, l_xx
    dV1 = dV2 = 0.0
    for t in range(T - 1, -1, -1):
        A, B = dynamics.linearize_array(xs[t], us[t], dt)
        l_x, l_u, l_xx, l_uu = costs.quadratize_stage(xs[t], us[t], target, [q[t] for q in pred_xs], w)
        Qx = l_x + A.T @ Vx
        Qu = l_u + B.T @ Vx
        Qxx = l_xx + A.T @ Vxx @ A
        Quu = l_uu + B.T @ Vxx @ B
        Qux = B.T @ Vxx @ A
        # Closed-form Cholesky solve of the regularized 2x2 Quu.
        qa = Quu[0, 0] + reg
        qb = Quu[1, 0]
        qc = Quu[1, 1] + reg
        if qa <= 0.0:
            return None
        l11 = math.sqrt(qa)
        l21 = qb / l11
        d2 = qc - l21 * l21
        if d2 <= 0.0:
            return None
        l22 = math.sqrt(d2)
        rhs = np.column_stack([Qu, Qux])
        z1 = rhs[0] / l11
        z2 = (rhs[1] - l21 * z1) / l22
        y2 = z2 / l22
        y1 = (z1 - l21 * y2) / l11
        k_ff[t] = (-y1[0], -y2[0])
        K[t, 0] = -y1[1:]
        K[t, 1] = -y2[1:]
        Vx = Qx + K[t].T @ Quu @ k_ff[t] + K[t].T @ Qu + Qux.T @ k_ff[t]
        Vxx = Qxx + K[t].T @ Quu @ K[t] + K[t].T @ Qux + Qux.T @ K[t]
        Vxx = 0.5 * (Vxx + Vxx.T)
        dV1 += float(k_ff[t] @ Qu)
        dV2 += 0.5 * float(k_ff[t] @ Quu @ k_ff[t])
    return k_ff, K, dV1, dV2


def _forward_pass(xs, us, k_ff, K, alpha, dt, bounds):
    T = us.shape[0]
    xs_new = np.empty_like(xs)
    us_new = np.empty_like(us)
    xs_new[0] = xs[0]
    for t in range(T):
        u = us[t] + alpha * k_ff[t] + K[t] @ (xs_new[t] - xs[t])
        us_new[t] = dynamics.clamp_control(u, bounds)
        xs_new[t + 1] = dynamics.step_array(xs_new[t], us_new[t], dt)
    return xs_new, us_new


def solve_single_agent(
    x0: AgentState,
    target: AgentState,
    predecessors: Sequence[Trajectory],
    w: CostWeights,
    opts: IlqrOptions,
    dt: float,
    horizon: Optional[int] = None,
    bounds: dynamics.Bounds = None,
    init_controls: Optional[np.ndarray] = None,
    trace_sink: Optional[list] = None,
) -> tuple[Trajectory, Policy, float]:
    """Locally optimize one agent's trajectory against fixed predecessor plans.

    Accepted iterations strictly decrease the surrogate cost; terminates on
    max_iters, on relative decrease below cost_tolerance, or when the
    regularization schedule is exhausted. Raises NonFiniteError on divergence.
    """
    if horizon is None:
        if not predecessors:
            raise ValueError("horizon required when there are no predecessors")
        horizon = predecessors[0].horizon
    for p in predecessors:
        if p.horizon != horizon:
            raise ValueError("predecessor horizon mismatch")
    T = horizon
    tgt = target.as_array()
    pred_pos = (
        np.ascontiguousarray(np.stack([p.xs[:, :2] for p in predecessors]))
        if predecessors
        else np.zeros((0, T + 1, 2))
    )
    (a_lo, a_hi), (w_lo, w_hi) = bounds if bounds is not None else _UNBOUNDED

    def _cost(xs, us):
        return surrogate_cost_kernel(xs, us, tgt, pred_pos, w.w_pos, w.w_v, w.w_theta, w.w_a, w.w_omega, w.mu, w.d)

    if init_controls is not None:
        us = np.ascontiguousarray(init_controls, dtype=float)
        if us.shape != (T, 2):
            raise ValueError("init_controls must have shape (T, 2)")
    else:
        us = np.zeros((T, 2))
    xs, us = rollout_kernel(x0.as_array(), us, dt, a_lo, a_hi, w_lo, w_hi)
    J = _cost(xs, us)
    if not np.isfinite(J) or not np.all(np.isfinite(xs)):
        raise NonFiniteError("non-finite initial trajectory or cost")

    reg = opts.reg_init
    for it in range(opts.max_iters):
        ok, k_ff, K, dV1, dV2 = backward_kernel(
            xs, us, tgt, pred_pos, w.w_pos, w.w_v, w.w_theta, w.w_a, w.w_omega, w.mu, w.d, dt, reg
        )
        if not ok:
            reg = min(reg * 10.0, opts.reg_max * 10.0)
            if reg > opts.reg_max:
                break
            continue

        model_check = None
        if opts.record_model_check:
            a_min = opts.line_search_alphas[-1]
            xs_c, us_c = forward_kernel(xs, us, k_ff, K, a_min, dt, a_lo, a_hi, w_lo, w_hi)
            J_c = _cost(xs_c, us_c)
            expected_min = -(a_min * dV1 + a_min**2 * dV2)
            model_check = (expected_min, J - J_c)

        accepted = False
        for alpha in opts.line_search_alphas:
            xs_new, us_new = forward_kernel(xs, us, k_ff, K, alpha, dt, a_lo, a_hi, w_lo, w_hi)
            J_new = _cost(xs_new, us_new)
            if np.isfinite(J_new) and J_new < J:
                accepted = True
                break
        if accepted:
            decrease = J - J_new
            if trace_sink is not None:
                trace_sink.append(
                    IterTrace(it, float(J_new), reg, alpha, -(alpha * dV1 + alpha**2 * dV2), float(decrease), model_check)
                )
            xs, us, J_prev, J = xs_new, us_new, J, J_new
            reg = max(reg / 2.0, opts.reg_min)
            if decrease < opts.cost_tolerance * max(1.0, abs(J_prev)):
                break
        else:
            reg = reg * 10.0
            if reg > opts.reg_max:
                break

    if not np.all(np.isfinite(xs)) or not np.isfinite(J):
        raise NonFiniteError("non-finite iterate")

    # Final backward pass to extract feedback gains around the solution.
    gains = np.zeros((T, 2, 4))
    reg_final = max(reg, opts.reg_min)
    while reg_final <= opts.reg_max:
        ok, _, K, _, _ = backward_kernel(
            xs, us, tgt, pred_pos, w.w_pos, w.w_v, w.w_theta, w.w_a, w.w_omega, w.mu, w.d, dt, reg_final
        )
        if ok:
            gains = K
            break
        reg_final *= 10.0

    traj = Trajectory(xs, us)
    # Report the cost through the reference evaluator so callers can compare
    # against costs.* totals without worrying about summation order.
    J_out = costs.surrogate_total_array(xs, us, tgt, [p.xs for p in predecessors], w)
    return traj, Policy(traj, gains), float(J_out)


def min_separation(traj: Trajectory, predecessors: Sequence[Trajectory]) -> float:
    """Minimum over time of distance to any predecessor; +inf with none."""
    best = math.inf
    for p in predecessors:
        d = np.hypot(traj.xs[:, 0] - p.xs[:, 0], traj.xs[:, 1] - p.xs[:, 1])
        best = min(best, float(np.min(d)))
    return best


def _evasive_rollout(traj: Trajectory, start: int, a_cmd: float, w_cmd: float, dt: float, bounds) -> Trajectory:
    us = np.array(traj.us)
    us[start:, 0] = a_cmd
    us[start:, 1] = w_cmd
    xs, us = dynamics.rollout_array(traj.xs[0], us, dt, bounds)
    return Trajectory(xs, us)


def safety_filter(
    traj: Trajectory,
    policy: Optional[Policy],
    predecessors: Sequence[Trajectory],
    scenario: Scenario,
) -> Trajectory:
    """Minimally invasive override: keep the plan if it stays clear of all
    predecessors; otherwise, from just before the first predicted violation,
    replace the remaining controls with a deterministic evasive maneuver
    (maximal deceleration plus a saturated turn away from the nearest
    violating predecessor) and re-roll. Raises FilterFailedError when no
    evasion start restores separation.
    """
    if not predecessors:
        return traj
    d_col = scenario.d_col
    dists = np.full(traj.xs.shape[0], np.inf)
    for p in predecessors:
        if p.horizon != traj.horizon:
            raise ValueError("predecessor horizon mismatch")
        d = np.hypot(traj.xs[:, 0] - p.xs[:, 0], traj.xs[:, 1] - p.xs[:, 1])
        dists = np.minimum(dists, d)
    viol = np.nonzero(dists <= d_col)[0]
    if viol.size == 0:
        return traj
    first = int(viol[0])
    if first == 0:
        raise FilterFailedError("initial state already violates separation")

    bounds = scenario.control_bounds if scenario.control_bounds is not None else ((-2.0, 2.0), (-1.5, 1.5))
    (a_lo, _), (_, w_hi) = bounds

    # Identify the nearest predecessor at the first violation for tie-breaking.
    near, near_d = None, math.inf
    for p in predecessors:
        d = math.hypot(traj.xs[first, 0] - p.xs[first, 0], traj.xs[first, 1] - p.xs[first, 1])
        if d < near_d:
            near, near_d = p, d
    bearing = math.atan2(near.xs[first, 1] - traj.xs[first, 1], near.xs[first, 0] - traj.xs[first, 0])

    for start in range(first - 1, -1, -1):
        away = costs.wrap_angle(bearing - float(traj.xs[start, 3]))
        tie_sign = -1.0 if away >= 0 else 1.0  # steer opposite the threat bearing
        best = None
        for sign in (tie_sign, -tie_sign):
            cand = _evasive_rollout(traj, start, a_lo, sign * w_hi, scenario.dt, scenario.control_bounds)
            sep = min_separation(cand, predecessors)
            if best is None or sep > best[0]:
                best = (sep, cand)
        if best[0] > d_col:
            return best[1]
    raise FilterFailedError("evasion cannot restore separation within the horizon")
