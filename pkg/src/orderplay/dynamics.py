"""Discrete-time unicycle model: forward-Euler step, rollout, linearization.

State is (px, py, v, theta), control is (a, omega). All functions are pure.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .types import AgentControl, AgentState, Trajectory

Bounds = Optional[tuple[tuple[float, float], tuple[float, float]]]


@dataclass(frozen=True)
class LinearizedDynamics:
    """Jacobians A (4x4) and B (4x2) of the discrete Euler step map."""

    A: np.ndarray
    B: np.ndarray


def clamp_control(u: np.ndarray, bounds: Bounds) -> np.ndarray:
    """Saturate a control (or an array of controls, last axis 2) to box bounds."""
    if bounds is None:
        return np.asarray(u, dtype=float)
    (a_lo, a_hi), (w_lo, w_hi) = bounds
    u = np.array(u, dtype=float)
    if u.ndim == 1:
        # Fast scalar path for the per-step calls inside optimizer loops.
        u[0] = a_lo if u[0] < a_lo else (a_hi if u[0] > a_hi else u[0])
        u[1] = w_lo if u[1] < w_lo else (w_hi if u[1] > w_hi else u[1])
        return u
    u[..., 0] = np.clip(u[..., 0], a_lo, a_hi)
    u[..., 1] = np.clip(u[..., 1], w_lo, w_hi)
    return u


def step_array(x: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
    """Euler step on raw arrays; no clamping."""
    px, py, v, th = x
    a, w = u
    return np.array([px + dt * v * np.cos(th), py + dt * v * np.sin(th), v + dt * a, th + dt * w])


def step(s: AgentState, u: AgentControl, dt: float, bounds: Bounds = None) -> AgentState:
    """One forward-Euler step; controls are clamped before integration."""
    uc = clamp_control(u.as_array(), bounds)
    return AgentState.from_array(step_array(s.as_array(), uc, dt))


def linearize_array(x: np.ndarray, u: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    v, th = x[2], x[3]
    c, s = np.cos(th), np.sin(th)
    A = np.array(
        [
            [1.0, 0.0, dt * c, -dt * v * s],
            [0.0, 1.0, dt * s, dt * v * c],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )
    B = np.array([[0.0, 0.0], [0.0, 0.0], [dt, 0.0], [0.0, dt]])
    return A, B


def linearize(s: AgentState, u: AgentControl, dt: float) -> LinearizedDynamics:
    """Analytic Jacobians of :func:`step` at (s, u)."""
    A, B = linearize_array(s.as_array(), u.as_array(), dt)
    return LinearizedDynamics(A, B)


def rollout_array(x0: np.ndarray, us: np.ndarray, dt: float, bounds: Bounds = None) -> tuple[np.ndarray, np.ndarray]:
    """Roll controls through the dynamics; returns (xs, clamped us)."""
    us = clamp_control(np.asarray(us, dtype=float), bounds)
    T = us.shape[0]
    xs = np.empty((T + 1, 4))
    xs[0] = x0
    for k in range(T):
        xs[k + 1] = step_array(xs[k], us[k], dt)
    return xs, us


def rollout(x0: AgentState, controls: Sequence[AgentControl], dt: float, bounds: Bounds = None) -> Trajectory:
    """Trajectory from an initial state and a control sequence."""
    if len(controls) == 0:
        raise ValueError("controls must be non-empty")
    us = np.array([u.as_array() for u in controls])
    xs, us = rollout_array(x0.as_array(), us, dt, bounds)
    return Trajectory(xs, us)


def check_consistency(traj: Trajectory, dt: float, tol: float = 1e-9) -> bool:
    """Re-step the stored controls and compare states elementwise."""
    xs, _ = rollout_array(traj.xs[0], traj.us, dt)
    return bool(np.max(np.abs(xs - traj.xs)) <= tol)
