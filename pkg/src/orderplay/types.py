"""Shared domain types: states, trajectories, permutations, scenarios, solutions.

All types are immutable value objects after construction and safe to share
between concurrent tasks. Agent indices are 0-based everywhere in code;
documentation and traces may use 1-based labels.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np


class OrderPlayError(Exception):
    """Base class for all library errors."""


class NonFiniteError(OrderPlayError):
    """Raised when an optimizer produces non-finite states or costs."""


class FilterFailedError(OrderPlayError):
    """Raised when the safety filter cannot restore separation."""


class InfeasibleError(OrderPlayError):
    """Raised when no collision-free complete permutation exists."""


class CapExceededError(OrderPlayError):
    """Raised when a brute-force enumeration exceeds its agent cap."""


class SamplingFailedError(OrderPlayError):
    """Raised when rejection sampling of a scenario exhausts its draws."""


@dataclass(frozen=True)
class AgentState:
    """Planar unicycle state: position, body-frame speed, heading (rad)."""

    px: float
    py: float
    v: float
    theta: float

    def as_array(self) -> np.ndarray:
        return np.array([self.px, self.py, self.v, self.theta], dtype=float)

    @staticmethod
    def from_array(x: np.ndarray) -> "AgentState":
        return AgentState(float(x[0]), float(x[1]), float(x[2]), float(x[3]))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.px, self.py], dtype=float)


@dataclass(frozen=True)
class AgentControl:
    """Acceleration and turn rate."""

    a: float
    omega: float

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.omega], dtype=float)

    @staticmethod
    def from_array(u: np.ndarray) -> "AgentControl":
        return AgentControl(float(u[0]), float(u[1]))


@dataclass(frozen=True)
class JointState:
    """States of all agents at a common time index."""

    agents: tuple[AgentState, ...]
    t: int = 0

    def __len__(self) -> int:
        return len(self.agents)


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Trajectory:
    """A state sequence of length T+1 and the T controls that produced it.

    Stored as read-only arrays: ``xs`` has shape (T+1, 4) and ``us`` has
    shape (T, 2). Consistency with the dynamics step map is an invariant
    checked by :func:`orderplay.dynamics.check_consistency`.
    """

    xs: np.ndarray
    us: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "xs", _readonly(self.xs))
        object.__setattr__(self, "us", _readonly(self.us))
        if self.xs.shape[0] != self.us.shape[0] + 1:
            raise ValueError("states must be one longer than controls")

    @property
    def horizon(self) -> int:
        return self.us.shape[0]

    @property
    def states(self) -> tuple[AgentState, ...]:
        return tuple(AgentState.from_array(x) for x in self.xs)

    @property
    def controls(self) -> tuple[AgentControl, ...]:
        return tuple(AgentControl.from_array(u) for u in self.us)

    @property
    def positions(self) -> np.ndarray:
        """Positions over time, shape (T+1, 2)."""
        return self.xs[:, :2]


@dataclass(frozen=True)
class Policy:
    """Time-varying affine feedback policy around a nominal trajectory.

    ``gains`` has shape (T, 2, 4); the executed control at time t is
    u_t = us[t] + gains[t] @ (x_t - xs[t]).
    """

    nominal: Trajectory
    gains: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "gains", _readonly(self.gains))
        if self.gains.shape != (self.nominal.horizon, 2, 4):
            raise ValueError("gain dimensions inconsistent with trajectory")


@dataclass(frozen=True)
class Permutation:
    """A complete order of play: a bijection on {0..N-1}.

    ``order[k]`` is the agent that plays k-th.
    """

    order: tuple[int, ...]

    def __post_init__(self):
        if sorted(self.order) != list(range(len(self.order))):
            raise ValueError(f"not a permutation of 0..{len(self.order) - 1}: {self.order}")

    def __len__(self) -> int:
        return len(self.order)


class UnassignedMode(enum.Enum):
    """How agents without an assigned order are planned.

    AVOID_ASSIGNED: unassigned agents play last, avoiding all assigned agents.
    UNAWARE: unassigned agents plan alone, ignoring everyone.
    """

    AVOID_ASSIGNED = "avoid_assigned"
    UNAWARE = "unaware"


@dataclass(frozen=True)
class IncompletePermutation:
    """A prefix assignment of the order of play.

    ``assigned`` is the ordered prefix (length rho), ``unassigned`` the
    remaining agent indices. Carrying ``mode`` here makes a search node's
    bound a pure function of the node.
    """

    assigned: tuple[int, ...]
    unassigned: frozenset[int]
    mode: UnassignedMode = UnassignedMode.AVOID_ASSIGNED

    def __post_init__(self):
        overlap = set(self.assigned) & self.unassigned
        if overlap:
            raise ValueError(f"assigned and unassigned overlap: {overlap}")
        n = len(self.assigned) + len(self.unassigned)
        if set(self.assigned) | self.unassigned != set(range(n)):
            raise ValueError("assigned + unassigned must cover 0..N-1")

    @property
    def n(self) -> int:
        return len(self.assigned) + len(self.unassigned)

    @property
    def rho(self) -> int:
        return len(self.assigned)

    def to_permutation(self) -> Permutation:
        """Complete permutation: prefix followed by unassigned in ascending index."""
        return Permutation(self.assigned + tuple(sorted(self.unassigned)))

    @staticmethod
    def empty(n: int, mode: UnassignedMode = UnassignedMode.AVOID_ASSIGNED) -> "IncompletePermutation":
        return IncompletePermutation((), frozenset(range(n)), mode)

    @staticmethod
    def complete(order: tuple[int, ...], mode: UnassignedMode = UnassignedMode.AVOID_ASSIGNED) -> "IncompletePermutation":
        return IncompletePermutation(tuple(order), frozenset(), mode)


def is_complete(p: IncompletePermutation) -> bool:
    """True iff every agent has an assigned order."""
    return len(p.unassigned) == 0


def descendants(p: IncompletePermutation) -> set[IncompletePermutation]:
    """All prefixes of order rho+1 obtained by appending one unassigned agent.

    Applying this map N-rho times from any prefix enumerates the (N-rho)!
    complete permutations descending from it.
    """
    if is_complete(p):
        raise ValueError("permutation is already complete")
    return {
        IncompletePermutation(p.assigned + (i,), p.unassigned - {i}, p.mode)
        for i in p.unassigned
    }


@dataclass(frozen=True)
class Scenario:
    """A full problem instance: agents, geometry, weights, horizon."""

    n: int
    dt: float
    horizon: int
    starts: tuple[AgentState, ...]
    targets: tuple[AgentState, ...]
    zone_center: tuple[float, float] = (0.0, 0.0)
    zone_radius: float = 2.5
    d_col: float = 0.2
    d_plan: float = 0.4
    mu: float = 100.0
    w_track: float = 1.0
    w_ctrl: float = 0.1
    timeout: float = 55.0
    arrive_radius: float = 0.15
    control_bounds: Optional[tuple[tuple[float, float], tuple[float, float]]] = (
        (-2.0, 2.0),
        (-1.5, 1.5),
    )

    def __post_init__(self):
        if not (self.d_plan >= self.d_col > 0):
            raise ValueError("requires d_plan >= d_col > 0")
        if self.zone_radius <= 0:
            raise ValueError("zone_radius must be positive")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if len(self.starts) != self.n or len(self.targets) != self.n:
            raise ValueError("starts/targets must have length n")

    def in_zone(self, s: AgentState) -> bool:
        cx, cy = self.zone_center
        return math.hypot(s.px - cx, s.py - cy) <= self.zone_radius


@dataclass(frozen=True)
class SubgameSolution:
    """The outcome of one sequential-planning pass for a (partial) order.

    ``social_cost`` is the full symmetric social cost over all pairs;
    ``feasible`` reflects separation strictly above the collision distance
    among mutually constrained pairs. ``failure`` names a solver or filter
    breakdown, in which case ``social_cost`` is +inf.
    """

    profile: tuple[Policy, ...]
    trajectories: tuple[Trajectory, ...]
    costs: tuple[tuple[float, float], ...]
    social_cost: float
    feasible: bool
    failure: Optional[str] = None
