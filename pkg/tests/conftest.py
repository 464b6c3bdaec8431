import math

import numpy as np
import pytest

from orderplay.trajopt import IlqrOptions
from orderplay.types import AgentState, JointState, Scenario


@pytest.fixture
def ilqr_opts():
    return IlqrOptions()


@pytest.fixture
def head_on_2(atc_scenario):
    return atc_scenario(2)


@pytest.fixture
def atc_scenario():
    """Factory for small head-on crossing scenarios with agents evenly spaced
    on the zone circle, each targeting the antipodal point."""

    def make(n, radius=2.5, horizon=60, speed=0.5):
        angles = [2 * math.pi * k / n for k in range(n)]
        wrap = lambda a: (a + math.pi) % (2 * math.pi) - math.pi
        starts = tuple(
            AgentState(radius * math.cos(a), radius * math.sin(a), speed, wrap(a + math.pi)) for a in angles
        )
        targets = tuple(
            AgentState(-radius * math.cos(a), -radius * math.sin(a), 0.0, wrap(a + math.pi)) for a in angles
        )
        return Scenario(
            n=n,
            dt=0.1,
            horizon=horizon,
            starts=starts,
            targets=targets,
            control_bounds=((-0.6, 0.6), (-1.0, 1.0)),
        )

    return make


@pytest.fixture
def spread_scenario():
    """Factory for scenarios whose agents never come near each other."""

    def make(n, horizon=40):
        starts = tuple(AgentState(10.0 * i, 0.0, 0.5, 0.0) for i in range(n))
        targets = tuple(AgentState(10.0 * i + 2.0, 0.0, 0.0, 0.0) for i in range(n))
        return Scenario(n=n, dt=0.1, horizon=horizon, starts=starts, targets=targets)

    return make


@pytest.fixture
def joint(request):
    def make(scenario):
        return JointState(scenario.starts)

    return make


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
