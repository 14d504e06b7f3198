"""Shared fixtures: the two benchmark scenarios are expensive enough that the
acceptance tests run each of them exactly once per session."""

import time

import pytest

from trustcbf.sim import (crossing_scenario, headon_stress_scenario, metrics,
                          run)


@pytest.fixture(scope="session")
def crossing_adaptive():
    """Adaptive-mode crossing run: (scenario, trace, metrics, wall seconds)."""
    s = crossing_scenario()
    t0 = time.perf_counter()
    trace = run(s)
    wall = time.perf_counter() - t0
    return s, trace, metrics(trace, s), wall


@pytest.fixture(scope="session")
def crossing_fixed():
    s = crossing_scenario(fixed_alpha=True)
    trace = run(s)
    return s, trace, metrics(trace, s)


@pytest.fixture(scope="session")
def stress_runs():
    """Head-on squeeze with the rate floor on and off: {flag: (scenario, trace)}."""
    out = {}
    for flag in (True, False):
        s = headon_stress_scenario(rate_floor=flag)
        out[flag] = (s, run(s))
    return out
