"""Agent state records, observation snapshots, and the bounded-difference motion estimator.

Agents only ever see each other through immutable snapshots of the world.  A
neighbor's future motion is unknown, so observers bound it with a ball: the
center is the finite-difference state derivative over the last step and the
radius is ten percent of that derivative's norm.  Before two observations
exist, a conservative bootstrap ball (zero center, global speed bound radius)
is used instead.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi

# Conservative speed bound used for the bootstrap estimate (m/s).
V_MAX_GLOBAL = 3.0

# Estimate ball radius as a fraction of the finite-difference derivative norm.
ESTIMATE_RADIUS_FACTOR = 0.1


class AgentKind(Enum):
    INTACT = "Intact"
    UNCOOPERATIVE = "Uncooperative"
    ADVERSARIAL = "Adversarial"


class Model(Enum):
    UNICYCLE = "Unicycle"
    SINGLE_INTEGRATOR = "SingleIntegrator"


class MissingHistory(Exception):
    """Motion estimation was attempted with fewer than two world snapshots."""


def wrap_angle(a: float) -> float:
    """Wrap an angle to the interval (-pi, pi]."""
    a = math.fmod(a, TWO_PI)
    if a <= -math.pi:
        a += TWO_PI
    elif a > math.pi:
        a -= TWO_PI
    return a


@dataclass(frozen=True)
class AgentState:
    """Immutable per-agent record.

    ``psi`` is meaningful for unicycles only and is normalized to (-pi, pi] on
    construction.  ``target`` is the agent's declared goal position; ``None``
    marks it unknown to observers.  ``last_command`` is the control actually
    applied on the step that produced this state.
    """

    id: int
    kind: AgentKind
    model: Model
    px: float
    py: float
    psi: float = 0.0
    target: Optional[tuple[float, float]] = None
    last_command: tuple[float, ...] = ()

    def __post_init__(self):
        for name in ("px", "py", "psi"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"agent {self.id}: non-finite {name}")
        if self.target is not None:
            tx, ty = self.target
            if not (math.isfinite(tx) and math.isfinite(ty)):
                raise ValueError(f"agent {self.id}: non-finite target")
            object.__setattr__(self, "target", (float(tx), float(ty)))
        object.__setattr__(self, "psi", wrap_angle(float(self.psi)))
        object.__setattr__(self, "px", float(self.px))
        object.__setattr__(self, "py", float(self.py))
        object.__setattr__(self, "last_command", tuple(float(v) for v in self.last_command))

    def position(self) -> np.ndarray:
        return np.array([self.px, self.py])

    def state_vector(self) -> np.ndarray:
        """Full state: (px, py, psi) for unicycles, (px, py) for integrators."""
        if self.model is Model.UNICYCLE:
            return np.array([self.px, self.py, self.psi])
        return np.array([self.px, self.py])

    def state_dim(self) -> int:
        return 3 if self.model is Model.UNICYCLE else 2


@dataclass(frozen=True)
class WorldSnapshot:
    """Immutable view of every agent at one instant.  Index == agent id."""

    time: float
    agents: tuple[AgentState, ...]

    def digest(self) -> str:
        """Stable content hash (used to check snapshots never alias live state)."""
        parts = [struct.pack("<d", self.time)]
        for a in self.agents:
            parts.append(struct.pack("<i", a.id))
            parts.append(a.kind.value.encode())
            parts.append(a.model.value.encode())
            parts.append(struct.pack("<3d", a.px, a.py, a.psi))
            if a.target is None:
                parts.append(b"T?")
            else:
                parts.append(struct.pack("<2d", *a.target))
            parts.append(struct.pack(f"<{len(a.last_command)}d", *a.last_command))
        return hashlib.sha256(b"".join(parts)).hexdigest()


class World:
    """Single-writer mutable store of agent states plus the simulation clock.

    Snapshots are tuples of frozen states, so they stay valid after any
    subsequent mutation of the store.
    """

    def __init__(self, agents: Sequence[AgentState], time: float = 0.0):
        agents = list(agents)
        for idx, a in enumerate(agents):
            if a.id != idx:
                raise ValueError(f"agent ids must be contiguous 0..N-1, got {a.id} at index {idx}")
        self.agents = agents
        self.time = float(time)

    def take_snapshot(self) -> WorldSnapshot:
        return WorldSnapshot(time=self.time, agents=tuple(self.agents))

    def set_agent(self, state: AgentState) -> None:
        self.agents[state.id] = state

    def advance(self, new_agents: Sequence[AgentState], dt: float) -> None:
        """Replace all agent states at once (synchronous update) and bump the clock."""
        if len(new_agents) != len(self.agents):
            raise ValueError("advance requires one new state per agent")
        for idx, a in enumerate(new_agents):
            if a.id != idx:
                raise ValueError("agent ids must stay contiguous")
        self.agents = list(new_agents)
        self.time += float(dt)


@dataclass
class MotionEstimate:
    """Ball bound on a neighbor's state derivative: center F_hat, radius b_F."""

    center: np.ndarray
    radius: float


def estimate_motion(history: Sequence[WorldSnapshot], j: int) -> MotionEstimate:
    """Finite-difference estimate of agent j's state derivative from the last two snapshots.

    The center is (state(t) - state(t-dt)) / dt with the heading component
    differenced modulo 2*pi; the radius is ESTIMATE_RADIUS_FACTOR times the
    center norm (exact arithmetic relation, relied on by callers).

    Raises MissingHistory when fewer than two snapshots are available.
    """
    if len(history) < 2:
        raise MissingHistory(f"need two snapshots to estimate agent {j}'s motion")
    older, newer = history[-2], history[-1]
    dt = newer.time - older.time
    if dt <= 0.0:
        raise MissingHistory(f"snapshots out of order (dt={dt})")
    a0, a1 = older.agents[j], newer.agents[j]
    if a0.model is not a1.model:
        raise ValueError(f"agent {j} changed model between snapshots")
    diff = a1.state_vector() - a0.state_vector()
    if a1.model is Model.UNICYCLE:
        diff[2] = wrap_angle(a1.psi - a0.psi)
    center = diff / dt
    return MotionEstimate(center=center, radius=ESTIMATE_RADIUS_FACTOR * float(np.linalg.norm(center)))


def bootstrap_estimate(dim: int = 2, v_max: float = V_MAX_GLOBAL) -> MotionEstimate:
    """Pre-observation fallback: zero center, radius equal to the global speed bound."""
    return MotionEstimate(center=np.zeros(dim), radius=float(v_max))


def position_part(est: MotionEstimate) -> MotionEstimate:
    """Restrict an estimate to the position sub-state.

    The full-state radius remains a valid bound for the 2-D projection, so it
    is kept as-is (conservative for unicycles).
    """
    return MotionEstimate(center=np.asarray(est.center[:2], dtype=float).copy(), radius=est.radius)
