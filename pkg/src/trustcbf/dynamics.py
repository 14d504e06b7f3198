"""Control-affine agent models and goal-directed reference motion.

Two drift-free models are supported: a unicycle with control (v, omega) and a
single integrator with control (vx, vy).  Integration is explicit Euler; the
heading is re-wrapped to (-pi, pi] after every step.  Controls live in a box,
which is a deliberate departure from unbounded-input theory: it keeps the
worst-case linear programs bounded.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .world import AgentState, Model, wrap_angle

K_S = 2.0       # proportional gain on distance to the waypoint
K_OMEGA = 2.0   # proportional gain on heading error


class ModelMismatch(Exception):
    """An operation received a state whose model it does not support."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned control bounds.  Must be nonempty and contain the origin."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        if len(self.lo) != len(self.hi):
            raise ValueError("box lo/hi dimension mismatch")
        for l, h in zip(self.lo, self.hi):
            if not (l <= 0.0 <= h):
                raise ValueError(f"control box must contain 0, got [{l}, {h}]")
            if l >= h:
                raise ValueError(f"degenerate box interval [{l}, {h}]")
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))

    @property
    def dim(self) -> int:
        return len(self.lo)

    def clip(self, u: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(u, dtype=float), self.lo, self.hi)

    def contains(self, u: np.ndarray, tol: float = 1e-9) -> bool:
        u = np.asarray(u, dtype=float)
        return bool(np.all(u >= np.array(self.lo) - tol) and np.all(u <= np.array(self.hi) + tol))


DEFAULT_BOX = Box((-3.0, -3.0), (3.0, 3.0))


@dataclass(frozen=True)
class AffineModel:
    """Drift/actuation pair for x_dot = f(x) + g(x) u."""

    name: str
    drift: Callable[[AgentState], np.ndarray]
    actuation: Callable[[AgentState], np.ndarray]
    control_dim: int
    control_box: Box


def _unicycle_g(state: AgentState) -> np.ndarray:
    c, s = math.cos(state.psi), math.sin(state.psi)
    return np.array([[c, 0.0], [s, 0.0], [0.0, 1.0]])


UNICYCLE = AffineModel(
    name="unicycle",
    drift=lambda state: np.zeros(3),
    actuation=_unicycle_g,
    control_dim=2,
    control_box=DEFAULT_BOX,
)

SINGLE_INTEGRATOR = AffineModel(
    name="single_integrator",
    drift=lambda state: np.zeros(2),
    actuation=lambda state: np.eye(2),
    control_dim=2,
    control_box=DEFAULT_BOX,
)


def affine_model(model: Model) -> AffineModel:
    return UNICYCLE if model is Model.UNICYCLE else SINGLE_INTEGRATOR


def unicycle_derivative(state: AgentState, u: np.ndarray) -> np.ndarray:
    """(px_dot, py_dot, psi_dot) = (v cos psi, v sin psi, omega)."""
    if state.model is not Model.UNICYCLE:
        raise ModelMismatch(f"agent {state.id} is not a unicycle")
    v, omega = float(u[0]), float(u[1])
    return np.array([v * math.cos(state.psi), v * math.sin(state.psi), omega])


def integrator_derivative(state: AgentState, u: np.ndarray) -> np.ndarray:
    if state.model is not Model.SINGLE_INTEGRATOR:
        raise ModelMismatch(f"agent {state.id} is not a single integrator")
    return np.array([float(u[0]), float(u[1])])


def derivative(state: AgentState, u: np.ndarray) -> np.ndarray:
    if state.model is Model.UNICYCLE:
        return unicycle_derivative(state, u)
    return integrator_derivative(state, u)


def euler_step(state: AgentState, u: np.ndarray, dt: float, box: Box = DEFAULT_BOX) -> AgentState:
    """One explicit Euler step.  Out-of-box commands are clamped with a warning."""
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    u = np.asarray(u, dtype=float)
    if not box.contains(u):
        warnings.warn(f"agent {state.id}: command {u.tolist()} clamped to control box", stacklevel=2)
        u = box.clip(u)
    if state.model is Model.UNICYCLE:
        d = unicycle_derivative(state, u)
        return AgentState(
            id=state.id, kind=state.kind, model=state.model,
            px=state.px + dt * d[0], py=state.py + dt * d[1],
            psi=wrap_angle(state.psi + dt * d[2]),
            target=state.target, last_command=tuple(u),
        )
    d = integrator_derivative(state, u)
    return AgentState(
        id=state.id, kind=state.kind, model=state.model,
        px=state.px + dt * d[0], py=state.py + dt * d[1], psi=0.0,
        target=state.target, last_command=tuple(u),
    )


def nominal_direction(state: AgentState, target: Optional[tuple[float, float]] = None,
                      tol: float = 1e-9) -> tuple[np.ndarray, bool]:
    """Unit vector from the agent's position toward ``target`` (default: its own).

    Returns (direction, at_target).  At the target the direction is the zero
    vector and the flag is set; callers must branch on it.
    """
    if target is None:
        target = state.target
    if target is None:
        raise ValueError(f"agent {state.id} has no known target")
    e = np.array([target[0] - state.px, target[1] - state.py])
    dist = float(np.linalg.norm(e))
    if dist < tol:
        return np.zeros(2), True
    return e / dist, False


def nominal_trajectory(state0: AgentState, gain: float, horizon: float, dt: float) -> np.ndarray:
    """Constant-speed straight-line motion toward the target, held after arrival.

    Returns an array of shape (floor(horizon/dt)+1, 2): the position at every
    record time, starting at the initial position.  Speed is ``gain`` until the
    remaining distance fits inside one step, at which point the trajectory
    snaps to the target and stays there.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if gain <= 0.0:
        raise ValueError("speed gain must be positive")
    if state0.target is None:
        raise ValueError(f"agent {state0.id} has no known target")
    steps = int(math.floor(horizon / dt + 1e-9))
    target = np.array(state0.target, dtype=float)
    pos = state0.position().astype(float)
    out = np.empty((steps + 1, 2))
    out[0] = pos
    step_len = gain * dt
    for k in range(steps):
        remaining = target - pos
        dist = float(np.linalg.norm(remaining))
        if dist <= step_len + 1e-15:
            pos = target.copy()
        else:
            pos = pos + (step_len / dist) * remaining
        out[k + 1] = pos
    return out


def track_reference(state: AgentState, waypoint: tuple[float, float],
                    k_s: float = K_S, k_omega: float = K_OMEGA,
                    box: Box = DEFAULT_BOX) -> np.ndarray:
    """Proportional waypoint tracking for unicycles: v on distance, omega on bearing error.

    With zero position error both commands are zero (the bearing is undefined
    there, so no turn is commanded).  The result is clamped to the box.
    """
    if state.model is not Model.UNICYCLE:
        raise ModelMismatch(f"track_reference needs a unicycle, agent {state.id} is not one")
    ex = waypoint[0] - state.px
    ey = waypoint[1] - state.py
    dist = math.hypot(ex, ey)
    if dist < 1e-12:
        return np.zeros(2)
    v = k_s * dist
    omega = k_omega * wrap_angle(math.atan2(ey, ex) - state.psi)
    return box.clip(np.array([v, omega]))
