"""Pairwise distance barrier, unicycle look-ahead geometry, and constraint rows.

The barrier between an observer i and a neighbor j is

    h = || p_i~ - p_j ||^2 - d_min^2

where p_i~ is i's look-ahead point (a point a short distance ahead of a
unicycle's axle; the position itself for integrators).  Differentiating
through the look-ahead map gives an invertible 2x2 velocity map M(psi) with
det M equal to the look-ahead distance, which is what makes the unicycle's
barrier constraint controllable in both axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dynamics import ModelMismatch
from .solvers import ConstraintRow
from .world import AgentState, Model

D_MIN_DEFAULT = 0.5
LOOKAHEAD_DEFAULT = 0.1


@dataclass(frozen=True)
class BarrierEval:
    """Barrier value and its gradients with respect to each agent's position.

    grad_i is taken at the look-ahead point, so grad_i + grad_j == 0 exactly.
    """

    h: float
    grad_i: tuple[float, float]
    grad_j: tuple[float, float]
    d_min: float

    def gi(self) -> np.ndarray:
        return np.array(self.grad_i)

    def gj(self) -> np.ndarray:
        return np.array(self.grad_j)


def lookahead_point(state: AgentState, lookahead: float = LOOKAHEAD_DEFAULT) -> tuple[np.ndarray, np.ndarray]:
    """Look-ahead point and its velocity map for a unicycle.

    p~ = p + l (cos psi, sin psi) and d(p~)/dt = M(psi) (v, omega) with
    M = [[cos psi, -l sin psi], [sin psi, l cos psi]].  det M = l, so the map
    never loses rank for l > 0.
    """
    if state.model is not Model.UNICYCLE:
        raise ModelMismatch(f"agent {state.id} has no look-ahead point (not a unicycle)")
    if lookahead <= 0.0:
        raise ValueError("lookahead distance must be positive")
    c, s = math.cos(state.psi), math.sin(state.psi)
    p = np.array([state.px + lookahead * c, state.py + lookahead * s])
    M = np.array([[c, -lookahead * s], [s, lookahead * c]])
    return p, M


def velocity_map(state: AgentState, lookahead: float = LOOKAHEAD_DEFAULT) -> np.ndarray:
    """2x2 map from the agent's control to its (look-ahead) position derivative."""
    if state.model is Model.UNICYCLE:
        return lookahead_point(state, lookahead)[1]
    return np.eye(2)


def barrier_point(state: AgentState, lookahead: float = LOOKAHEAD_DEFAULT) -> np.ndarray:
    """The point the barrier is evaluated at: look-ahead for unicycles, position otherwise."""
    if state.model is Model.UNICYCLE:
        return lookahead_point(state, lookahead)[0]
    return state.position()


def eval_barrier(x_i: AgentState, x_j: AgentState, d_min: float = D_MIN_DEFAULT,
                 lookahead: float = LOOKAHEAD_DEFAULT) -> BarrierEval:
    """Evaluate the pair barrier from observer i toward neighbor j.

    The neighbor contributes only its position; its own look-ahead (if any) is
    irrelevant to i's safety and unknown anyway.
    """
    if d_min <= 0.0:
        raise ValueError("d_min must be positive")
    pi = barrier_point(x_i, lookahead)
    pj = x_j.position()
    delta = pi - pj
    h = float(delta @ delta) - d_min * d_min
    gi = 2.0 * delta
    return BarrierEval(h=h, grad_i=(gi[0], gi[1]), grad_j=(-gi[0], -gi[1]), d_min=float(d_min))


def clf_value(state: AgentState, target: Optional[tuple[float, float]] = None) -> tuple[float, np.ndarray]:
    """Quadratic goal function V = ||p - p_ref||^2 and its position gradient."""
    if target is None:
        target = state.target
    if target is None:
        raise ValueError(f"agent {state.id} has no known target")
    e = np.array([state.px - target[0], state.py - target[1]])
    return float(e @ e), 2.0 * e


def cbf_row(ev: BarrierEval, vel_map: np.ndarray, worst_j_dot: np.ndarray, alpha: float,
            tag=None, drift_i: Optional[np.ndarray] = None) -> ConstraintRow:
    """Linear constraint on i's control enforcing h_dot >= -alpha h against the
    worst predicted neighbor motion.

        grad_i . (drift_i + M u) + grad_j . worst_j_dot >= -alpha h
        =>  (grad_i M) . u >= -alpha h - grad_i . drift_i - grad_j . worst_j_dot
    """
    gi = ev.gi()
    gj = ev.gj()
    a = gi @ np.asarray(vel_map, dtype=float)
    b = -alpha * ev.h - float(gj @ np.asarray(worst_j_dot, dtype=float))
    if drift_i is not None:
        b -= float(gi @ np.asarray(drift_i, dtype=float))
    return ConstraintRow(a=tuple(a), b=b, tag=tag)
