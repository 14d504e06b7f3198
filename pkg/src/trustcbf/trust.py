"""Trust scoring of neighbors and adaptation of per-pair barrier rates.

Each observer keeps one rate parameter alpha per neighbor.  Every step it
builds the half-space of neighbor motions that would keep the pair barrier
decreasing no faster than its rate allows, assuming the observer itself
contributes as helpfully as it can (a small LP over its own control box).  The
signed distance of the neighbor's predicted worst-case motion to that
half-space is the compliance margin; together with how the neighbor's motion
direction relates to its declared goal, it produces a trust score in [-1, 1]
that drives alpha up (trusted neighbors, relaxed constraint) or down
(distrusted neighbors, tightened constraint).

A lower bound on the alpha rate keeps the safety filter's QP feasible: pushing
alpha down faster than the system can respond would empty the feasible set.
That bound blows up as the barrier approaches zero, so alpha is also capped
numerically.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .barriers import BarrierEval, cbf_row, eval_barrier, velocity_map
from .dynamics import Box
from .solvers import ConstraintRow, solve_lp
from .world import AgentState, MotionEstimate, WorldSnapshot

H_BOUNDARY_EPS = 1e-6

# Cap on the ratio of nominal-to-actual deflection angles, and the floor on
# the actual angle, keeping the direction score finite near zero deflection.
THETA_RATIO_CAP = 10.0
THETA_FLOOR = 1e-3


class DegenerateNormal(Exception):
    """Barrier gradient too small to define a half-space normal (agents coincide)."""


class BoundaryReached(Exception):
    """Barrier at or below zero within tolerance: the rate floor is undefined."""


@dataclass
class TrustParams:
    """Knobs of the trust pipeline, shared by every pair of one scenario."""

    rho_bar_d: float = 0.5    # margin score threshold separating trust growth from decay
    beta: float = 1.0         # margin score slope
    k_blend: float = 50.0     # sharpness of the blend between the two trust branches
    gamma_alpha: float = 1.0  # rate gain applied to the trust score
    alpha0: float = 0.8       # initial per-pair rate
    alpha_min: float = 0.01   # hard lower bound on alpha
    alpha_max: float = 1e6    # numerical cap (the rate floor diverges as h -> 0)
    L_F: float = 1.0          # Lipschitz bound assumed for neighbor motion fields
    L_hdot: float = 2.0       # Lipschitz bound of the barrier derivative in the neighbor state
    v_max: float = 3.0        # bootstrap speed bound before any motion is observed


@dataclass
class HalfSpace:
    """Allowed neighbor motions: A . v >= b, with unit normal s_hat = A/||A||."""

    A: np.ndarray
    b: float
    s_hat: np.ndarray


@dataclass
class TrustState:
    """Mutable per-ordered-pair record of the rate parameter and last scores."""

    alpha: float
    rho: float = 0.0
    rho_d: float = 0.0
    rho_theta: float = 0.5
    margin: float = 0.0
    history: deque = field(default_factory=lambda: deque(maxlen=512))

    def observe(self, rho: float, rho_d: float, rho_theta: float, margin: float) -> None:
        self.rho = float(rho)
        self.rho_d = float(rho_d)
        self.rho_theta = float(rho_theta)
        self.margin = float(margin)


def worst_case_motion(est: MotionEstimate, grad_j: np.ndarray) -> tuple[np.ndarray, float]:
    """Minimizer of grad_j . v over the estimate ball and the attained value.

    Closed form: v* = center - radius * grad_j / ||grad_j||.  A zero gradient
    leaves every ball point equivalent; the center is returned with value 0.
    """
    g = np.asarray(grad_j, dtype=float)
    gn = float(np.linalg.norm(g))
    center = np.asarray(est.center, dtype=float)
    if gn < 1e-12:
        return center.copy(), 0.0
    v = center - (est.radius / gn) * g
    return v, float(g @ center) - est.radius * gn


def max_own_contribution(i: int, j: int, snapshot: WorldSnapshot,
                         alphas: Mapping[int, float],
                         estimates: Mapping[int, MotionEstimate],
                         box: Box, d_min: float, lookahead: float) -> float:
    """Best barrier-derivative contribution observer i can make toward pair (i, j)
    while respecting its constraints toward every other neighbor k.

        max over u of grad_i(ij) . (M_i u)
        s.t. for all k != i, j:  cbf row of (i, k) at its current rate and
                                 worst-case motion

    ``alphas`` and ``estimates`` hold the current per-neighbor rates and
    position-motion estimates.  Raises Infeasible when even the k-rows alone
    admit no command.
    """
    me = snapshot.agents[i]
    M = velocity_map(me, lookahead)
    ev_ij = eval_barrier(me, snapshot.agents[j], d_min, lookahead)
    c = ev_ij.gi() @ M
    rows = []
    for k_agent in snapshot.agents:
        k = k_agent.id
        if k == i or k == j:
            continue
        ev_ik = eval_barrier(me, k_agent, d_min, lookahead)
        a_k, _ = worst_case_motion(estimates[k], ev_ik.gj())
        rows.append(cbf_row(ev_ik, M, a_k, alphas[k], tag=(i, k)))
    value, _ = solve_lp(c, rows, box)
    return value


def build_halfspace(ev: BarrierEval, alpha: float, max_contrib: float) -> HalfSpace:
    """Half-space of neighbor motions compatible with the pair's current rate.

    The neighbor's motion v must satisfy grad_j . v >= -alpha h - max_contrib:
    anything less would force the barrier below its allowed decay even with the
    observer helping as much as it can.
    """
    A = ev.gj()
    norm = float(np.linalg.norm(A))
    if norm < 1e-12:
        raise DegenerateNormal("barrier gradient vanished; agents coincide")
    b = -alpha * ev.h - max_contrib
    return HalfSpace(A=A, b=b, s_hat=A / norm)


def compliance_margin(hs: HalfSpace, a_j: np.ndarray) -> float:
    """Signed slack of the neighbor's predicted motion against the allowed half-space.

    Positive means the motion keeps the pair comfortably inside the allowed
    set; negative means it violates the current rate's requirement.
    """
    return float(hs.A @ np.asarray(a_j, dtype=float)) - hs.b


def distance_trust(margin: float, beta: float = 1.0) -> float:
    """Map the compliance margin to [0, 1); negative margins earn exactly 0."""
    return math.tanh(beta * max(margin, 0.0))


def _angle(u: np.ndarray, v: np.ndarray) -> float:
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    d = float(u @ v) / (nu * nv)
    return math.acos(min(1.0, max(-1.0, d)))


def direction_trust(n_hat: np.ndarray, a_j: np.ndarray, s_hat: np.ndarray) -> float:
    """Score in [0, 1) comparing actual vs goal-implied deflection from the safe direction.

    theta_n is the angle between the neighbor's goal direction and the safe
    normal; theta_a the same for its predicted motion.  Moving further from
    the safe direction than its goal requires (theta_a > theta_n) scores low.
    The ratio is capped and the denominator floored to stay finite.  A
    stationary prediction is scored as if orthogonal to the safe normal.
    """
    n_hat = np.asarray(n_hat, dtype=float)
    a_j = np.asarray(a_j, dtype=float)
    s_hat = np.asarray(s_hat, dtype=float)
    if float(np.linalg.norm(n_hat)) < 1e-12:
        return 0.5
    theta_n = _angle(n_hat, s_hat)
    if float(np.linalg.norm(a_j)) < 1e-12:
        theta_a = math.pi / 2.0
    else:
        theta_a = _angle(a_j, s_hat)
    theta_a = max(theta_a, THETA_FLOOR)
    ratio = min(theta_n / theta_a, THETA_RATIO_CAP)
    return math.tanh(2.0 * ratio)


def _sigmoid(t: float) -> float:
    if t >= 0.0:
        return 1.0 / (1.0 + math.exp(-t))
    e = math.exp(t)
    return e / (1.0 + e)


def combine_trust(rho_d: float, rho_theta: float, rho_bar_d: float = 0.5,
                  k_blend: float = 50.0) -> float:
    """Blend the margin and direction scores into a trust rate in [-1, 1].

    Above the margin threshold, trust grows weighted by the direction score;
    below it, trust decays weighted by the direction score's complement (a
    neighbor plainly heading against its own goal toward us is distrusted
    fastest).  The hard switch at the threshold is smoothed by a sigmoid of
    sharpness k_blend, which keeps the score continuous at the cost of a small
    non-monotone ripple of order 1/k_blend near the threshold.
    """
    x = rho_d - rho_bar_d
    s = _sigmoid(k_blend * x)
    return s * x * rho_theta + (1.0 - s) * x * (1.0 - rho_theta)


def alpha_rate(rho: float, gamma_alpha: float = 1.0) -> float:
    """Commanded rate of change of alpha before the feasibility floor is applied."""
    return gamma_alpha * rho


def alpha_rate_floor(margin: float, alpha: float, h: float, B: float,
                     L_h: float, L_hdot: float, L_F: float) -> float:
    """Lower bound on alpha's rate of change that keeps the safety QP solvable.

        floor = -(margin + L_hdot * L_F * B^2 + alpha * L_h * B) / h

    B bounds the neighbor's speed (estimate center norm plus ball radius).
    The bound diverges as h tends to zero; at h <= 1e-6 it is undefined and
    BoundaryReached is raised so the caller can switch to an emergency stop.
    """
    if h <= H_BOUNDARY_EPS:
        raise BoundaryReached(f"barrier h={h} at or below boundary tolerance")
    return -(margin + L_hdot * L_F * B * B + alpha * L_h * B) / h


def update_alpha(ts: TrustState, rho: float, dt: float, floor: float,
                 params: TrustParams) -> TrustState:
    """Advance the pair's rate parameter one step.

    alpha <- clamp(alpha + dt * max(gamma_alpha * rho, floor), alpha_min, alpha_max)

    The floor wins whenever the trust-driven rate would sink alpha fast enough
    to break QP feasibility.
    """
    rate = max(alpha_rate(rho, params.gamma_alpha), floor)
    ts.alpha = min(max(ts.alpha + dt * rate, params.alpha_min), params.alpha_max)
    ts.history.append(ts.alpha)
    return ts
