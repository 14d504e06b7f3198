"""Per-agent control step: reference command, trust updates, and the safety QP.

For each neighbor the observer estimates a motion ball, takes the worst-case
motion inside it, scores trust, adapts the pair's rate parameter, and builds
one barrier constraint row.  The reference command (waypoint tracking for
unicycles, a minimum-norm goal-descent QP for integrators) is then projected
onto the intersection of all rows inside the control box.  Any unrecoverable
condition (empty constraint set, barrier at zero) degrades to an emergency
stop for that step rather than raising.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .barriers import (D_MIN_DEFAULT, LOOKAHEAD_DEFAULT, cbf_row, clf_value,
                       eval_barrier, velocity_map)
from .dynamics import (DEFAULT_BOX, Box, K_OMEGA, K_S, nominal_direction,
                       track_reference)
from .solvers import ConstraintRow, Infeasible, QPProblem, solve_qp
from .trust import (BoundaryReached, DegenerateNormal, TrustParams, TrustState,
                    alpha_rate_floor, build_halfspace, combine_trust,
                    compliance_margin, direction_trust, distance_trust,
                    max_own_contribution, update_alpha, worst_case_motion)
from .world import (MissingHistory, Model, WorldSnapshot, bootstrap_estimate,
                    estimate_motion, position_part)

log = logging.getLogger(__name__)

CLF_K = 2.0


class Fallback(Enum):
    NONE = 0
    EMERGENCY = 1


@dataclass
class AgentConfig:
    """Everything one intact agent's controller needs besides the world itself."""

    box: Box = DEFAULT_BOX
    d_min: float = D_MIN_DEFAULT
    lookahead: float = LOOKAHEAD_DEFAULT
    k_s: float = K_S
    k_omega: float = K_OMEGA
    clf_k: float = CLF_K
    dt: float = 0.05
    trust: TrustParams = field(default_factory=TrustParams)
    fixed_alpha: bool = False
    rate_floor: bool = True
    # "before": adapt rates, then solve the QP with the new rates (default).
    # "after": solve the QP with the old rates, then adapt (literal loop order).
    alpha_update_order: str = "before"


@dataclass
class ControlDecision:
    u_ref: np.ndarray
    u_safe: np.ndarray
    rows: tuple[ConstraintRow, ...]
    feasible: bool
    fallback: Fallback = Fallback.NONE


def clf_qp_reference(state, k: float = CLF_K, box: Box = DEFAULT_BOX) -> np.ndarray:
    """Minimum-norm command decreasing the goal function exponentially.

        min ||u||^2   s.t.   gradV . u <= -k V

    For integrators only.  At the goal the constraint is vacuous and the
    command is zero.  Raises Infeasible when the box is too small to achieve
    the required descent rate (callers decide how to degrade).
    """
    if state.model is not Model.SINGLE_INTEGRATOR:
        raise ValueError("clf_qp_reference applies to single integrators")
    V, gradV = clf_value(state)
    row = ConstraintRow(a=tuple(-gradV), b=k * V, tag="clf")
    u, _ = solve_qp(QPProblem(u_ref=np.zeros(2), rows=[row], box=box))
    return u


@dataclass
class _PairObs:
    ev: object
    a_j: np.ndarray
    alpha_start: float


def agent_step(i: int, history: Sequence[WorldSnapshot], trust: dict[int, TrustState],
               cfg: AgentConfig) -> ControlDecision:
    """One full control step for intact agent i.

    ``history`` holds the latest snapshots (at least one; two enable motion
    estimation).  ``trust`` maps neighbor id to that pair's TrustState and is
    mutated in place.  All per-pair computations read rates as of the start of
    the step, so their order cannot matter.
    """
    snap = history[-1]
    me = snap.agents[i]
    neighbors = [a.id for a in snap.agents if a.id != i]

    estimates = {}
    bootstrapped: set[int] = set()
    for j in neighbors:
        try:
            est = estimate_motion(history, j)
        except MissingHistory:
            est = bootstrap_estimate(dim=snap.agents[j].state_dim(), v_max=cfg.trust.v_max)
            bootstrapped.add(j)
        estimates[j] = position_part(est)
    alphas_start = {j: trust[j].alpha for j in neighbors}

    emergency = False
    obs: dict[int, _PairObs] = {}
    fresh: set[int] = set()
    for j in neighbors:
        ts = trust[j]
        other = snap.agents[j]
        ev = eval_barrier(me, other, cfg.d_min, cfg.lookahead)
        a_j, _ = worst_case_motion(estimates[j], ev.gj())
        obs[j] = _PairObs(ev=ev, a_j=a_j, alpha_start=ts.alpha)
        if j in bootstrapped:
            # An ignorance prior is not observed behavior; the rows stay
            # conservative but the trust state waits for a real estimate.
            continue
        # Behavior is judged at the estimate center; the ball's worst-case
        # point is reserved for the control rows.
        a_hat = estimates[j].center

        try:
            contrib = max_own_contribution(i, j, snap, alphas_start, estimates,
                                           cfg.box, cfg.d_min, cfg.lookahead)
        except Infeasible:
            # Even the other pairs' rows conflict; the main QP will surface it.
            log.warning("t=%.3f agent %d: contribution LP infeasible toward %d", snap.time, i, j)
            continue
        try:
            hs = build_halfspace(ev, ts.alpha, contrib)
        except DegenerateNormal:
            log.warning("t=%.3f agent %d coincides with %d; trust update skipped", snap.time, i, j)
            continue
        d = compliance_margin(hs, a_hat)
        rho_d = distance_trust(d, cfg.trust.beta)
        target_j = other.target if other.target is not None else (me.px, me.py)
        n_hat, at_target = nominal_direction(other, target_j)
        if at_target:
            rho_theta = 0.5
        else:
            rho_theta = direction_trust(n_hat, a_hat, hs.s_hat)
        rho = combine_trust(rho_d, rho_theta, cfg.trust.rho_bar_d, cfg.trust.k_blend)
        ts.observe(rho, rho_d, rho_theta, d)
        fresh.add(j)

        if cfg.fixed_alpha:
            continue
        if cfg.rate_floor:
            B = float(np.linalg.norm(estimates[j].center)) + estimates[j].radius
            dist = float(np.linalg.norm(np.asarray(ev.grad_i) / 2.0))
            L_h = 2.0 * (dist + B * cfg.dt)
            # The floor guards the robustified row the QP actually enforces,
            # so it consumes the worst-case-point margin, not the center one.
            try:
                floor = alpha_rate_floor(compliance_margin(hs, a_j), ts.alpha,
                                         ev.h, B, L_h,
                                         cfg.trust.L_hdot, cfg.trust.L_F)
            except BoundaryReached:
                emergency = True
                continue
        else:
            floor = -np.inf
        if cfg.alpha_update_order == "before":
            update_alpha(ts, rho, cfg.dt, floor, cfg.trust)

    rows = []
    for j in neighbors:
        o = obs[j]
        alpha = trust[j].alpha if cfg.alpha_update_order == "before" else o.alpha_start
        if cfg.fixed_alpha:
            alpha = o.alpha_start
        rows.append(cbf_row(o.ev, velocity_map(me, cfg.lookahead), o.a_j, alpha, tag=(i, j)))

    if me.model is Model.UNICYCLE:
        if me.target is None:
            u_ref = np.zeros(2)
        else:
            u_ref = track_reference(me, me.target, cfg.k_s, cfg.k_omega, cfg.box)
    else:
        try:
            u_ref = clf_qp_reference(me, cfg.clf_k, cfg.box)
        except Infeasible:
            log.warning("t=%.3f agent %d: goal descent infeasible in box; stopping", snap.time, i)
            u_ref = np.zeros(2)

    feasible = True
    fallback = Fallback.NONE
    if emergency:
        u_safe = np.zeros(2)
        feasible = False
        fallback = Fallback.EMERGENCY
    else:
        try:
            u_safe, _ = solve_qp(QPProblem(u_ref=u_ref, rows=rows, box=cfg.box))
        except Infeasible:
            log.warning("t=%.3f agent %d: safety QP infeasible; emergency stop", snap.time, i)
            u_safe = np.zeros(2)
            feasible = False
            fallback = Fallback.EMERGENCY

    if cfg.alpha_update_order == "after" and not cfg.fixed_alpha:
        for j in neighbors:
            if j not in fresh:
                continue
            ts = trust[j]
            o = obs[j]
            if cfg.rate_floor:
                B = float(np.linalg.norm(estimates[j].center)) + estimates[j].radius
                dist = float(np.linalg.norm(np.asarray(o.ev.grad_i) / 2.0))
                L_h = 2.0 * (dist + B * cfg.dt)
                try:
                    floor = alpha_rate_floor(ts.margin, ts.alpha, o.ev.h, B, L_h,
                                             cfg.trust.L_hdot, cfg.trust.L_F)
                except BoundaryReached:
                    continue
            else:
                floor = -np.inf
            update_alpha(ts, ts.rho, cfg.dt, floor, cfg.trust)

    return ControlDecision(u_ref=np.asarray(u_ref, dtype=float), u_safe=np.asarray(u_safe, dtype=float),
                           rows=tuple(rows), feasible=feasible, fallback=fallback)
