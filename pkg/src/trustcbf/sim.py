"""Scenario description, non-intact agent policies, the run loop, and metrics.

The update is synchronous: every agent's command for step k is computed from
the same immutable snapshot of step k, then all states advance together by one
Euler step.  With no randomness anywhere in the loop, two runs of the same
scenario produce bitwise identical traces.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .barriers import D_MIN_DEFAULT, LOOKAHEAD_DEFAULT, clf_value, eval_barrier
from .controller import (CLF_K, AgentConfig, ControlDecision, Fallback,
                         agent_step, clf_qp_reference)
from .dynamics import DEFAULT_BOX, Box, euler_step, nominal_trajectory
from .solvers import Infeasible
from .trust import TrustParams, TrustState
from .world import (ESTIMATE_RADIUS_FACTOR, AgentKind, AgentState, Model,
                    World, WorldSnapshot)

log = logging.getLogger(__name__)

GOAL_TOL = 0.2

# Slack allowed on the discrete barrier-rate inequality before a step is
# flagged as an integration artifact: 5 * dt * (curvature bound 2).
EULER_SLACK_FACTOR = 10.0


class ValidationError(Exception):
    """A scenario violates the schema or its semantic rules."""


@dataclass
class AgentSpec:
    kind: AgentKind
    model: Model
    start: tuple[float, ...]                      # (x, y) or (x, y, psi)
    target: Optional[tuple[float, float]] = None  # None marks the target unknown
    d_min: float = D_MIN_DEFAULT
    box: Box = DEFAULT_BOX
    prey: Optional[int] = None                    # adversarial only
    speed: float = 1.0                            # uncooperative cruise speed
    gain: float = CLF_K                           # adversarial chase gain


@dataclass
class Scenario:
    agents: list[AgentSpec]
    duration: float
    dt: float = 0.05
    trust: TrustParams = field(default_factory=TrustParams)
    fixed_alpha: bool = False
    alpha_update_order: str = "before"
    rate_floor: bool = True
    seed: int = 0
    gamma_nominal: float = 1.0   # speed of the straight-line reference used by metrics
    lookahead: float = LOOKAHEAD_DEFAULT

    def validate(self) -> None:
        if self.dt <= 0.0:
            raise ValidationError(f"dt must be positive, got {self.dt}")
        if self.duration < 0.0:
            raise ValidationError(f"duration must be nonnegative, got {self.duration}")
        if not self.agents:
            raise ValidationError("scenario needs at least one agent")
        if self.alpha_update_order not in ("before", "after"):
            raise ValidationError(f"alpha_update_order must be 'before' or 'after', got {self.alpha_update_order!r}")
        if self.trust.alpha0 <= 0.0:
            raise ValidationError("alpha0 must be positive")
        if self.trust.alpha_min <= 0.0:
            raise ValidationError("alpha_min must be positive")
        if self.gamma_nominal <= 0.0:
            raise ValidationError("gamma_nominal must be positive")
        n = len(self.agents)
        for idx, a in enumerate(self.agents):
            where = f"agents[{idx}]"
            if len(a.start) not in (2, 3):
                raise ValidationError(f"{where}.start must have 2 or 3 components")
            if len(a.start) == 3 and a.model is not Model.UNICYCLE:
                raise ValidationError(f"{where}.start has a heading but the model is not a unicycle")
            if not all(math.isfinite(v) for v in a.start):
                raise ValidationError(f"{where}.start must be finite")
            if a.d_min <= 0.0:
                raise ValidationError(f"{where}.d_min must be positive")
            if a.kind is AgentKind.INTACT and a.model is Model.UNICYCLE and a.target is None:
                raise ValidationError(f"{where}: intact agents need a known target")
            if a.kind is AgentKind.INTACT and a.model is Model.SINGLE_INTEGRATOR and a.target is None:
                raise ValidationError(f"{where}: intact agents need a known target")
            if a.kind is AgentKind.ADVERSARIAL:
                if a.prey is None:
                    raise ValidationError(f"{where}.prey: required for Adversarial agents")
                if not (0 <= a.prey < n) or a.prey == idx:
                    raise ValidationError(f"{where}.prey: must name another agent id, got {a.prey}")
                if a.model is not Model.SINGLE_INTEGRATOR:
                    raise ValidationError(f"{where}: adversarial agents use the SingleIntegrator model")
                if a.gain <= 0.0:
                    raise ValidationError(f"{where}.gain must be positive")
            if a.kind is AgentKind.UNCOOPERATIVE:
                if a.target is None:
                    raise ValidationError(f"{where}: uncooperative agents need a target to head to")
                if a.speed <= 0.0:
                    raise ValidationError(f"{where}.speed must be positive")
                if a.model is not Model.SINGLE_INTEGRATOR:
                    raise ValidationError(f"{where}: uncooperative agents use the SingleIntegrator model")


@dataclass
class AgentRecord:
    px: float
    py: float
    psi: float
    u_ref: tuple[float, float]
    u: tuple[float, float]
    fallback: int


@dataclass
class PairRecord:
    h: float
    alpha: float
    rho: float
    rho_d: float
    rho_theta: float
    margin: float


@dataclass
class Trace:
    times: list[float] = field(default_factory=list)
    agents: list[list[AgentRecord]] = field(default_factory=list)   # [step][agent]
    pairs: list[dict[tuple[int, int], PairRecord]] = field(default_factory=list)
    estimate_violations: int = 0
    euler_slack_events: int = 0

    def positions(self, i: int) -> np.ndarray:
        return np.array([[step[i].px, step[i].py] for step in self.agents])

    def pair_series(self, i: int, j: int, name: str) -> np.ndarray:
        return np.array([getattr(step[(i, j)], name) for step in self.pairs])


def adversary_policy(state: AgentState, snapshot: WorldSnapshot, prey: int,
                     k: float = CLF_K, box: Box = DEFAULT_BOX) -> np.ndarray:
    """Chase the prey's current position with an exponentially stabilizing descent.

    When the box cannot deliver the required descent rate (prey far away or
    fleeing at full speed), the command saturates along the pursuit direction
    instead of stopping.
    """
    prey_pos = (snapshot.agents[prey].px, snapshot.agents[prey].py)
    chase = replace(state, target=prey_pos)
    try:
        return clf_qp_reference(chase, k, box)
    except Infeasible:
        V, gradV = clf_value(chase)
        gn = float(gradV @ gradV)
        if gn < 1e-18:
            return np.zeros(2)
        return box.clip(-(k * V / gn) * gradV)


def uncooperative_policy(state: AgentState, speed: float = 1.0,
                         dt: Optional[float] = None) -> np.ndarray:
    """Constant-velocity motion toward the agent's own target; zero at the target.

    Depends on nothing but the agent's own state, so other agents cannot
    perturb it.  With ``dt`` given, the last step onto the target is shortened
    to land exactly instead of overshooting.
    """
    if state.target is None:
        return np.zeros(2)
    e = np.array([state.target[0] - state.px, state.target[1] - state.py])
    dist = float(np.linalg.norm(e))
    if dist < 1e-12:
        return np.zeros(2)
    v = speed
    if dt is not None and dist < speed * dt:
        v = dist / dt
    return (v / dist) * e


def _build_world(s: Scenario) -> World:
    agents = []
    for idx, spec in enumerate(s.agents):
        psi = spec.start[2] if len(spec.start) == 3 else 0.0
        agents.append(AgentState(
            id=idx, kind=spec.kind, model=spec.model,
            px=spec.start[0], py=spec.start[1], psi=psi,
            target=spec.target,
        ))
    return World(agents)


def run(s: Scenario) -> Trace:
    """Simulate the scenario and return the full trace.

    Commands and pair statistics are recorded at every time 0, dt, ..., up to
    floor(duration/dt)*dt inclusive; the final record's commands are computed
    but not applied.
    """
    s.validate()
    world = _build_world(s)
    n = len(s.agents)
    intact = [i for i, spec in enumerate(s.agents) if spec.kind is AgentKind.INTACT]
    trust = {i: {j: TrustState(alpha=s.trust.alpha0) for j in range(n) if j != i}
             for i in intact}
    cfgs = {i: AgentConfig(
        box=s.agents[i].box, d_min=s.agents[i].d_min, lookahead=s.lookahead,
        dt=s.dt, trust=s.trust, fixed_alpha=s.fixed_alpha,
        rate_floor=s.rate_floor, alpha_update_order=s.alpha_update_order,
    ) for i in intact}

    steps = int(math.floor(s.duration / s.dt + 1e-9))
    trace = Trace()
    history: list[WorldSnapshot] = []
    prev_pair_h: dict[tuple[int, int], tuple[float, float]] = {}

    for k in range(steps + 1):
        snap = world.take_snapshot()
        history.append(snap)
        if len(history) > 2:
            history.pop(0)

        decisions: dict[int, ControlDecision] = {}
        for a in snap.agents:
            spec = s.agents[a.id]
            if a.kind is AgentKind.INTACT:
                decisions[a.id] = agent_step(a.id, history, trust[a.id], cfgs[a.id])
            elif a.kind is AgentKind.ADVERSARIAL:
                u = adversary_policy(a, snap, spec.prey, spec.gain, spec.box)
                decisions[a.id] = ControlDecision(u_ref=u, u_safe=u, rows=(),
                                                  feasible=True, fallback=Fallback.NONE)
            else:
                u = uncooperative_policy(a, spec.speed, s.dt)
                decisions[a.id] = ControlDecision(u_ref=u, u_safe=u, rows=(),
                                                  feasible=True, fallback=Fallback.NONE)

        trace.times.append(snap.time)
        trace.agents.append([
            AgentRecord(
                px=a.px, py=a.py, psi=a.psi,
                u_ref=(float(decisions[a.id].u_ref[0]), float(decisions[a.id].u_ref[1])),
                u=(float(decisions[a.id].u_safe[0]), float(decisions[a.id].u_safe[1])),
                fallback=decisions[a.id].fallback.value,
            ) for a in snap.agents
        ])
        pair_step: dict[tuple[int, int], PairRecord] = {}
        for i in intact:
            for j in range(n):
                if j == i:
                    continue
                ts = trust[i][j]
                ev = eval_barrier(snap.agents[i], snap.agents[j],
                                  s.agents[i].d_min, s.lookahead)
                pair_step[(i, j)] = PairRecord(h=ev.h, alpha=ts.alpha, rho=ts.rho,
                                               rho_d=ts.rho_d, rho_theta=ts.rho_theta,
                                               margin=ts.margin)
                # Discrete rate inequality bookkeeping (integration artifacts).
                if (i, j) in prev_pair_h:
                    h_prev, alpha_prev = prev_pair_h[(i, j)]
                    slack = (ev.h - h_prev) / s.dt + alpha_prev * h_prev
                    if slack < -EULER_SLACK_FACTOR * s.dt:
                        trace.euler_slack_events += 1
                prev_pair_h[(i, j)] = (ev.h, ts.alpha)
        trace.pairs.append(pair_step)

        if k == steps:
            break
        new_agents = []
        for a in snap.agents:
            new_agents.append(euler_step(a, decisions[a.id].u_safe, s.dt, s.agents[a.id].box))
        world.advance(new_agents, s.dt)

        # Check the ten-percent motion-estimate assumption against what really
        # happened; violations are logged, never enforced.
        if k >= 1:
            for j in range(n):
                v_prev = (np.array([history[-1].agents[j].px, history[-1].agents[j].py])
                          - np.array([history[-2].agents[j].px, history[-2].agents[j].py])) / s.dt
                v_now = (np.array([new_agents[j].px, new_agents[j].py])
                         - np.array([history[-1].agents[j].px, history[-1].agents[j].py])) / s.dt
                dev = float(np.linalg.norm(v_now - v_prev))
                bound = ESTIMATE_RADIUS_FACTOR * float(np.linalg.norm(v_prev))
                if dev > bound + 1e-9:
                    trace.estimate_violations += 1

    if trace.estimate_violations:
        log.info("motion-estimate bound exceeded on %d agent-steps", trace.estimate_violations)
    return trace


def metrics(trace: Trace, s: Scenario) -> dict:
    """Per-intact-agent summary: worst barrier, goal distance, path deviation, reach time."""
    intact = [i for i, spec in enumerate(s.agents) if spec.kind is AgentKind.INTACT]
    times = np.array(trace.times)
    out: dict = {"agents": {}, "min_h": math.inf,
                 "emergency_events": 0,
                 "estimate_violations": trace.estimate_violations,
                 "euler_slack_events": trace.euler_slack_events}
    for step in trace.agents:
        out["emergency_events"] += sum(rec.fallback for rec in step)
    for i in intact:
        spec = s.agents[i]
        pos = trace.positions(i)
        min_h = math.inf
        for j in range(len(s.agents)):
            if j == i:
                continue
            min_h = min(min_h, float(np.min(trace.pair_series(i, j, "h"))))
        out["min_h"] = min(out["min_h"], min_h)

        target = np.array(spec.target) if spec.target is not None else None
        if target is not None:
            goal_dist = np.linalg.norm(pos - target, axis=1)
            final_goal_distance = float(goal_dist[-1])
            reached = np.nonzero(goal_dist < GOAL_TOL)[0]
            reach_time = float(times[reached[0]]) if len(reached) else math.inf
            start = AgentState(id=i, kind=spec.kind, model=spec.model,
                               px=spec.start[0], py=spec.start[1],
                               psi=spec.start[2] if len(spec.start) == 3 else 0.0,
                               target=spec.target)
            ref = nominal_trajectory(start, s.gamma_nominal, s.duration, s.dt)
            deviation = float(np.max(np.linalg.norm(pos - ref[: len(pos)], axis=1)))
        else:
            final_goal_distance = math.inf
            reach_time = math.inf
            deviation = math.inf
        out["agents"][i] = {
            "min_h": min_h,
            "final_goal_distance": final_goal_distance,
            "nominal_deviation": deviation,
            "goal_reach_time": reach_time,
        }
    return out


def crossing_scenario(fixed_alpha: bool = False, duration: float = 20.0,
                      rho_bar_d: float = 0.5) -> Scenario:
    """Canonical benchmark: three intact unicycles head east while an adversary
    chases agent 1 and two uncooperative integrators cut across their lanes.

    The adversary pursues with a soft gain and weak lateral authority, so an
    agent that approaches boldly (high alpha) can sidestep it before it
    re-centers; a timid fixed-rate agent stalls in front of it instead.  The
    rate ceiling keeps the closest pass comfortably off the boundary.
    """
    agents = [
        AgentSpec(AgentKind.INTACT, Model.UNICYCLE, (0.0, 0.0, 0.0), (10.0, 0.0)),
        AgentSpec(AgentKind.INTACT, Model.UNICYCLE, (0.0, 1.0, 0.0), (10.0, 1.0)),
        AgentSpec(AgentKind.INTACT, Model.UNICYCLE, (0.0, 2.0, 0.0), (10.0, 2.0)),
        AgentSpec(AgentKind.ADVERSARIAL, Model.SINGLE_INTEGRATOR, (10.0, 0.0),
                  target=None, prey=1, gain=0.5,
                  box=Box((-1.0, -0.12), (1.0, 0.12))),
        AgentSpec(AgentKind.UNCOOPERATIVE, Model.SINGLE_INTEGRATOR, (5.0, 6.0),
                  target=(5.0, -6.0), speed=1.0),
        AgentSpec(AgentKind.UNCOOPERATIVE, Model.SINGLE_INTEGRATOR, (6.0, -6.0),
                  target=(6.0, 6.0), speed=1.0),
    ]
    return Scenario(agents=agents, duration=duration, dt=0.05,
                    trust=TrustParams(rho_bar_d=rho_bar_d, alpha_min=0.01,
                                      alpha_max=2.0, gamma_alpha=2.0),
                    fixed_alpha=fixed_alpha, gamma_nominal=3.0)


def headon_stress_scenario(rate_floor: bool = True, duration: float = 22.0) -> Scenario:
    """Feasibility stress case: two slow adversaries creep toward an intact
    unicycle from opposite sides while declaring goals behind themselves, so
    their pursuit reads as maximally deceptive and an aggressive trust gain
    slams alpha toward its minimum.  The constraint pair cancels the agent's
    own control authority, so keeping the rows feasible depends entirely on
    how fast alpha is allowed to fall: with the rate floor the filter stays
    solvable until the squeeze reaches the barrier, without it the rows go
    empty sooner and the run degrades into emergency stops."""
    creep_box = Box((-0.5, -0.5), (0.5, 0.5))
    agents = [
        AgentSpec(AgentKind.INTACT, Model.UNICYCLE, (0.0, 0.0, 0.0), (6.0, 0.0)),
        AgentSpec(AgentKind.ADVERSARIAL, Model.SINGLE_INTEGRATOR, (2.2, 0.0),
                  target=(9.0, 0.0), prey=0, gain=0.1, box=creep_box),
        AgentSpec(AgentKind.ADVERSARIAL, Model.SINGLE_INTEGRATOR, (-2.2, 0.0),
                  target=(-9.0, 0.0), prey=0, gain=0.25, box=creep_box),
    ]
    return Scenario(agents=agents, duration=duration, dt=0.05,
                    trust=TrustParams(gamma_alpha=200.0, alpha_min=1e-4,
                                      beta=2.0, v_max=0.75),
                    rate_floor=rate_floor)
