"""Trust pipeline: worst-case motion, compliance margins, scores, rate updates."""

import math

import numpy as np
import pytest

from trustcbf.barriers import eval_barrier
from trustcbf.dynamics import Box
from trustcbf.trust import (BoundaryReached, DegenerateNormal, TrustParams,
                            TrustState, alpha_rate, alpha_rate_floor,
                            build_halfspace, combine_trust, compliance_margin,
                            direction_trust, distance_trust,
                            max_own_contribution, update_alpha,
                            worst_case_motion)
from trustcbf.world import (AgentKind, AgentState, Model, MotionEstimate,
                            WorldSnapshot)

BOX3 = Box((-3.0, -3.0), (3.0, 3.0))


def integ(i, x, y, target=None, kind=AgentKind.UNCOOPERATIVE):
    return AgentState(id=i, kind=kind, model=Model.SINGLE_INTEGRATOR,
                      px=x, py=y, target=target)


def test_worst_case_motion_closed_form():
    est = MotionEstimate(center=np.array([1.0, 2.0]), radius=0.5)
    g = np.array([3.0, 4.0])
    v, val = worst_case_motion(est, g)
    assert np.allclose(v, [1.0 - 0.5 * 0.6, 2.0 - 0.5 * 0.8])
    assert val == pytest.approx(float(g @ est.center) - 0.5 * 5.0)
    assert val == pytest.approx(float(g @ v))


def test_worst_case_motion_zero_gradient_returns_center():
    est = MotionEstimate(center=np.array([1.0, -1.0]), radius=2.0)
    v, val = worst_case_motion(est, np.zeros(2))
    assert np.allclose(v, est.center)
    assert val == 0.0


def test_worst_case_motion_beats_sampling():
    rng = np.random.default_rng(11)
    for _ in range(100):
        est = MotionEstimate(center=rng.normal(size=2),
                             radius=float(rng.uniform(0.0, 2.0)))
        g = rng.normal(size=2)
        _, val = worst_case_motion(est, g)
        ang = rng.uniform(0.0, 2.0 * math.pi, 2000)
        rad = est.radius * np.sqrt(rng.uniform(0.0, 1.0, 2000))
        pts = est.center + np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)
        sampled = float(np.min(pts @ g))
        assert val <= sampled + 1e-9


def test_max_own_contribution_unconstrained_is_box_corner():
    # two agents only: no third-party rows, so the LP maxes gi . u over the box
    snap = WorldSnapshot(0.0, (integ(0, 0.0, 0.0, kind=AgentKind.INTACT),
                               integ(1, 2.0, 0.0)))
    val = max_own_contribution(0, 1, snap, alphas={}, estimates={},
                               box=BOX3, d_min=0.5, lookahead=0.1)
    # gi = (-4, 0): best contribution is u_x = -3
    assert val == pytest.approx(12.0)


def test_max_own_contribution_respects_other_pairs():
    # a third agent east of the observer caps how hard it may push east
    snap = WorldSnapshot(0.0, (integ(0, 0.0, 0.0, kind=AgentKind.INTACT),
                               integ(1, -2.0, 0.0),
                               integ(2, 1.2, 0.0)))
    still = {2: MotionEstimate(center=np.zeros(2), radius=0.0)}
    val = max_own_contribution(0, 1, snap, alphas={2: 0.8}, estimates=still,
                               box=BOX3, d_min=0.5, lookahead=0.1)
    # toward 1 the payoff is gi = (4, 0); the (0,2) row demands
    # -2.4 u_x >= -0.8 * 1.19, i.e. u_x <= 0.39666...
    assert val == pytest.approx(4.0 * (0.8 * 1.19 / 2.4), abs=1e-9)


def test_build_halfspace_fields_and_degenerate_case():
    ev = eval_barrier(integ(0, 0.0, 0.0), integ(1, 2.0, 0.0))
    hs = build_halfspace(ev, alpha=0.8, max_contrib=1.5)
    assert np.allclose(hs.A, [4.0, 0.0])
    assert hs.b == pytest.approx(-0.8 * ev.h - 1.5)
    assert np.allclose(hs.s_hat, [1.0, 0.0])
    ev0 = eval_barrier(integ(0, 1.0, 1.0), integ(1, 1.0, 1.0))
    with pytest.raises(DegenerateNormal):
        build_halfspace(ev0, 0.8, 0.0)


def test_compliance_margin_signed_slack():
    ev = eval_barrier(integ(0, 0.0, 0.0), integ(1, 2.0, 0.0))
    hs = build_halfspace(ev, 0.8, 0.0)
    on_boundary = hs.A * (hs.b / float(hs.A @ hs.A))
    assert compliance_margin(hs, on_boundary) == pytest.approx(0.0, abs=1e-12)
    assert compliance_margin(hs, on_boundary + hs.s_hat) == pytest.approx(
        float(np.linalg.norm(hs.A)))


def test_distance_trust_clamps_negative_margins():
    assert distance_trust(-5.0, beta=1.0) == 0.0
    assert distance_trust(0.0) == 0.0
    assert distance_trust(2.0, beta=1.0) == pytest.approx(math.tanh(2.0))
    assert distance_trust(1.0, beta=2.0) == pytest.approx(math.tanh(2.0))
    assert 0.0 <= distance_trust(1e9) <= 1.0  # saturates to 1.0 in float64


def test_direction_trust_reference_cases():
    s_hat = np.array([1.0, 0.0])
    # motion deflected exactly as much as the goal requires: ratio 1 -> tanh 2
    v = np.array([1.0, 1.0])
    assert direction_trust(v, v, s_hat) == pytest.approx(math.tanh(2.0))
    # motion further from the safe direction than the goal requires: low score
    n_hat = np.array([1.0, 0.0])
    a_bad = np.array([-1.0, 0.0])
    assert direction_trust(n_hat, a_bad, s_hat) == pytest.approx(
        math.tanh(2.0 * 0.0 / math.pi), abs=1e-12)
    # stationary prediction scores as if orthogonal
    a_still = np.zeros(2)
    n45 = np.array([1.0, 1.0])
    expect = math.tanh(2.0 * (math.pi / 4.0) / (math.pi / 2.0))
    assert direction_trust(n45, a_still, s_hat) == pytest.approx(expect)
    # unknown goal direction: neutral
    assert direction_trust(np.zeros(2), v, s_hat) == 0.5


def test_direction_trust_ratio_cap_keeps_score_below_one():
    s_hat = np.array([1.0, 0.0])
    n_hat = np.array([-1.0, 0.0])          # theta_n = pi
    a_tiny = np.array([1.0, 1e-9])          # theta_a ~ 0, floored
    val = direction_trust(n_hat, a_tiny, s_hat)
    assert val == pytest.approx(math.tanh(20.0))
    assert val <= 1.0  # tanh(20) rounds to 1.0 in float64


def test_combine_trust_half_direction_score_is_linear():
    # rho_theta = 0.5 weighs both branches equally: rho = 0.5 (rho_d - rho_bar)
    for rho_d in (0.0, 0.3, 0.5, 0.7, 1.0):
        assert combine_trust(rho_d, 0.5) == pytest.approx(0.5 * (rho_d - 0.5))


def test_combine_trust_sign_tracks_margin_side():
    assert combine_trust(0.9, 0.9) > 0.0
    assert combine_trust(0.1, 0.9) < 0.0
    assert combine_trust(0.5, 0.3) == 0.0
    # direction score weighs growth above the threshold, decay below it
    assert combine_trust(0.9, 0.95) > combine_trust(0.9, 0.2)
    assert combine_trust(0.1, 0.95) > combine_trust(0.1, 0.2)


def test_combine_trust_range_fuzz():
    rng = np.random.default_rng(12)
    for _ in range(2000):
        rho = combine_trust(float(rng.uniform(0, 1)), float(rng.uniform(0, 1)),
                            rho_bar_d=float(rng.uniform(0, 1)),
                            k_blend=float(rng.uniform(1, 200)))
        assert -1.0 <= rho <= 1.0


def test_alpha_rate_and_floor_formulas():
    assert alpha_rate(0.3, gamma_alpha=2.0) == pytest.approx(0.6)
    f = alpha_rate_floor(margin=0.4, alpha=0.8, h=0.5, B=0.2, L_h=2.0,
                         L_hdot=2.0, L_F=1.0)
    assert f == pytest.approx(-(0.4 + 2.0 * 1.0 * 0.04 + 0.8 * 2.0 * 0.2) / 0.5)
    with pytest.raises(BoundaryReached):
        alpha_rate_floor(0.1, 0.8, 1e-7, 0.1, 2.0, 2.0, 1.0)


def test_update_alpha_step_and_clamps():
    p = TrustParams(gamma_alpha=1.0, alpha_min=0.01, alpha_max=2.0)
    ts = TrustState(alpha=0.8)
    update_alpha(ts, rho=0.5, dt=0.05, floor=-math.inf, params=p)
    assert ts.alpha == pytest.approx(0.825)
    ts = TrustState(alpha=0.02)
    update_alpha(ts, rho=-1.0, dt=0.05, floor=-math.inf, params=p)
    assert ts.alpha == p.alpha_min
    ts = TrustState(alpha=1.99)
    update_alpha(ts, rho=1.0, dt=0.05, floor=-math.inf,
                 params=TrustParams(gamma_alpha=10.0, alpha_max=2.0))
    assert ts.alpha == 2.0


def test_update_alpha_floor_overrides_trust_rate():
    p = TrustParams(gamma_alpha=100.0)
    ts = TrustState(alpha=0.8)
    update_alpha(ts, rho=-1.0, dt=0.05, floor=-0.2, params=p)
    # commanded -100, floor -0.2: the floor wins
    assert ts.alpha == pytest.approx(0.8 - 0.05 * 0.2)
    assert list(ts.history)[-1] == ts.alpha


def test_trust_state_observe_records_scores():
    ts = TrustState(alpha=0.8)
    ts.observe(rho=0.2, rho_d=0.9, rho_theta=0.6, margin=1.5)
    assert (ts.rho, ts.rho_d, ts.rho_theta, ts.margin) == (0.2, 0.9, 0.6, 1.5)
