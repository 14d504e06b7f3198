"""Active-set QP and simplex LP against their independent oracles."""

import numpy as np
import pytest

from trustcbf.dynamics import Box
from trustcbf.solvers import (ConstraintRow, Infeasible, QPProblem,
                              lp_vertex_oracle, qp_oracle, random_lp_instance,
                              random_qp_instance, solve_lp, solve_qp)

BOX3 = Box((-3.0, -3.0), (3.0, 3.0))


def qp(u_ref, rows, box=BOX3):
    return QPProblem(u_ref=np.asarray(u_ref, dtype=float), rows=rows, box=box)


def test_qp_interior_reference_is_returned_unchanged():
    u, active = solve_qp(qp([0.5, -1.0], []))
    assert np.allclose(u, [0.5, -1.0])
    assert active == ()


def test_qp_out_of_box_reference_clips_to_box():
    u, active = solve_qp(qp([5.0, -7.0], []))
    assert np.allclose(u, [3.0, -3.0])
    assert set(active) == {"box0hi", "box1lo"}


def test_qp_single_row_projection_is_analytic():
    # projection onto a . u >= b is u_ref + max(0, (b - a.u_ref)/||a||^2) a
    row = ConstraintRow(a=(1.0, 1.0), b=2.0, tag="r")
    u, active = solve_qp(qp([0.0, 0.0], [row]))
    assert np.allclose(u, [1.0, 1.0], atol=1e-12)
    assert "r" in active


def test_qp_inactive_row_changes_nothing():
    row = ConstraintRow(a=(1.0, 0.0), b=-10.0)
    u, _ = solve_qp(qp([0.2, 0.3], [row]))
    assert np.allclose(u, [0.2, 0.3])


def test_qp_infeasible_rows_raise():
    rows = [ConstraintRow(a=(1.0, 0.0), b=1.0),
            ConstraintRow(a=(-1.0, 0.0), b=1.0)]  # u_x >= 1 and u_x <= -1
    with pytest.raises(Infeasible):
        solve_qp(qp([0.0, 0.0], rows))
    with pytest.raises(Infeasible):
        solve_qp(qp([0.0, 0.0], [ConstraintRow(a=(1.0, 0.0), b=4.0)]))


def test_qp_degenerate_row_vacuous_or_infeasible():
    ok = ConstraintRow(a=(0.0, 0.0), b=-1.0)
    u, _ = solve_qp(qp([0.1, 0.1], [ok]))
    assert np.allclose(u, [0.1, 0.1])
    with pytest.raises(Infeasible):
        solve_qp(qp([0.1, 0.1], [ConstraintRow(a=(0.0, 0.0), b=1.0)]))


def test_qp_deterministic_across_calls():
    rng = np.random.default_rng(3)
    for _ in range(20):
        p = random_qp_instance(rng)
        u1, a1 = solve_qp(p)
        u2, a2 = solve_qp(p)
        assert np.array_equal(u1, u2)
        assert a1 == a2


def test_qp_solution_always_feasible_fuzz():
    rng = np.random.default_rng(4)
    for _ in range(300):
        p = random_qp_instance(rng)
        u, _ = solve_qp(p)
        assert p.box.contains(u)
        for row in p.rows:
            assert float(np.dot(row.a, u)) >= row.b - 1e-9


def test_qp_matches_grid_oracle_sample():
    rng = np.random.default_rng(5)
    for _ in range(60):
        p = random_qp_instance(rng)
        ref = qp_oracle(p)
        assert ref is not None
        u, _ = solve_qp(p)
        val = float(np.sum((u - np.asarray(p.u_ref)) ** 2))
        assert val <= ref[0] + 1e-3
        assert abs(val - ref[0]) <= 1e-3


def test_lp_pure_box_is_corner():
    val, u = solve_lp(np.array([1.0, -2.0]), [], BOX3)
    assert np.allclose(u, [3.0, -3.0])
    assert val == pytest.approx(9.0)


def test_lp_single_row_cuts_the_corner():
    # maximize u_x subject to u_x <= 1 (written as -u_x >= -1)
    rows = [ConstraintRow(a=(-1.0, 0.0), b=-1.0)]
    val, u = solve_lp(np.array([1.0, 0.0]), rows, BOX3)
    assert val == pytest.approx(1.0, abs=1e-12)
    assert u[0] == pytest.approx(1.0, abs=1e-12)


def test_lp_infeasible_raises():
    rows = [ConstraintRow(a=(1.0, 0.0), b=1.0),
            ConstraintRow(a=(-1.0, 0.0), b=1.0)]
    with pytest.raises(Infeasible):
        solve_lp(np.array([1.0, 0.0]), rows, BOX3)


def test_lp_matches_vertex_enumeration_fuzz():
    rng = np.random.default_rng(6)
    for _ in range(150):
        c, rows, box = random_lp_instance(rng)
        v_simplex, u = solve_lp(c, rows, box)
        v_vertex, _ = lp_vertex_oracle(c, rows, box)
        assert abs(v_simplex - v_vertex) <= 1e-9
        assert box.contains(u)
        for row in rows:
            assert float(np.dot(row.a, u)) >= row.b - 1e-9


def test_random_instances_have_promised_interior():
    # the generator guarantees a feasible ball, so neither solver may ever
    # report infeasibility on its output
    rng = np.random.default_rng(7)
    for _ in range(100):
        p = random_qp_instance(rng)
        solve_qp(p)
