import math

import numpy as np
import pytest

from stealthimpact import attacks, distrib, solver
from oracles import scipy_reference_qclp


def _problem(c, q_box=None, m_quad=None, f_eq=None, radius=1.0):
    c = np.asarray(c, dtype=float)
    n = c.shape[0]
    return solver.ConvexProblem(
        c=c,
        q_box=np.zeros((0, n)) if q_box is None else np.asarray(q_box, dtype=float),
        m_quad=np.zeros((0, n)) if m_quad is None else np.asarray(m_quad, dtype=float),
        f_eq=np.zeros((0, n)) if f_eq is None else np.asarray(f_eq, dtype=float),
        radius=radius,
    )


def test_quadratic_binds_before_box():
    # unit box with a radius-0.25 ball inside: optimum on the ball at (0.5, 0)
    res = solver.solve_qclp(_problem([1.0, 0.0], q_box=np.eye(2), m_quad=np.eye(2), radius=0.25))
    assert res.status == "optimal"
    assert res.mu == pytest.approx(0.5, abs=1e-6)
    assert np.allclose(res.d_star, [0.5, 0.0], atol=1e-5)


def test_box_binds_before_quadratic():
    # radius 9 ball strictly contains the unit box: optimum at the face d_1 = 1
    res = solver.solve_qclp(_problem([1.0, 0.0], q_box=np.eye(2), m_quad=np.eye(2), radius=9.0))
    assert res.mu == pytest.approx(1.0, abs=1e-6)


def test_corner_solution():
    res = solver.solve_qclp(_problem([2.0, 1.0], q_box=np.eye(2), m_quad=np.eye(2), radius=100.0))
    assert res.mu == pytest.approx(3.0, abs=1e-5)
    assert np.allclose(res.d_star, [1.0, 1.0], atol=1e-4)


def test_full_rank_equalities_pin_origin():
    res = solver.solve_qclp(_problem([1.0, 1.0], q_box=np.eye(2), m_quad=np.eye(2), f_eq=np.eye(2)))
    assert res.status == "optimal"
    assert res.mu == pytest.approx(0.0, abs=1e-12)


def test_negative_radius_infeasible():
    with pytest.raises(solver.Infeasible):
        solver.solve_qclp(_problem([1.0, 0.0], m_quad=np.eye(2), radius=-0.1))


def test_zero_radius_collapses_quadratic():
    # radius 0 turns m_quad d <= 0 into an equality; remaining freedom hits the box
    res = solver.solve_qclp(
        _problem([0.0, 1.0], q_box=np.eye(2), m_quad=np.array([[1.0, 0.0]]), radius=0.0)
    )
    assert res.mu == pytest.approx(1.0, abs=1e-6)
    assert abs(res.d_star[0]) < 1e-9


def test_unbounded_direction_detected():
    # nothing constrains d_2
    res = solver.solve_qclp(_problem([0.0, 1.0], m_quad=np.array([[1.0, 0.0]]), radius=1.0))
    assert res.status == "unbounded"
    assert res.mu == math.inf


def test_objective_orthogonal_to_constraints_is_zero():
    # c lies in the equality row space: only d with c'd = 0 are feasible
    res = solver.solve_qclp(
        _problem([1.0, 0.0], q_box=np.eye(2), m_quad=np.eye(2), f_eq=np.array([[1.0, 0.0]]))
    )
    assert res.status == "optimal"
    assert res.mu == pytest.approx(0.0, abs=1e-12)


def test_symmetry_of_feasible_set():
    rng = np.random.default_rng(12)
    for _ in range(5):
        c = rng.normal(size=4)
        q = rng.normal(size=(2, 4))
        m = rng.normal(size=(4, 4))
        plus = solver.solve_qclp(_problem(c, q_box=q, m_quad=m, radius=2.0))
        minus = solver.solve_qclp(_problem(-c, q_box=q, m_quad=m, radius=2.0))
        assert plus.mu == pytest.approx(minus.mu, rel=1e-6, abs=1e-9)


def test_against_reference_solver():
    rng = np.random.default_rng(21)
    for trial in range(8):
        c = rng.normal(size=4)
        q = rng.normal(size=(2, 4))
        m = rng.normal(size=(3, 4))
        f = rng.normal(size=(1, 4))
        radius = float(rng.uniform(0.5, 4.0))
        res = solver.solve_qclp(_problem(c, q_box=q, m_quad=m, f_eq=f, radius=radius))
        assert res.status == "optimal"
        mu_ref, d_ref = scipy_reference_qclp(c, q, m, f, radius)
        assert res.mu == pytest.approx(mu_ref, rel=1e-4, abs=1e-6)


def test_kkt_certificate_reported():
    res = solver.solve_qclp(_problem([1.0, 0.3], q_box=np.eye(2), m_quad=np.eye(2), radius=0.5))
    assert res.kkt_residual <= solver.KKT_TOL
    assert res.newton_iters > 0


def test_eliminate_equalities_constancy():
    # a(1) = a(0) on one channel leaves the diagonal direction
    f = np.array([[-1.0, 1.0]])
    Z = solver.eliminate_equalities(f, 2)
    assert Z.shape == (2, 1)
    assert np.allclose(np.abs(Z[:, 0]), np.sqrt(0.5), atol=1e-12)
    assert np.allclose(solver.eliminate_equalities(np.zeros((0, 3)), 3), np.eye(3))


def _bias_report(system, N=6, epsilon=0.3, max_workers=None):
    res = attacks.ResourceSet(sensors=(0,), actuators=(0, 1))
    atk = attacks.build_bias(res, system.dims, N)
    layout = attacks.decision_layout(atk, N, system.controller.Q_yr)
    q_z = np.array([[0.0, 0.0, 1.0 / 3.0]])
    summary = distrib.gaussian_summary(system, atk, layout, q_z, N, epsilon)
    return solver.compute_impact(summary, layout, max_workers=max_workers), summary, layout


def test_compute_impact_constraints_hold(system):
    report, summary, layout = _bias_report(system)
    assert report.feasible and not report.unbounded
    assert report.kkt_residual <= solver.KKT_TOL
    for i in range(report.mu.shape[0]):
        d = report.d_star[i]
        assert np.max(np.abs(layout.Q @ d)) <= 1.0 + solver.CONSTRAINT_SLACK
        quad = float(d @ summary.t_r.T @ summary.t_r @ d)
        assert quad <= summary.eps_prime * (1.0 + solver.CONSTRAINT_SLACK) + solver.CONSTRAINT_SLACK
        if layout.F.shape[0]:
            assert np.max(np.abs(layout.F @ d)) <= solver.CONSTRAINT_SLACK * max(1.0, np.max(np.abs(d)))


def test_compute_impact_aggregation(system):
    report, _, _ = _bias_report(system)
    assert report.exceed_prob == pytest.approx(float(np.max(report.p_exceed)), abs=1e-15)
    assert report.mean_lower == pytest.approx(float(np.max(report.mu)), abs=1e-15)
    # smallest index attains the max (first-occurrence tie break)
    assert report.argmax_exceed == int(np.argmax(report.p_exceed))
    assert report.p_exceed[: report.argmax_exceed].max(initial=-1.0) < report.exceed_prob
    assert solver.mean_impact_lower(report) == report.mean_lower


def test_compute_impact_thread_pool_matches_serial(system):
    serial, _, _ = _bias_report(system, max_workers=None)
    pooled, _, _ = _bias_report(system, max_workers=4)
    assert np.allclose(serial.mu, pooled.mu, atol=1e-12)
    assert serial.exceed_prob == pooled.exceed_prob


def test_compute_impact_unbounded_path(system):
    N = 4
    res = attacks.ResourceSet(sensors=(1, 2), actuators=(2, 3))
    atk = attacks.build_fdi(res, system.dims, N)
    layout = attacks.decision_layout(atk, N, system.controller.Q_yr)
    q_z = np.array([[0.0, 0.0, 1.0 / 3.0]])
    summary = distrib.gaussian_summary(system, atk, layout, q_z, N, 0.3)
    report = solver.compute_impact(summary, layout)
    assert report.unbounded and report.feasible
    assert report.exceed_prob == 1.0
    assert report.mean_lower == math.inf
    assert solver.mean_impact_lower(report) == math.inf
    assert report.argmax_exceed is None


def test_compute_impact_infeasible_path(system):
    import dataclasses

    report, summary, layout = _bias_report(system)
    starved = dataclasses.replace(summary, eps_prime=-1.0)
    out = solver.compute_impact(starved, layout)
    assert not out.feasible
    assert out.exceed_prob == 0.0
    assert solver.mean_impact_lower(out) == 0.0
    assert out.argmax_exceed is None
