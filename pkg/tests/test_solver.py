import csv
import io

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy import sparse

from velokit.core import ConstrainedProblem, Metadata, SolverParams
from velokit.oracle import reference_minimum
from velokit.problems import default_params, gen_random_qp
from velokit.solver import (
    TRACE_COLUMNS,
    flow_mode,
    line_search_step,
    multiplier_reuse_run,
    solve,
    step,
    velocity,
)

from conftest import fixture_params, make_equality_problem, make_fixture_problem


# --- velocity / step -----------------------------------------------------------


def test_velocity_is_negative_gradient_when_inactive(fixture1d):
    v, res = velocity(fixture1d, np.array([1.0]), fixture_params())
    assert_allclose(v, [-0.4], atol=1e-15)
    assert res.lam.size == 0


def test_velocity_clamped_by_lower_membrane(fixture1d):
    # active lower bound: the cone requires v >= -alpha*g = 0.05, overriding
    # the raw gradient direction
    v, res = velocity(fixture1d, np.array([-0.5]), fixture_params(alpha=0.1))
    assert_allclose(v, [0.05], atol=1e-12)
    assert res.lam[0] > 0


def test_velocity_free_against_upper_bound(fixture1d):
    # x = 2 activates g2 = 2 - x, which only caps v from above; the descent
    # direction already points away so lam = 0
    v, res = velocity(fixture1d, np.array([2.0]), fixture_params(alpha=0.1))
    assert_allclose(v, [-0.6], atol=1e-12)
    assert_allclose(res.lam, [0.0], atol=1e-12)


def test_step_is_explicit_euler_update(fixture1d):
    x1, v, _ = step(fixture1d, np.array([0.5]), fixture_params())
    assert_allclose(v, [-0.3], atol=1e-15)
    assert_allclose(x1, [-1.0], atol=1e-15)


def test_step_at_kkt_point_is_stationary(fixture1d):
    # x = 0 with the lower bound active is the constrained minimizer
    x1, v, _ = step(fixture1d, np.array([0.0]), fixture_params())
    assert_array_equal(x1, [0.0])
    assert_array_equal(v, [0.0])


def test_unconstrained_solve_is_plain_gradient_descent():
    rng = np.random.default_rng(11)
    qdiag = rng.uniform(0.2, 1.0, 5)
    c = rng.normal(size=5)
    p = ConstrainedProblem(
        dim=5, n_ineq=0, n_eq=0,
        objective=lambda x: 0.5 * float(x @ (qdiag * x)) + float(c @ x),
        objective_grad=lambda x: qdiag * x + c,
    )
    params = SolverParams(T=1.0, alpha=0.5, maxiter=20, tol=1e-300)
    res = solve(p, np.zeros(5), params, record_trace=True)

    x = np.zeros(5)
    for row in res.trace:
        assert_array_equal(row.x, x)
        x = x + params.T * (-(qdiag * x + c))


def test_single_equality_step_contracts_residual(eqprob2d):
    params = fixture_params(T=0.5, alpha=0.4)
    x0 = np.array([2.0, 1.0])
    h0 = eqprob2d.eval_eq(x0)
    x1, _, _ = step(eqprob2d, x0, params)
    h1 = eqprob2d.eval_eq(x1)
    assert_allclose(h1, (1.0 - params.alpha * params.T) * h0, rtol=1e-12)


def test_equality_solve_reaches_projection(eqprob2d):
    # min |x|^2/2 on the line x1 + x2 = 1 has the closed-form answer (1/2, 1/2)
    res = solve(eqprob2d, np.array([2.0, -3.0]), fixture_params(T=0.5, alpha=0.4))
    assert res.converged
    assert_allclose(res.x_final, [0.5, 0.5], atol=1e-5)


# --- full solve behaviour --------------------------------------------------------


def test_fixture_solve_crosses_origin_once(fixture1d):
    res = solve(fixture1d, np.array([1.5]), fixture_params(), record_trace=True)
    assert res.status == "converged"
    assert abs(res.x_final[0]) <= 1e-4
    xs = np.array([row.x[0] for row in res.trace])
    down = int(np.sum((xs[:-1] > 0) & (xs[1:] <= 0)))
    up = int(np.sum((xs[:-1] < 0) & (xs[1:] >= 0) & (xs[1:] > 1e-4)))
    assert down <= 1
    assert up == 0


def test_solve_trace_has_iterations_plus_one_rows(fixture1d):
    res = solve(fixture1d, np.array([1.5]), fixture_params(), record_trace=True)
    assert len(res.trace) == res.iterations + 1
    ks = [row.k for row in res.trace]
    assert ks == list(range(res.iterations + 1))


def test_solve_stops_immediately_at_fixed_point(fixture1d):
    res = solve(fixture1d, np.array([0.0]), fixture_params(), record_trace=True)
    assert res.status == "converged"
    assert res.iterations == 0
    assert len(res.trace) == 1
    assert_array_equal(res.x_final, [0.0])


def test_solve_reports_maxiter(fixture1d):
    res = solve(fixture1d, np.array([1.5]), fixture_params(maxiter=3),
                record_trace=True)
    assert res.status == "maxiter"
    assert not res.converged
    assert res.iterations == 3
    assert len(res.trace) == 4


def test_solve_flags_evaluation_failure():
    p = ConstrainedProblem(
        dim=1, n_ineq=0, n_eq=0,
        objective=lambda x: float("nan") if x[0] < 0 else float(x[0] ** 0.5),
        objective_grad=lambda x: np.array(
            [float("nan") if x[0] <= 0 else 0.5 * x[0] ** -0.5]),
    )
    res = solve(p, np.array([1.0]), SolverParams(T=5.0, alpha=0.1))
    assert res.status == "error"
    assert res.iterations == 1
    assert res.f_final == 1.0  # last successfully evaluated objective


def test_solve_matches_reference_minimum_on_qp():
    p = gen_random_qp(20, seed=7)
    res = solve(p, p.x0, default_params(p))
    assert res.converged
    xstar, _, _ = reference_minimum(p, range(p.n_ineq))
    assert float(np.linalg.norm(res.x_final - xstar)) <= 1e-4


def test_warm_start_does_not_change_the_answer(fixture1d):
    cold = solve(fixture1d, np.array([1.5]),
                 fixture_params(warm_start_lambda=False))
    warm = solve(fixture1d, np.array([1.5]), fixture_params())
    assert warm.status == cold.status == "converged"
    assert abs(warm.x_final[0] - cold.x_final[0]) <= 1e-9


# --- trace CSV -------------------------------------------------------------------


def test_trace_csv_column_order_and_round_trip(fixture1d):
    res = solve(fixture1d, np.array([1.5]), fixture_params(),
                record_trace=True, record_d=True)
    buf = io.StringIO()
    res.trace.to_csv(buf)
    rows = list(csv.reader(io.StringIO(buf.getvalue())))
    assert tuple(rows[0]) == TRACE_COLUMNS
    assert len(rows) - 1 == res.iterations + 1
    # repr-based floats must round-trip exactly
    k = res.iterations // 2
    parsed = rows[1 + k]
    assert int(parsed[0]) == k
    assert float(parsed[1]) == res.trace[k].f
    assert float(parsed[2]) == res.trace[k].d
    assert float(parsed[4]) == res.trace[k].kkt_residual


def test_trace_csv_leaves_d_blank_when_not_recorded(fixture1d):
    res = solve(fixture1d, np.array([1.5]), fixture_params(maxiter=2),
                record_trace=True)
    buf = io.StringIO()
    res.trace.to_csv(buf)
    rows = list(csv.reader(io.StringIO(buf.getvalue())))
    assert all(row[2] == "" for row in rows[1:])


# --- line search -----------------------------------------------------------------


def test_line_search_recovers_cauchy_step():
    # isotropic quadratic, no constraints: the frozen-multiplier merit is
    # maximized exactly at the line-minimizing step 1/h
    h = 0.5
    p = ConstrainedProblem(
        dim=2, n_ineq=0, n_eq=0,
        objective=lambda x: 0.5 * h * float(x @ x),
        objective_grad=lambda x: h * x,
    )
    params = SolverParams(T=5.0, alpha=0.1)
    x = np.array([1.0, -2.0])
    y = line_search_step(p, x, params)
    v = -h * x
    tau = float((y - x)[0] / v[0])
    assert abs(tau - 1.0 / h) <= 1e-3


def test_line_search_no_move_at_stationary_point(fixture1d):
    y = line_search_step(fixture1d, np.array([0.0]), fixture_params())
    assert_array_equal(y, [0.0])


def test_line_search_never_scores_below_default_step(fixture1d):
    params = fixture_params(alpha=0.1)
    x = np.array([1.5])
    y_ls = line_search_step(fixture1d, x, params)
    v, res = velocity(fixture1d, x, params)

    def merit(y):
        g = fixture1d.eval_ineq(y)
        model_cols = np.array([[1.0, -1.0]])
        act = np.flatnonzero(fixture1d.eval_ineq(x) <= params.eps_g)
        lam = res.lam
        l_val = fixture1d.objective(y) - float(lam @ g[act]) if act.size else fixture1d.objective(y)
        grad_l = fixture1d.eval_grad(y) - (model_cols[:, act] @ lam if act.size else 0.0)
        return l_val - float(grad_l @ grad_l) / (2.0 * params.alpha)

    assert merit(y_ls) >= merit(x + params.T * v) - 1e-12


def test_line_search_solve_still_converges(fixture1d):
    res = solve(fixture1d, np.array([1.5]), fixture_params(line_search=True))
    assert res.converged
    assert abs(res.x_final[0]) <= 1e-4


# --- multiplier reuse ------------------------------------------------------------


def test_multiplier_reuse_is_plain_gd_while_interior(fixture1d):
    params = fixture_params(T=1.0)
    points, fail = multiplier_reuse_run(fixture1d, np.array([1.0]), np.zeros(0),
                                        params, max_substeps=10)
    # hand-rolled gradient descent until the lower bound activates
    xs = [1.0]
    while True:
        grad = fixture1d.eval_grad(np.array([xs[-1]]))
        nxt = float((np.array([xs[-1]]) - params.T * grad)[0])
        if nxt <= params.eps_g:
            break
        xs.append(nxt)
    assert fail == len(xs)
    assert_allclose(points.ravel(), xs, rtol=0, atol=0)


def test_multiplier_reuse_rejects_first_substep_on_big_T(fixture1d):
    # T = 5 overshoots straight through the guarded region: length-1 sequence
    points, fail = multiplier_reuse_run(fixture1d, np.array([1.0]), np.zeros(0),
                                        fixture_params(), max_substeps=10)
    assert fail == 1
    assert points.shape == (1, 1)


def test_multiplier_reuse_holds_at_guarded_stationary_point(fixture1d):
    # at x = 0 the active lower bound has the stationary multiplier 0.2, so
    # grad of the frozen-lam Lagrangian vanishes and the guard never trips
    points, fail = multiplier_reuse_run(fixture1d, np.array([0.0]),
                                        np.array([0.2]), fixture_params(),
                                        max_substeps=5)
    assert fail is None
    assert points.shape == (6, 1)
    assert_array_equal(points, np.zeros((6, 1)))


def test_multiplier_reuse_descends_frozen_lagrangian(fixture1d):
    params = fixture_params(T=1.0)
    points, _ = multiplier_reuse_run(fixture1d, np.array([1.0]), np.zeros(0),
                                     params, max_substeps=10)
    ls = [fixture1d.objective(x) for x in points]
    assert all(b < a for a, b in zip(ls[:-1], ls[1:]))


def test_multiplier_reuse_validates_lam_length(fixture1d):
    with pytest.raises(ValueError, match="columns"):
        multiplier_reuse_run(fixture1d, np.array([1.0]), np.array([1.0, 2.0]),
                             fixture_params())


def test_solve_with_multiplier_reuse_converges(fixture1d):
    res = solve(fixture1d, np.array([1.5]),
                fixture_params(T=1.0, multiplier_reuse=True))
    assert res.converged
    assert abs(res.x_final[0]) <= 1e-4


# --- flow mode -------------------------------------------------------------------


def test_flow_mode_row_count_and_grid(eqprob2d):
    trace = flow_mode(eqprob2d, np.array([2.0, 1.0]), horizon=1.0, substeps=50,
                      params=fixture_params(T=1.0, alpha=0.4))
    assert len(trace) == 51
    assert trace.status == "maxiter"


def test_flow_mode_equality_residual_tracks_exponential(eqprob2d):
    # |h(t)| = exp(-alpha t)|h(0)|; at t = 1/alpha that is e^{-1}|h(0)|
    alpha = 0.4
    trace = flow_mode(eqprob2d, np.array([2.0, 1.0]), horizon=1.0 / alpha,
                      substeps=2000, params=fixture_params(T=1.0, alpha=alpha))
    ratio = trace[-1].eq_violation / trace[0].eq_violation
    assert ratio == pytest.approx(np.exp(-1.0), rel=2e-2)


def test_flow_mode_objective_descends_from_feasible_start(fixture1d):
    trace = flow_mode(fixture1d, np.array([1.0]), horizon=20.0, substeps=400,
                      params=fixture_params())
    fs = np.array([row.f for row in trace])
    actives = np.array([row.active_count for row in trace])
    first_active = int(np.argmax(actives > 0)) if np.any(actives > 0) else len(fs)
    # strict descent while interior; once a discrete step overshoots the
    # boundary, the drive back to feasibility may raise f by O(T) corrections
    assert np.all(np.diff(fs[: first_active]) < 0)
    assert np.all(np.diff(fs) <= 1e-6)
    assert fs[-1] < fs[0]


def test_flow_mode_is_constant_at_the_minimizer(fixture1d):
    trace = flow_mode(fixture1d, np.array([0.0]), horizon=5.0, substeps=100,
                      params=fixture_params())
    assert all(row.x[0] == 0.0 for row in trace)
    assert all(row.step_norm == 0.0 for row in trace)
