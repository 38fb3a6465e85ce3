import numpy as np
import pytest
from hypothesis import given, strategies as st
import hypothesis.extra.numpy as hnp

from velokit.core import (
    ConfigurationError,
    ConstrainedProblem,
    EvaluationError,
    Metadata,
    SolverParams,
    active_set,
    assemble_model,
    check_mfcq,
)

from conftest import make_fixture_problem, make_equality_problem


# --- active_set -------------------------------------------------------------

def test_active_set_interior_point(fixture1d):
    assert active_set(fixture1d, np.array([1.0]), 1e-6).tolist() == []


def test_active_set_first_constraint(fixture1d):
    assert active_set(fixture1d, np.array([-0.5]), 1e-6).tolist() == [0]


def test_active_set_boundary_case(fixture1d):
    # g2(2) = 0 exactly; ties at the threshold are included
    assert active_set(fixture1d, np.array([2.0]), 1e-6).tolist() == [1]


def test_active_set_rejects_nonfinite():
    p = make_fixture_problem()
    p.ineq = lambda x: np.array([np.nan, 1.0])
    with pytest.raises(EvaluationError):
        active_set(p, np.array([0.0]), 1e-6)


@given(
    g=hnp.arrays(np.float64, st.integers(1, 12),
                 elements=st.floats(-10, 10, allow_nan=False)),
    eps=st.floats(0, 1, allow_nan=False),
)
def test_active_set_threshold_property(g, eps):
    """Every returned index satisfies g_i <= eps; every omitted one g_i > eps."""
    n = g.shape[0]
    p = ConstrainedProblem(
        dim=1, n_ineq=n, n_eq=0,
        objective=lambda x: 0.0,
        objective_grad=lambda x: np.zeros(1),
        ineq=lambda x, g=g: g,
        ineq_grad=lambda x, n=n: np.ones((1, n)),
    )
    act = active_set(p, np.zeros(1), eps)
    mask = np.zeros(n, dtype=bool)
    mask[act] = True
    assert np.all(g[mask] <= eps)
    assert np.all(g[~mask] > eps)
    assert np.all(np.diff(act) > 0)  # sorted, unique


# --- assemble_model ----------------------------------------------------------

def test_assemble_fixture_active_inequality(fixture1d):
    m = assemble_model(fixture1d, np.array([-0.5]), 1e-6)
    assert m.W.shape == (1, 1)
    np.testing.assert_allclose(m.W.toarray(), [[1.0]])
    np.testing.assert_allclose(m.gbar, [-0.5])
    assert m.n_eq_cols == 0
    assert m.active.tolist() == [0]


def test_assemble_equality_column(eqprob2d):
    m = assemble_model(eqprob2d, np.zeros(2), 1e-6)
    np.testing.assert_allclose(m.W.toarray(), [[1.0], [1.0]])
    np.testing.assert_allclose(m.gbar, [-1.0])
    assert m.n_eq_cols == 1


def test_assemble_empty_active_set(fixture1d):
    m = assemble_model(fixture1d, np.array([1.0]), 1e-6)
    assert m.W.shape == (1, 0)
    assert m.gbar.shape == (0,)


def test_assemble_gbar_length_matches_active(fixture1d):
    for x in [-0.5, 0.1, 1.0, 2.0, 3.0]:
        act = active_set(fixture1d, np.array([x]), 1e-6)
        m = assemble_model(fixture1d, np.array([x]), 1e-6)
        assert m.gbar.shape[0] == fixture1d.n_eq + act.shape[0]


def test_assemble_dimension_mismatch_is_configuration_error():
    p = make_equality_problem()
    p.eq_grad = lambda x: np.ones((3, 1))  # wrong row count
    with pytest.raises(ConfigurationError):
        assemble_model(p, np.zeros(2), 1e-6)


# --- check_mfcq ---------------------------------------------------------------

def _model_from_columns(eq_cols, ineq_cols):
    n = len(eq_cols[0]) if eq_cols else len(ineq_cols[0])
    cols = [np.asarray(c, dtype=float) for c in list(eq_cols) + list(ineq_cols)]
    W = np.column_stack(cols) if cols else np.zeros((n, 0))
    from scipy import sparse
    from velokit.core import ActiveModel
    return ActiveModel(
        active=np.arange(len(ineq_cols)),
        W=sparse.csc_matrix(W),
        gbar=np.zeros(W.shape[1]),
        n_eq_cols=len(eq_cols),
    )


def test_mfcq_ok_single_equality():
    rep = check_mfcq(_model_from_columns([(1.0, 1.0)], []))
    assert rep.ok


def test_mfcq_warns_on_duplicated_equalities():
    rep = check_mfcq(_model_from_columns([(1.0, 0.0), (1.0, 0.0)], []))
    assert not rep.ok


def test_mfcq_warns_on_opposing_inequalities():
    rep = check_mfcq(_model_from_columns([], [(1.0, 0.0), (-1.0, 0.0)]))
    assert not rep.ok


def test_mfcq_ok_on_generic_inequalities():
    rep = check_mfcq(_model_from_columns([], [(1.0, 0.0), (0.0, 1.0)]))
    assert rep.ok


# --- SolverParams validation ---------------------------------------------------

def test_params_accept_table_defaults():
    SolverParams(T=5.0, alpha=0.08)


def test_params_reject_alpha_T_above_one():
    with pytest.raises(ConfigurationError, match=r"alpha\*T"):
        SolverParams(T=5.0, alpha=0.3)  # alpha*T = 1.5


def test_params_reject_nonpositive_T():
    with pytest.raises(ConfigurationError, match="T"):
        SolverParams(T=0.0, alpha=0.1)


def test_params_reject_omega_out_of_range():
    with pytest.raises(ConfigurationError, match="omega"):
        SolverParams(T=1.0, alpha=0.1, omega=2.0)


def test_params_reject_negative_eps_g():
    with pytest.raises(ConfigurationError, match="eps_g"):
        SolverParams(T=1.0, alpha=0.1, eps_g=-1e-9)


def test_params_allow_zero_eps_g():
    # exact activation threshold is a supported (and tested) configuration
    SolverParams(T=1.0, alpha=0.1, eps_g=0.0)


def test_params_alpha_T_of_exactly_one_is_allowed():
    SolverParams(T=1.0, alpha=1.0)
