import numpy as np
import pytest

from velokit.core import ConstrainedProblem, Metadata, SolverParams


def make_fixture_problem():
    """1-D membrane example: f(x) = (x+1)^2/10, g1(x) = x, g2(x) = 2 - x.

    Strongly convex with L = mu = 0.2; the constrained minimizer sits at the
    boundary x* = 0 with f* = 0.1 and multiplier 0.2 on g1.
    """

    def f(x):
        return float((x[0] + 1.0) ** 2 / 10.0)

    def grad_f(x):
        return np.array([2.0 * (x[0] + 1.0) / 10.0])

    def g(x):
        return np.array([x[0], 2.0 - x[0]])

    def grad_g(x):
        return np.array([[1.0, -1.0]])

    return ConstrainedProblem(
        dim=1,
        n_ineq=2,
        n_eq=0,
        objective=f,
        objective_grad=grad_f,
        ineq=g,
        ineq_grad=grad_g,
        metadata=Metadata(
            L=0.2, mu=0.2, L_l=0.2, objective_convex=True, feasible_set_convex=True
        ),
        x0=np.array([1.5]),
    )


def make_equality_problem():
    """2-D problem f = |x|^2/2 with a single affine equality x1 + x2 = 1."""

    def f(x):
        return float(0.5 * (x @ x))

    def grad_f(x):
        return np.asarray(x, dtype=float).copy()

    def h(x):
        return np.array([x[0] + x[1] - 1.0])

    def grad_h(x):
        return np.array([[1.0], [1.0]])

    return ConstrainedProblem(
        dim=2,
        n_ineq=0,
        n_eq=1,
        objective=f,
        objective_grad=grad_f,
        eq=h,
        eq_grad=grad_h,
        metadata=Metadata(
            L=1.0, mu=1.0, L_l=1.0, objective_convex=True, feasible_set_convex=True
        ),
    )


def fixture_params(**overrides):
    """Reference parameters for the 1-D fixture: T = 2/(L+mu) = 5, alpha*T = 0.4."""
    kw = dict(T=5.0, alpha=0.08, eps_g=1e-6, omega=1.0, tol=1e-6,
              maxiter=1000, maxiter_prox=200, tol_prox=1e-6)
    kw.update(overrides)
    return SolverParams(**kw)


@pytest.fixture
def fixture1d():
    return make_fixture_problem()


@pytest.fixture
def eqprob2d():
    return make_equality_problem()
