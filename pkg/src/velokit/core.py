"""Problem representation, active-set detection, and the local constraint model.

A problem is

    min f(x)   s.t.   h(x) = 0,  g(x) >= 0,

with smooth evaluators supplied as callables. At a point x the inequality
constraints with g_i(x) <= eps_g are *active*; their gradients, together with
all equality gradients, form the (sparse) matrix W whose columns span the
directions along which the velocity of the iterate is constrained.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import sparse


class EvaluationError(RuntimeError):
    """An evaluator returned a non-finite value."""


class ConfigurationError(ValueError):
    """Invalid parameters or an evaluator violating its declared shape."""


class DegenerateConstraintError(RuntimeError):
    """An active constraint has a (numerically) vanishing gradient."""


@dataclass
class Metadata:
    """Optional smoothness/convexity information attached to a problem.

    L and mu are the smoothness and strong-convexity constants of f; L_l
    bounds the curvature of the Lagrangian (equal to L whenever every
    constraint is affine).
    """

    L: Optional[float] = None
    mu: Optional[float] = None
    L_l: Optional[float] = None
    objective_convex: bool = False
    feasible_set_convex: bool = False


@dataclass
class ConstrainedProblem:
    dim: int
    n_ineq: int
    n_eq: int
    objective: Callable[[np.ndarray], float]
    objective_grad: Callable[[np.ndarray], np.ndarray]
    ineq: Optional[Callable[[np.ndarray], np.ndarray]] = None
    ineq_grad: Optional[Callable[[np.ndarray], object]] = None
    eq: Optional[Callable[[np.ndarray], np.ndarray]] = None
    eq_grad: Optional[Callable[[np.ndarray], object]] = None
    metadata: Metadata = field(default_factory=Metadata)
    x0: Optional[np.ndarray] = None
    family: Optional[str] = None

    def eval_ineq(self, x: np.ndarray) -> np.ndarray:
        if self.n_ineq == 0 or self.ineq is None:
            return np.zeros(0)
        g = np.asarray(self.ineq(x), dtype=float).ravel()
        if g.shape[0] != self.n_ineq:
            raise ConfigurationError(
                f"ineq evaluator returned {g.shape[0]} values, declared n_ineq={self.n_ineq}"
            )
        if not np.all(np.isfinite(g)):
            raise EvaluationError("evaluation failure at x: non-finite inequality value")
        return g

    def eval_eq(self, x: np.ndarray) -> np.ndarray:
        if self.n_eq == 0 or self.eq is None:
            return np.zeros(0)
        h = np.asarray(self.eq(x), dtype=float).ravel()
        if h.shape[0] != self.n_eq:
            raise ConfigurationError(
                f"eq evaluator returned {h.shape[0]} values, declared n_eq={self.n_eq}"
            )
        if not np.all(np.isfinite(h)):
            raise EvaluationError("evaluation failure at x: non-finite equality value")
        return h

    def eval_grad(self, x: np.ndarray) -> np.ndarray:
        grad = np.asarray(self.objective_grad(x), dtype=float).ravel()
        if grad.shape[0] != self.dim:
            raise ConfigurationError(
                f"objective_grad returned {grad.shape[0]} values, declared dim={self.dim}"
            )
        if not np.all(np.isfinite(grad)):
            raise EvaluationError("evaluation failure at x: non-finite objective gradient")
        return grad


@dataclass
class ActiveModel:
    """Linearized constraint data at one point.

    W stacks the equality gradients first (n_eq_cols columns), then one
    column per entry of `active`, in order. gbar stacks (h(x), g_active(x))
    the same way. Multiplier entries beyond n_eq_cols live in the
    nonnegative orthant.
    """

    active: np.ndarray
    W: sparse.csc_matrix
    gbar: np.ndarray
    n_eq_cols: int

    @property
    def m(self) -> int:
        return self.W.shape[1]


@dataclass
class SolverParams:
    """Step size, decay rate, tolerances and iteration caps.

    T is the step size, alpha the constraint-decay rate (alpha*T must lie in
    (0, 1]), eps_g the activation tolerance, omega the over-relaxation factor
    of the inner solver. tol stops the outer loop on |x_{k+1}-x_k|/T; tol_prox
    stops the inner sweeps. tol_prox_side overrides the inner stopping side
    threshold (default eps_g*alpha/2).
    """

    T: float
    alpha: float
    eps_g: float = 1e-6
    omega: float = 1.0
    tol: float = 1e-6
    maxiter: int = 1000
    maxiter_prox: int = 200
    tol_prox: float = 1e-6
    tol_prox_side: Optional[float] = None
    line_search: bool = False
    multiplier_reuse: bool = False
    warm_start_lambda: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not (self.T > 0):
            raise ConfigurationError(f"T must be positive, got {self.T}")
        at = self.alpha * self.T
        if not (0 < at <= 1):
            raise ConfigurationError(f"alpha*T must lie in (0, 1], got {at}")
        if self.eps_g < 0:
            raise ConfigurationError(f"eps_g must be nonnegative, got {self.eps_g}")
        if not (0 < self.omega < 2):
            raise ConfigurationError(f"omega must lie in (0, 2), got {self.omega}")
        if not (self.tol > 0):
            raise ConfigurationError(f"tol must be positive, got {self.tol}")
        if not (self.tol_prox > 0):
            raise ConfigurationError(f"tol_prox must be positive, got {self.tol_prox}")
        if self.maxiter < 1:
            raise ConfigurationError(f"maxiter must be >= 1, got {self.maxiter}")
        if self.maxiter_prox < 1:
            raise ConfigurationError(f"maxiter_prox must be >= 1, got {self.maxiter_prox}")
        if self.tol_prox_side is not None and self.tol_prox_side <= 0:
            raise ConfigurationError(
                f"tol_prox_side must be positive when given, got {self.tol_prox_side}"
            )

    @property
    def side_threshold(self) -> float:
        if self.tol_prox_side is not None:
            return self.tol_prox_side
        return self.eps_g * self.alpha / 2.0


def active_set(p: ConstrainedProblem, x: np.ndarray, eps_g: float) -> np.ndarray:
    """Indices (0-based, ascending) of inequality constraints with g_i(x) <= eps_g."""
    if eps_g < 0:
        raise ConfigurationError(f"eps_g must be nonnegative, got {eps_g}")
    g = p.eval_ineq(np.asarray(x, dtype=float))
    return np.flatnonzero(g <= eps_g)


def _grad_columns(raw, dim: int, n_cols: int, what: str):
    """Validate a gradient evaluator's output (n x n_cols, dense or sparse)."""
    if sparse.issparse(raw):
        mat = raw.tocsc()
    else:
        mat = np.asarray(raw, dtype=float)
        if mat.ndim == 1:
            mat = mat.reshape(dim, -1) if n_cols == 1 else mat.reshape(-1, n_cols)
    if mat.shape != (dim, n_cols):
        raise ConfigurationError(
            f"{what} returned shape {mat.shape}, expected ({dim}, {n_cols})"
        )
    data = mat.data if sparse.issparse(mat) else mat
    if not np.all(np.isfinite(data)):
        raise EvaluationError(f"evaluation failure at x: non-finite {what} value")
    return mat


def assemble_from_values(
    p: ConstrainedProblem,
    x: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    eps_g: float,
) -> ActiveModel:
    """Build the active model from already-evaluated constraint values."""
    act = np.flatnonzero(g <= eps_g)
    pieces = []
    if p.n_eq > 0:
        pieces.append(_grad_columns(p.eq_grad(x), p.dim, p.n_eq, "eq_grad"))
    if act.size > 0:
        G = _grad_columns(p.ineq_grad(x), p.dim, p.n_ineq, "ineq_grad")
        pieces.append(G[:, act])
    if not pieces:
        W = sparse.csc_matrix((p.dim, 0))
    elif any(sparse.issparse(b) for b in pieces):
        W = sparse.hstack([sparse.csc_matrix(b) for b in pieces]).tocsc()
    else:
        W = sparse.csc_matrix(np.hstack([np.atleast_2d(b) for b in pieces]))
    gbar = np.concatenate([h, g[act]]) if (p.n_eq or act.size) else np.zeros(0)
    return ActiveModel(active=act, W=W, gbar=gbar, n_eq_cols=p.n_eq)


def assemble_model(p: ConstrainedProblem, x: np.ndarray, eps_g: float) -> ActiveModel:
    """Evaluate constraints at x and build the active model (W, gbar, cone)."""
    x = np.asarray(x, dtype=float)
    return assemble_from_values(p, x, p.eval_ineq(x), p.eval_eq(x), eps_g)


@dataclass
class MfcqReport:
    ok: bool
    reasons: tuple = ()

    def __str__(self):
        return "ok" if self.ok else "warning: " + "; ".join(self.reasons)


def check_mfcq(model: ActiveModel, rank_rtol: float = 1e-10) -> MfcqReport:
    """Advisory constraint-qualification check on an assembled model.

    Warns when the equality gradient columns are numerically rank-deficient,
    or when no direction w satisfies grad_h^T w = 0 with strictly positive
    slack on every active inequality gradient. Never blocks a solve.
    """
    reasons = []
    n_eq = model.n_eq_cols
    W = model.W.toarray() if sparse.issparse(model.W) else np.asarray(model.W)
    if n_eq > 0:
        s = np.linalg.svd(W[:, :n_eq], compute_uv=False)
        if s.size and (s[-1] < rank_rtol * max(s[0], 1e-300) or s[0] == 0.0):
            reasons.append("equality constraint gradients are rank-deficient")
    n_in = W.shape[1] - n_eq
    if n_in > 0:
        from scipy.optimize import linprog

        n = W.shape[0]
        # maximize s subject to  G^T w >= s,  H^T w = 0,  |w| <= 1,  0 <= s <= 1
        c = np.zeros(n + 1)
        c[-1] = -1.0
        A_ub = np.hstack([-W[:, n_eq:].T, np.ones((n_in, 1))])
        b_ub = np.zeros(n_in)
        A_eq = b_eq = None
        if n_eq > 0:
            A_eq = np.hstack([W[:, :n_eq].T, np.zeros((n_eq, 1))])
            b_eq = np.zeros(n_eq)
        res = linprog(
            c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
            bounds=[(-1, 1)] * n + [(0, 1)], method="highs",
        )
        if not res.success or res.x[-1] <= 1e-10:
            reasons.append("no direction with strictly positive slack on active inequalities")
    return MfcqReport(ok=not reasons, reasons=tuple(reasons))


def estimate_smoothness(p: ConstrainedProblem, x0: np.ndarray, iters: int = 200) -> float:
    """Power-iteration estimate of the largest Hessian eigenvalue of f near x0.

    Uses secant Hessian-vector products (exact for quadratics); a fallback for
    problems shipped without metadata.
    """
    rng = np.random.default_rng(0)
    x0 = np.asarray(x0, dtype=float)
    g0 = p.eval_grad(x0)
    v = rng.normal(size=p.dim)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        hv = p.eval_grad(x0 + v) - g0
        nrm = np.linalg.norm(hv)
        if nrm == 0.0:
            return 0.0
        est = float(v @ hv)
        v = hv / nrm
    return abs(est)
