"""Independent reference computations used to cross-check the solver.

Everything in this module is deliberately written against a different route
than the production code paths: the velocity dual is solved by enumerating
multiplier sign patterns instead of SOR sweeps, and reference minima are
computed from numerically extracted quadratic/affine structure via KKT
systems rather than by running the iteration. These are desk-scale tools —
costs grow combinatorially with the number of constraints.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, sparse

from .core import ConstrainedProblem, SolverParams, active_set, assemble_model
from .dual import solve_dual


class InfeasiblePatternError(RuntimeError):
    """No multiplier sign pattern yields a feasible KKT point (empty feasible set)."""


def brute_force_velocity(model, grad_f: np.ndarray, alpha: float,
                         tol: float = 1e-9) -> Tuple[np.ndarray, np.ndarray]:
    """Velocity and multiplier by enumerating inequality sign patterns.

    Solves the same cone-constrained quadratic as the SOR inner solver, but
    by direct linear algebra: for each subset S of inequality components
    allowed to be positive, solve the equality-constrained stationarity
    system and keep the first subset whose solution satisfies all sign and
    residual conditions. Exponential in the number of active inequalities.
    """
    W = model.W.toarray() if sparse.issparse(model.W) else np.asarray(model.W, dtype=float)
    m = W.shape[1]
    n_eq = model.n_eq_cols
    grad_f = np.asarray(grad_f, dtype=float)
    if m == 0:
        return -grad_f, np.zeros(0)
    G = W.T @ W
    q = alpha * np.asarray(model.gbar, dtype=float) - W.T @ grad_f
    scale = 1.0 + float(np.max(np.abs(q))) + float(np.max(np.abs(G)))
    ineq = list(range(n_eq, m))
    for size in range(len(ineq) + 1):
        for subset in itertools.combinations(ineq, size):
            free = list(range(n_eq)) + list(subset)
            lam = np.zeros(m)
            if free:
                sol, *_ = linalg.lstsq(G[np.ix_(free, free)], -q[free],
                                       lapack_driver="gelsy")
                if np.max(np.abs(G[np.ix_(free, free)] @ sol + q[free])) > tol * scale:
                    continue  # inconsistent pattern
                lam[free] = sol
            if size and np.min(lam[list(subset)]) < -tol * scale:
                continue
            r = G @ lam + q
            rest = [i for i in ineq if i not in subset]
            if rest and np.min(r[rest]) < -tol * scale:
                continue
            return -grad_f + W @ lam, lam
    raise RuntimeError("no consistent multiplier sign pattern: "
                       "the linearized velocity constraints are infeasible")


# --- quadratic/affine structure extraction ------------------------------------

def _probe_points(dim: int, count: int = 5) -> np.ndarray:
    return np.random.default_rng(12345).normal(size=(count, dim))


def _extract_quadratic(p: ConstrainedProblem, tol: float = 1e-7):
    """Recover (Q, c, f0) from evaluator probes; ValueError if f is not quadratic."""
    n = p.dim
    zero = np.zeros(n)
    c = p.eval_grad(zero)
    Q = np.empty((n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        Q[:, i] = p.eval_grad(e) - c
    Q = 0.5 * (Q + Q.T)
    f0 = float(p.objective(zero))
    for x in _probe_points(n):
        fx = float(p.objective(x))
        model = 0.5 * float(x @ (Q @ x)) + float(c @ x) + f0
        s = 1.0 + abs(fx) + float(x @ x)
        if abs(fx - model) > tol * s:
            raise ValueError("objective is not quadratic (value mismatch at probe point)")
        if np.max(np.abs(p.eval_grad(x) - (Q @ x + c))) > tol * s:
            raise ValueError("objective is not quadratic (gradient mismatch at probe point)")
    return Q, c, f0


def _constraint_matrix(p: ConstrainedProblem, x: np.ndarray, which: str) -> np.ndarray:
    grad = p.ineq_grad(x) if which == "ineq" else p.eq_grad(x)
    if sparse.issparse(grad):
        grad = grad.toarray()
    n_cols = p.n_ineq if which == "ineq" else p.n_eq
    return np.asarray(grad, dtype=float).reshape(p.dim, n_cols)


def _extract_affine(p: ConstrainedProblem, which: str, tol: float = 1e-7):
    """Recover rows/offsets of affine constraints; ValueError if not affine."""
    n_cons = p.n_ineq if which == "ineq" else p.n_eq
    if n_cons == 0:
        return np.zeros((0, p.dim)), np.zeros(0)
    zero = np.zeros(p.dim)
    evaluate = p.eval_ineq if which == "ineq" else p.eval_eq
    b = evaluate(zero)
    A = _constraint_matrix(p, zero, which).T  # (n_cons, dim)
    for x in _probe_points(p.dim):
        s = 1.0 + float(np.max(np.abs(b))) + float(x @ x)
        if np.max(np.abs(evaluate(x) - (A @ x + b))) > tol * s:
            raise ValueError(f"{which} constraints are not affine (value mismatch)")
        if np.max(np.abs(_constraint_matrix(p, x, which).T - A)) > tol * s:
            raise ValueError(f"{which} constraints are not affine (gradient mismatch)")
    return A, b


def reference_minimum(p: ConstrainedProblem, I: Iterable[int],
                      tol: float = 1e-9) -> Tuple[np.ndarray, float, np.ndarray]:
    """Minimum of f over {g_i >= 0, i in I} and all equalities, by KKT enumeration.

    Requires a convex quadratic objective and affine constraints (verified by
    probing, ValueError otherwise). Returns (x_star, f_star, lam) with one
    multiplier per index of I, in order. Raises InfeasiblePatternError when
    the constraint subset has empty intersection.
    """
    I = tuple(dict.fromkeys(int(i) for i in I))
    Q, c, f0 = _extract_quadratic(p)
    eigs = np.linalg.eigvalsh(Q)
    if eigs[0] < -1e-9 * max(1.0, eigs[-1]):
        raise ValueError("objective is not convex; KKT enumeration is not a certificate")
    A_in, b_in = _extract_affine(p, "ineq")
    A_eq, b_eq = _extract_affine(p, "eq")
    n, n_eq = p.dim, p.n_eq
    A_I = A_in[list(I), :] if I else np.zeros((0, n))
    b_I = b_in[list(I)] if I else np.zeros(0)
    scale = 1.0 + float(np.max(np.abs(c))) + float(np.max(np.abs(b_I), initial=0.0))
    for size in range(len(I) + 1):
        for subset in itertools.combinations(range(len(I)), size):
            s = list(subset)
            A_act = np.vstack([A_eq, A_I[s, :]])
            b_act = np.concatenate([b_eq, b_I[s]])
            k = A_act.shape[0]
            kkt = np.zeros((n + k, n + k))
            kkt[:n, :n] = Q
            kkt[:n, n:] = -A_act.T
            kkt[n:, :n] = A_act
            rhs = np.concatenate([-c, -b_act])
            sol, *_ = linalg.lstsq(kkt, rhs, lapack_driver="gelsy")
            if np.max(np.abs(kkt @ sol - rhs), initial=0.0) > tol * scale:
                continue
            x = sol[:n]
            mult = sol[n + n_eq:]
            if size and np.min(mult) < -tol * scale:
                continue
            rest = [j for j in range(len(I)) if j not in subset]
            if rest and np.min(A_I[rest, :] @ x + b_I[rest]) < -tol * scale:
                continue
            lam = np.zeros(len(I))
            lam[s] = np.maximum(mult, 0.0)
            fstar = 0.5 * float(x @ (Q @ x)) + float(c @ x) + f0
            return x, fstar, lam
    raise InfeasiblePatternError(
        f"constraint subset {I} admits no KKT point: empty intersection"
    )


# --- duality-based merit and its bounds ----------------------------------------

def dual_merit_d(p: ConstrainedProblem, x: np.ndarray, params: SolverParams) -> float:
    """d(x) = f(x) - lam^T gbar(x) - |v(x)|^2/(2*alpha), via the velocity dual."""
    x = np.asarray(x, dtype=float)
    model = assemble_model(p, x, params.eps_g)
    grad = p.eval_grad(x)
    res = solve_dual(model, grad, params)
    v = -grad + model.W @ res.lam
    return float(p.objective(x)) - float(res.lam @ model.gbar) \
        - float(v @ v) / (2.0 * params.alpha)


@dataclass
class BoundsReport:
    ok: bool
    lower: float
    upper: float
    d: float


def d_bounds_check(p: ConstrainedProblem, x: np.ndarray, params: SolverParams,
                   L_l: Optional[float] = None, mu: Optional[float] = None,
                   tol: float = 1e-9) -> BoundsReport:
    """Sandwich d(x) between its curvature bounds around the active-subset minimum.

    With I the active set at x and f*_I the reference minimum over that
    subset, checks

        f*_I - (L_l-alpha)/(2 alpha^2) |v|^2  <=  d(x)  <=  f*_I - (mu-alpha)/(2 alpha mu) |v|^2.
    """
    mu = p.metadata.mu if mu is None else mu
    L_l = p.metadata.L_l if L_l is None else L_l
    if mu is None or L_l is None:
        raise ValueError("d_bounds_check needs mu and L_l (metadata or arguments)")
    if not (0 < params.alpha <= mu):
        raise ValueError(f"bounds require 0 < alpha <= mu, got alpha={params.alpha}, mu={mu}")
    x = np.asarray(x, dtype=float)
    I = active_set(p, x, params.eps_g)
    _, fstar, _ = reference_minimum(p, I)
    model = assemble_model(p, x, params.eps_g)
    grad = p.eval_grad(x)
    res = solve_dual(model, grad, params)
    v = -grad + model.W @ res.lam
    vsq = float(v @ v)
    d = float(p.objective(x)) - float(res.lam @ model.gbar) - vsq / (2.0 * params.alpha)
    a = params.alpha
    lower = fstar - (L_l - a) / (2.0 * a * a) * vsq
    upper = fstar - (mu - a) / (2.0 * a * mu) * vsq
    slack = tol * (1.0 + abs(d))
    return BoundsReport(ok=bool(lower - slack <= d <= upper + slack),
                        lower=lower, upper=upper, d=d)


@dataclass
class DistanceReport:
    ok: bool
    d: float
    fstar: float
    distance: float


def distance_bound_check(p: ConstrainedProblem, x: np.ndarray,
                         params: SolverParams, mu: Optional[float] = None,
                         tol: float = 1e-9) -> DistanceReport:
    """Check d(x) <= f*_I - (mu-alpha)/2 |x - x*_I|^2 for the active subset I at x."""
    mu = p.metadata.mu if mu is None else mu
    if mu is None:
        raise ValueError("distance_bound_check needs mu (metadata or argument)")
    if not (0 < params.alpha <= mu):
        raise ValueError(f"bound requires 0 < alpha <= mu, got alpha={params.alpha}, mu={mu}")
    x = np.asarray(x, dtype=float)
    I = active_set(p, x, params.eps_g)
    xstar, fstar, _ = reference_minimum(p, I)
    d = dual_merit_d(p, x, params)
    dist = float(np.linalg.norm(x - xstar))
    bound = fstar - 0.5 * (mu - params.alpha) * dist * dist
    return DistanceReport(ok=bool(d <= bound + tol * (1.0 + abs(fstar))),
                          d=d, fstar=fstar, distance=dist)


def rate_constants(mu: float, L_l: float, T: float, alpha: float) -> Tuple[float, float]:
    """Convergence-rate constants (c1, c2) of the velocity iteration.

    c1 = T (mu/alpha - 1)(1 - mu T/2) scales the per-step merit increase;
    (1 - c2 T) with c2 = 2 alpha (1 - mu T/2)(mu - alpha)/(L_l - alpha) is the
    linear factor of the tail. Valid for 0 < alpha < mu <= L_l and
    0 < T <= 2/(L_l + mu); c2*T < 1 holds on the whole domain.
    """
    if not (mu > 0):
        raise ValueError(f"mu must be positive, got {mu}")
    if L_l < mu:
        raise ValueError(f"L_l must be >= mu, got L_l={L_l}, mu={mu}")
    if not (0 < alpha < mu):
        raise ValueError(f"alpha must lie in (0, mu), got alpha={alpha}, mu={mu}")
    if not (0 < T <= 2.0 / (L_l + mu)):
        raise ValueError(f"T must lie in (0, 2/(L_l+mu)], got T={T}")
    c1 = T * (mu / alpha - 1.0) * (1.0 - mu * T / 2.0)
    c2 = 2.0 * alpha * (1.0 - mu * T / 2.0) * (mu - alpha) / (L_l - alpha)
    return c1, c2


def multiplier_bound(mu_g: float, L_g: float, g_at_max: float, L: float,
                     dist_xf_xg: float, alpha: float) -> float:
    """A-priori bound on the multiplier norm for a single strongly concave constraint.

    (alpha + L (1 + |x_f - x_g| sqrt(L_g/(2 g(x_g))))) / mu_g, where x_g maximizes
    the constraint with value g_at_max > 0 and x_f minimizes the objective.
    """
    if mu_g <= 0 or L_g <= 0:
        raise ValueError("mu_g and L_g must be positive")
    if g_at_max <= 0:
        raise ValueError(f"the constraint maximum must be strictly positive, got {g_at_max}")
    if L < 0 or dist_xf_xg < 0 or alpha < 0:
        raise ValueError("L, dist_xf_xg and alpha must be nonnegative")
    return (alpha + L * (1.0 + dist_xf_xg * np.sqrt(L_g / (2.0 * g_at_max)))) / mu_g


# --- gradient diagnostics --------------------------------------------------------

@dataclass
class FiniteDifferenceReport:
    ok: bool
    max_rel_error: float


def finite_difference_check(p: ConstrainedProblem, points: np.ndarray,
                            rtol: float = 1e-5) -> FiniteDifferenceReport:
    """Compare all declared gradients against central finite differences."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    worst = 0.0

    def check(value_fn, grad_fn, x):
        nonlocal worst
        grad = np.atleast_2d(np.asarray(grad_fn(x), dtype=float))
        scale = 1.0 + float(np.max(np.abs(grad)))
        for i in range(p.dim):
            h = 1e-6 * (1.0 + abs(x[i]))
            e = np.zeros(p.dim)
            e[i] = h
            fd = (np.asarray(value_fn(x + e), dtype=float)
                  - np.asarray(value_fn(x - e), dtype=float)) / (2.0 * h)
            err = float(np.max(np.abs(fd - grad[i, :].ravel()))) / scale
            worst = max(worst, err)

    for x in points:
        check(lambda y: np.array([p.objective(y)]),
              lambda y: p.eval_grad(y).reshape(p.dim, 1), x)
        if p.n_ineq:
            check(p.eval_ineq, lambda y: _constraint_matrix(p, y, "ineq"), x)
        if p.n_eq:
            check(p.eval_eq, lambda y: _constraint_matrix(p, y, "eq"), x)
    return FiniteDifferenceReport(ok=bool(worst <= rtol), max_rel_error=worst)


# --- whole-problem verification ---------------------------------------------------

@dataclass(frozen=True)
class CheckResult:
    name: str
    status: str  # "pass" | "fail" | "skip"
    detail: str


@dataclass(frozen=True)
class VerificationReport:
    checks: Tuple[CheckResult, ...]

    @property
    def ok(self) -> bool:
        return all(c.status != "fail" for c in self.checks)


_VERIFY_DIM_LIMIT = 60
_VERIFY_INEQ_LIMIT = 16


def run_verification(p: ConstrainedProblem, params: Optional[SolverParams] = None,
                     *, seed: int = 0, oracle_check: bool = True,
                     invariant_suite: bool = True) -> VerificationReport:
    """Run every applicable cross-check on one problem instance.

    Each check is reported as pass, fail, or skip (skip = the check's
    prerequisites do not hold, e.g. non-quadratic objective or missing
    metadata). The reference computations enumerate constraint subsets, so
    instances are refused beyond a small size.
    """
    from dataclasses import replace

    from .core import EvaluationError
    from .solver import solve

    if p.dim > _VERIFY_DIM_LIMIT or p.n_ineq > _VERIFY_INEQ_LIMIT:
        raise ValueError(
            f"verification relies on exhaustive reference oracles and is limited "
            f"to dim <= {_VERIFY_DIM_LIMIT} and n_ineq <= {_VERIFY_INEQ_LIMIT} "
            f"(got dim={p.dim}, n_ineq={p.n_ineq}); run it on a smaller instance "
            f"of the same family instead")
    if params is None:
        from .problems import default_params
        params = default_params(p)

    md = p.metadata
    x0 = np.zeros(p.dim) if p.x0 is None else np.asarray(p.x0, dtype=float)
    rng = np.random.default_rng(seed)
    probes = [x0] + [x0 + 0.5 * rng.standard_normal(p.dim) for _ in range(4)]
    checks = []

    def run(name, fn):
        try:
            status, detail = fn()
        except EvaluationError as e:
            status, detail = "fail", f"evaluation failed: {e}"
        except (ValueError, RuntimeError) as e:
            status, detail = "skip", str(e)
        checks.append(CheckResult(name, status, detail))

    def check_finite_difference():
        rep = finite_difference_check(p, np.array(probes))
        return ("pass" if rep.ok else "fail",
                f"max relative gradient error {rep.max_rel_error:.3e}")

    if oracle_check:
        run("finite_difference", check_finite_difference)

    def check_dual_agreement():
        tight = replace(params, tol_prox=min(params.tol_prox, 1e-12),
                        maxiter_prox=max(params.maxiter_prox, 20_000))
        worst = 0.0
        for x in probes:
            model = assemble_model(p, x, params.eps_g)
            grad = p.eval_grad(x)
            res = solve_dual(model, grad, tight)
            W = model.W
            v_sor = -grad + (W @ res.lam if model.m else 0.0)
            v_ref, lam_ref = brute_force_velocity(model, grad, params.alpha)
            scale = 1.0 + float(np.linalg.norm(grad))
            worst = max(worst,
                        float(np.max(np.abs(v_sor - v_ref))) / scale,
                        float(np.max(np.abs(res.lam - lam_ref))) / scale
                        if model.m else 0.0)
        return ("pass" if worst <= 1e-6 else "fail",
                f"max SOR/enumeration discrepancy {worst:.3e} (5 probe points)")

    if oracle_check:
        run("dual_oracle_agreement", check_dual_agreement)

    result = None

    def check_membrane():
        nonlocal result
        result = solve(p, x0, params, record_trace=True)
        if result.status == "error":
            return "fail", "solver run failed before the trace could be checked"
        if p.n_ineq:
            _extract_affine(p, "ineq")  # raises -> skip for curved inequalities
        rows = result.trace.rows
        slack = max(params.eps_g, 1e-10) + 1e-9
        worst, guarded_total = -np.inf, 0
        for prev, nxt in zip(rows[:-1], rows[1:]):
            if not p.n_ineq:
                break
            ids = active_set(p, prev.x, params.eps_g)
            lam_ineq = prev.lam[p.n_eq:]
            guarded = ids[lam_ineq > 0]
            guarded_total += guarded.size
            if guarded.size:
                worst = max(worst, float(np.max(p.eval_ineq(nxt.x)[guarded])))
        if guarded_total == 0:
            return "skip", "no inequality was held active with a positive multiplier"
        ok = worst <= slack
        return ("pass" if ok else "fail",
                f"held-active constraints reached at most {worst:.3e} "
                f"(allowed {slack:.3e}) over {len(rows) - 1} steps")

    if invariant_suite:
        run("membrane", check_membrane)

    def check_equality_decay():
        if not p.n_eq:
            return "skip", "problem has no equality constraints"
        _extract_affine(p, "eq")  # raises -> skip for non-affine equalities
        if result is None or result.trace is None:
            return "skip", "no solver trace available"
        rows = result.trace.rows
        shrink = 1.0 - params.alpha * params.T
        worst = 0.0
        for prev, nxt in zip(rows[:-1], rows[1:]):
            h_prev, h_next = p.eval_eq(prev.x), p.eval_eq(nxt.x)
            err = float(np.max(np.abs(h_next - shrink * h_prev)))
            worst = max(worst, err / (1.0 + float(np.max(np.abs(h_prev)))))
        return ("pass" if worst <= 1e-3 else "fail",
                f"max deviation from the per-step (1 - alpha*T) contraction: {worst:.3e}")

    if invariant_suite:
        run("equality_decay", check_equality_decay)

    theory = None
    if (md.objective_convex and md.feasible_set_convex
            and md.mu is not None and md.mu > 0):
        L_l = md.L_l if md.L_l is not None else md.L
        if L_l is not None and L_l >= md.mu:
            T_th = 2.0 / (L_l + md.mu)
            theory = replace(params, T=T_th, alpha=0.5 * md.mu,
                             maxiter=min(params.maxiter, 300),
                             tol_prox=min(params.tol_prox, 1e-10),
                             maxiter_prox=max(params.maxiter_prox, 20_000))

    theory_run = None

    def check_d_monotone():
        nonlocal theory_run
        if theory is None:
            return "skip", "needs convexity flags and mu/L metadata"
        theory_run = solve(p, x0, theory, record_trace=True, record_d=True)
        ds = [row.d for row in theory_run.trace.rows]
        drops = [ds[i + 1] - ds[i] for i in range(len(ds) - 1)
                 if ds[i + 1] - ds[i] < -1e-9 * (1.0 + abs(ds[i]))]
        if drops:
            return "fail", f"dual merit decreased {len(drops)} times (worst {min(drops):.3e})"
        detail = f"non-decreasing over {len(ds)} iterates"
        try:
            _, fstar, _ = reference_minimum(p, range(p.n_ineq))
        except (ValueError, InfeasiblePatternError) as e:
            return "pass", detail + f"; ceiling not checked ({e})"
        dmax = max(ds)
        if dmax > fstar + 1e-7 * (1.0 + abs(fstar)):
            return "fail", f"dual merit reached {dmax:.12g}, above the minimum {fstar:.12g}"
        return "pass", detail + f", capped by the reference minimum {fstar:.12g}"

    if invariant_suite:
        run("d_monotone", check_d_monotone)

    def _theory_points():
        if theory_run is None or theory_run.trace is None:
            raise ValueError("needs the theory-step solver trace")
        rows = theory_run.trace.rows
        return [rows[0], rows[len(rows) // 2], rows[-1]]

    def check_d_bounds():
        if theory is None:
            return "skip", "needs convexity flags and mu/L metadata"
        worst = None
        for row in _theory_points():
            rep = d_bounds_check(p, row.x, theory)
            if not rep.ok:
                return "fail", (f"sandwich violated at iterate {row.k}: "
                                f"{rep.lower:.12g} <= {rep.d:.12g} <= {rep.upper:.12g}")
            gap = rep.upper - rep.d
            worst = gap if worst is None else min(worst, gap)
        return "pass", f"holds at 3 trace points (tightest upper-bound gap {worst:.3e})"

    if invariant_suite:
        run("d_bounds", check_d_bounds)

    def check_distance_bound():
        if theory is None:
            return "skip", "needs convexity flags and mu/L metadata"
        for row in _theory_points():
            rep = distance_bound_check(p, row.x, theory)
            if not rep.ok:
                return "fail", (f"violated at iterate {row.k}: d={rep.d:.12g}, "
                                f"f*={rep.fstar:.12g}, |x - x*|={rep.distance:.6g}")
        return "pass", "holds at 3 trace points"

    if invariant_suite:
        run("distance_bound", check_distance_bound)

    def check_rate_constants():
        if theory is None:
            return "skip", "needs convexity flags and mu/L metadata"
        L_l = md.L_l if md.L_l is not None else md.L
        c1, c2 = rate_constants(md.mu, L_l, theory.T, theory.alpha)
        if not (c1 > 0 and c2 > 0 and c2 * theory.T < 1):
            return "fail", f"c1={c1:.6g}, c2={c2:.6g}, c2*T={c2 * theory.T:.6g}"
        return "pass", f"c1={c1:.6g}, c2={c2:.6g}, c2*T={c2 * theory.T:.6g} < 1"

    if invariant_suite:
        run("rate_constants", check_rate_constants)

    return VerificationReport(checks=tuple(checks))
