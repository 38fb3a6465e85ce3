"""Outer constrained-gradient-descent loop and its variants.

Each iteration linearizes the constraints at the current point, solves the
velocity dual, and steps x_{k+1} = x_k + T v_k with
v_k = -grad f(x_k) + W_k lam_k. Equality violations then contract by the
factor (1 - alpha T) per step and active inequalities are never pushed
further out, which is what makes infeasible starting points unproblematic.
"""
from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from .core import (
    ConstrainedProblem,
    EvaluationError,
    SolverParams,
    assemble_from_values,
)
from .dual import DualResult, solve_dual

TRACE_COLUMNS = ("k", "f", "d", "step_norm", "kkt_residual", "active_count",
                 "max_ineq_violation", "eq_violation", "inner_iterations")


@dataclass
class TraceRow:
    k: int
    x: np.ndarray
    v: np.ndarray
    lam: np.ndarray
    f: float
    d: Optional[float]
    active_count: int
    max_ineq_violation: float
    eq_violation: float
    inner_iterations: int
    step_norm: float

    @property
    def kkt_residual(self) -> float:
        return float(np.linalg.norm(self.v))


@dataclass
class SolveTrace:
    rows: List[TraceRow] = field(default_factory=list)
    status: str = ""

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def __getitem__(self, i):
        return self.rows[i]

    def to_csv(self, path_or_file) -> None:
        """Write one row per iterate with the fixed column order TRACE_COLUMNS."""
        own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
        fh = open(path_or_file, "w", newline="") if own else path_or_file
        try:
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            for r in self.rows:
                w.writerow([
                    r.k,
                    repr(r.f),
                    "" if r.d is None else repr(r.d),
                    repr(r.step_norm),
                    repr(r.kkt_residual),
                    r.active_count,
                    repr(r.max_ineq_violation),
                    repr(r.eq_violation),
                    r.inner_iterations,
                ])
        finally:
            if own:
                fh.close()


@dataclass
class SolveResult:
    x_final: np.ndarray
    f_final: float
    kkt_residual: float
    iterations: int
    status: str
    trace: Optional[SolveTrace] = None
    lam_final: Optional[np.ndarray] = None
    active_final: Optional[np.ndarray] = None
    total_inner_iterations: int = 0
    max_inner_iterations: int = 0

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def _evaluate(p: ConstrainedProblem, x: np.ndarray):
    g = p.eval_ineq(x)
    h = p.eval_eq(x)
    grad = p.eval_grad(x)
    f = float(p.objective(x))
    if not math.isfinite(f):
        raise EvaluationError("evaluation failure at x: non-finite objective value")
    return f, grad, g, h


def _dual_at(p, x, params, warm=None):
    f, grad, g, h = _evaluate(p, x)
    model = assemble_from_values(p, x, g, h, params.eps_g)
    res = solve_dual(model, grad, params, warm=warm)
    v = -grad + model.W @ res.lam
    return f, grad, g, h, model, res, v


def velocity(p: ConstrainedProblem, x, params: SolverParams,
             warm: Optional[np.ndarray] = None) -> Tuple[np.ndarray, DualResult]:
    """Constrained steepest-descent velocity v = -grad f(x) + W(x) lam."""
    x = np.asarray(x, dtype=float)
    _, _, _, _, _, res, v = _dual_at(p, x, params, warm=warm)
    return v, res


def step(p: ConstrainedProblem, x, params: SolverParams,
         warm: Optional[np.ndarray] = None):
    """One update x_{k+1} = x_k + T v_k; returns (x_next, v, DualResult)."""
    x = np.asarray(x, dtype=float)
    v, res = velocity(p, x, params, warm=warm)
    return x + params.T * v, v, res


def _warm_vector(model, eq_part, ineq_map):
    w = np.zeros(model.m)
    n_eq = model.n_eq_cols
    if eq_part is not None:
        w[:n_eq] = eq_part
    for pos, idx in enumerate(model.active):
        w[n_eq + pos] = ineq_map.get(int(idx), 0.0)
    return w


def solve(p: ConstrainedProblem, x0, params: SolverParams, *,
          record_trace: bool = False, record_d: bool = False,
          callback: Optional[Callable[[TraceRow], None]] = None) -> SolveResult:
    """Iterate until |v_k| <= TOL (so |x_{k+1}-x_k| <= T*TOL) or MAXITER steps.

    x0 need not be feasible. lam is warm-started across iterations keyed by
    constraint identity when params.warm_start_lambda is set. The optional
    trace keeps every iterate; d(x_k) is recorded when record_d is set (it is
    available for free from the dual solution).
    """
    x = np.asarray(x0, dtype=float).copy()
    trace = SolveTrace() if record_trace else None
    eq_warm: Optional[np.ndarray] = None
    ineq_warm: dict = {}
    total_inner = 0
    max_inner = 0
    status = "maxiter"
    iterations = 0
    f = float("nan")
    kkt = float("nan")
    lam_final = None
    active_final = None

    for k in range(params.maxiter + 1):
        try:
            f, grad, g, h = _evaluate(p, x)
            model = assemble_from_values(p, x, g, h, params.eps_g)
            warm = (_warm_vector(model, eq_warm, ineq_warm)
                    if params.warm_start_lambda else None)
            res = solve_dual(model, grad, params, warm=warm)
        except EvaluationError:
            status = "error"
            iterations = k
            break
        v = -grad + model.W @ res.lam
        kkt = float(np.linalg.norm(v))
        total_inner += res.iterations
        max_inner = max(max_inner, res.iterations)
        lam_final = res.lam
        active_final = model.active
        if record_trace or callback is not None:
            d = None
            if record_d:
                d = f - float(res.lam @ model.gbar) - kkt * kkt / (2.0 * params.alpha)
            row = TraceRow(
                k=k, x=x.copy(), v=v, lam=res.lam.copy(), f=f, d=d,
                active_count=int(model.active.size),
                max_ineq_violation=float(max(0.0, -np.min(g))) if g.size else 0.0,
                eq_violation=float(np.linalg.norm(h)),
                inner_iterations=res.iterations,
                step_norm=params.T * kkt,
            )
            if record_trace:
                trace.rows.append(row)
            if callback is not None:
                callback(row)
        if kkt <= params.tol:
            status = "converged"
            iterations = k
            break
        if k == params.maxiter:
            status = "maxiter"
            iterations = k
            break
        if params.line_search:
            x = line_search_step(p, x, params)
        else:
            x = x + params.T * v
        if params.multiplier_reuse and res.lam.size:
            xs, _ = multiplier_reuse_run(p, x, res.lam, params,
                                         max_substeps=params.maxiter)
            x = xs[-1]
        if params.warm_start_lambda:
            eq_warm = res.lam[:model.n_eq_cols].copy()
            ineq_warm = {int(idx): float(res.lam[model.n_eq_cols + pos])
                         for pos, idx in enumerate(model.active)}

    if trace is not None:
        trace.status = status
    return SolveResult(
        x_final=x, f_final=f, kkt_residual=kkt, iterations=iterations,
        status=status, trace=trace, lam_final=lam_final,
        active_final=active_final, total_inner_iterations=total_inner,
        max_inner_iterations=max_inner,
    )


def _columns_at(p: ConstrainedProblem, y: np.ndarray, model) -> np.ndarray:
    """Gradient columns of the model's constraints, re-evaluated at y (dense)."""
    from scipy import sparse as _sp
    cols = []
    if p.n_eq:
        ge = p.eq_grad(y)
        ge = ge.toarray() if _sp.issparse(ge) else np.asarray(ge, dtype=float)
        cols.append(ge.reshape(p.dim, p.n_eq))
    if model.active.size:
        gi = p.ineq_grad(y)
        gi = gi.toarray() if _sp.issparse(gi) else np.asarray(gi, dtype=float)
        cols.append(gi.reshape(p.dim, p.n_ineq)[:, model.active])
    if not cols:
        return np.zeros((p.dim, 0))
    return np.hstack(cols)


def _merit_with_frozen_lam(p: ConstrainedProblem, y: np.ndarray,
                           lam: np.ndarray, model, alpha: float) -> float:
    gy = p.eval_ineq(y)
    hy = p.eval_eq(y)
    gbar = np.concatenate([hy, gy[model.active]])
    grad_l = p.eval_grad(y) - _columns_at(p, y, model) @ lam
    return float(p.objective(y)) - float(lam @ gbar) \
        - float(grad_l @ grad_l) / (2.0 * alpha)


def line_search_step(p: ConstrainedProblem, x, params: SolverParams,
                     n_golden: int = 60) -> np.ndarray:
    """Step along v_k with the merit-maximizing step size instead of T.

    Maximizes l(x + tau v, lam) - |grad_x l(x + tau v, lam)|^2/(2 alpha) over
    tau in (0, 1/alpha] by golden-section search, with lam held at its value
    from the dual solve at x. The default T is always a candidate, so the
    returned point never scores below the plain update.
    """
    x = np.asarray(x, dtype=float)
    f, grad, g, h = _evaluate(p, x)
    model = assemble_from_values(p, x, g, h, params.eps_g)
    res = solve_dual(model, grad, params)
    v = -grad + model.W @ res.lam
    if float(np.linalg.norm(v)) == 0.0:
        return x.copy()

    def merit(tau: float) -> float:
        return _merit_with_frozen_lam(p, x + tau * v, res.lam, model, params.alpha)

    lo, hi = 0.0, 1.0 / params.alpha
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = merit(c), merit(d)
    for _ in range(n_golden):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = merit(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = merit(d)
    tau_best = c if fc > fd else d
    best = max(fc, fd)
    if merit(params.T) >= best:
        tau_best = params.T
    return x + tau_best * v


def multiplier_reuse_run(p: ConstrainedProblem, x, lam, params: SolverParams,
                         max_substeps: Optional[int] = None):
    """Cheap sub-steps x_{j+1} = x_j - T grad_x l(x_j, lam) with lam frozen.

    Continues while every constraint that was active with a positive
    multiplier stays at the boundary (g_i <= eps_g) and no new constraint
    activates. Returns (points, fail_iteration): points stacks x and every
    accepted sub-iterate; fail_iteration is the 1-based index of the first
    rejected sub-step, or None when the budget ran out with the guard intact.
    """
    x = np.asarray(x, dtype=float).copy()
    lam = np.asarray(lam, dtype=float)
    g0 = p.eval_ineq(x)
    h0 = p.eval_eq(x)
    model = assemble_from_values(p, x, g0, h0, params.eps_g)
    if lam.shape[0] != model.m:
        raise ValueError(
            f"lam has {lam.shape[0]} entries but the model at x has {model.m} columns"
        )
    guarded = model.active[lam[model.n_eq_cols:] > 0.0]
    inactive = np.setdiff1d(np.arange(p.n_ineq), model.active)
    budget = params.maxiter if max_substeps is None else max_substeps
    points = [x.copy()]
    fail_iteration = None
    for j in range(1, budget + 1):
        grad_l = p.eval_grad(x) - _columns_at(p, x, model) @ lam
        y = x - params.T * grad_l
        gy = p.eval_ineq(y)
        opened = guarded.size and np.max(gy[guarded]) > params.eps_g
        entered = inactive.size and np.min(gy[inactive]) <= params.eps_g
        if opened or entered:
            fail_iteration = j
            break
        points.append(y.copy())
        x = y
    return np.array(points), fail_iteration


def flow_mode(p: ConstrainedProblem, x0, horizon: float, substeps: int,
              params: SolverParams, record_d: bool = False) -> SolveTrace:
    """Small-step surrogate for the continuous-time dynamics.

    Integrates `substeps` Euler steps of size T = horizon/substeps (replacing
    params.T; alpha and the tolerances are kept), recording every iterate on
    the time grid t_k = k T. No early stopping: the trace always holds
    substeps + 1 rows.
    """
    flow_params = dataclasses.replace(params, T=horizon / substeps)
    x = np.asarray(x0, dtype=float).copy()
    trace = SolveTrace(status="maxiter")
    for k in range(substeps + 1):
        try:
            f, grad, g, h = _evaluate(p, x)
            model = assemble_from_values(p, x, g, h, flow_params.eps_g)
            res = solve_dual(model, grad, flow_params)
        except EvaluationError:
            trace.status = "error"
            break
        v = -grad + model.W @ res.lam
        kkt = float(np.linalg.norm(v))
        d = None
        if record_d:
            d = f - float(res.lam @ model.gbar) - kkt * kkt / (2.0 * flow_params.alpha)
        trace.rows.append(TraceRow(
            k=k, x=x.copy(), v=v, lam=res.lam.copy(), f=f, d=d,
            active_count=int(model.active.size),
            max_ineq_violation=float(max(0.0, -np.min(g))) if g.size else 0.0,
            eq_violation=float(np.linalg.norm(h)),
            inner_iterations=res.iterations,
            step_norm=flow_params.T * kkt,
        ))
        if k < substeps:
            x = x + flow_params.T * v
    return trace
