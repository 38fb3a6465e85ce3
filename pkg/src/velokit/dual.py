"""Projected over-relaxation solver for the velocity-level dual problem.

At a point x the velocity v is the minimizer of |v + grad f|^2/2 subject to
the linearized constraints W^T v + alpha*gbar lying in the polar cone; by
strong duality v = -grad f + W@lam where lam solves

    min_{lam in D}  1/2 lam^T (W^T W) lam + lam^T (alpha*gbar - W^T grad f),

with D = R^{n_eq} x R^{m-n_eq}_{>=0}. The solver below performs cyclic
projected Gauss-Seidel/SOR sweeps on this quadratic, updating one multiplier
at a time against the running product u = W@lam. Convergence is declared when
a full sweep moves lam by no more than tol_prox *and* every positive
inequality multiplier has residual at most the side threshold (so no active
constraint is being pushed inward at the reported fixed point).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit
from scipy import sparse

from .core import ActiveModel, DegenerateConstraintError, SolverParams

# a column of W with squared norm below this is treated as a vanished gradient
_DEGENERATE_SQ = 1e-28


@njit(cache=True, nogil=True)
def _sweep_kernel(data, indices, indptr, diag, q, lam, u, n_eq, omega,
                  tol_prox, side_tol, max_sweeps):
    """Run up to max_sweeps in-place SOR sweeps; returns (sweeps, last_delta, converged).

    u must equal W@lam on entry and is maintained incrementally. tol_prox < 0
    disables the convergence test (used to force exactly max_sweeps sweeps).
    """
    m = lam.shape[0]
    sweeps = 0
    last_delta = 0.0
    converged = False
    while sweeps < max_sweeps:
        delta_sq = 0.0
        for i in range(m):
            r = q[i]
            for p in range(indptr[i], indptr[i + 1]):
                r += data[p] * u[indices[p]]
            cand = lam[i] - omega * r / diag[i]
            if i >= n_eq and cand < 0.0:
                cand = 0.0
            dlam = cand - lam[i]
            if dlam != 0.0:
                for p in range(indptr[i], indptr[i + 1]):
                    u[indices[p]] += dlam * data[p]
                lam[i] = cand
                delta_sq += dlam * dlam
        sweeps += 1
        last_delta = np.sqrt(delta_sq)
        if tol_prox >= 0.0 and last_delta <= tol_prox:
            ok = True
            for i in range(n_eq, m):
                if lam[i] > 0.0:
                    r = q[i]
                    for p in range(indptr[i], indptr[i + 1]):
                        r += data[p] * u[indices[p]]
                    if r > side_tol:
                        ok = False
                        break
            if ok:
                converged = True
                break
            if last_delta == 0.0:
                # exact stall: further sweeps cannot move lam
                break
    return sweeps, last_delta, converged


def prox_cone(xi: np.ndarray, n_eq: int) -> np.ndarray:
    """Project onto R^{n_eq} x R^{>=0}: equality part untouched, rest clamped at 0."""
    out = np.array(xi, dtype=float, copy=True)
    np.maximum(out[n_eq:], 0.0, out=out[n_eq:])
    return out


def _prepared(model: ActiveModel):
    W = model.W
    if not sparse.isspmatrix_csc(W):
        W = sparse.csc_matrix(W)
    diag = np.asarray(W.multiply(W).sum(axis=0)).ravel()
    bad = np.flatnonzero(diag <= _DEGENERATE_SQ)
    if bad.size:
        i = int(bad[0])
        if i < model.n_eq_cols:
            what = f"equality constraint {i}"
        else:
            k = i - model.n_eq_cols
            idx = int(model.active[k]) if k < len(model.active) else k
            what = f"inequality constraint {idx}"
        raise DegenerateConstraintError(
            f"active {what} has a numerically vanishing gradient"
        )
    return W, diag


def sor_sweep(model: ActiveModel, grad_f: np.ndarray, alpha: float,
              omega: float, lam: np.ndarray) -> np.ndarray:
    """One in-place projected SOR sweep over all multipliers; returns lam."""
    lam = np.ascontiguousarray(lam, dtype=np.float64)
    if lam.shape[0] == 0:
        return lam
    W, diag = _prepared(model)
    q = alpha * model.gbar - W.T @ grad_f
    u = W @ lam
    _sweep_kernel(W.data, W.indices, W.indptr, diag, q, lam, u,
                  model.n_eq_cols, omega, -1.0, 0.0, 1)
    return lam


@dataclass
class DualResult:
    lam: np.ndarray
    iterations: int
    last_delta: float
    stationarity_residual: float
    complementarity_residual: float
    converged: bool


def solve_dual(model: ActiveModel, grad_f: np.ndarray, params: SolverParams,
               warm: Optional[np.ndarray] = None) -> DualResult:
    """Iterate projected SOR sweeps until the fixed-point test passes.

    warm seeds the initial multipliers: it is truncated or zero-padded to the
    model size and projected onto the cone before the first sweep.
    """
    m = model.m
    n_eq = model.n_eq_cols
    if m == 0:
        return DualResult(np.zeros(0), 0, 0.0, 0.0, 0.0, True)
    W, diag = _prepared(model)
    lam = np.zeros(m)
    if warm is not None:
        k = min(len(warm), m)
        lam[:k] = warm[:k]
        np.maximum(lam[n_eq:], 0.0, out=lam[n_eq:])
    q = params.alpha * model.gbar - W.T @ grad_f
    u = W @ lam
    sweeps, last_delta, converged = _sweep_kernel(
        W.data, W.indices, W.indptr, diag, q, lam, u,
        n_eq, params.omega, params.tol_prox, params.side_threshold,
        params.maxiter_prox,
    )
    r = W.T @ (W @ lam - grad_f) + params.alpha * model.gbar
    stat = 0.0
    if n_eq:
        stat = float(np.max(np.abs(r[:n_eq])))
    if m > n_eq:
        stat = max(stat, max(0.0, float(-np.min(r[n_eq:]))))
        comp = float(np.max(np.abs(lam[n_eq:] * r[n_eq:])))
    else:
        comp = 0.0
    return DualResult(lam, int(sweeps), float(last_delta), stat, comp,
                      bool(converged))
