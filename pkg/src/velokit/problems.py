"""Seeded generators for the benchmark problem families.

All generators are pure functions of (size, seed): the top-level
numpy Generator is split with spawn() into one child stream per random
quantity, in a fixed documented order, so adding draws to one quantity never
perturbs the others. Matrices that act as constant constraint gradients are
prebuilt in CSC form and captured by the evaluator closures.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np
from numba import njit
from scipy import sparse

from .core import ConfigurationError, ConstrainedProblem, Metadata, SolverParams


def _check_qp_size(n: int) -> None:
    if n < 4 or n % 4 != 0:
        raise ValueError(f"n must be >= 4 and divisible by 4, got {n}")


def gen_random_qp(n: int, seed: int = 0) -> ConstrainedProblem:
    """Random strongly convex QP with n/2 inequality and n/4 equality constraints.

    f(x) = x^T Q x / 2 + c^T x with Q diagonal, first two entries 1/20 and 1,
    the rest uniform on [1/20, 1] (condition number pinned to 20); constraints
    A1 x + b1 >= 0 and A2 x + b2 = 0 with standard-normal entries; c uniform
    on [-1, 1]. Spawned streams, in order: Q tail, c, A1, b1, A2, b2.
    """
    _check_qp_size(n)
    s_q, s_c, s_a1, s_b1, s_a2, s_b2 = np.random.default_rng(seed).spawn(6)
    qdiag = np.concatenate([[0.05, 1.0], s_q.uniform(0.05, 1.0, n - 2)])
    c = s_c.uniform(-1.0, 1.0, n)
    A1 = s_a1.normal(size=(n // 2, n))
    b1 = s_b1.normal(size=n // 2)
    A2 = s_a2.normal(size=(n // 4, n))
    b2 = s_b2.normal(size=n // 4)
    A1T = sparse.csc_matrix(A1.T)
    A2T = sparse.csc_matrix(A2.T)
    return ConstrainedProblem(
        dim=n, n_ineq=n // 2, n_eq=n // 4,
        objective=lambda x: 0.5 * float(x @ (qdiag * x)) + float(c @ x),
        objective_grad=lambda x: qdiag * x + c,
        ineq=lambda x: A1 @ x + b1,
        ineq_grad=lambda x: A1T,
        eq=lambda x: A2 @ x + b2,
        eq_grad=lambda x: A2T,
        metadata=Metadata(L=1.0, mu=0.05, L_l=1.0,
                          objective_convex=True, feasible_set_convex=True),
        x0=np.zeros(n),
        family="random_qp",
    )


def gen_trust_region(n: int, seed: int = 0, ball_only: bool = False) -> ConstrainedProblem:
    """The random QP objective with homogeneous constraints and a unit-ball cap.

    Constraints: A1 x >= 0, A2 x = 0 and the concave cap g(x) = 1 - |x|^2 >= 0
    exposed as the last inequality. Q, c, A1, A2 are drawn exactly as in
    gen_random_qp (same stream order; the offset streams are left unused so
    the matrices coincide with the random-QP instance of the same seed).
    ball_only drops the affine constraints entirely.

    The Lagrangian curvature metadata solves the fixed point of
    L_l = alpha + L*kappa with T = 2/(L_l + mu) and alpha*T = 0.4, where
    kappa = 2 + |Q^{-1} c| sqrt(2)/2, giving L_l = 1.25 L kappa + 0.25 mu.
    """
    _check_qp_size(n)
    s_q, s_c, s_a1, _s_b1, s_a2, _s_b2 = np.random.default_rng(seed).spawn(6)
    qdiag = np.concatenate([[0.05, 1.0], s_q.uniform(0.05, 1.0, n - 2)])
    c = s_c.uniform(-1.0, 1.0, n)
    A1 = s_a1.normal(size=(n // 2, n))
    A2 = s_a2.normal(size=(n // 4, n))
    A1T = sparse.csc_matrix(A1.T)
    A2T = sparse.csc_matrix(A2.T)
    kappa = 2.0 + float(np.linalg.norm(c / qdiag)) * math.sqrt(2.0) / 2.0
    L, mu = 1.0, 0.05
    L_l = 1.25 * L * kappa + 0.25 * mu

    if ball_only:
        def ineq(x):
            return np.array([1.0 - float(x @ x)])

        def ineq_grad(x):
            return sparse.csc_matrix((-2.0 * x).reshape(n, 1))

        n_ineq, n_eq, eq, eq_grad = 1, 0, None, None
    else:
        def ineq(x):
            return np.concatenate([A1 @ x, [1.0 - float(x @ x)]])

        def ineq_grad(x):
            ball = sparse.csc_matrix((-2.0 * x).reshape(n, 1))
            return sparse.hstack([A1T, ball]).tocsc()

        n_ineq, n_eq = n // 2 + 1, n // 4
        eq = lambda x: A2 @ x
        eq_grad = lambda x: A2T

    return ConstrainedProblem(
        dim=n, n_ineq=n_ineq, n_eq=n_eq,
        objective=lambda x: 0.5 * float(x @ (qdiag * x)) + float(c @ x),
        objective_grad=lambda x: qdiag * x + c,
        ineq=ineq, ineq_grad=ineq_grad, eq=eq, eq_grad=eq_grad,
        metadata=Metadata(L=L, mu=mu, L_l=L_l,
                          objective_convex=True, feasible_set_convex=True),
        x0=np.zeros(n),
        family="trust_region",
    )


def load_svm_samples(path) -> Tuple[np.ndarray, np.ndarray]:
    """Read training samples from CSV rows "r1,r2,label" with label in {-1, 1}."""
    points, labels = [], []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            try:
                if len(row) != 3:
                    raise ValueError(f"expected 3 fields, got {len(row)}")
                r1, r2 = float(row[0]), float(row[1])
                label = int(float(row[2]))
                if label not in (-1, 1):
                    raise ValueError(f"label must be -1 or 1, got {row[2].strip()}")
            except ValueError as e:
                raise ValueError(f"svm samples {path}, line {lineno}: {e}") from None
            points.append((r1, r2))
            labels.append(label)
    if len(labels) < 2:
        raise ValueError(f"svm samples {path}: need at least 2 rows, got {len(labels)}")
    return np.array(points, dtype=float), np.array(labels, dtype=float)


def _svm_samples(n_s: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    # polar draws: +1 radius ~ N(2, 0.5), -1 radius ~ N(0, 0.5), angles uniform.
    # spawned streams, in order: radius(+), angle(+), radius(-), angle(-)
    s_rp, s_ap, s_rm, s_am = np.random.default_rng(seed).spawn(4)
    n_plus = (n_s + 1) // 2
    n_minus = n_s - n_plus
    rad = np.concatenate([s_rp.normal(2.0, 0.5, n_plus), s_rm.normal(0.0, 0.5, n_minus)])
    ang = np.concatenate([s_ap.uniform(0.0, 2.0 * np.pi, n_plus),
                          s_am.uniform(0.0, 2.0 * np.pi, n_minus)])
    points = np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])
    labels = np.concatenate([np.ones(n_plus), -np.ones(n_minus)])
    return points, labels


def gen_nu_svm(n_s: Optional[int] = None, seed: int = 0,
               samples: Union[None, str, Tuple[np.ndarray, np.ndarray]] = None,
               nu2: float = 0.1) -> ConstrainedProblem:
    """Kernelized nu-SVM dual as a box-and-sum constrained QP.

    f(x) = x^T ((l l^T) o K + nu1 I) x / 2 with the Gaussian kernel
    K_ij = exp(-|r_i - r_j|^2 / 2), nu1 = 0.1 * (smallest kernel eigenvalue);
    constraints 0 <= x_i <= 1/n_s (2 n_s inequalities), sum(x_i) >= nu2, and
    the equality sum(x_i l_i) = 0. samples may be a CSV path or a
    (points, labels) pair; otherwise n_s points are generated from the seed.
    """
    if samples is not None:
        if isinstance(samples, (str, bytes)) or hasattr(samples, "__fspath__"):
            points, labels = load_svm_samples(samples)
        else:
            points, labels = np.asarray(samples[0], dtype=float), np.asarray(samples[1], dtype=float)
        n_s = labels.shape[0]
    else:
        if n_s is None or n_s < 2:
            raise ValueError(f"n_s must be >= 2, got {n_s}")
        points, labels = _svm_samples(n_s, seed)

    d2 = np.sum((points[:, None, :] - points[None, :, :]) ** 2, axis=-1)
    K = np.exp(-0.5 * d2)
    evals = np.linalg.eigvalsh(K)
    # tiny numerical floor: Gaussian kernel matrices are PSD but can carry
    # round-off-negative eigenvalues at larger n_s
    mu_k = max(float(evals[0]), 1e-12 * max(float(evals[-1]), 1.0))
    nu1 = 0.1 * mu_k
    H = K * np.outer(labels, labels) + nu1 * np.eye(n_s)

    box = sparse.hstack([
        sparse.eye(n_s, format="csc"),
        -sparse.eye(n_s, format="csc"),
        sparse.csc_matrix(np.ones((n_s, 1))),
    ]).tocsc()
    lcol = sparse.csc_matrix(labels.reshape(n_s, 1))
    upper = 1.0 / n_s

    return ConstrainedProblem(
        dim=n_s, n_ineq=2 * n_s + 1, n_eq=1,
        objective=lambda x: 0.5 * float(x @ (H @ x)),
        objective_grad=lambda x: H @ x,
        ineq=lambda x: np.concatenate([x, upper - x, [float(np.sum(x)) - nu2]]),
        ineq_grad=lambda x: box,
        eq=lambda x: np.array([float(x @ labels)]),
        eq_grad=lambda x: lcol,
        metadata=Metadata(L=float(evals[-1]) + nu1, mu=float(evals[0]) + nu1,
                          L_l=float(evals[-1]) + nu1,
                          objective_convex=True, feasible_set_convex=True),
        x0=np.zeros(n_s),
        family="nu_svm",
    )


@njit(cache=True)
def _catenary_values(z, n, link_sq):
    """Link residuals, obstacle values, and their gradient data for the chain.

    z holds the free joints as (x_i, y_i) pairs for joints 1..n-1 (0-based;
    joints 0 and n are pinned). Returns (h, g, eq_data, in_data) where
    eq_data rows follow the fixed (row, col) pattern built in gen_catenary.
    """
    X = np.empty(n + 1)
    Y = np.empty(n + 1)
    X[0] = 0.0
    Y[0] = 0.0
    X[n] = 1.0
    Y[n] = 0.0
    for i in range(1, n):
        X[i] = z[2 * (i - 1)]
        Y[i] = z[2 * (i - 1) + 1]
    h = np.empty(n)
    for j in range(n):
        dx = X[j] - X[j + 1]
        dy = Y[j] - Y[j + 1]
        h[j] = dx * dx + dy * dy - link_sq
    g = np.empty(n - 1)
    for i in range(1, n):
        gx = X[i] - 0.5
        gy = Y[i] + 0.8
        g[i - 1] = gx * gx + gy * gy - 0.25
    # equality gradient data: for link j, entries for joint j then joint j+1
    # (only free joints contribute); order matches the index pattern
    eq_data = np.empty(4 * (n - 1))
    pos = 0
    for j in range(n):
        dx = 2.0 * (X[j] - X[j + 1])
        dy = 2.0 * (Y[j] - Y[j + 1])
        if 1 <= j <= n - 1:
            eq_data[pos] = dx
            eq_data[pos + 1] = dy
            pos += 2
        if 1 <= j + 1 <= n - 1:
            eq_data[pos] = -dx
            eq_data[pos + 1] = -dy
            pos += 2
    in_data = np.empty(2 * (n - 1))
    for i in range(1, n):
        in_data[2 * (i - 1)] = 2.0 * (X[i] - 0.5)
        in_data[2 * (i - 1) + 1] = 2.0 * (Y[i] + 0.8)
    return h, g, eq_data, in_data


def gen_catenary(n: int, seed: int = 0) -> ConstrainedProblem:
    """Hanging chain of n rigid links over a circular obstacle.

    Joints 0..n sit in the plane with joints 0 and n pinned at (0,0) and
    (1,0); the free variables are the 2(n-1) coordinates of joints 1..n-1.
    Cost is the potential energy 9.81/(n+1) * sum of free-joint heights; each
    link must keep squared length 4/n^2 (n equalities) and each free joint
    must stay outside the circle of radius 0.5 around (0.5, -0.8) (n-1
    inequalities). Starts from a seeded jitter of the straight line between
    the endpoints, which violates the link constraints.
    """
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    dim = 2 * (n - 1)
    link_sq = 4.0 / (n * n)
    coeff = 9.81 / (n + 1)
    grad_f = np.zeros(dim)
    grad_f[1::2] = coeff

    # fixed sparsity pattern for the equality gradient (dim x n), column = link
    eq_rows, eq_cols = [], []
    for j in range(n):
        if 1 <= j <= n - 1:
            eq_rows += [2 * (j - 1), 2 * (j - 1) + 1]
            eq_cols += [j, j]
        if 1 <= j + 1 <= n - 1:
            eq_rows += [2 * j, 2 * j + 1]
            eq_cols += [j, j]
    eq_rows = np.array(eq_rows)
    eq_cols = np.array(eq_cols)
    in_rows = np.arange(dim)
    in_cols = np.repeat(np.arange(n - 1), 2)

    def eq(z):
        return _catenary_values(z, n, link_sq)[0]

    def ineq(z):
        return _catenary_values(z, n, link_sq)[1]

    def eq_grad(z):
        data = _catenary_values(z, n, link_sq)[2]
        return sparse.csc_matrix((data, (eq_rows, eq_cols)), shape=(dim, n))

    def ineq_grad(z):
        data = _catenary_values(z, n, link_sq)[3]
        return sparse.csc_matrix((data, (in_rows, in_cols)), shape=(dim, n - 1))

    rng = np.random.default_rng(seed)
    z0 = np.empty(dim)
    z0[0::2] = np.arange(1, n) / n
    z0[1::2] = 0.0
    z0 += 0.1 * rng.normal(size=dim)

    return ConstrainedProblem(
        dim=dim, n_ineq=n - 1, n_eq=n,
        objective=lambda z: float(grad_f @ z),
        objective_grad=lambda z: grad_f.copy(),
        ineq=ineq, ineq_grad=ineq_grad, eq=eq, eq_grad=eq_grad,
        metadata=Metadata(L=0.0, mu=0.0, objective_convex=True,
                          feasible_set_convex=False),
        x0=z0,
        family="catenary",
    )


FAMILIES = {
    "random_qp": gen_random_qp,
    "trust_region": gen_trust_region,
    "nu_svm": gen_nu_svm,
    "catenary": gen_catenary,
}

_TABLE = dict(alphaT=0.4, eps_g=1e-6, omega=1.0, TOL=1e-6,
              MAXITER=1000, MAXITER_PROX=200, TOL_PROX=1e-6)
FAMILY_DEFAULTS = {
    "random_qp": dict(_TABLE),
    "trust_region": dict(_TABLE),
    "nu_svm": dict(_TABLE),
    "catenary": dict(_TABLE, alphaT=0.8, MAXITER=10000, MAXITER_PROX=10000,
                     TOL_PROX=1e-8),
}


@dataclass(frozen=True)
class BenchmarkSpec:
    """Serializable handle for one benchmark instance."""

    family: str
    n: int
    seed: int = 0
    options: dict = field(default_factory=dict)

    def make(self) -> ConstrainedProblem:
        return make_problem(self.family, self.n, self.seed, **self.options)


def make_problem(family: str, n: int, seed: int = 0, **options) -> ConstrainedProblem:
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; choose from {sorted(FAMILIES)}")
    if family == "nu_svm":
        return gen_nu_svm(n_s=n, seed=seed, **options)
    if family == "catenary":
        return gen_catenary(n, seed=seed)
    return FAMILIES[family](n, seed=seed, **options)


def _default_T(p: ConstrainedProblem) -> float:
    md = p.metadata
    if p.family == "catenary":
        return 2.0 / p.n_eq
    if p.family == "trust_region":
        return 2.0 / (md.L_l + md.mu)
    if p.family in ("random_qp", "nu_svm"):
        return 2.0 / (md.L + md.mu)
    if md.L_l is not None and md.mu is not None:
        return 2.0 / (md.L_l + md.mu)
    from .core import estimate_smoothness
    import warnings
    L = estimate_smoothness(p, p.x0 if p.x0 is not None else np.zeros(p.dim))
    warnings.warn("no smoothness metadata: using a power-iteration estimate of L "
                  "with L_l := L (exact only for affine constraints)")
    mu = md.mu or 0.0
    return 2.0 / (L + mu) if L + mu > 0 else 1.0


def default_params(p: ConstrainedProblem, T: Optional[float] = None,
                   alphaT: Optional[float] = None, eps_g: Optional[float] = None,
                   omega: Optional[float] = None, TOL: Optional[float] = None,
                   MAXITER: Optional[int] = None, MAXITER_PROX: Optional[int] = None,
                   TOL_PROX: Optional[float] = None, **extra) -> SolverParams:
    """Family defaults in the benchmark table's vocabulary, with overrides."""
    base = FAMILY_DEFAULTS.get(p.family, _TABLE)
    T = float(T) if T is not None else _default_T(p)
    if T <= 0.0:
        raise ConfigurationError(f"T must be positive, got {T}")
    alphaT = float(alphaT) if alphaT is not None else base["alphaT"]
    return SolverParams(
        T=T,
        alpha=alphaT / T,
        eps_g=float(eps_g) if eps_g is not None else base["eps_g"],
        omega=float(omega) if omega is not None else base["omega"],
        tol=float(TOL) if TOL is not None else base["TOL"],
        maxiter=int(MAXITER) if MAXITER is not None else base["MAXITER"],
        maxiter_prox=int(MAXITER_PROX) if MAXITER_PROX is not None else base["MAXITER_PROX"],
        tol_prox=float(TOL_PROX) if TOL_PROX is not None else base["TOL_PROX"],
        **extra,
    )
