"""Constrained gradient descent with velocity-level constraint activation.

The step never projects onto the feasible set: each iterate solves a small
cone-constrained dual for a velocity that keeps active constraints from being
violated while unconstrained directions follow the plain gradient, so
equality and active-inequality residuals contract geometrically instead of
being clipped.
"""
from .core import (
    ActiveModel,
    ConfigurationError,
    ConstrainedProblem,
    DegenerateConstraintError,
    EvaluationError,
    Metadata,
    MfcqReport,
    SolverParams,
    active_set,
    assemble_from_values,
    assemble_model,
    check_mfcq,
    estimate_smoothness,
)
from .dual import DualResult, prox_cone, solve_dual, sor_sweep
from .oracle import (
    BoundsReport,
    CheckResult,
    DistanceReport,
    FiniteDifferenceReport,
    InfeasiblePatternError,
    VerificationReport,
    brute_force_velocity,
    d_bounds_check,
    distance_bound_check,
    dual_merit_d,
    finite_difference_check,
    multiplier_bound,
    rate_constants,
    reference_minimum,
    run_verification,
)
from .problems import (
    FAMILIES,
    FAMILY_DEFAULTS,
    BenchmarkSpec,
    default_params,
    gen_catenary,
    gen_nu_svm,
    gen_random_qp,
    gen_trust_region,
    load_svm_samples,
    make_problem,
)
from .solver import (
    TRACE_COLUMNS,
    SolveResult,
    SolveTrace,
    TraceRow,
    flow_mode,
    line_search_step,
    multiplier_reuse_run,
    solve,
    step,
    velocity,
)

__version__ = "0.1.0"

__all__ = [
    "ActiveModel", "BenchmarkSpec", "BoundsReport", "CheckResult",
    "ConfigurationError", "ConstrainedProblem", "DegenerateConstraintError",
    "DistanceReport", "DualResult", "EvaluationError", "FAMILIES",
    "FAMILY_DEFAULTS", "FiniteDifferenceReport", "InfeasiblePatternError",
    "Metadata", "MfcqReport", "SolveResult", "SolveTrace", "SolverParams",
    "TRACE_COLUMNS", "TraceRow", "VerificationReport", "active_set",
    "assemble_from_values", "assemble_model", "brute_force_velocity",
    "check_mfcq", "d_bounds_check", "default_params", "distance_bound_check",
    "dual_merit_d", "estimate_smoothness", "finite_difference_check",
    "flow_mode", "gen_catenary", "gen_nu_svm", "gen_random_qp",
    "gen_trust_region", "line_search_step", "load_svm_samples",
    "make_problem", "multiplier_bound", "multiplier_reuse_run", "prox_cone",
    "rate_constants", "reference_minimum", "run_verification", "solve",
    "solve_dual", "sor_sweep", "step", "velocity",
]
