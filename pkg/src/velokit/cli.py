"""Command-line front end: configure, run, trace, and verify solves.

Problem files are JSON in one of two shapes: a named benchmark family
{"family", "n", "seed", "options"?} or an explicit affine QP with matrices in
triplet form ({"n", "Q", "c"?, "f0"?, "A_ineq"?, "b_ineq"?, "A_eq"?, "b_eq"?,
"x0"?, "metadata"?}). Arbitrary nonlinear constraints have no safe file
representation and stay library-API-only.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse

from .core import ConfigurationError, ConstrainedProblem, Metadata, SolverParams
from .oracle import run_verification
from .problems import default_params, make_problem
from .solver import solve

PARAM_KEYS = ("T", "alphaT", "eps_g", "omega", "TOL", "MAXITER",
              "MAXITER_PROX", "TOL_PROX")


@dataclass
class RunConfig:
    """One CLI run: where the problem comes from, how to solve it, what to write."""

    problem: dict
    params: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    verify: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        _reject_unknown(data, {"problem", "params", "outputs", "verify"}, "config")
        if "problem" not in data:
            raise ConfigurationError("config is missing the required key 'problem'")
        params = dict(data.get("params", {}))
        _reject_unknown(params, set(PARAM_KEYS), "config.params")
        outputs = dict(data.get("outputs", {}))
        _reject_unknown(outputs, {"trace_csv", "result_json"}, "config.outputs")
        verify = dict(data.get("verify", {}))
        _reject_unknown(verify, {"oracle_check", "invariant_suite", "d_trace"},
                        "config.verify")
        return cls(problem=data["problem"], params=params, outputs=outputs,
                   verify=verify)


def _reject_unknown(data: dict, allowed: set, where: str) -> None:
    if not isinstance(data, dict):
        raise ConfigurationError(f"{where} must be a JSON object")
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigurationError(f"unknown {where} keys: {', '.join(unknown)}")


def _triplets_to_dense(entries, shape, name: str) -> np.ndarray:
    out = np.zeros(shape)
    for entry in entries:
        if len(entry) != 3:
            raise ConfigurationError(
                f"{name} entries must be [row, col, value] triplets, got {entry!r}")
        i, j, v = int(entry[0]), int(entry[1]), float(entry[2])
        if not (0 <= i < shape[0] and 0 <= j < shape[1]):
            raise ConfigurationError(
                f"{name} index ({i}, {j}) outside shape {shape}")
        out[i, j] += v
    return out


def _affine_qp_from_dict(data: dict) -> ConstrainedProblem:
    allowed = {"n", "Q", "c", "f0", "A_ineq", "b_ineq", "A_eq", "b_eq", "x0",
               "metadata"}
    _reject_unknown(data, allowed, "problem")
    if "n" not in data:
        raise ConfigurationError("problem is missing the required key 'n'")
    n = int(data["n"])
    if n <= 0:
        raise ConfigurationError(f"problem key 'n' must be positive, got {n}")

    Q = _triplets_to_dense(data.get("Q", []), (n, n), "Q")
    Q = 0.5 * (Q + Q.T)
    c = np.asarray(data.get("c", np.zeros(n)), dtype=float)
    if c.shape != (n,):
        raise ConfigurationError(f"problem key 'c' must have length {n}")
    f0 = float(data.get("f0", 0.0))

    def affine_block(a_key, b_key):
        if a_key not in data and b_key not in data:
            return None, None, 0
        b = np.asarray(data.get(b_key, []), dtype=float).ravel()
        A = _triplets_to_dense(data.get(a_key, []), (b.size, n), a_key)
        return A, b, b.size

    A1, b1, m1 = affine_block("A_ineq", "b_ineq")
    A2, b2, m2 = affine_block("A_eq", "b_eq")
    x0 = np.asarray(data.get("x0", np.zeros(n)), dtype=float)
    if x0.shape != (n,):
        raise ConfigurationError(f"problem key 'x0' must have length {n}")

    md = dict(data.get("metadata", {}))
    _reject_unknown(md, {"L", "mu", "L_l", "objective_convex",
                         "feasible_set_convex"}, "problem.metadata")
    metadata = Metadata(**md)

    kwargs = {}
    if m1:
        A1T = sparse.csc_matrix(A1.T)
        kwargs.update(ineq=lambda x: A1 @ x + b1, ineq_grad=lambda x: A1T)
    if m2:
        A2T = sparse.csc_matrix(A2.T)
        kwargs.update(eq=lambda x: A2 @ x + b2, eq_grad=lambda x: A2T)
    return ConstrainedProblem(
        dim=n, n_ineq=m1, n_eq=m2,
        objective=lambda x: 0.5 * float(x @ (Q @ x)) + float(c @ x) + f0,
        objective_grad=lambda x: Q @ x + c,
        metadata=metadata, x0=x0, family=None, **kwargs)


def load_problem(spec) -> ConstrainedProblem:
    """Build a problem from an inline dict or a path to a problem JSON file."""
    if isinstance(spec, str):
        with open(spec) as fh:
            try:
                spec = json.load(fh)
            except json.JSONDecodeError as e:
                raise ConfigurationError(f"problem file {fh.name}: {e}") from None
    if not isinstance(spec, dict):
        raise ConfigurationError("problem must be a JSON object")
    if "family" in spec:
        _reject_unknown(spec, {"family", "n", "seed", "options"}, "problem")
        if "n" not in spec:
            raise ConfigurationError("problem is missing the required key 'n'")
        options = dict(spec.get("options", {}))
        try:
            return make_problem(spec["family"], int(spec["n"]),
                                seed=int(spec.get("seed", 0)), **options)
        except TypeError as e:
            raise ConfigurationError(f"problem options: {e}") from None
        except ValueError as e:
            raise ConfigurationError(str(e)) from None
    return _affine_qp_from_dict(spec)


def _params_for(p: ConstrainedProblem, overrides: dict) -> SolverParams:
    clean = {k: v for k, v in overrides.items() if v is not None}
    _reject_unknown(clean, set(PARAM_KEYS), "params")
    return default_params(p, **clean)


def _write_result_json(path: str, result, wall_ms: float) -> None:
    payload = {
        "x_final": [float(v) for v in result.x_final],
        "f_final": float(result.f_final),
        "kkt_residual": float(result.kkt_residual),
        "iterations": int(result.iterations),
        "status": result.status,
        "wall_time_ms": float(wall_ms),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


_EXIT = {"converged": 0, "maxiter": 2, "error": 1}


def cmd_solve(config: RunConfig) -> int:
    p = load_problem(config.problem)
    params = _params_for(p, config.params)
    want_trace = bool(config.outputs.get("trace_csv"))
    want_d = bool(config.verify.get("d_trace"))
    t0 = time.perf_counter()
    result = solve(p, p.x0 if p.x0 is not None else np.zeros(p.dim), params,
                   record_trace=want_trace or want_d, record_d=want_d)
    wall_ms = 1e3 * (time.perf_counter() - t0)
    if config.outputs.get("result_json"):
        _write_result_json(config.outputs["result_json"], result, wall_ms)
    if want_trace:
        result.trace.to_csv(config.outputs["trace_csv"])
    print(f"status={result.status} iterations={result.iterations} "
          f"f_final={result.f_final:.12g} kkt_residual={result.kkt_residual:.6e} "
          f"wall_time_ms={wall_ms:.3f}")
    return _EXIT[result.status]


def _bench_workers() -> int:
    raw = os.environ.get("VELOKIT_THREADS", "1")
    try:
        workers = int(raw)
    except ValueError:
        raise ConfigurationError(
            f"VELOKIT_THREADS must be a positive integer, got {raw!r}") from None
    if workers < 1:
        raise ConfigurationError(
            f"VELOKIT_THREADS must be a positive integer, got {raw!r}")
    return workers


BENCH_COLUMNS = ("n", "seed", "wall_time_ms", "iterations",
                 "max_inner_iterations", "active_fraction")


def cmd_bench(family: str, sizes, seeds, params_overrides: dict,
              out: Optional[str] = None) -> int:
    jobs = [(n, seed) for n in sorted(set(sizes)) for seed in sorted(set(seeds))]

    def one(job):
        n, seed = job
        p = make_problem(family, n, seed=seed)
        params = _params_for(p, params_overrides)
        t0 = time.perf_counter()
        result = solve(p, p.x0, params)
        wall_ms = 1e3 * (time.perf_counter() - t0)
        frac = (result.active_final.size / p.n_ineq) if p.n_ineq else 0.0
        return (n, seed, wall_ms, result.iterations,
                result.max_inner_iterations, frac, result.status)

    workers = min(_bench_workers(), len(jobs)) if jobs else 1
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = {row[:2]: row for row in pool.map(one, jobs)}
    else:
        rows = {job: one(job) for job in jobs}

    lines = [",".join(BENCH_COLUMNS)]
    statuses = set()
    for job in jobs:
        n, seed, wall_ms, iters, inner, frac, status = rows[job]
        statuses.add(status)
        lines.append(f"{n},{seed},{wall_ms:.3f},{iters},{inner},{frac!r}")
    table = "\n".join(lines) + "\n"
    if out:
        with open(out, "w") as fh:
            fh.write(table)
    else:
        sys.stdout.write(table)
    if "error" in statuses:
        return 1
    return 2 if "maxiter" in statuses else 0


def cmd_verify(config: RunConfig, json_out: Optional[str] = None) -> int:
    p = load_problem(config.problem)
    params = _params_for(p, config.params)
    report = run_verification(
        p, params,
        oracle_check=bool(config.verify.get("oracle_check", True)),
        invariant_suite=bool(config.verify.get("invariant_suite", True)))
    for check in report.checks:
        print(f"{check.status.upper():<4} {check.name}: {check.detail}")
    print(f"verification {'ok' if report.ok else 'FAILED'}")
    if json_out:
        payload = {"ok": report.ok,
                   "checks": [{"name": c.name, "status": c.status,
                               "detail": c.detail} for c in report.checks]}
        with open(json_out, "w") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
    return 0 if report.ok else 1


def _add_param_flags(parser: argparse.ArgumentParser) -> None:
    names = dict(T=float, alphaT=float, eps_g=float, omega=float, TOL=float,
                 MAXITER=int, MAXITER_PROX=int, TOL_PROX=float)
    for name, typ in names.items():
        parser.add_argument(f"--{name}", type=typ, default=None,
                            help=f"override the {name} default")


def _collect_params(args) -> dict:
    return {k: getattr(args, k) for k in PARAM_KEYS if getattr(args, k) is not None}


def _config_from_args(args) -> RunConfig:
    if getattr(args, "config", None):
        with open(args.config) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as e:
                raise ConfigurationError(f"config file {fh.name}: {e}") from None
        config = RunConfig.from_dict(data)
    else:
        if not getattr(args, "problem", None):
            raise ConfigurationError("either --problem or --config is required")
        config = RunConfig(problem=args.problem)
    config.params.update(_collect_params(args))
    if getattr(args, "trace", None):
        config.outputs["trace_csv"] = args.trace
    if getattr(args, "result", None):
        config.outputs["result_json"] = args.result
    if getattr(args, "d_trace", False):
        config.verify["d_trace"] = True
    return config


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="velokit",
        description="Constrained gradient descent with velocity-level constraints")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("solve", help="run one solve and persist results")
    sp.add_argument("--problem", help="path to a problem JSON file")
    sp.add_argument("--config", help="path to a full run-config JSON file")
    sp.add_argument("--result", help="write result JSON here")
    sp.add_argument("--trace", help="write trace CSV here")
    sp.add_argument("--d-trace", dest="d_trace", action="store_true",
                    help="record the dual merit d in the trace")
    _add_param_flags(sp)

    bp = sub.add_parser("bench", help="run a family over sizes x seeds")
    bp.add_argument("--family", required=True)
    bp.add_argument("--sizes", required=True,
                    help="comma-separated problem sizes, e.g. 100,200,400")
    bp.add_argument("--seeds", default="0",
                    help="comma-separated seeds, e.g. 0,1,2")
    bp.add_argument("--out", help="write the CSV table here (default stdout)")
    _add_param_flags(bp)

    vp = sub.add_parser("verify", help="cross-check a desk-scale instance")
    vp.add_argument("--problem", help="path to a problem JSON file")
    vp.add_argument("--config", help="path to a full run-config JSON file")
    vp.add_argument("--json", dest="json_out", help="write the report JSON here")
    vp.add_argument("--no-oracle-check", action="store_true",
                    help="skip the gradient/dual oracle comparisons")
    vp.add_argument("--no-invariant-suite", action="store_true",
                    help="skip the trajectory invariant checks")
    _add_param_flags(vp)

    args = parser.parse_args(argv)
    try:
        if args.command == "solve":
            return cmd_solve(_config_from_args(args))
        if args.command == "bench":
            try:
                sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
                seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
            except ValueError:
                raise ConfigurationError(
                    "--sizes and --seeds must be comma-separated integers") from None
            return cmd_bench(args.family, sizes, seeds, _collect_params(args),
                             out=args.out)
        config = _config_from_args(args)
        if args.no_oracle_check:
            config.verify["oracle_check"] = False
        if args.no_invariant_suite:
            config.verify["invariant_suite"] = False
        return cmd_verify(config, json_out=args.json_out)
    except (ConfigurationError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
