"""Command-line front end: generate problems, run solvers, certify
stability, and reproduce the benchmark tables as CSV.

Exit codes: 0 converged/stable, 2 not converged, 3 unstable or
indeterminate, 4 input error.
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import generators
from .fixedpoint import (
    FixedPointConfig,
    KrylovBreakdownError,
    solve_fixedpoint,
)
from .linalg import SingularLyapunovError
from .model import (
    ProblemFormatError,
    SolverReport,
    emit_problem,
    emit_solution,
    error_norm,
    parse_problem,
    parse_solution,
    residual_norm,
)
from .operators import solve_direct
from .optimization import LineSearchError, OptStopRule, solve_cg, solve_sd, solve_tr
from .stability import IndeterminateStabilityError, is_ms_stable

EXIT_OK = 0
EXIT_NOT_CONVERGED = 2
EXIT_UNSTABLE = 3
EXIT_INPUT = 4

CSV_HEADER = "method,n,N,time_s,iterations,residual,error,converged,seed"

FIXED_POINT_METHODS = ("jacobi", "gauss-seidel", "krylov-gs", "krylov-jacobi")
OPT_METHODS = ("sd", "cg", "tr")
ALL_METHODS = FIXED_POINT_METHODS + OPT_METHODS + ("direct",)


def run_method(problem, method, tol=1e-9, max_iter=1000, grad_tol=1e-5, opt_max_iter=30000):
    """Run one solver on one problem, returning ``(x, SolverReport)``."""
    if method in FIXED_POINT_METHODS:
        cfg = FixedPointConfig(tol=tol, max_iter=max_iter, method=method)
        return solve_fixedpoint(problem, cfg)
    if method in OPT_METHODS:
        stop = OptStopRule(grad_tol=grad_tol, max_iter=opt_max_iter)
        solver = {"sd": solve_sd, "cg": solve_cg, "tr": solve_tr}[method]
        return solver(problem, stop=stop)
    if method == "direct":
        start = time.perf_counter()
        x = solve_direct(problem)
        elapsed = time.perf_counter() - start
        report = SolverReport(
            method="direct",
            iterations=0.0,
            residual=residual_norm(problem, x),
            wall_time_s=elapsed,
            converged=True,
            tol=None,
        )
        return x, report
    raise ValueError(f"unknown method {method!r}, expected one of {ALL_METHODS}")


def _csv_row(report, n, N, seed="", error=None):
    err = error if error is not None else report.error
    return ",".join(
        [
            report.method,
            str(n),
            str(N),
            f"{report.wall_time_s:.4g}",
            f"{report.iterations:.1f}",
            f"{report.residual:.6e}",
            "" if err is None else f"{err:.6e}",
            str(report.converged).lower(),
            str(seed),
        ]
    )


def _failed_row(method, n, N, seed, reason):
    return f"{method},{n},{N},nan,nan,nan,,false,{seed}  # {reason}"


def _write_text(path, text):
    if path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _print_certificate(cert, out=sys.stdout):
    absc = " ".join(f"{a:.6g}" for a in cert.modewise_abscissae)
    print(f"modewise abscissae: {absc}", file=out)
    print(f"rho(L^-1 Pi): {cert.rho_LinvPi:.8g}  ({cert.method})", file=out)
    print(f"verdict: {'stable' if cert.stable else 'unstable'}", file=out)


# -- generate ----------------------------------------------------------------


def cmd_generate(args):
    kind = args.kind
    if kind == "csma":
        cfg = generators.CsmaConfig(
            nu=args.nu, tau=args.tau, p_err_good=args.p_err_good,
            p_err_stay=args.p_err_stay, a=args.rate_scale,
        )
        theta = generators.csma_theta(cfg)
        text = "\n".join(",".join(format(v, ".17g") for v in row) for row in theta) + "\n"
        _write_text(args.out, text)
        print(f"wrote {theta.shape[0]}x{theta.shape[1]} transition matrix to {args.out}")
        print("states: " + " ".join(generators.csma_state_labels(cfg)))
        return EXIT_OK
    if kind == "cart":
        system = generators.cart_system(
            nu=args.nu, tau=args.tau, mass=args.mass, gravity=args.gravity,
            friction=args.friction, a=args.rate_scale, mu=args.mu,
        )
        _write_text(args.out, generators.emit_system(system, comment=f"cart system nu={args.nu}"))
        print(f"wrote system file to {args.out}: n={system.n}, N={system.N}")
        cert = is_ms_stable(generators.observability_problem(system))
        _print_certificate(cert)
        return EXIT_OK if cert.stable else EXIT_UNSTABLE

    if kind == "known":
        problem, xstar = generators.known_example()
        if args.solution_out:
            _write_text(args.solution_out, emit_solution(xstar, comment="known solution"))
    elif kind == "random-spd":
        problem = generators.random_spd_problem(args.n, args.seed)
    elif kind == "random-stable":
        problem = generators.random_stable_problem(
            args.n, args.modes, args.seed, target_rho=args.target_rho
        )
    else:
        raise ValueError(f"unknown kind {kind!r}")
    _write_text(args.out, emit_problem(problem, comment=f"generated: {kind}"))
    print(f"wrote problem file to {args.out}: n={problem.n}, N={problem.N}")
    cert = is_ms_stable(problem)
    _print_certificate(cert)
    return EXIT_OK if cert.stable else EXIT_UNSTABLE


# -- solve -------------------------------------------------------------------


def cmd_solve(args):
    try:
        with open(args.problem) as fh:
            problem = parse_problem(fh.read())
    except (OSError, ProblemFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        cert = is_ms_stable(problem)
    except IndeterminateStabilityError as exc:
        if args.require_stable:
            print(f"error: stability indeterminate: {exc}", file=sys.stderr)
            return EXIT_UNSTABLE
        cert = None
        print(f"warning: stability indeterminate: {exc}", file=sys.stderr)
    if cert is not None and not cert.stable:
        if args.require_stable:
            print("error: problem is not mean-square stable", file=sys.stderr)
            _print_certificate(cert, out=sys.stderr)
            return EXIT_UNSTABLE
        print("warning: problem is not mean-square stable, attempting anyway", file=sys.stderr)

    reference = None
    if args.reference:
        try:
            with open(args.reference) as fh:
                reference = parse_solution(fh.read())
        except (OSError, ProblemFormatError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INPUT
    try:
        x, report = run_method(
            problem, args.method, tol=args.tol, max_iter=args.max_iter,
            grad_tol=args.grad_tol, opt_max_iter=args.opt_max_iter,
        )
    except (SingularLyapunovError, KrylovBreakdownError, LineSearchError) as exc:
        print(f"error: solver failed: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    error = error_norm(x, reference) if reference is not None else None
    print(CSV_HEADER)
    print(_csv_row(report, problem.n, problem.N, error=error))
    if args.solution_out:
        _write_text(args.solution_out, emit_solution(x, comment=f"solved by {args.method}"))
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


# -- stability ---------------------------------------------------------------


def cmd_stability(args):
    try:
        with open(args.problem) as fh:
            problem = parse_problem(fh.read())
    except (OSError, ProblemFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        cert = is_ms_stable(problem)
    except IndeterminateStabilityError as exc:
        print(f"verdict: indeterminate ({exc})")
        return EXIT_UNSTABLE
    _print_certificate(cert)
    return EXIT_OK if cert.stable else EXIT_UNSTABLE


# -- bench -------------------------------------------------------------------


@dataclass
class BenchSpec:
    """One benchmark run: which experiment, at which sizes/seeds/methods."""

    experiment: str
    sizes: list = field(default_factory=list)
    modes: list = field(default_factory=list)
    seeds: list = field(default_factory=lambda: [0])
    methods: list = field(default_factory=list)
    tol: float = 1e-9
    grad_tol: float = 1e-5
    opt_max_iter: int = 30000
    max_iter: int = 1000
    target_rho: float = 0.9
    nu_list: list = field(default_factory=lambda: [3, 5])
    rate_scale: float = 1.0
    kind: str = "random-stable"

    def __post_init__(self):
        if self.experiment not in ("table1", "table2", "table3", "table6", "custom"):
            raise ValueError(f"unknown experiment {self.experiment!r}")


def _bench_cell(rows, problem, method, spec, n, N, seed, xstar=None):
    try:
        x, report = run_method(
            problem, method, tol=spec.tol, max_iter=spec.max_iter,
            grad_tol=spec.grad_tol, opt_max_iter=spec.opt_max_iter,
        )
    except (SingularLyapunovError, KrylovBreakdownError, LineSearchError) as exc:
        rows.append(_failed_row(method, n, N, seed, f"{type(exc).__name__}: {exc}"))
        return False
    error = error_norm(x, xstar) if xstar is not None else None
    rows.append(_csv_row(report, n, N, seed=seed, error=error))
    return report.converged


def run_bench(spec):
    """Execute a benchmark spec; returns (csv_text, all_converged)."""
    rows = [CSV_HEADER]
    ok = True
    if spec.experiment == "table1":
        problem, xstar = generators.known_example()
        methods = spec.methods or ["krylov-gs", "sd", "cg", "tr"]
        for method in methods:
            ok &= _bench_cell(rows, problem, method, spec, problem.n, problem.N, "", xstar=xstar)
    elif spec.experiment == "table2":
        sizes = spec.sizes or [100, 300]
        for n in sizes:
            methods = spec.methods or (["krylov-gs", "tr"] if n <= 100 else ["krylov-gs"])
            for seed in spec.seeds:
                problem = generators.random_spd_problem(n, seed)
                for method in methods:
                    ok &= _bench_cell(rows, problem, method, spec, n, 2, seed)
    elif spec.experiment == "table3":
        sizes = spec.sizes or [200]
        modes = spec.modes or [20]
        methods = spec.methods or ["krylov-gs"]
        for n, N in zip(sizes, modes):
            for seed in spec.seeds:
                problem = generators.random_stable_problem(n, N, seed, target_rho=spec.target_rho)
                for method in methods:
                    ok &= _bench_cell(rows, problem, method, spec, n, N, seed)
    elif spec.experiment == "table6":
        methods = spec.methods or ["krylov-gs"]
        for nu in spec.nu_list:
            system = generators.cart_system(nu=nu, a=spec.rate_scale)
            problem = generators.observability_problem(system)
            for method in methods:
                ok &= _bench_cell(rows, problem, method, spec, problem.n, problem.N, "")
    else:  # custom
        methods = spec.methods or ["krylov-gs"]
        sizes = spec.sizes or [10]
        modes = spec.modes or [2] * len(sizes)
        for n, N in zip(sizes, modes):
            for seed in spec.seeds:
                if spec.kind == "random-spd":
                    problem = generators.random_spd_problem(n, seed)
                    N = 2
                elif spec.kind == "known":
                    problem, _ = generators.known_example()
                    n, N = problem.n, problem.N
                else:
                    problem = generators.random_stable_problem(
                        n, N, seed, target_rho=spec.target_rho
                    )
                for method in methods:
                    ok &= _bench_cell(rows, problem, method, spec, n, N, seed)
    return "\n".join(rows) + "\n", ok


def cmd_bench(args):
    spec = BenchSpec(
        experiment=args.experiment,
        sizes=args.sizes or [],
        modes=args.modes or [],
        seeds=args.seeds if args.seeds is not None else [0],
        methods=args.methods or [],
        tol=args.tol,
        grad_tol=args.grad_tol,
        opt_max_iter=args.opt_max_iter,
        max_iter=args.max_iter,
        target_rho=args.target_rho,
        nu_list=args.nu_list or [3, 5],
        rate_scale=args.rate_scale,
        kind=args.kind,
    )
    csv_text, ok = run_bench(spec)
    _write_text(args.out, csv_text)
    if args.out != "-":
        print(f"wrote {csv_text.count(chr(10)) - 1} rows to {args.out}")
    return EXIT_OK if ok else EXIT_NOT_CONVERGED


# -- argument parsing --------------------------------------------------------


def _int_list(text):
    return [int(v) for v in text.split(",") if v]


def _str_list(text):
    return [v for v in text.split(",") if v]


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mjlslyap",
        description="Solvers and generators for coupled Lyapunov equations of "
        "Markov jump linear systems.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate a problem/system file")
    gen.add_argument("kind", choices=["known", "random-spd", "random-stable", "csma", "cart"])
    gen.add_argument("--out", required=True, help="output path ('-' for stdout)")
    gen.add_argument("--solution-out", help="also write the known solution (kind=known)")
    gen.add_argument("--n", type=int, default=10, help="state dimension")
    gen.add_argument("--modes", type=int, default=2, help="mode count (random-stable)")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--target-rho", type=float, default=0.5)
    gen.add_argument("--nu", type=int, default=2, help="station/cart count (csma, cart)")
    gen.add_argument("--tau", type=int, default=3, help="transmission memory length")
    gen.add_argument("--p-err-good", type=float, default=0.03)
    gen.add_argument("--p-err-stay", type=float, default=0.75)
    gen.add_argument("--rate-scale", type=float, default=1.0,
                     help="mean time per transmission (rate matrix scaling)")
    gen.add_argument("--mass", type=float, default=1.0)
    gen.add_argument("--gravity", type=float, default=9.81)
    gen.add_argument("--friction", type=float, default=0.1)
    gen.add_argument("--mu", default="stationary", help="'stationary' or 'uniform'")
    gen.set_defaults(func=cmd_generate)

    sol = sub.add_parser("solve", help="solve a problem file")
    sol.add_argument("problem", help="problem file path")
    sol.add_argument("--method", default="krylov-gs", choices=ALL_METHODS)
    sol.add_argument("--tol", type=float, default=1e-9,
                     help="residual tolerance (fixed-point/Krylov methods)")
    sol.add_argument("--max-iter", type=int, default=1000)
    sol.add_argument("--grad-tol", type=float, default=1e-5,
                     help="gradient tolerance (sd/cg/tr)")
    sol.add_argument("--opt-max-iter", type=int, default=30000,
                     help="iteration cap (sd/cg/tr)")
    sol.add_argument("--require-stable", action="store_true")
    sol.add_argument("--reference", help="known solution file for the error column")
    sol.add_argument("--solution-out", help="write the computed solution here")
    sol.set_defaults(func=cmd_solve)

    stab = sub.add_parser("stability", help="certify mean-square stability")
    stab.add_argument("problem", help="problem file path")
    stab.set_defaults(func=cmd_stability)

    ben = sub.add_parser("bench", help="run a benchmark table")
    ben.add_argument("experiment", choices=["table1", "table2", "table3", "table6", "custom"])
    ben.add_argument("--out", default="-", help="CSV output path ('-' for stdout)")
    ben.add_argument("--sizes", type=_int_list, help="comma-separated state dimensions")
    ben.add_argument("--modes", type=_int_list, help="comma-separated mode counts")
    ben.add_argument("--seeds", type=_int_list, help="comma-separated seeds")
    ben.add_argument("--methods", type=_str_list, help="comma-separated methods")
    ben.add_argument("--tol", type=float, default=1e-9)
    ben.add_argument("--grad-tol", type=float, default=1e-5)
    ben.add_argument("--opt-max-iter", type=int, default=30000)
    ben.add_argument("--max-iter", type=int, default=1000)
    ben.add_argument("--target-rho", type=float, default=0.9)
    ben.add_argument("--nu-list", type=_int_list, help="cart counts for table6")
    ben.add_argument("--rate-scale", type=float, default=1.0)
    ben.add_argument("--kind", default="random-stable",
                     choices=["known", "random-spd", "random-stable"])
    ben.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ProblemFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
