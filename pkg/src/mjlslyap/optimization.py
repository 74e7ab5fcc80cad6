"""Optimization-based solvers for the coupled equations.

The defect is cast as the least-squares objective
``f(X) = sum_i ||A_i X_i + X_i A_i^T + sum_j gamma_ij X_j + Y_i||_F^2``
over the tuple space.  ``f`` is an exact quadratic; its gradient is
twice the adjoint operator applied to the defect tuple and its Hessian
action is independent of the evaluation point.

Three minimizers are provided: steepest descent with Armijo
backtracking, Dai-Yuan nonlinear conjugate gradient under the (weak)
Wolfe conditions, and a trust-region method whose subproblems are
solved by truncated conjugate gradients.  All of them stop when the
gradient norm falls below ``grad_tol`` or the iteration cap is reached.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .model import SolverReport, SymTuple, tuple_inner, tuple_norm
from .operators import _raw_LplusPi, _raw_adjoint

__all__ = [
    "LineSearchParams",
    "TrustRegionParams",
    "OptStopRule",
    "LineSearchError",
    "objective",
    "gradient",
    "hessian_apply",
    "armijo_step",
    "wolfe_step",
    "tcg",
    "solve_sd",
    "solve_cg",
    "solve_tr",
]


class LineSearchError(RuntimeError):
    """A line search could not produce an acceptable step."""


@dataclass
class LineSearchParams:
    """Armijo scalars (``alpha_bar``, ``beta``, ``sigma``) and Wolfe constants.

    Defaults follow common practice: Armijo backtracking from 1 with
    halving and slope fraction 1e-4; Wolfe constants c1 = 1e-4 and
    c2 = 0.1 (the tight curvature constant customary for nonlinear
    conjugate gradient methods).
    """

    alpha_bar: float = 1.0
    beta: float = 0.5
    sigma: float = 1e-4
    c1: float = 1e-4
    c2: float = 0.1
    max_backtracks: int = 80
    max_bracket: int = 100

    def __post_init__(self):
        if self.alpha_bar <= 0.0:
            raise ValueError("alpha_bar must be positive")
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")
        if not 0.0 < self.sigma < 1.0:
            raise ValueError("sigma must lie in (0, 1)")
        if not 0.0 < self.c1 < self.c2 < 1.0:
            raise ValueError(f"need 0 < c1 < c2 < 1, got c1={self.c1}, c2={self.c2}")


@dataclass
class TrustRegionParams:
    """Trust-region radii and truncated-CG controls.

    ``delta_bar`` and ``delta0`` default to scale-aware values derived
    from the starting point (set when the solver starts).  ``tcg_tol``
    of ``None`` selects the adaptive forcing ``min(0.5, sqrt(||g||))``.
    """

    delta_bar: float | None = None
    delta0: float | None = None
    rho_prime: float = 0.1
    tcg_tol: float | None = None
    tcg_max_iter: int = 500

    def __post_init__(self):
        if self.delta_bar is not None and self.delta_bar <= 0.0:
            raise ValueError("delta_bar must be positive")
        if self.delta0 is not None and self.delta_bar is not None:
            if not 0.0 < self.delta0 < self.delta_bar:
                raise ValueError("delta0 must lie in (0, delta_bar)")
        if not 0.0 <= self.rho_prime < 0.25:
            raise ValueError("rho_prime must lie in [0, 1/4)")
        if self.tcg_max_iter < 1:
            raise ValueError("tcg_max_iter must be positive")


@dataclass
class OptStopRule:
    """Stop when ``||grad f|| < grad_tol`` or after ``max_iter`` iterations."""

    grad_tol: float = 1e-5
    max_iter: int = 30000

    def __post_init__(self):
        if self.grad_tol <= 0.0 or self.max_iter < 1:
            raise ValueError("grad_tol and max_iter must be positive")


# -- objective calculus ------------------------------------------------------


def _raw_defect(problem, x):
    return _raw_LplusPi(problem.a.blocks, problem.gamma.gamma, x) + problem.y.blocks


def _raw_objective(problem, x):
    f = _raw_defect(problem, x)
    return float(np.vdot(f, f))


def _raw_gradient(problem, x):
    f = _raw_defect(problem, x)
    g = 2.0 * _raw_adjoint(problem.a.blocks, problem.gamma.gamma, f)
    return float(np.vdot(f, f)), 0.5 * (g + g.transpose(0, 2, 1))


def _raw_hessian(problem, xi):
    f = _raw_LplusPi(problem.a.blocks, problem.gamma.gamma, xi)
    h = 2.0 * _raw_adjoint(problem.a.blocks, problem.gamma.gamma, f)
    return 0.5 * (h + h.transpose(0, 2, 1))


def _check(problem, x):
    if x.blocks.shape != (problem.N, problem.n, problem.n):
        raise ValueError(
            f"tuple shape {x.blocks.shape} does not match problem (N={problem.N}, n={problem.n})"
        )


def objective(problem, x):
    """Value ``sum_i ||defect_i(X)||_F^2``; zero exactly at a solution."""
    _check(problem, x)
    return _raw_objective(problem, x.blocks)


def gradient(problem, x):
    """Gradient tuple ``D_i = 2 (A_i^T f_i + f_i A_i + sum_j gamma_ji f_j)``.

    ``f_i`` is the defect of block ``i``; note the transposed coupling
    index in the sum.  Equals twice the adjoint operator applied to the
    defect tuple.
    """
    _check(problem, x)
    _, g = _raw_gradient(problem, x.blocks)
    return SymTuple._wrap(g)


def hessian_apply(problem, xi):
    """Hessian action on a direction tuple; independent of the base point.

    Twice the adjoint operator composed with the forward operator, hence
    symmetric and positive semidefinite on the tuple space.
    """
    _check(problem, xi)
    return SymTuple._wrap(_raw_hessian(problem, xi.blocks))


# -- line searches -----------------------------------------------------------


def _armijo(phi, f0, slope, params):
    if not slope < 0.0:
        raise LineSearchError(f"not a descent direction: <grad, d> = {slope:.3e} >= 0")
    t = params.alpha_bar
    for _ in range(params.max_backtracks + 1):
        if phi(t) <= f0 + params.sigma * t * slope:
            return t
        t *= params.beta
    raise LineSearchError(
        f"no Armijo step within {params.max_backtracks} backtracks "
        f"(slope {slope:.3e}, last t {t:.3e})"
    )


def _wolfe(phi, dphi, f0, slope, params):
    if not slope < 0.0:
        raise LineSearchError(f"not a descent direction: <grad, d> = {slope:.3e} >= 0")
    lo, hi = 0.0, math.inf
    t = params.alpha_bar
    for _ in range(params.max_bracket):
        if phi(t) > f0 + params.c1 * t * slope:
            hi = t
            t = 0.5 * (lo + hi)
        elif dphi(t) < params.c2 * slope:
            lo = t
            t = 2.0 * t if math.isinf(hi) else 0.5 * (lo + hi)
        else:
            return t
    raise LineSearchError(
        f"no Wolfe step within {params.max_bracket} bracketing steps "
        f"(bracket [{lo:.3e}, {hi:.3e}])"
    )


def armijo_step(problem, p, d, params=None):
    """Armijo backtracking step size along ``d`` starting at ``p``.

    Returns the largest ``beta^k * alpha_bar`` (smallest nonnegative
    ``k``) satisfying the sufficient-decrease inequality.  ``d`` must be
    a descent direction.
    """
    params = params or LineSearchParams()
    _check(problem, p)
    f0, g = _raw_gradient(problem, p.blocks)
    slope = float(np.vdot(g, d.blocks))
    phi = lambda t: _raw_objective(problem, p.blocks + t * d.blocks)
    return _armijo(phi, f0, slope, params)


def wolfe_step(problem, p, d, params=None):
    """Step size satisfying sufficient decrease and the curvature condition."""
    params = params or LineSearchParams()
    _check(problem, p)
    f0, g = _raw_gradient(problem, p.blocks)
    slope = float(np.vdot(g, d.blocks))
    phi = lambda t: _raw_objective(problem, p.blocks + t * d.blocks)

    def dphi(t):
        _, gt = _raw_gradient(problem, p.blocks + t * d.blocks)
        return float(np.vdot(gt, d.blocks))

    return _wolfe(phi, dphi, f0, slope, params)


# -- steepest descent --------------------------------------------------------


def solve_sd(problem, x0=None, stop=None, params=None, callback=None):
    """Steepest descent with Armijo steps.

    Starts from the zero tuple unless ``x0`` is given; the objective is
    monotonically nonincreasing.  ``callback(k, x, f, gnorm)`` is invoked
    after every accepted step.
    """
    stop = stop or OptStopRule()
    params = params or LineSearchParams()
    start = time.perf_counter()
    x = (x0.blocks.copy() if x0 is not None else np.zeros_like(problem.y.blocks))
    k = 0
    converged = False
    while True:
        f, g = _raw_gradient(problem, x)
        gnorm = float(np.linalg.norm(g))
        if callback is not None:
            callback(k, SymTuple._wrap(x.copy()), f, gnorm)
        if gnorm < stop.grad_tol:
            converged = True
            break
        if k >= stop.max_iter:
            break
        d = -g
        slope = -gnorm * gnorm
        t = _armijo(lambda s: _raw_objective(problem, x + s * d), f, slope, params)
        x = x + t * d
        x = 0.5 * (x + x.transpose(0, 2, 1))
        k += 1
    report = SolverReport(
        method="sd",
        iterations=float(k),
        residual=math.sqrt(max(_raw_objective(problem, x), 0.0)),
        wall_time_s=time.perf_counter() - start,
        converged=converged,
        tol=stop.grad_tol,
    )
    return SymTuple._wrap(x), report


# -- Dai-Yuan conjugate gradient ---------------------------------------------

_DY_DENOM_FLOOR = 1e-300


def solve_cg(problem, x0=None, stop=None, params=None, callback=None):
    """Nonlinear conjugate gradient with the Dai-Yuan momentum parameter.

    The first direction is the negative gradient; afterwards
    ``d_k = -g_k + beta_k d_{k-1}`` with
    ``beta_k = ||g_k||^2 / <d_{k-1}, g_k - g_{k-1}>``.  Steps satisfy the
    Wolfe conditions, which keeps every ``d_k`` a descent direction.
    The direction is reset to ``-g`` if the momentum denominator
    degenerates.
    """
    stop = stop or OptStopRule()
    params = params or LineSearchParams()
    start = time.perf_counter()
    x = (x0.blocks.copy() if x0 is not None else np.zeros_like(problem.y.blocks))
    f, g = _raw_gradient(problem, x)
    gnorm = float(np.linalg.norm(g))
    d = -g
    k = 0
    converged = gnorm < stop.grad_tol
    if callback is not None:
        callback(k, SymTuple._wrap(x.copy()), f, gnorm, SymTuple._wrap(d.copy()))
    while not converged and k < stop.max_iter:
        slope = float(np.vdot(g, d))
        if slope >= 0.0:
            # numerical safeguard; Dai-Yuan with Wolfe steps keeps this negative
            d = -g
            slope = -gnorm * gnorm
        phi = lambda s: _raw_objective(problem, x + s * d)

        def dphi(s):
            _, gs = _raw_gradient(problem, x + s * d)
            return float(np.vdot(gs, d))

        t = _wolfe(phi, dphi, f, slope, params)
        x = x + t * d
        x = 0.5 * (x + x.transpose(0, 2, 1))
        f, g_new = _raw_gradient(problem, x)
        gnorm = float(np.linalg.norm(g_new))
        k += 1
        denom = float(np.vdot(d, g_new - g))
        if abs(denom) < _DY_DENOM_FLOOR:
            d = -g_new
        else:
            beta = gnorm * gnorm / denom
            d = -g_new + beta * d
        g = g_new
        if callback is not None:
            callback(k, SymTuple._wrap(x.copy()), f, gnorm, SymTuple._wrap(d.copy()))
        converged = gnorm < stop.grad_tol
    report = SolverReport(
        method="cg",
        iterations=float(k),
        residual=math.sqrt(max(f, 0.0)),
        wall_time_s=time.perf_counter() - start,
        converged=converged,
        tol=stop.grad_tol,
    )
    return SymTuple._wrap(x), report


# -- trust region ------------------------------------------------------------


def _boundary_step(d, p, delta):
    """Positive sigma with ||d + sigma p|| = delta."""
    dd = float(np.vdot(d, d))
    dp = float(np.vdot(d, p))
    pp = float(np.vdot(p, p))
    disc = dp * dp + pp * (delta * delta - dd)
    return (-dp + math.sqrt(max(disc, 0.0))) / pp


def _tcg_raw(g, hess, delta, tol, max_iter):
    """Steihaug-Toint truncated CG on the quadratic model.

    Stops at the trust-region boundary, on negative curvature, or when
    the model gradient drops below ``tol * ||g||``.
    """
    d = np.zeros_like(g)
    gnorm0 = float(np.linalg.norm(g))
    if gnorm0 == 0.0:
        return d
    r = g.copy()
    p = -g
    rr = gnorm0 * gnorm0
    for _ in range(max_iter):
        hp = hess(p)
        php = float(np.vdot(p, hp))
        if php <= 0.0:
            return d + _boundary_step(d, p, delta) * p
        alpha = rr / php
        d_next = d + alpha * p
        if float(np.linalg.norm(d_next)) >= delta:
            return d + _boundary_step(d, p, delta) * p
        d = d_next
        r = r + alpha * hp
        rr_next = float(np.vdot(r, r))
        if math.sqrt(rr_next) <= tol * gnorm0:
            return d
        p = -r + (rr_next / rr) * p
        rr = rr_next
    return d


def tcg(g, hess_op, delta, tol=None, max_iter=500):
    """Truncated-CG minimizer of the model ``<g, d> + 0.5 <H d, d>`` in a ball.

    Parameters
    ----------
    g : SymTuple
        Model gradient at the center.
    hess_op : callable
        Hessian action on a :class:`SymTuple`.
    delta : float
        Trust-region radius.
    tol : float, optional
        Relative tolerance on the model gradient for interior
        convergence; defaults to ``min(0.5, sqrt(||g||))``.
    """
    if delta <= 0.0:
        raise ValueError("delta must be positive")
    gnorm = g.norm()
    if tol is None:
        tol = min(0.5, math.sqrt(gnorm))
    raw_hess = lambda z: hess_op(SymTuple._wrap(z)).blocks
    return SymTuple._wrap(_tcg_raw(g.blocks, raw_hess, delta, tol, max_iter))


def solve_tr(problem, x0=None, stop=None, params=None, callback=None):
    """Trust-region method with truncated-CG subproblem solves.

    Radius update with the usual 1/4 and 3/4 thresholds: shrink to a
    quarter on poor agreement, double (capped at ``delta_bar``) when the
    model fits well and the step hit the boundary.  A step is accepted
    when the agreement ratio exceeds ``rho_prime``.
    ``callback(k, x, f, gnorm, step_norm, delta, accepted)`` fires once
    per outer iteration.
    """
    stop = stop or OptStopRule()
    params = params or TrustRegionParams()
    start = time.perf_counter()
    x = (x0.blocks.copy() if x0 is not None else np.zeros_like(problem.y.blocks))
    f, g = _raw_gradient(problem, x)
    gnorm = float(np.linalg.norm(g))
    xnorm = float(np.linalg.norm(x))
    delta_bar = params.delta_bar if params.delta_bar is not None else 10.0 * max(1.0, xnorm + gnorm)
    delta = params.delta0 if params.delta0 is not None else delta_bar / 8.0
    if not 0.0 < delta <= delta_bar:
        raise ValueError(f"delta0={delta} incompatible with delta_bar={delta_bar}")
    hess = lambda z: _raw_hessian(problem, z)
    k = 0
    converged = gnorm < stop.grad_tol
    while not converged and k < stop.max_iter:
        tcg_tol = params.tcg_tol if params.tcg_tol is not None else min(0.5, math.sqrt(gnorm))
        d = _tcg_raw(g, hess, delta, tcg_tol, params.tcg_max_iter)
        dnorm = float(np.linalg.norm(d))
        hd = hess(d)
        model_decrease = -(float(np.vdot(g, d)) + 0.5 * float(np.vdot(d, hd)))
        f_new = _raw_objective(problem, x + d)
        rho = (f - f_new) / model_decrease if model_decrease > 0.0 else -math.inf
        if rho < 0.25:
            delta = 0.25 * delta
        elif rho > 0.75 and dnorm >= delta * (1.0 - 1e-12):
            delta = min(2.0 * delta, delta_bar)
        accepted = rho > params.rho_prime
        if accepted:
            x = x + d
            x = 0.5 * (x + x.transpose(0, 2, 1))
            f, g = _raw_gradient(problem, x)
            gnorm = float(np.linalg.norm(g))
        k += 1
        if callback is not None:
            callback(k, SymTuple._wrap(x.copy()), f, gnorm, dnorm, delta, accepted)
        converged = gnorm < stop.grad_tol
    report = SolverReport(
        method="tr",
        iterations=float(k),
        residual=math.sqrt(max(f, 0.0)),
        wall_time_s=time.perf_counter() - start,
        converged=converged,
        tol=stop.grad_tol,
    )
    return SymTuple._wrap(x), report
