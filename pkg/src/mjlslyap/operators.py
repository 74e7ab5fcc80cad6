"""Structured linear operators on the tuple space.

``L`` acts blockwise as the Lyapunov operator of the shifted modes
``A_i + (gamma_ii/2) I``, ``Pi`` mixes the blocks through the
off-diagonal coupling entries, and their sum carries the coupled
equations: a solution satisfies ``(L + Pi)(X) = -Y``.  On top of these
sit the Gauss-Seidel sweep ``T_GS``, its Jacobi counterpart
``T_J = -L^{-1} Pi``, the matching right-hand-side transforms, and the
explicit Kronecker assembly used as the dense oracle.

Public functions take and return :class:`SymTuple`; the ``_raw``
variants work on plain ``(N, n, n)`` arrays and are what the solver
loops call.
"""

from __future__ import annotations

import numpy as np

from .linalg import lyap_solve, real_schur
from .model import DimensionError, MJLSProblem, SymTuple

__all__ = [
    "ShiftedModes",
    "apply_L",
    "apply_Pi",
    "apply_LplusPi",
    "apply_LplusPi_adjoint",
    "apply_Linv",
    "apply_T_GS",
    "apply_T_J",
    "precondition_rhs",
    "assemble_kron",
    "solve_direct",
    "vec_tuple",
    "unvec_tuple",
]

# Dense assembly guard: refuse Kronecker matrices beyond this dimension.
KRON_GUARD = 20000


class ShiftedModes:
    """Per-mode shifted matrices ``A_i + (gamma_ii/2) I`` with cached Schur forms.

    The Schur forms are computed once; every later Lyapunov solve with
    the same mode costs a quasi-triangular back-substitution plus dense
    multiplies.  Instances are immutable after construction and safe to
    share.
    """

    __slots__ = ("shifted", "schur", "gamma_off")

    def __init__(self, problem):
        a = problem.a.blocks
        g = problem.gamma.gamma
        n = problem.n
        shift = 0.5 * np.diagonal(g)
        self.shifted = a + shift[:, None, None] * np.eye(n)
        self.schur = [real_schur(self.shifted[i]) for i in range(problem.N)]
        self.gamma_off = problem.gamma.offdiagonal()

    @property
    def N(self):
        return self.shifted.shape[0]

    def solve_neg(self, i, q):
        """Solve ``S_i X + X S_i^T + Q = 0``, i.e. apply ``-L_i^{-1}`` to ``Q``."""
        return lyap_solve(self.shifted[i], q, schur_form=self.schur[i])


def _check_tuple(problem, x):
    if x.blocks.shape != (problem.N, problem.n, problem.n):
        raise DimensionError(
            f"tuple shape {x.blocks.shape} does not match problem (N={problem.N}, n={problem.n})"
        )


def _sym(blocks):
    return 0.5 * (blocks + blocks.transpose(0, 2, 1))


# -- raw kernels on (N, n, n) arrays ----------------------------------------


def _raw_L(a, gdiag, x):
    return (
        np.matmul(a, x)
        + np.matmul(x, a.transpose(0, 2, 1))
        + gdiag[:, None, None] * x
    )


def _raw_coupling(g, x):
    # vec(sum_j g_ij X_j) = vec(X) g_i^T for every i: one matrix-matrix
    # product of the stacked tuple against g^T instead of a double loop.
    return np.tensordot(g, x, axes=(1, 0))


def _raw_LplusPi(a, g, x):
    return (
        np.matmul(a, x)
        + np.matmul(x, a.transpose(0, 2, 1))
        + _raw_coupling(g, x)
    )


def _raw_adjoint(a, g, f):
    # Adjoint w.r.t. the tuple inner product: A_i^T F_i + F_i A_i + sum_j g_ji F_j.
    return (
        np.matmul(a.transpose(0, 2, 1), f)
        + np.matmul(f, a)
        + _raw_coupling(g.T, f)
    )


def _raw_T_GS(sm, x):
    g_off = sm.gamma_off
    work = x.copy()
    for i in range(sm.N):
        rhs = np.tensordot(g_off[i], work, axes=(0, 0))
        work[i] = sm.solve_neg(i, rhs)
    return work


def _raw_I_minus_T_GS(sm, x):
    # Fused sweep: z_i = x_i - (T_GS x)_i with the updates reused in place.
    g_off = sm.gamma_off
    work = x.copy()
    z = np.empty_like(x)
    for i in range(sm.N):
        rhs = np.tensordot(g_off[i], work, axes=(0, 0))
        xi = sm.solve_neg(i, rhs)
        z[i] = work[i] - xi
        work[i] = xi
    return z


def _raw_T_J(sm, x):
    pi = _raw_coupling(sm.gamma_off, x)
    out = np.empty_like(x)
    for i in range(sm.N):
        out[i] = sm.solve_neg(i, pi[i])
    return out


def _raw_I_minus_T_J(sm, x):
    return x - _raw_T_J(sm, x)


def _raw_Linv(sm, z):
    out = np.empty_like(z)
    for i in range(sm.N):
        out[i] = sm.solve_neg(i, -z[i])
    return out


def _raw_precondition_rhs(sm, y):
    # Forward substitution: ytilde_i = -L_i^{-1}(y_i + sum_{j<i} g_ij ytilde_j).
    g_off = sm.gamma_off
    work = y.copy()
    for i in range(sm.N):
        rhs = work[i]
        if i > 0:
            rhs = rhs + np.tensordot(g_off[i, :i], work[:i], axes=(0, 0))
        work[i] = sm.solve_neg(i, rhs)
    return work


def _raw_jacobi_rhs(sm, y):
    out = np.empty_like(y)
    for i in range(sm.N):
        out[i] = sm.solve_neg(i, y[i])
    return out


# -- public operator surface -------------------------------------------------


def apply_L(problem, x):
    """Blockwise Lyapunov part: ``Z_i = (A_i + g_ii/2 I) X_i + X_i (A_i + g_ii/2 I)^T``."""
    _check_tuple(problem, x)
    gdiag = np.diagonal(problem.gamma.gamma).copy()
    return SymTuple._wrap(_sym(_raw_L(problem.a.blocks, gdiag, x.blocks)))


def apply_Pi(problem, x):
    """Coupling part: ``Z_i = sum_{j != i} gamma_ij X_j`` (a positive operator)."""
    _check_tuple(problem, x)
    return SymTuple._wrap(_sym(_raw_coupling(problem.gamma.offdiagonal(), x.blocks)))


def apply_LplusPi(problem, x):
    """Full operator; a solution satisfies ``apply_LplusPi(X) == -Y``."""
    _check_tuple(problem, x)
    return SymTuple._wrap(_sym(_raw_LplusPi(problem.a.blocks, problem.gamma.gamma, x.blocks)))


def apply_LplusPi_adjoint(problem, f):
    """Adjoint of :func:`apply_LplusPi` w.r.t. the tuple inner product."""
    _check_tuple(problem, f)
    return SymTuple._wrap(_sym(_raw_adjoint(problem.a.blocks, problem.gamma.gamma, f.blocks)))


def apply_Linv(problem, z, shifted=None):
    """Invert the blockwise part: returns ``X`` with ``apply_L(X) == Z``.

    ``N`` independent Lyapunov solves against the cached Schur forms.
    """
    _check_tuple(problem, z)
    sm = shifted if shifted is not None else ShiftedModes(problem)
    return SymTuple._wrap(_raw_Linv(sm, z.blocks))


def apply_T_GS(problem, x, shifted=None):
    """One Gauss-Seidel preconditioning sweep.

    Ascending in ``i`` with already-updated blocks reused:
    ``Xt_i = -L_i^{-1}(sum_{j<i} g_ij Xt_j + sum_{j>i} g_ij X_j)``.
    """
    _check_tuple(problem, x)
    sm = shifted if shifted is not None else ShiftedModes(problem)
    return SymTuple._wrap(_raw_T_GS(sm, x.blocks))


def apply_T_J(problem, x, shifted=None):
    """Jacobi preconditioning map ``T_J = -L^{-1} Pi``."""
    _check_tuple(problem, x)
    sm = shifted if shifted is not None else ShiftedModes(problem)
    return SymTuple._wrap(_raw_T_J(sm, x.blocks))


def precondition_rhs(problem, y=None, shifted=None):
    """Transform the right-hand side for the Gauss-Seidel-preconditioned system.

    Returns ``Yt`` such that ``(I - T_GS)(X) = Yt`` has the same solution
    as ``(L + Pi)(X) = -Y``.  Defaults to the problem's own ``Y``.
    """
    if y is None:
        y = problem.y
    _check_tuple(problem, y)
    sm = shifted if shifted is not None else ShiftedModes(problem)
    return SymTuple._wrap(_raw_precondition_rhs(sm, y.blocks))


def vec_tuple(x):
    """Stack ``vec(X_1), ..., vec(X_N)`` (column-major per block) into one vector."""
    blocks = x.blocks if hasattr(x, "blocks") else np.asarray(x, dtype=float)
    return blocks.transpose(0, 2, 1).reshape(-1)


def unvec_tuple(v, N, n):
    """Inverse of :func:`vec_tuple`."""
    return np.asarray(v, dtype=float).reshape(N, n, n).transpose(0, 2, 1)


def _kron_parts(problem):
    a = problem.a.blocks
    g = problem.gamma.gamma
    N, n = problem.N, problem.n
    eye_n = np.eye(n)
    eye_nn = np.eye(n * n)
    m_l = np.zeros((N * n * n, N * n * n))
    m_pi = np.zeros_like(m_l)
    for i in range(N):
        sl = slice(i * n * n, (i + 1) * n * n)
        m_l[sl, sl] = np.kron(eye_n, a[i]) + np.kron(a[i], eye_n) + g[i, i] * eye_nn
        for j in range(N):
            if j != i and g[i, j] != 0.0:
                m_pi[sl, j * n * n : (j + 1) * n * n] = g[i, j] * eye_nn
    return m_l, m_pi


def _check_kron_guard(problem):
    dim = problem.N * problem.n * problem.n
    if dim > KRON_GUARD:
        raise ValueError(
            f"Kronecker assembly needs a {dim} x {dim} dense matrix, "
            f"above the guard of {KRON_GUARD}"
        )


def assemble_kron(problem):
    """Dense ``N n^2 x N n^2`` matrix of the full operator.

    Block ``(i, j)`` is ``delta_ij (I (x) A_i + A_i (x) I) + gamma_ij I``;
    ``M @ vec_tuple(X) == vec_tuple(apply_LplusPi(X))`` for every tuple.
    """
    _check_kron_guard(problem)
    m_l, m_pi = _kron_parts(problem)
    return m_l + m_pi


def solve_direct(problem):
    """Solve the coupled equations by dense Gaussian elimination.

    The O(N^3 n^6) oracle: assemble the Kronecker matrix, solve for the
    stacked unknowns, symmetrize blockwise.
    """
    m = assemble_kron(problem)
    rhs = -vec_tuple(problem.y)
    x = np.linalg.solve(m, rhs)
    blocks = unvec_tuple(x, problem.N, problem.n)
    return SymTuple._wrap(_sym(blocks))
