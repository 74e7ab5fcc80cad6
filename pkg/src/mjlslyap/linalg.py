"""Dense real matrix kernels: real Schur form and single-mode Lyapunov solves.

Every O(n^3) operation of the solver suite funnels through this module.
The Lyapunov solve is Bartels-Stewart: reduce the coefficient matrix to
real Schur form, back-substitute over the quasi-triangular factor
(LAPACK ``*trsyl``), and transform back.  Schur forms can be computed
once and passed back in, which is what the coupled solvers do when they
apply the same coefficient matrices over and over.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

__all__ = [
    "SchurForm",
    "SchurConvergenceError",
    "SingularLyapunovError",
    "real_schur",
    "lyap_solve",
    "spectral_abscissa",
]


class SchurConvergenceError(RuntimeError):
    """The QR iteration failed to reduce a matrix to Schur form."""


class SingularLyapunovError(ValueError):
    """The Lyapunov operator X -> A X + X A^T is (numerically) singular.

    Carries the offending eigenvalue pair whose sum is closest to zero.
    """

    def __init__(self, lam_i, lam_j, gap):
        self.lam_i = lam_i
        self.lam_j = lam_j
        self.gap = gap
        super().__init__(
            "singular Lyapunov operator: eigenvalue pair "
            f"({lam_i:.6g}, {lam_j:.6g}) has |lam_i + lam_j| = {gap:.3e}"
        )


def _as_square(a, name="matrix"):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def _quasi_triangular_eigenvalues(t):
    """Eigenvalues of a real quasi-upper-triangular matrix from its 1x1/2x2 blocks."""
    n = t.shape[0]
    eigs = np.empty(n, dtype=complex)
    i = 0
    while i < n:
        if i == n - 1 or t[i + 1, i] == 0.0:
            eigs[i] = t[i, i]
            i += 1
        else:
            a, b = t[i, i], t[i, i + 1]
            c, d = t[i + 1, i], t[i + 1, i + 1]
            mean = 0.5 * (a + d)
            disc = mean * mean - (a * d - b * c)
            if disc < 0.0:
                eigs[i] = mean + 1j * np.sqrt(-disc)
                eigs[i + 1] = eigs[i].conjugate()
            else:
                root = np.sqrt(disc)
                eigs[i] = mean + root
                eigs[i + 1] = mean - root
            i += 2
    return eigs


class SchurForm:
    """Real Schur decomposition A = U T U^T.

    ``u`` is orthogonal, ``t`` quasi-upper-triangular with 1x1 and 2x2
    diagonal blocks.  ``eigenvalues`` are read off the diagonal blocks.
    """

    __slots__ = ("u", "t", "eigenvalues")

    def __init__(self, u, t):
        self.u = u
        self.t = t
        self.eigenvalues = _quasi_triangular_eigenvalues(t)

    @property
    def n(self):
        return self.t.shape[0]


def real_schur(a):
    """Compute the real Schur form of a square matrix.

    Parameters
    ----------
    a : (n, n) array_like
        Real square matrix.

    Returns
    -------
    SchurForm
        Orthogonal ``u`` and quasi-triangular ``t`` with ``u @ t @ u.T == a``.

    Raises
    ------
    SchurConvergenceError
        If the underlying QR iteration does not converge.
    """
    a = _as_square(a)
    try:
        t, u = scipy.linalg.schur(a, output="real")
    except scipy.linalg.LinAlgError as exc:
        raise SchurConvergenceError(f"QR iteration failed: {exc}") from exc
    return SchurForm(u, t)


# Relative threshold on |lam_i + lam_j| below which the Lyapunov operator
# is reported singular instead of returning an unreliable solution.
_SINGULARITY_RTOL = 1e-12


def _check_regular(eigs, scale):
    s = eigs[:, None] + eigs[None, :]
    gaps = np.abs(s)
    k = int(np.argmin(gaps))
    i, j = divmod(k, len(eigs))
    if gaps[i, j] < _SINGULARITY_RTOL * max(scale, np.finfo(float).tiny):
        raise SingularLyapunovError(eigs[i], eigs[j], gaps[i, j])


def lyap_solve(a, q, schur_form=None):
    """Solve the continuous Lyapunov equation ``A X + X A^T + Q = 0``.

    Parameters
    ----------
    a : (n, n) array_like
        Coefficient matrix.  Solvable whenever no two eigenvalues of
        ``a`` sum to zero; stability is not required.
    q : (n, n) array_like
        Symmetric right-hand side.
    schur_form : SchurForm, optional
        Precomputed Schur form of ``a``.  Pass it when solving many
        equations with the same ``a``; only the back-substitution and
        the orthogonal transforms are repeated.

    Returns
    -------
    (n, n) ndarray
        The solution, symmetrized as ``(X + X.T) / 2`` on output.

    Raises
    ------
    SingularLyapunovError
        If some eigenvalue pair satisfies ``|lam_i + lam_j|`` below
        ``1e-12 * ||A||_F``.
    """
    a = _as_square(a, "a")
    q = _as_square(q, "q")
    if a.shape != q.shape:
        raise ValueError(f"shape mismatch: a is {a.shape}, q is {q.shape}")
    if schur_form is None:
        schur_form = real_schur(a)
    _check_regular(schur_form.eigenvalues, np.linalg.norm(a))
    u, t = schur_form.u, schur_form.t
    c = -(u.T @ q @ u)
    (trsyl,) = scipy.linalg.get_lapack_funcs(("trsyl",), (t, c))
    x, scale, info = trsyl(t, t, c, isgn=1, tranb="T")
    if info < 0:
        raise ValueError(f"illegal argument {-info} in trsyl")
    if info == 1:
        # trsyl perturbed near-common eigenvalues; the pre-check should
        # have caught this, treat it as singular anyway.
        eigs = schur_form.eigenvalues
        s = np.abs(eigs[:, None] + eigs[None, :])
        k = int(np.argmin(s))
        i, j = divmod(k, len(eigs))
        raise SingularLyapunovError(eigs[i], eigs[j], s[i, j])
    if scale != 1.0:
        x = x / scale
    x = u @ x @ u.T
    return 0.5 * (x + x.T)


def spectral_abscissa(a):
    """Largest real part of the eigenvalues of a square matrix."""
    a = _as_square(a)
    return float(np.max(np.linalg.eigvals(a).real))
