"""Problem and system factories.

Contains the constructed 4x4/2-mode instance with known solution, the
seeded random families (definite and nonsymmetric-stable), the CSMA/CA
communication model (discrete transition matrix, rate matrix, and the
carts-on-a-track plant driven by it), and the Gramian / H2-norm
computations that reduce to coupled Lyapunov solves.
"""

from __future__ import annotations

import math
import string
import warnings
from dataclasses import dataclass
from itertools import product

import numpy as np

from .fixedpoint import FixedPointConfig, solve_fixedpoint
from .linalg import spectral_abscissa
from .model import (
    CouplingMatrix,
    DimensionError,
    MJLSProblem,
    ModeTuple,
    ProblemFormatError,
    SymTuple,
    _collect_indexed,
    _emit_matrix,
    _FileScanner,
    _fmt,
    _section_matrix,
)
from .stability import is_ms_stable, scale_coupling

__all__ = [
    "MJLSSystem",
    "CsmaConfig",
    "UnstableSystemError",
    "known_example",
    "random_spd_problem",
    "random_stable_problem",
    "csma_theta",
    "csma_state_labels",
    "csma_rate",
    "stationary_distribution",
    "cart_system",
    "observability_problem",
    "controllability_problem",
    "gramians",
    "h2_norm",
    "parse_system",
    "emit_system",
]


class UnstableSystemError(ValueError):
    """Gramians/H2 norm are defined only for mean-square stable systems."""

    def __init__(self, certificate):
        self.certificate = certificate
        super().__init__(
            "system is not mean-square stable: "
            f"max modewise abscissa {certificate.modewise_abscissae.max():.6g}, "
            f"rho(L^-1 Pi) = {certificate.rho_LinvPi:.6g}"
        )


class MJLSSystem:
    """Jump-linear system data: mode tuples A, B, C, coupling, and initial
    mode distribution ``mu``."""

    __slots__ = ("a", "b", "c", "gamma", "mu")

    def __init__(self, a, b, c, gamma, mu):
        if not isinstance(a, ModeTuple):
            a = ModeTuple(a)
        if not isinstance(b, ModeTuple):
            b = ModeTuple(b)
        if not isinstance(c, ModeTuple):
            c = ModeTuple(c)
        if not isinstance(gamma, CouplingMatrix):
            gamma = CouplingMatrix(gamma, rate_matrix=True, allow_zero_diagonal=True)
        mu = np.asarray(mu, dtype=float)
        if a.rows != a.cols:
            raise DimensionError("A blocks must be square")
        if not (a.N == b.N == c.N == gamma.N):
            raise DimensionError(
                f"mode counts disagree: A={a.N}, B={b.N}, C={c.N}, gamma={gamma.N}"
            )
        if b.rows != a.rows or c.cols != a.rows:
            raise DimensionError("B/C block shapes do not match the state dimension")
        if mu.shape != (a.N,) or np.any(mu < 0.0) or abs(mu.sum() - 1.0) > 1e-12:
            raise ValueError("mu must be a probability vector over the N modes")
        self.a, self.b, self.c, self.gamma, self.mu = a, b, c, gamma, mu

    @property
    def N(self):
        return self.a.N

    @property
    def n(self):
        return self.a.rows

    def __repr__(self):
        return f"MJLSSystem(n={self.n}, N={self.N}, m={self.b.cols}, p={self.c.rows})"


def known_example():
    """The constructed 2-mode, 4x4 instance with integer data and known solution.

    Returns ``(problem, x_star)``; all entries are integers, so
    ``residual_norm(problem, x_star)`` is exactly zero in floating point.
    """
    gamma = CouplingMatrix([[-1.0, 1.0], [2.0, -2.0]])
    a1 = np.array(
        [[-6, 4, -7, 6], [8, -4, -10, 10], [14, 6, 1, 7], [-21, -10, -6, -13]], dtype=float
    )
    a2 = np.array(
        [[-16, 4, 7, -1], [5, -17, -8, -2], [-2, 3, -19, -4], [4, 10, 25, -9]], dtype=float
    )
    x1 = np.ones((4, 4))
    x2 = np.array([[2, 1, -1, -2], [1, 1, 0, -1], [-1, 0, 1, 1], [-2, -1, 1, 2]], dtype=float)
    y1 = np.array(
        [[5, -1, -23, 56], [-1, -8, -31, 48], [-23, -31, -56, 22], [56, 48, 22, 99]],
        dtype=float,
    )
    y2 = np.array(
        [[68, 6, -52, -50], [6, 20, 8, -22], [-52, 8, 42, 14], [-50, -22, 14, 24]],
        dtype=float,
    )
    problem = MJLSProblem(ModeTuple([a1, a2]), SymTuple([y1, y2]), gamma)
    return problem, SymTuple([x1, x2])


def random_spd_problem(n, seed):
    """Two-mode instance with fixed coupling [[-0.3, 0.3], [0.5, -0.5]] and
    ``-A_i``, ``Y_i`` symmetric positive definite.

    ``A_i = -(M M^T / n + I)`` and ``Y_i = W W^T / n + 0.1 I`` with
    standard-normal ``M``, ``W`` drawn from a seeded generator, so the
    instance is reproducible and certifiably mean-square stable (the
    identity tuple maps to ``(2 A_1, 2 A_2)``, negative definite).
    """
    rng = np.random.default_rng(seed)
    eye = np.eye(n)
    a = np.empty((2, n, n))
    y = np.empty((2, n, n))
    for i in range(2):
        m = rng.standard_normal((n, n))
        a[i] = -(m @ m.T / n + eye)
        w = rng.standard_normal((n, n))
        y[i] = w @ w.T / n + 0.1 * eye
    gamma = CouplingMatrix([[-0.3, 0.3], [0.5, -0.5]], rate_matrix=True)
    return MJLSProblem(ModeTuple(a), SymTuple(y), gamma)


def random_stable_problem(n, N, seed, target_rho=0.5):
    """Random instance with nonsymmetric Hurwitz modes and scaled coupling.

    Modes are ``A = M - (abscissa(M) + 1) I`` (spectrum shifted one unit
    into the left half plane), right-hand sides random PSD, random
    nonnegative off-diagonal coupling rescaled so that
    ``rho(L^{-1} Pi)`` lands just under ``target_rho``.
    """
    rng = np.random.default_rng(seed)
    a = np.empty((N, n, n))
    y = np.empty((N, n, n))
    for i in range(N):
        m = rng.standard_normal((n, n))
        a[i] = m - (spectral_abscissa(m) + 1.0) * np.eye(n)
        w = rng.standard_normal((n, n))
        y[i] = w @ w.T / n
    gamma = rng.uniform(0.0, 1.0, size=(N, N))
    np.fill_diagonal(gamma, -rng.uniform(0.5, 1.5, size=N))
    problem = MJLSProblem(ModeTuple(a), SymTuple(y), CouplingMatrix(gamma))
    return scale_coupling(problem, target_rho)


@dataclass
class CsmaConfig:
    """CSMA/CA chain parameters: station count ``nu``, memory length ``tau``,
    error probabilities after good/errored transmissions, and the mean
    time ``a`` spent in one transmission mode (rate scaling)."""

    nu: int = 2
    tau: int = 3
    p_err_good: float = 0.03
    p_err_stay: float = 0.75
    a: float = 1.0

    def __post_init__(self):
        if self.nu < 2:
            raise ValueError("need at least two stations")
        if self.tau < 1:
            raise ValueError("memory length must be at least 1")
        for p in (self.p_err_good, self.p_err_stay):
            if not 0.0 < p < 1.0:
                raise ValueError("error probabilities must lie in (0, 1)")
        if self.a <= 0.0:
            raise ValueError("mean transmission time must be positive")

    @property
    def n_states(self):
        return 2 * self.nu**self.tau


def _sender_probabilities(memory, nu, tau):
    """Probability for each station to transmit next, given the memory
    (most recent transmission first).

    Stations absent from the memory send with the base weight; a station
    whose most recent occurrence is at position i (1-based) sends with
    the base weight divided by ``tau + 1 - (i - 1)``.  The base weight
    normalizes the probabilities to one.
    """
    first_pos = {}
    for pos, station in enumerate(memory, start=1):
        if station not in first_pos:
            first_pos[station] = pos
    inv_weights = [1.0 / (tau + 1 - (pos - 1)) for pos in first_pos.values()]
    wbar = 1.0 / (nu - len(first_pos) + sum(inv_weights))
    probs = np.full(nu, wbar)
    for station, pos in first_pos.items():
        probs[station] = wbar / (tau + 1 - (pos - 1))
    return probs


def csma_theta(cfg):
    """Discrete transition matrix of the CSMA/CA chain.

    States are ``(e, s_t, s_{t-1}, ..., s_{t-tau+1})``: the error bit of
    the last transmission followed by the senders of the last ``tau``
    transmissions, most recent first.  The error-free block follows the
    backoff sender statistics; after an error the same station
    retransmits (the memory shifts with the sender repeated) and the
    chain stays in the error state with probability ``p_err_stay``.
    """
    nu, tau = cfg.nu, cfg.tau
    memories = list(product(range(nu), repeat=tau))
    mem_index = {mem: k for k, mem in enumerate(memories)}
    half = len(memories)
    size = 2 * half

    def idx(e, mem):
        return e * half + mem_index[mem]

    theta = np.zeros((size, size))
    for mem in memories:
        row0 = idx(0, mem)
        probs = _sender_probabilities(mem, nu, tau)
        for station in range(nu):
            nxt = (station,) + mem[:-1]
            theta[row0, idx(0, nxt)] += probs[station] * (1.0 - cfg.p_err_good)
            theta[row0, idx(1, nxt)] += probs[station] * cfg.p_err_good
        row1 = idx(1, mem)
        retrans = (mem[0],) + mem[:-1]
        theta[row1, idx(1, retrans)] += cfg.p_err_stay
        theta[row1, idx(0, retrans)] += 1.0 - cfg.p_err_stay
    return theta


def csma_state_labels(cfg):
    """Human-readable state labels like ``0ABB`` (error bit + memory)."""
    letters = string.ascii_uppercase
    labels = []
    for e in (0, 1):
        for mem in product(range(cfg.nu), repeat=cfg.tau):
            labels.append(str(e) + "".join(letters[s] for s in mem))
    return labels


def csma_rate(theta, a):
    """Continuous-time rate matrix ``a * (Theta - I)`` from a stochastic matrix.

    Rows sum to zero; the diagonal is recomputed as the negative
    off-diagonal row sum so the rate-matrix validation holds exactly.
    Rows with ``Theta_ii == 1`` produce a zero diagonal entry (no
    outflow); such degenerate modes are flagged with a warning.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 2 or theta.shape[0] != theta.shape[1]:
        raise DimensionError("theta must be square")
    rowsums = theta.sum(axis=1)
    if np.any(np.abs(rowsums - 1.0) > 1e-10):
        raise ValueError("theta must be row-stochastic")
    if a <= 0.0:
        raise ValueError("rate scaling a must be positive")
    gamma = a * theta.copy()
    np.fill_diagonal(gamma, 0.0)
    np.fill_diagonal(gamma, -gamma.sum(axis=1))
    degenerate = np.flatnonzero(np.diagonal(gamma) == 0.0)
    if degenerate.size:
        warnings.warn(
            f"rate matrix has zero outflow in modes {[int(i) + 1 for i in degenerate]} "
            "(theta_ii = 1)",
            stacklevel=2,
        )
    return CouplingMatrix(gamma, rate_matrix=True, allow_zero_diagonal=bool(degenerate.size))


def stationary_distribution(theta):
    """Left Perron vector of a row-stochastic matrix, normalized to sum 1."""
    theta = np.asarray(theta, dtype=float)
    vals, vecs = np.linalg.eig(theta.T)
    k = int(np.argmin(np.abs(vals - 1.0)))
    v = np.real(vecs[:, k])
    v = np.abs(v)
    return v / v.sum()


def cart_system(nu, tau=3, mass=1.0, gravity=9.81, friction=0.1, a=1.0,
                p_err_good=0.03, p_err_stay=0.75, mu="stationary"):
    """Carts on a parabolic track, networked through the CSMA/CA channel.

    Each of the ``nu`` carts has state ``(position, velocity)`` with
    linearized dynamics ``[[0, 1], [-2*mass*gravity, -friction]]`` about
    the bottom of the track (the quadratic track profile contributes
    restoring stiffness ``2 m g`` at the origin).  The plant matrices
    are mode-independent; only the output matrix follows the Markov
    state: the transmitting cart's block is read out unless the last
    transmission was faulty, in which case the output is zero.

    Returns a system with ``n = 2 nu`` states and ``N = 2 nu^tau`` modes;
    ``mu`` is the stationary distribution of the discrete chain by
    default, or uniform with ``mu="uniform"``.
    """
    cfg = CsmaConfig(nu=nu, tau=tau, p_err_good=p_err_good, p_err_stay=p_err_stay, a=a)
    theta = csma_theta(cfg)
    gamma = csma_rate(theta, a)
    n = 2 * nu
    N = cfg.n_states
    abar = np.array([[0.0, 1.0], [-2.0 * mass * gravity, -friction]])
    bbar = np.array([[0.0], [1.0]])
    a_full = np.kron(np.eye(nu), abar)
    b_full = np.kron(np.eye(nu), bbar)
    a_blocks = np.broadcast_to(a_full, (N, n, n)).copy()
    b_blocks = np.broadcast_to(b_full, (N, n, nu)).copy()
    c_blocks = np.zeros((N, 2, n))
    memories = list(product(range(nu), repeat=tau))
    for k, (e, mem) in enumerate((e, mem) for e in (0, 1) for mem in memories):
        if e == 0:
            sender = mem[0]
            c_blocks[k, :, 2 * sender : 2 * sender + 2] = np.eye(2)
    if isinstance(mu, str):
        if mu == "stationary":
            mu_vec = stationary_distribution(theta)
        elif mu == "uniform":
            mu_vec = np.full(N, 1.0 / N)
        else:
            raise ValueError(f"unknown mu choice {mu!r}")
    else:
        mu_vec = np.asarray(mu, dtype=float)
    return MJLSSystem(ModeTuple(a_blocks), ModeTuple(b_blocks), ModeTuple(c_blocks), gamma, mu_vec)


def observability_problem(system):
    """Coupled equations for the observability Gramians: transposed modes,
    the system's coupling, and ``Y_i = C_i^T C_i``."""
    at = system.a.blocks.transpose(0, 2, 1).copy()
    c = system.c.blocks
    y = np.matmul(c.transpose(0, 2, 1), c)
    return MJLSProblem(ModeTuple(at), SymTuple(y, symmetrize=True), system.gamma)


def controllability_problem(system):
    """Coupled equations for the controllability Gramians: original modes,
    transposed coupling, and ``Y_i = mu_i B_i B_i^T``."""
    b = system.b.blocks
    y = system.mu[:, None, None] * np.matmul(b, b.transpose(0, 2, 1))
    gamma_t = CouplingMatrix(
        system.gamma.gamma.T.copy(),
        rate_matrix=False,
        allow_zero_diagonal=system.gamma.allow_zero_diagonal,
    )
    return MJLSProblem(system.a, SymTuple(y, symmetrize=True), gamma_t)


def gramians(system, tol=1e-9, max_iter=1000, method="krylov-gs"):
    """Controllability and observability Gramian tuples ``(P, Q)``.

    Both reduce to coupled Lyapunov solves; stability is certified first
    and :class:`UnstableSystemError` is raised otherwise.
    """
    obs = observability_problem(system)
    cert = is_ms_stable(obs)
    if not cert.stable:
        raise UnstableSystemError(cert)
    cfg = FixedPointConfig(tol=tol, max_iter=max_iter, method=method)
    q, q_report = solve_fixedpoint(obs, cfg)
    p, p_report = solve_fixedpoint(controllability_problem(system), cfg)
    if not (q_report.converged and p_report.converged):
        raise RuntimeError(
            f"Gramian solves did not converge (P residual {p_report.residual:.3e}, "
            f"Q residual {q_report.residual:.3e})"
        )
    return p, q


# Relative disagreement between the two trace formulas above which the
# H2 computation refuses to return a value.
H2_CONSISTENCY_RTOL = 1e-6


def h2_norm(system, tol=1e-9, max_iter=1000, method="krylov-gs"):
    """H2 norm via the Gramian trace identity.

    Both ``sum_i tr(C_i P_i C_i^T)`` and ``sum_i mu_i tr(B_i^T Q_i B_i)``
    are evaluated; they must agree to ``H2_CONSISTENCY_RTOL`` relative,
    otherwise the internal consistency check fails.
    """
    p, q = gramians(system, tol=tol, max_iter=max_iter, method=method)
    c = system.c.blocks
    b = system.b.blocks
    side_p = sum(float(np.trace(c[i] @ p.blocks[i] @ c[i].T)) for i in range(system.N))
    side_q = sum(
        float(system.mu[i] * np.trace(b[i].T @ q.blocks[i] @ b[i]))
        for i in range(system.N)
    )
    scale = max(abs(side_p), abs(side_q), np.finfo(float).tiny)
    if abs(side_p - side_q) > H2_CONSISTENCY_RTOL * scale and scale > 1e-300:
        raise RuntimeError(
            f"H2 trace identities disagree: {side_p:.12e} vs {side_q:.12e}"
        )
    return math.sqrt(max(side_p, 0.0))


# ---------------------------------------------------------------------------
# System file serialization: header and A-sections as in problem files,
# plus B i / C i sections and a MU section.
# ---------------------------------------------------------------------------


def emit_system(system, comment=None):
    """Serialize a system to text; round-trips bit-exactly through
    :func:`parse_system`."""
    lines = []
    if comment:
        lines.extend(f"# {c}" for c in comment.splitlines())
    lines.append(f"MJLS {system.n} {system.N}")
    for row in system.gamma.gamma:
        lines.append(" ".join(_fmt(v) for v in row))
    for i in range(system.N):
        _emit_matrix(lines, f"A {i + 1}", system.a.blocks[i])
        _emit_matrix(lines, f"B {i + 1}", system.b.blocks[i])
        _emit_matrix(lines, f"C {i + 1}", system.c.blocks[i])
    lines.append("MU")
    lines.append(" ".join(_fmt(v) for v in system.mu))
    return "\n".join(lines) + "\n"


def parse_system(text):
    """Parse a system file (A/B/C/MU sections) into an :class:`MJLSSystem`."""
    scanner = _FileScanner(text)
    n, N = scanner.header()
    gamma, _ = scanner.gamma(N)
    seen = _collect_indexed(scanner, N, {"A", "B", "C", "MU"})
    a = np.empty((N, n, n))
    b_list, c_list = [None] * N, [None] * N
    m = p = None
    for i in range(N):
        for label in ("A", "B", "C"):
            key = (label, i + 1)
            if key not in seen:
                raise ProblemFormatError(f"missing section '{label} {i + 1}'", scanner._eof_line())
            lineno, rows = seen[key]
            if label == "A":
                a[i] = _section_matrix("A", i + 1, lineno, rows, n, n)
            elif label == "B":
                if m is None:
                    if not rows:
                        raise ProblemFormatError(f"empty section 'B {i + 1}'", lineno)
                    m = len(rows[0][1])
                b_list[i] = _section_matrix("B", i + 1, lineno, rows, n, m)
            else:
                if p is None:
                    p = len(rows)
                c_list[i] = _section_matrix("C", i + 1, lineno, rows, p, n)
    if ("MU", None) not in seen:
        raise ProblemFormatError("missing MU section", scanner._eof_line())
    mu_lineno, mu_rows = seen[("MU", None)]
    mu = [v for _, vals in mu_rows for v in vals]
    if len(mu) != N:
        raise ProblemFormatError(f"MU has {len(mu)} entries, expected {N}", mu_lineno)
    gamma_m = CouplingMatrix(gamma, rate_matrix=False, allow_zero_diagonal=True)
    return MJLSSystem(ModeTuple(a), ModeTuple(np.array(b_list)), ModeTuple(np.array(c_list)), gamma_m, mu)
