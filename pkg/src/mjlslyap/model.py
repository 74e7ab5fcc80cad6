"""Core data model: mode tuples, symmetric tuples, coupling matrices,
problem instances, residuals, and the problem file format.

A problem instance collects ``N`` mode matrices ``A_i``, ``N`` symmetric
right-hand sides ``Y_i`` and an ``N x N`` coupling matrix ``gamma`` and
represents the coupled equations

    A_i X_i + X_i A_i^T + sum_j gamma_ij X_j + Y_i = 0,   i = 1..N.

Tuples are stored as ``(N, n, n)`` arrays throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DimensionError",
    "ProblemFormatError",
    "ModeTuple",
    "SymTuple",
    "CouplingMatrix",
    "MJLSProblem",
    "SolverReport",
    "tuple_inner",
    "tuple_norm",
    "residual_norm",
    "error_norm",
    "parse_problem",
    "emit_problem",
    "parse_solution",
    "emit_solution",
]

# Relative max-norm tolerance beyond which a block is rejected as asymmetric.
SYMMETRY_RTOL = 1e-9


class DimensionError(ValueError):
    """Shapes of the supplied objects do not fit together."""


class ProblemFormatError(ValueError):
    """A problem/system file is malformed.  ``line`` is the 1-based line number."""

    def __init__(self, message, line):
        self.line = line
        super().__init__(f"line {line}: {message}")


def _as_block_array(blocks, name):
    b = np.array(blocks, dtype=float)
    if b.ndim == 2:
        b = b[np.newaxis]
    if b.ndim != 3:
        raise DimensionError(f"{name} must be an (N, rows, cols) stack, got shape {b.shape}")
    if b.shape[0] < 1 or b.shape[1] < 1 or b.shape[2] < 1:
        raise DimensionError(f"{name} has empty dimensions: {b.shape}")
    if not np.all(np.isfinite(b)):
        raise ValueError(f"{name} contains non-finite entries")
    return b


class ModeTuple:
    """Ordered list of N equally-shaped real matrices, one per Markov mode."""

    __slots__ = ("blocks",)

    def __init__(self, blocks):
        self.blocks = _as_block_array(blocks, "ModeTuple")

    @classmethod
    def _wrap(cls, blocks):
        obj = object.__new__(cls)
        obj.blocks = blocks
        return obj

    @property
    def N(self):
        return self.blocks.shape[0]

    @property
    def rows(self):
        return self.blocks.shape[1]

    @property
    def cols(self):
        return self.blocks.shape[2]

    def __getitem__(self, i):
        return self.blocks[i]

    def __repr__(self):
        return f"ModeTuple(N={self.N}, shape={self.rows}x{self.cols})"


class SymTuple:
    """Element of H = (H^n)^N: an ordered tuple of N symmetric n x n matrices.

    Construction validates symmetry of every block against
    ``SYMMETRY_RTOL`` in the entrywise max norm; pass ``symmetrize=True``
    to project asymmetric input onto ``(B + B^T) / 2`` instead.
    """

    __slots__ = ("blocks",)

    def __init__(self, blocks, symmetrize=False):
        b = _as_block_array(blocks, "SymTuple")
        if b.shape[1] != b.shape[2]:
            raise DimensionError(f"SymTuple blocks must be square, got {b.shape[1]}x{b.shape[2]}")
        if symmetrize:
            b = 0.5 * (b + b.transpose(0, 2, 1))
        else:
            skew = np.abs(b - b.transpose(0, 2, 1)).max(axis=(1, 2))
            scale = np.abs(b).max(axis=(1, 2))
            bad = skew > SYMMETRY_RTOL * np.maximum(scale, np.finfo(float).tiny)
            if np.any(bad):
                i = int(np.argmax(bad))
                raise ValueError(
                    f"block {i + 1} is not symmetric: max |B - B^T| = {skew[i]:.3e} "
                    f"(pass symmetrize=True to project)"
                )
        self.blocks = b

    @classmethod
    def _wrap(cls, blocks):
        # Internal fast path for blocks that are symmetric by construction.
        obj = object.__new__(cls)
        obj.blocks = blocks
        return obj

    @classmethod
    def zeros(cls, N, n):
        return cls._wrap(np.zeros((N, n, n)))

    @classmethod
    def identity(cls, N, n):
        return cls._wrap(np.broadcast_to(np.eye(n), (N, n, n)).copy())

    @property
    def N(self):
        return self.blocks.shape[0]

    @property
    def n(self):
        return self.blocks.shape[1]

    def copy(self):
        return SymTuple._wrap(self.blocks.copy())

    def norm(self):
        return float(np.linalg.norm(self.blocks))

    def __getitem__(self, i):
        return self.blocks[i]

    def __add__(self, other):
        return SymTuple._wrap(self.blocks + other.blocks)

    def __sub__(self, other):
        return SymTuple._wrap(self.blocks - other.blocks)

    def __mul__(self, scalar):
        return SymTuple._wrap(self.blocks * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return SymTuple._wrap(-self.blocks)

    def __repr__(self):
        return f"SymTuple(N={self.N}, n={self.n})"


class CouplingMatrix:
    """Real N x N coupling matrix with sign constraints.

    Off-diagonal entries must be nonnegative and diagonal entries
    strictly negative.  ``rate_matrix=True`` additionally requires every
    row to sum to zero (within 1e-12), as for transition rate matrices
    of continuous-time Markov chains.  ``allow_zero_diagonal=True``
    relaxes the diagonal to nonpositive; degenerate rate matrices
    (absorbing states, single-mode chains) need this.
    """

    __slots__ = ("gamma", "rate_matrix", "allow_zero_diagonal")

    RATE_ROW_TOL = 1e-12

    def __init__(self, gamma, rate_matrix=False, allow_zero_diagonal=False):
        g = np.array(gamma, dtype=float)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise DimensionError(f"coupling matrix must be square, got shape {g.shape}")
        if not np.all(np.isfinite(g)):
            raise ValueError("coupling matrix contains non-finite entries")
        off = g.copy()
        np.fill_diagonal(off, 0.0)
        if np.any(off < 0.0):
            i, j = np.argwhere(off < 0.0)[0]
            raise ValueError(
                f"off-diagonal coupling entry ({i + 1},{j + 1}) = {g[i, j]:.6g} is negative"
            )
        d = np.diagonal(g)
        limit_ok = d <= 0.0 if allow_zero_diagonal else d < 0.0
        if not np.all(limit_ok):
            i = int(np.argmin(limit_ok))
            raise ValueError(
                f"diagonal coupling entry ({i + 1},{i + 1}) = {d[i]:.6g} must be "
                + ("nonpositive" if allow_zero_diagonal else "negative")
            )
        if rate_matrix:
            rowsums = g.sum(axis=1)
            if np.any(np.abs(rowsums) > self.RATE_ROW_TOL):
                i = int(np.argmax(np.abs(rowsums)))
                raise ValueError(
                    f"row {i + 1} of a rate matrix sums to {rowsums[i]:.3e}, expected 0"
                )
        self.gamma = g
        self.rate_matrix = bool(rate_matrix)
        self.allow_zero_diagonal = bool(allow_zero_diagonal)

    @property
    def N(self):
        return self.gamma.shape[0]

    def offdiagonal(self):
        """Gamma with the diagonal zeroed (the coupling part)."""
        off = self.gamma.copy()
        np.fill_diagonal(off, 0.0)
        return off

    def __repr__(self):
        return f"CouplingMatrix(N={self.N}, rate_matrix={self.rate_matrix})"


class MJLSProblem:
    """One instance of the coupled Lyapunov equations (A, Y, gamma)."""

    __slots__ = ("a", "y", "gamma")

    def __init__(self, a, y, gamma):
        if not isinstance(a, ModeTuple):
            a = ModeTuple(a)
        if not isinstance(y, SymTuple):
            y = SymTuple(y)
        if not isinstance(gamma, CouplingMatrix):
            gamma = CouplingMatrix(gamma)
        if a.rows != a.cols:
            raise DimensionError(f"mode matrices must be square, got {a.rows}x{a.cols}")
        if not (a.N == y.N == gamma.N):
            raise DimensionError(
                f"mode counts disagree: A has {a.N}, Y has {y.N}, gamma has {gamma.N}"
            )
        if a.rows != y.n:
            raise DimensionError(f"state dimensions disagree: A is {a.rows}, Y is {y.n}")
        self.a = a
        self.y = y
        self.gamma = gamma

    @property
    def N(self):
        return self.a.N

    @property
    def n(self):
        return self.a.rows

    def with_gamma(self, gamma):
        """Same modes and right-hand sides under a different coupling."""
        return MJLSProblem(self.a, self.y, gamma)

    def __repr__(self):
        return f"MJLSProblem(n={self.n}, N={self.N})"


@dataclass
class SolverReport:
    """Outcome of one solver run.

    ``iterations`` is real-valued: Krylov runs count each operator
    application as half an iteration, so entries like 3.5 occur.
    ``error`` is populated only when a reference solution is known.
    ``tol`` records the tolerance the run was asked to meet (its meaning
    is method-specific: residual-based for fixed-point/Krylov solvers,
    gradient-based for the optimization solvers).
    """

    method: str
    iterations: float
    residual: float
    wall_time_s: float
    converged: bool
    error: float | None = None
    tol: float | None = None


def _blocks_of(x):
    return x.blocks if hasattr(x, "blocks") else np.asarray(x, dtype=float)


def tuple_inner(x, y):
    """Inner product sum_i tr(X_i^T Y_i) on the tuple space."""
    return float(np.vdot(_blocks_of(x), _blocks_of(y)))


def tuple_norm(x):
    """Norm induced by :func:`tuple_inner` (blockwise Frobenius)."""
    return float(np.linalg.norm(_blocks_of(x)))


def _defect(problem, x_blocks):
    a = problem.a.blocks
    g = problem.gamma.gamma
    return (
        np.matmul(a, x_blocks)
        + np.matmul(x_blocks, a.transpose(0, 2, 1))
        + np.tensordot(g, x_blocks, axes=(1, 0))
        + problem.y.blocks
    )


def residual_norm(problem, x):
    """Tuple Frobenius norm of the equation defect at ``x``.

    Returns ``sqrt(sum_i ||A_i X_i + X_i A_i^T + sum_j gamma_ij X_j + Y_i||_F^2)``,
    zero exactly when ``x`` solves the coupled equations.
    """
    xb = _blocks_of(x)
    if xb.shape != problem.y.blocks.shape:
        raise DimensionError(
            f"solution tuple has shape {xb.shape}, problem needs {problem.y.blocks.shape}"
        )
    return float(np.linalg.norm(_defect(problem, xb)))


def error_norm(x, xstar):
    """Deviation ``sqrt(sum_i ||X_i - X*_i||_F^2)`` between two tuples."""
    xb = _blocks_of(x)
    sb = _blocks_of(xstar)
    if xb.shape != sb.shape:
        raise DimensionError(f"tuple shapes disagree: {xb.shape} vs {sb.shape}")
    return float(np.linalg.norm(xb - sb))


# ---------------------------------------------------------------------------
# Problem file format
#
#   # comment
#   MJLS n N
#   <N rows of N coupling values>
#   A 1
#   <n rows of n values>
#   Y 1
#   ...
#
# Values are whitespace-separated IEEE doubles; the writer emits 17
# significant digits so that parse(emit(p)) round-trips bit-exactly.
# System files replace Y-sections by B/C/MU sections, solution files
# carry X-sections; both reuse the same scanner.
# ---------------------------------------------------------------------------


def _fmt(v):
    return format(float(v), ".17g")


def _emit_matrix(lines, label, m):
    lines.append(label)
    for row in np.atleast_2d(m):
        lines.append(" ".join(_fmt(v) for v in row))


def _scan_lines(text):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        content = raw.split("#", 1)[0].strip()
        if content:
            yield lineno, content.split()


def _parse_value(tok, lineno):
    try:
        v = float(tok)
    except ValueError:
        raise ProblemFormatError(f"expected a number, got {tok!r}", lineno) from None
    if not math.isfinite(v):
        raise ProblemFormatError(f"non-finite value {tok!r}", lineno)
    return v


def _is_value_row(tokens):
    try:
        float(tokens[0])
        return True
    except ValueError:
        return False


class _FileScanner:
    """Shared scanner for problem/system/solution files."""

    def __init__(self, text):
        self.rows = list(_scan_lines(text))
        self.pos = 0

    def header(self):
        if not self.rows:
            raise ProblemFormatError("empty file, expected 'MJLS n N' header", 1)
        lineno, toks = self.rows[0]
        if len(toks) != 3 or toks[0] != "MJLS":
            raise ProblemFormatError(f"malformed header {' '.join(toks)!r}, expected 'MJLS n N'", lineno)
        try:
            n, N = int(toks[1]), int(toks[2])
        except ValueError:
            raise ProblemFormatError("header dimensions must be integers", lineno) from None
        if n < 1 or N < 1:
            raise ProblemFormatError(f"header dimensions must be positive, got n={n} N={N}", lineno)
        self.pos = 1
        return n, N

    def value_row(self, expected_len, what):
        if self.pos >= len(self.rows):
            raise ProblemFormatError(f"unexpected end of file, expected {what}", self._eof_line())
        lineno, toks = self.rows[self.pos]
        if not _is_value_row(toks):
            raise ProblemFormatError(f"expected {what}, got {' '.join(toks)!r}", lineno)
        if len(toks) != expected_len:
            raise ProblemFormatError(
                f"{what} has {len(toks)} values, expected {expected_len}", lineno
            )
        self.pos += 1
        return lineno, [_parse_value(t, lineno) for t in toks]

    def sections(self, known_labels):
        """Yield (label, index, lineno, rows) until the scanner is exhausted."""
        while self.pos < len(self.rows):
            lineno, toks = self.rows[self.pos]
            if _is_value_row(toks):
                raise ProblemFormatError(f"stray values outside any section: {' '.join(toks)!r}", lineno)
            label = toks[0]
            if label not in known_labels:
                raise ProblemFormatError(
                    f"unknown section {label!r}, expected one of {sorted(known_labels)}", lineno
                )
            index = None
            if label != "MU":
                if len(toks) != 2:
                    raise ProblemFormatError(f"section header {label!r} needs a mode index", lineno)
                try:
                    index = int(toks[1])
                except ValueError:
                    raise ProblemFormatError(f"bad mode index {toks[1]!r}", lineno) from None
            elif len(toks) != 1:
                raise ProblemFormatError("MU section takes no index", lineno)
            self.pos += 1
            rows = []
            while self.pos < len(self.rows) and _is_value_row(self.rows[self.pos][1]):
                rlineno, rtoks = self.rows[self.pos]
                rows.append((rlineno, [_parse_value(t, rlineno) for t in rtoks]))
                self.pos += 1
            yield label, index, lineno, rows

    def _eof_line(self):
        return self.rows[-1][0] if self.rows else 1

    def gamma(self, N):
        data = np.empty((N, N))
        linenos = []
        for i in range(N):
            lineno, vals = self.value_row(N, f"coupling row {i + 1}")
            data[i] = vals
            linenos.append(lineno)
        for i in range(N):
            for j in range(N):
                if i != j and data[i, j] < 0.0:
                    raise ProblemFormatError(
                        f"coupling entry ({i + 1},{j + 1}) = {data[i, j]:.6g} is negative",
                        linenos[i],
                    )
        return data, linenos


def _section_matrix(label, index, lineno, rows, nrows, ncols):
    if len(rows) != nrows:
        raise ProblemFormatError(
            f"section '{label} {index}' has {len(rows)} rows, expected {nrows}", lineno
        )
    m = np.empty((nrows, ncols))
    for r, (rlineno, vals) in enumerate(rows):
        if len(vals) != ncols:
            raise ProblemFormatError(
                f"row has {len(vals)} values, expected {ncols}", rlineno
            )
        m[r] = vals
    return m


def _collect_indexed(scanner, N, labels):
    """Read sections, return {(label, index): (lineno, rows)}; MU gets index None."""
    seen = {}
    for label, index, lineno, rows in scanner.sections(labels):
        if label != "MU" and not 1 <= index <= N:
            raise ProblemFormatError(f"mode index {index} out of range 1..{N}", lineno)
        key = (label, index)
        if key in seen:
            raise ProblemFormatError(f"duplicate section '{label} {index}'", lineno)
        seen[key] = (lineno, rows)
    return seen


def parse_problem(text):
    """Parse the problem file format into an :class:`MJLSProblem`.

    Raises :class:`ProblemFormatError` (with a line number) on malformed
    headers, non-finite values, dimension mismatches, coupling sign
    violations, and asymmetric right-hand sides.
    """
    scanner = _FileScanner(text)
    n, N = scanner.header()
    gamma, gamma_lines = scanner.gamma(N)
    seen = _collect_indexed(scanner, N, {"A", "Y"})
    a = np.empty((N, n, n))
    y = np.empty((N, n, n))
    for i in range(N):
        for label, dest in (("A", a), ("Y", y)):
            key = (label, i + 1)
            if key not in seen:
                raise ProblemFormatError(
                    f"missing section '{label} {i + 1}'", scanner._eof_line()
                )
            lineno, rows = seen[key]
            dest[i] = _section_matrix(label, i + 1, lineno, rows, n, n)
            if label == "Y":
                skew = np.abs(dest[i] - dest[i].T).max()
                scale = max(np.abs(dest[i]).max(), np.finfo(float).tiny)
                if skew > SYMMETRY_RTOL * scale:
                    raise ProblemFormatError(
                        f"Y {i + 1} is not symmetric: max |Y - Y^T| = {skew:.3e}", lineno
                    )
    for i in range(N):
        if gamma[i, i] >= 0.0:
            raise ProblemFormatError(
                f"diagonal coupling entry ({i + 1},{i + 1}) = {gamma[i, i]:.6g} must be negative",
                gamma_lines[i],
            )
    return MJLSProblem(ModeTuple(a), SymTuple(y), CouplingMatrix(gamma))


def emit_problem(problem, comment=None):
    """Serialize a problem to text; parse(emit(p)) is bit-exact."""
    lines = []
    if comment:
        lines.extend(f"# {c}" for c in comment.splitlines())
    lines.append(f"MJLS {problem.n} {problem.N}")
    for row in problem.gamma.gamma:
        lines.append(" ".join(_fmt(v) for v in row))
    for i in range(problem.N):
        _emit_matrix(lines, f"A {i + 1}", problem.a.blocks[i])
        _emit_matrix(lines, f"Y {i + 1}", problem.y.blocks[i])
    return "\n".join(lines) + "\n"


def parse_solution(text):
    """Parse a solution file (X-sections) into a :class:`SymTuple`."""
    scanner = _FileScanner(text)
    n, N = scanner.header()
    seen = _collect_indexed(scanner, N, {"X"})
    x = np.empty((N, n, n))
    for i in range(N):
        key = ("X", i + 1)
        if key not in seen:
            raise ProblemFormatError(f"missing section 'X {i + 1}'", scanner._eof_line())
        lineno, rows = seen[key]
        x[i] = _section_matrix("X", i + 1, lineno, rows, n, n)
    return SymTuple(x, symmetrize=True)


def emit_solution(x, comment=None):
    """Serialize a solution tuple to text (X-sections)."""
    lines = []
    if comment:
        lines.extend(f"# {c}" for c in comment.splitlines())
    lines.append(f"MJLS {x.n} {x.N}")
    for i in range(x.N):
        _emit_matrix(lines, f"X {i + 1}", x.blocks[i])
    return "\n".join(lines) + "\n"
