"""Solvers for coupled Lyapunov equations of Markov jump linear systems.

The package provides the data model (mode tuples, symmetric tuples,
coupling matrices), the structured operators of the coupled equations,
mean-square stability certification, fixed-point and preconditioned
Krylov solvers, optimization-based solvers, problem generators
(including the CSMA/CA networked-control model), Gramians and the H2
norm, and a command-line benchmark harness.
"""

from .linalg import (
    SchurConvergenceError,
    SchurForm,
    SingularLyapunovError,
    lyap_solve,
    real_schur,
    spectral_abscissa,
)
from .model import (
    CouplingMatrix,
    DimensionError,
    MJLSProblem,
    ModeTuple,
    ProblemFormatError,
    SolverReport,
    SymTuple,
    emit_problem,
    emit_solution,
    error_norm,
    parse_problem,
    parse_solution,
    residual_norm,
    tuple_inner,
    tuple_norm,
)
from .operators import (
    ShiftedModes,
    apply_L,
    apply_Linv,
    apply_LplusPi,
    apply_LplusPi_adjoint,
    apply_Pi,
    apply_T_GS,
    apply_T_J,
    assemble_kron,
    precondition_rhs,
    solve_direct,
)
from .stability import (
    IndeterminateStabilityError,
    ModewiseUnstableError,
    StabilityCertificate,
    is_ms_stable,
    scale_coupling,
    spectral_radius_LinvPi,
)
from .fixedpoint import (
    FixedPointConfig,
    KrylovBreakdownError,
    bicgstab,
    solve_gauss_seidel,
    solve_jacobi,
    solve_krylov_gs,
    solve_krylov_jacobi,
)
from .optimization import (
    LineSearchError,
    LineSearchParams,
    OptStopRule,
    TrustRegionParams,
    armijo_step,
    gradient,
    hessian_apply,
    objective,
    solve_cg,
    solve_sd,
    solve_tr,
    tcg,
    wolfe_step,
)
from .generators import (
    CsmaConfig,
    MJLSSystem,
    UnstableSystemError,
    cart_system,
    controllability_problem,
    csma_rate,
    csma_state_labels,
    csma_theta,
    emit_system,
    gramians,
    h2_norm,
    known_example,
    observability_problem,
    parse_system,
    random_spd_problem,
    random_stable_problem,
    stationary_distribution,
)

__version__ = "0.1.0"
