"""Nash equilibria of m-player control games governed by semilinear elliptic PDEs.

The package discretises the state equation on uniform 1D/2D grids, computes
variational equilibria of the players' coupled first-order systems, certifies
full stability through a second-order condition on the critical subspace, and
probes the stability moduli empirically.
"""

from .calculus import (
    EquilibriumPoint,
    evaluate_point,
    gradient,
    hessian_block_apply,
    operator_F,
    pseudo_gradient,
    quadratic_form,
    quadratic_form_control_part,
    quadratic_form_state_part,
)
from .config import ConfigError, Problem, build_problem, load_config
from .equilibrium import (
    EquilibriumResult,
    SolverSettings,
    check_variational_equilibrium,
    residual,
    solve_equilibrium,
)
from .expr import diff_y, evaluate, parse
from .game import (
    ControlProfile,
    GameSpec,
    Perturbation,
    PlayerSpec,
    TiltVector,
    cost,
    project_admissible,
    total_source,
)
from .mesh import Grid, GridFunction, inner_product, l2_norm
from .pde import (
    EllipticOperator,
    LinearSolveSettings,
    NewtonSettings,
    solve_adjoint,
    solve_linearized,
    solve_second_order,
    solve_state,
)
from .perturb import StabilityReport, export_report, run_harness
from .stability import StabilityCertificate, certify, critical_subspace, verify_local_nash, witness_descent

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ControlProfile",
    "EllipticOperator",
    "EquilibriumPoint",
    "EquilibriumResult",
    "GameSpec",
    "Grid",
    "GridFunction",
    "LinearSolveSettings",
    "NewtonSettings",
    "Perturbation",
    "PlayerSpec",
    "Problem",
    "SolverSettings",
    "StabilityCertificate",
    "StabilityReport",
    "TiltVector",
    "build_problem",
    "certify",
    "check_variational_equilibrium",
    "cost",
    "critical_subspace",
    "diff_y",
    "evaluate",
    "evaluate_point",
    "export_report",
    "gradient",
    "hessian_block_apply",
    "inner_product",
    "l2_norm",
    "load_config",
    "operator_F",
    "parse",
    "project_admissible",
    "pseudo_gradient",
    "quadratic_form",
    "quadratic_form_control_part",
    "quadratic_form_state_part",
    "residual",
    "run_harness",
    "solve_adjoint",
    "solve_equilibrium",
    "solve_linearized",
    "solve_second_order",
    "solve_state",
    "total_source",
    "verify_local_nash",
    "witness_descent",
]
