"""Desirability-based optimal control of polynomial-drift diffusions.

Three interchangeable ways to compute the exponentially transformed
value function psi and its feedback law, plus a closed-loop simulator:

- `KoopmanPolicy`: expand psi over monomials of the state and the
  observable z = exp(-phi/lambda); the PDE becomes a lattice ODE.
- `HjbPolicy`: finite differences on a uniform grid (the reference).
- `PathIntegralEstimator`: Monte Carlo averages of exponentiated path
  costs (pointwise, unbiased, with standard errors).

All three consume the same validated `ControlProblem`.
"""

from .exceptions import (
    CutoffTooSmall,
    DesirabilityUnderflow,
    NoiseOnUncontrolled,
    NonFinite,
    NonQuadraticCost,
    NotProportional,
    NumericalError,
    OutOfDomain,
    ParseError,
    PsictlError,
    SingularWeight,
    StabilityViolation,
    Unstable,
    ValidationError,
)
from .polynomial import Polynomial
from .problem import ControlProblem, QuadraticCost, compute_lambda
from .operators import PolyOperator, apply_operator, ito_extend
from .koopman import (
    CoeffOde,
    CoeffTensor,
    KoopmanPolicy,
    compile_ode,
    eval_control,
    eval_psi,
    eval_psi_grid,
    integrate_backward,
    read_coefficients_csv,
    terminal_condition,
    write_coefficients_csv,
)
from .hjb import (
    HjbPolicy,
    PsiField,
    UniformGrid,
    fd_control,
    interpolate_psi,
    solve_hjb,
    write_psi_csv,
)
from .pathintegral import (
    FkEstimate,
    PathIntegralEstimator,
    RngStream,
    euler_maruyama_path,
    feynman_kac_psi,
    write_fk_csv,
)
from .simulate import (
    Controller,
    Trajectory,
    ZeroPolicy,
    clamp_state,
    closed_loop_ensemble,
    closed_loop_run,
)
from .config import (
    RunConfig,
    load_config,
    load_config_file,
    preset_config,
    provenance_lines,
    van_der_pol,
)

__version__ = "0.1.0"

__all__ = [
    "CoeffOde", "CoeffTensor", "ControlProblem", "Controller",
    "CutoffTooSmall", "DesirabilityUnderflow", "FkEstimate", "HjbPolicy",
    "KoopmanPolicy", "NoiseOnUncontrolled", "NonFinite", "NonQuadraticCost",
    "NotProportional", "NumericalError", "OutOfDomain", "ParseError",
    "PathIntegralEstimator", "PolyOperator", "Polynomial", "PsiField",
    "PsictlError", "QuadraticCost", "RngStream", "RunConfig",
    "SingularWeight", "StabilityViolation", "Trajectory", "UniformGrid",
    "Unstable", "ValidationError", "ZeroPolicy", "apply_operator",
    "clamp_state", "closed_loop_ensemble", "closed_loop_run", "compile_ode",
    "compute_lambda", "eval_control", "eval_psi", "eval_psi_grid",
    "euler_maruyama_path", "fd_control", "feynman_kac_psi",
    "integrate_backward", "interpolate_psi", "ito_extend", "load_config",
    "load_config_file", "preset_config", "provenance_lines",
    "read_coefficients_csv", "solve_hjb", "terminal_condition",
    "van_der_pol", "write_coefficients_csv", "write_fk_csv", "write_psi_csv",
]
