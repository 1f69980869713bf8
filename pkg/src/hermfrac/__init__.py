"""Hermite spectral collocation for fractional Laplacians on R and R^2."""

from .basis import BasisKind
from .fracdm import (
    AssemblyError,
    FracDiffMatrix,
    ScaledGrid,
    dm,
    dm_lagrange_1d,
    dm_multiterm,
    dm_normalized_1d,
    dm_normalized_2d,
    dm_overscaled_1d,
    dm_overscaled_2d,
    dump_matrix,
    frac_normalized_kernel,
    frac_overscaled_entry,
    load_matrix,
    oracle_frac_apply,
)
from .quadrature import ErrorPair, GaussHermiteRule, error_norms, gauss_hermite, project
from .solve import (
    CollocationProblem,
    ConvergenceError,
    EigenResult,
    SolverError,
    SpectralSolution,
    SpuriousSpectrumError,
    basis_value_matrix,
    condition_number,
    evaluate_solution,
    solve_eigen,
    solve_linear,
    solve_newton,
)
from .specfun import (
    AccuracyError,
    gamma_ratio,
    hermite_eval,
    hermite_functions,
    hyp1f1,
    hyp1f1_recur_step,
    monomial_coeffs,
)

__version__ = "0.1.0"
