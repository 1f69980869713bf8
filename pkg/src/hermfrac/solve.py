"""Dense collocation solvers: linear, Newton and the fractional oscillator."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla

from .basis import BasisKind
from .fracdm import (
    MAX_N_1D,
    MAX_N_2D_NORMALIZED,
    MAX_N_2D_OVERSCALED,
    DUMP_MAGIC,
    ScaledGrid,
    _write_dump,
    dm_lagrange_1d,
    dm_multiterm,
    lagrange_coefficients,
    read_dump,
)
from .quadrature import gauss_hermite
from .specfun import hermite_functions

NEWTON_TOL = 1e-14
NEWTON_TOL_FLOOR = 1e-16
NEWTON_MAXIT = 50
IMAG_TOL = 1e-8
SVD_MAX = 1024


class SolverError(ArithmeticError):
    """Linear algebra failure; ``condition`` holds a condition estimate."""

    def __init__(self, message, condition=math.nan):
        super().__init__(message)
        self.condition = condition


class ConvergenceError(ArithmeticError):
    """Newton hit ``maxit``; ``residual`` is the last residual norm."""

    def __init__(self, message, residual, history=()):
        super().__init__(message)
        self.residual = residual
        self.history = list(history)


class SpuriousSpectrumError(ArithmeticError):
    """Eigenvalues with imaginary part above the acceptance threshold."""

    def __init__(self, message, max_imag):
        super().__init__(message)
        self.max_imag = max_imag


# ---------------------------------------------------------------------------
# problem description
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Nonlinearity:
    """Pointwise reaction ``f(u)`` with derivative ``df(u)``."""

    name: str
    f: Callable
    df: Optional[Callable]

    @property
    def is_linear(self):
        return self.name in ("none", "linear-u")


NONE = Nonlinearity("none", lambda u: np.zeros_like(u), lambda u: np.zeros_like(u))
LINEAR = Nonlinearity("linear-u", lambda u: u, lambda u: np.ones_like(u))
SQUARE = Nonlinearity("square-u", lambda u: u * u, lambda u: 2 * u)


def custom_nonlinearity(f, df=None, name="custom"):
    return Nonlinearity(name, f, df)


def nonlinearity(name):
    """Look up ``none``, ``linear-u`` or ``square-u``."""
    table = {n.name: n for n in (NONE, LINEAR, SQUARE)}
    try:
        return table[name]
    except KeyError:
        raise ValueError(f"unknown nonlinearity {name!r}; expected one of "
                         + ", ".join(table)) from None


@dataclass(frozen=True)
class CollocationProblem:
    """``sum_j (-Delta)^{a_j/2} u + gamma f(u) = g`` collocated on Hermite nodes.

    ``rhs`` takes physical coordinates: ``g(x)`` in 1-D, ``g(x, y)`` in 2-D.
    """

    alphas: tuple
    gamma: float
    nonlinearity: Nonlinearity
    rhs: Callable
    basis: BasisKind
    r: float = 1.0
    N: int = 16
    dim: int = 1

    def __post_init__(self):
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(self, "basis", BasisKind.parse(self.basis))
        if not self.alphas:
            raise ValueError("at least one fractional order is required")
        for a in self.alphas:
            if not 0 < a < 2:
                raise ValueError(f"solvers need fractional orders in (0, 2), got {a}")
        if not (self.r > 0 and math.isfinite(self.r)):
            raise ValueError("scaling factor must be positive and finite")
        if self.dim not in (1, 2):
            raise ValueError("dim must be 1 or 2")
        cap = MAX_N_1D if self.dim == 1 else {
            BasisKind.OVERSCALED: MAX_N_2D_OVERSCALED,
            BasisKind.NORMALIZED: MAX_N_2D_NORMALIZED,
        }.get(self.basis, 0)
        if not 1 <= self.N <= cap:
            raise ValueError(f"N={self.N} outside the cap {cap} for "
                             f"{self.basis.value} in {self.dim}-D")

    @property
    def grid(self):
        return ScaledGrid(gauss_hermite(self.N), self.r)

    def rhs_at_nodes(self):
        pts = self.grid.points
        if self.dim == 1:
            return np.asarray(self.rhs(pts), dtype=float)
        X, Y = np.meshgrid(pts, pts, indexing="ij")
        return np.asarray(self.rhs(X, Y), dtype=float).ravel()


# ---------------------------------------------------------------------------
# solutions
# ---------------------------------------------------------------------------

@dataclass
class SpectralSolution:
    """Coefficients of ``u_N`` together with what is needed to evaluate it."""

    coeffs: np.ndarray
    basis: BasisKind
    r: float
    nodes: ScaledGrid
    residual_norm: float
    iterations: int
    dim: int = 1
    history: list = field(default_factory=list)

    @property
    def N(self):
        return self.nodes.rule.N

    def evaluate(self, points):
        return evaluate_solution(self, points)

    def nodal_values(self):
        """``u_N`` at the collocation points, row-major in 2-D."""
        B = basis_value_matrix(self.basis, self.N, self.dim)
        return B @ self.coeffs


def _modal_coeffs(sol):
    """Return ``(basis, coefficient array)`` in a modal family."""
    if sol.basis is not BasisKind.LAGRANGE:
        return sol.basis, sol.coeffs
    if sol.dim != 1:
        raise ValueError("2-D Lagrange solutions are not supported")
    B = lagrange_coefficients(sol.nodes.rule)
    return BasisKind.NORMALIZED, B @ sol.coeffs


def evaluate_solution(sol, points):
    """``u_N`` at physical points: ``sum_n c_n phi_n(r x)``.

    1-D ``points`` is an array; 2-D ``points`` is a pair ``(X, Y)`` of equally
    shaped arrays.  Lagrange solutions are synthesised through their
    normalised-basis coefficients.
    """
    basis, c = _modal_coeffs(sol)
    n = sol.N
    if sol.dim == 1:
        x = np.asarray(points, dtype=float)
        phi = hermite_functions(n, sol.r * x, basis)
        return np.tensordot(c, phi, axes=1)
    X, Y = (np.asarray(p, dtype=float) for p in points)
    px = hermite_functions(n, sol.r * X.ravel(), basis)
    py = hermite_functions(n, sol.r * Y.ravel(), basis)
    C = c.reshape(n, n)
    vals = np.einsum("pi,pq,qi->i", px, C, py)
    return vals.reshape(X.shape)


def basis_value_matrix(basis, N, dim=1):
    """``B[i, j] = phi_j(node_i)``; the identity for the Lagrange basis.

    Scaling does not enter: ``phi_j(r * node_i / r) = phi_j(node_i)``.
    """
    basis = BasisKind.parse(basis)
    if basis is BasisKind.LAGRANGE:
        return np.eye(N ** dim)
    x = gauss_hermite(N).nodes
    B = hermite_functions(N, x, basis).T
    if dim == 1:
        return B
    return np.kron(B, B)


# ---------------------------------------------------------------------------
# solvers
# ---------------------------------------------------------------------------

def assemble_operator(problem, **kw):
    """Multi-term DM for the problem's orders, basis and scaling."""
    return dm_multiterm(problem.N, problem.alphas, problem.basis, problem.r,
                        problem.dim, **kw)


def _lu_solve(A, b):
    try:
        lu, piv = sla.lu_factor(A, check_finite=True)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise SolverError(f"LU factorisation failed: {exc}") from exc
    # column scales of the over-scaled matrices span many decades, so a pivot
    # ratio says little; only exact breakdown counts as singular
    if np.any(np.diag(lu) == 0):
        raise SolverError("matrix is singular (zero pivot)", condition=math.inf)
    x = sla.lu_solve((lu, piv), b)
    if not np.all(np.isfinite(x)):
        raise SolverError("solution is not finite", condition=condition_number(A))
    return x


def solve_linear(problem, D=None):
    """Solve ``(D + gamma B) c = g`` (``B`` omitted for ``nonlinearity=none``).

    Parameters
    ----------
    problem : CollocationProblem
        ``nonlinearity`` must be ``none`` or ``linear-u``.
    D : FracDiffMatrix or ndarray, optional
        Pre-assembled operator; assembled from ``problem`` when absent.
    """
    if not problem.nonlinearity.is_linear:
        raise ValueError("solve_linear needs nonlinearity 'none' or 'linear-u'")
    D = np.asarray(assemble_operator(problem) if D is None else D)
    A = D.copy()
    if problem.nonlinearity.name == "linear-u":
        A = A + problem.gamma * basis_value_matrix(problem.basis, problem.N, problem.dim)
    g = problem.rhs_at_nodes()
    c = _lu_solve(A, g)
    res = float(np.max(np.abs(A @ c - g)))
    return SpectralSolution(c, problem.basis, problem.r, problem.grid, res, 1, problem.dim)


def solve_newton(problem, tol=NEWTON_TOL, maxit=NEWTON_MAXIT, D=None, c0=None):
    """Newton iteration for ``R(c) = D c + gamma f(B c) - g = 0``.

    The Jacobian is ``D + gamma diag(f'(B c)) B``.  Iteration starts from
    ``c0`` (zero by default) and stops once ``||R||_inf <= tol``; the
    residual history is kept on the returned solution.
    """
    nl = problem.nonlinearity
    if nl.df is None:
        raise ValueError("Newton iteration needs the derivative of the nonlinearity")
    if not tol >= NEWTON_TOL_FLOOR:
        raise ValueError(f"tolerance below {NEWTON_TOL_FLOOR} is not attainable")
    D = np.asarray(assemble_operator(problem) if D is None else D)
    B = basis_value_matrix(problem.basis, problem.N, problem.dim)
    g = problem.rhs_at_nodes()
    c = np.zeros(D.shape[0]) if c0 is None else np.array(c0, dtype=float)
    gam = problem.gamma

    def residual(c):
        u = B @ c
        return D @ c + gam * nl.f(u) - g, u

    R, u = residual(c)
    history = [float(np.max(np.abs(R)))]
    it = 0
    while history[-1] > tol:
        if it >= maxit:
            raise ConvergenceError(
                f"Newton did not reach {tol:g} in {maxit} iterations "
                f"(residual {history[-1]:.3e})", history[-1], history)
        J = D + gam * (nl.df(u)[:, None] * B)
        c = c - _lu_solve(J, R)
        R, u = residual(c)
        history.append(float(np.max(np.abs(R))))
        it += 1
        if not math.isfinite(history[-1]):
            raise ConvergenceError("Newton iterate diverged", history[-1], history)
    return SpectralSolution(c, problem.basis, problem.r, problem.grid,
                            history[-1], it, problem.dim, history)


# ---------------------------------------------------------------------------
# eigenproblem
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EigenResult:
    eigenvalues: np.ndarray
    max_imag: float
    N: int
    alpha: float


def solve_eigen(N, alpha, r=1.0):
    """Spectrum of ``(-Delta)^{alpha/2} + x^2`` on the Lagrange basis.

    With cardinal functions the potential is the diagonal ``(node/r)^2``.
    Raises :class:`SpuriousSpectrumError` if any eigenvalue has an imaginary
    part above ``IMAG_TOL``.
    """
    if not 1 <= N <= 512:
        raise ValueError("eigenproblem size must be in [1, 512]")
    if not 0 < alpha < 2:
        raise ValueError("fractional order must lie in (0, 2)")
    D = dm_lagrange_1d(N, alpha, r).entries
    x = gauss_hermite(N).nodes / r
    A = D + np.diag(x * x)
    try:
        ev = sla.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"eigenvalue computation failed: {exc}") from exc
    max_imag = float(np.max(np.abs(ev.imag)))
    if max_imag > IMAG_TOL:
        raise SpuriousSpectrumError(
            f"eigenvalue imaginary part {max_imag:.2e} exceeds {IMAG_TOL:g}", max_imag)
    return EigenResult(np.sort(ev.real), max_imag, N, float(alpha))


def condition_number(M):
    """2-norm condition number ``sigma_max / sigma_min`` (``inf`` if singular)."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("condition number needs a square matrix")
    if M.shape[0] > SVD_MAX:
        raise ValueError(f"full SVD limited to size {SVD_MAX}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    s = sla.svdvals(M)
    if s[-1] == 0:
        return math.inf
    return float(s[0] / s[-1])


# ---------------------------------------------------------------------------
# dump
# ---------------------------------------------------------------------------

def dump_solution(sol, path_or_buf):
    """Write a solution in the matrix dump format (one coefficient per row)."""
    header = {
        "kind": "solution",
        "basis": sol.basis.value,
        "r": format(sol.r, ".17g"),
        "dim": str(sol.dim),
        "n_per_dim": str(sol.N),
        "residual_norm": format(sol.residual_norm, ".17g"),
        "iterations": str(sol.iterations),
        "rows": str(sol.coeffs.size),
        "cols": "1",
    }
    _write_dump(header, sol.coeffs[:, None], path_or_buf)


def load_solution(path_or_buf):
    header, data = read_dump(path_or_buf)
    if header.get("kind") != "solution":
        raise ValueError("dump does not hold a solution")
    r = float(header["r"])
    N = int(header["n_per_dim"])
    return SpectralSolution(data[:, 0], BasisKind.parse(header["basis"]), r,
                            ScaledGrid(gauss_hermite(N), r),
                            float(header["residual_norm"]), int(header["iterations"]),
                            int(header["dim"]))


__all__ = [
    "CollocationProblem", "ConvergenceError", "EigenResult", "LINEAR", "NONE",
    "Nonlinearity", "SQUARE", "SolverError", "SpectralSolution",
    "SpuriousSpectrumError", "assemble_operator", "basis_value_matrix",
    "condition_number", "custom_nonlinearity", "dump_solution", "evaluate_solution",
    "load_solution", "nonlinearity", "solve_eigen", "solve_linear", "solve_newton",
    "DUMP_MAGIC",
]
