"""Gauss-Hermite rules, error norms and quadrature projection."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigvalsh_tridiagonal

from .basis import BasisKind
from .specfun import hermite_functions

MAX_RULE_SIZE = 512
SQRT_PI = math.sqrt(math.pi)


@dataclass(frozen=True)
class GaussHermiteRule:
    """Nodes are the roots of ``H_N``; two weight families.

    ``weights_classical`` integrate ``f(x) exp(-x^2)``.  ``weights_function``
    are ``sqrt(pi) / (N Hhat_{N-1}(x_j)^2)``, i.e. the classical weights times
    ``exp(x_j^2)``, and integrate ``f(x)`` directly for ``f`` in the Hermite
    function space.  For ``N`` above ~360 the outermost classical weights
    underflow to zero; the function weights stay representable.
    """

    N: int
    nodes: np.ndarray
    weights_classical: np.ndarray
    weights_function: np.ndarray

    def __post_init__(self):
        for arr in (self.nodes, self.weights_classical, self.weights_function):
            arr.flags.writeable = False


def _symmetrize(x):
    x = 0.5 * (x - x[::-1])
    if x.size % 2:
        x[x.size // 2] = 0.0
    return x


def gauss_hermite(N):
    """Gauss-Hermite rule of size ``N`` (``1 <= N <= 512``).

    Nodes come from the symmetric tridiagonal Jacobi matrix (zero diagonal,
    off-diagonal ``sqrt(k/2)``), are symmetrised, then polished by one Newton
    step on the normalised ``H_N``.
    """
    if not 1 <= N <= MAX_RULE_SIZE:
        raise ValueError(f"rule size must be in [1, {MAX_RULE_SIZE}], got {N}")
    if N == 1:
        x = np.zeros(1)
    else:
        off = np.sqrt(np.arange(1, N) / 2.0)
        try:
            x = eigvalsh_tridiagonal(np.zeros(N), off)
        except np.linalg.LinAlgError as exc:
            raise ArithmeticError(f"Jacobi eigenvalues failed for N={N}") from exc
        x = _symmetrize(np.sort(x))
        # Newton on Hhat_N: Hhat_N' = sqrt(2N) Hhat_{N-1} - x Hhat_N
        h = hermite_functions(N + 1, x)
        hn, hn1 = h[N], h[N - 1]
        x = _symmetrize(x - hn / (math.sqrt(2.0 * N) * hn1 - x * hn))
    h_last = hermite_functions(N, x)[N - 1]
    w_fun = SQRT_PI / (N * h_last ** 2)
    with np.errstate(under="ignore"):
        w_cls = w_fun * np.exp(-x * x)
    return GaussHermiteRule(N, x, w_cls, w_fun)


# ---------------------------------------------------------------------------
# error norms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ErrorPair:
    """``e_w`` is the *squared* weighted L2 error, ``e_m`` the max nodal error."""

    e_w: float
    e_m: float


def error_rule_size(N):
    """Error-norm quadrature size: ``max(2N, 64)`` capped at 512."""
    return min(max(2 * N, 64), MAX_RULE_SIZE)


def weight_exponent(kind):
    """``log(omega(x)) / x^2``: 1 for the over-scaled basis, 0 otherwise."""
    return 1.0 if BasisKind.parse(kind) is BasisKind.OVERSCALED else 0.0


def error_norms(exact, approx, rule, weight_kind):
    """Weighted and maximum errors of a solution against an exact sampler.

    Errors are measured in the reference variable ``y = r x``: with
    ``v(y) = u(y/r) - u_N(y/r)``,

        e_w = sum_j w_j exp(x_j^2) omega(x_j) v(x_j)^2,
        e_m = max_j |v(x_j)|,

    where ``omega = exp(x^2)`` for the over-scaled basis and 1 for the
    others.  2-D solutions use the tensor rule.

    Parameters
    ----------
    exact : callable
        Exact solution; takes ``x`` (1-D) or ``(x, y)`` (2-D) arrays.
    approx : SpectralSolution
        Anything with ``evaluate(points)``, ``r`` and ``dim``.
    rule : GaussHermiteRule
    weight_kind : BasisKind
    """
    x = rule.nodes
    r = approx.r
    k = weight_exponent(weight_kind)
    if approx.dim == 1:
        phys = x / r
        diff = np.asarray(exact(phys), float) - approx.evaluate(phys)
        log_w = np.log(rule.weights_function) + k * x * x
    else:
        X, Y = np.meshgrid(x / r, x / r, indexing="ij")
        diff = np.asarray(exact(X, Y), float) - approx.evaluate((X, Y))
        lw = np.log(rule.weights_function)
        lw = lw[:, None] + lw[None, :]
        xx = x[:, None] ** 2 + x[None, :] ** 2
        log_w = lw + k * xx
    if not np.all(np.isfinite(diff)):
        return ErrorPair(math.inf, math.inf)
    with np.errstate(divide="ignore", under="ignore"):
        terms = np.exp(log_w + 2 * np.log(np.abs(diff)))
    return ErrorPair(float(np.sum(terms)), float(np.max(np.abs(diff))))


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------

def projection_weights(rule, kind):
    """Discrete-orthogonality weights paired with each basis family.

    ``weights_function`` for the normalised functions; those times
    ``exp(x_j^2)`` for the over-scaled family, whose orthogonality weight is
    ``exp(x^2)``.
    """
    kind = BasisKind.parse(kind)
    if kind is BasisKind.OVERSCALED:
        return rule.weights_function * np.exp(rule.nodes ** 2)
    return rule.weights_function


def project(f, basis, M, r=1.0, dim=1):
    """Quadrature projection of ``f`` onto the first ``M`` basis functions.

    ``c_n = pi^{-1/2} sum_j w'_j f(x_j / r) phi_n(x_j)`` on the ``M``-point
    rule.  For the Lagrange basis the coefficients are the nodal samples.
    In 2-D the result is the ``M*M`` vector ordered ``p*M + q`` for
    ``phi_p(x) phi_q(y)``.
    """
    basis = BasisKind.parse(basis)
    if not 1 <= M <= MAX_RULE_SIZE:
        raise ValueError(f"projection size must be in [1, {MAX_RULE_SIZE}]")
    if r <= 0:
        raise ValueError("scaling factor must be positive")
    rule = gauss_hermite(M)
    x = rule.nodes
    if dim == 1:
        samples = np.asarray(f(x / r), dtype=float)
    else:
        X, Y = np.meshgrid(x / r, x / r, indexing="ij")
        samples = np.asarray(f(X, Y), dtype=float)
    if not np.all(np.isfinite(samples)):
        raise ValueError("sampler returned non-finite values")
    if basis is BasisKind.LAGRANGE:
        return samples.ravel().copy()
    # w' phi_n folded as  w_fun * exp(k x^2 / 2) * Hhat_n  to stay in range
    k = weight_exponent(basis)
    wt = rule.weights_function * np.exp(0.5 * k * x * x)
    phi = hermite_functions(M, x, BasisKind.NORMALIZED) * wt[None, :]
    if dim == 1:
        return phi @ samples / SQRT_PI
    return (phi @ samples @ phi.T).ravel() / math.pi
