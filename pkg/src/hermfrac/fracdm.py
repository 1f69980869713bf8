"""Fractional Laplacian differentiation matrices on Hermite-type bases.

Conventions
-----------
* Collocation nodes are the Gauss-Hermite nodes ``x_i``.  With a scaling
  factor ``r`` the physical collocation points are ``x_i / r`` and the
  expansion is ``u(x) = sum_n c_n phi_n(r x)``.  Since
  ``(-Delta)^{a/2}[phi(r .)](x) = r^a [(-Delta)^{a/2} phi](r x)``, the scaled
  matrix is ``r^alpha`` times the unscaled matrix on the standard nodes.
* 2-D grids are ordered row-major: row ``i*N + j`` is the point
  ``(x_i, y_j)`` and column ``p*N + q`` is ``phi_p(x) phi_q(y)``.
* Fourier transforms are unitary, ``F[u](xi) = (2 pi)^{-1/2} int u e^{-i x xi}``.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.special import gammaln, roots_jacobi

from .basis import BasisKind
from .quadrature import SQRT_PI, gauss_hermite
from .specfun import (
    AccuracyError,
    gamma_ratio,
    hermite_functions,
    hyp1f1,
    hyp1f1_recur_step,
    log_central_binomial_factor,
    monomial_coeffs,
)

LN2 = math.log(2.0)

MAX_N_1D = 256
MAX_N_2D_OVERSCALED = 32
MAX_N_2D_NORMALIZED = 24
#: largest N for which the monomial (closed-form) route of the normalised
#: basis is used by default; cancellation grows roughly like 2^(N/2)
NORMALIZED_CLOSED_MAX = 20
MAX_TERMS_MULTI = 16

SCALING_CONVENTION = "points=nodes/r; D(r)=r^alpha*D(nodes)"


class AssemblyError(ArithmeticError):
    """Matrix assembly failed at a specific entry."""


def check_alpha(alpha, allow_two=True):
    alpha = float(alpha)
    upper_ok = alpha <= 2.0 if allow_two else alpha < 2.0
    if not (alpha > 0.0 and upper_ok and math.isfinite(alpha)):
        bound = "(0, 2]" if allow_two else "(0, 2)"
        raise ValueError(f"fractional order must lie in {bound}, got {alpha}")
    return alpha


# ---------------------------------------------------------------------------
# data containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScaledGrid:
    """Gauss-Hermite nodes together with the scaling factor."""

    rule: object
    r: float = 1.0

    @property
    def points(self):
        return self.rule.nodes / self.r


@dataclass(frozen=True)
class FracDiffMatrix:
    """Dense matrix of ``(-Delta)^{alpha/2}`` (or a sum over several orders)."""

    basis: BasisKind
    alphas: tuple
    r: float
    dim: int
    n_per_dim: int
    entries: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.entries.flags.writeable = False

    @property
    def alpha(self):
        if len(self.alphas) != 1:
            raise AttributeError("multi-term matrix has several orders; use .alphas")
        return self.alphas[0]

    @property
    def size(self):
        return self.n_per_dim ** self.dim

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)


# ---------------------------------------------------------------------------
# 1F1 chains in the first parameter
# ---------------------------------------------------------------------------

#: largest tolerated amplification of seed errors along a recurrence chain
RECURRENCE_MAX_GROWTH = 1e3


def hyp1f1_chain(a0, b, x, count, method="direct"):
    """``1F1(a0 + m; b; x)`` for ``m = 0..count-1``, shape ``(count,) + x.shape``.

    ``method="recurrence"`` evaluates ``m = 0, 1`` directly and advances with
    the three-term recurrence in ``a``.  The forward recurrence is unstable
    for large negative ``x`` (the wanted solution is recessive there).
    Because the recurrence is linear, unit perturbations of either seed are
    propagated alongside the values; they measure, element by element, how
    much a seed error has grown relative to the value.  Points where that
    growth exceeds ``RECURRENCE_MAX_GROWTH`` are recomputed directly.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty((count,) + x.shape)
    if count == 0:
        return out
    if method == "direct" or count <= 2:
        a = a0 + np.arange(count).reshape((count,) + (1,) * x.ndim)
        out[...] = hyp1f1(a, b, x[None, ...])
        return out
    if method != "recurrence":
        raise ValueError(f"unknown method {method!r}")
    out[0] = hyp1f1(a0, b, x)
    out[1] = hyp1f1(a0 + 1, b, x)
    # p: response to a relative perturbation of out[0]; q: of out[1]
    p_prev, p_cur = np.abs(out[0]), np.zeros_like(x)
    q_prev, q_cur = np.zeros_like(x), np.abs(out[1])
    growth = np.ones_like(x)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for m in range(1, count - 1):
            am = a0 + m
            out[m + 1] = hyp1f1_recur_step(out[m - 1], out[m], am, b, x)
            p_prev, p_cur = p_cur, hyp1f1_recur_step(p_prev, p_cur, am, b, x)
            q_prev, q_cur = q_cur, hyp1f1_recur_step(q_prev, q_cur, am, b, x)
            ratio = (np.abs(p_cur) + np.abs(q_cur)) / np.abs(out[m + 1])
            growth = np.fmax(growth, np.where(np.isfinite(ratio), ratio, np.inf))
    bad = ~(growth <= RECURRENCE_MAX_GROWTH) | ~np.all(np.isfinite(out), axis=0)
    if np.any(bad):
        a = a0 + np.arange(count).reshape((count,) + (1,) * x[bad].ndim)
        out[:, bad] = hyp1f1(a, b, x[bad][None, ...])
    return out


# ---------------------------------------------------------------------------
# over-scaled basis, 1-D
# ---------------------------------------------------------------------------

def _overscaled_prefactors(alpha, m, odd):
    """Signed constants multiplying 1F1 in the over-scaled entries."""
    m = np.asarray(m, dtype=float)
    sign = np.where(m % 2 == 0, 1.0, -1.0)
    if not odd:
        log_c = alpha * LN2 + log_central_binomial_factor(m)
        return sign * np.exp(log_c) * gamma_ratio(m + alpha / 2 + 0.5, m + 0.5)
    log_c = ((alpha + 1) * LN2 + 0.5 * gammaln(2 * m + 2)
             - (m + 0.5) * LN2 - gammaln(m + 1))
    return sign * np.exp(log_c) * gamma_ratio(m + alpha / 2 + 1.5, m + 1.5)


def frac_overscaled_entry(n, alpha, z):
    """``(-Delta)^{alpha/2} Htilde_n`` evaluated at ``z`` (scalar or array).

    Even ``n = 2m``::

        2^a (-1)^m sqrt((2m)!)/(2^m m!) G(m+a/2+1/2)/G(m+1/2) 1F1(m+a/2+1/2; 1/2; -z^2)

    odd ``n = 2m+1``::

        2^(a+1) (-1)^m sqrt((2m+1)!)/(2^(m+1/2) m!) G(m+a/2+3/2)/G(m+3/2)
            z 1F1(m+a/2+3/2; 3/2; -z^2)
    """
    if n < 0:
        raise ValueError("order must be non-negative")
    alpha = check_alpha(alpha)
    z = np.asarray(z, dtype=float)
    m, odd = divmod(n, 2)
    pref = float(_overscaled_prefactors(alpha, m, bool(odd)))
    if odd:
        val = pref * z * hyp1f1(m + alpha / 2 + 1.5, 1.5, -z * z)
    else:
        val = pref * hyp1f1(m + alpha / 2 + 0.5, 0.5, -z * z)
    return float(val) if np.ndim(val) == 0 else val


def overscaled_values(n_basis, alpha, z, method="direct"):
    """Matrix ``V[i, n] = (-Delta)^{alpha/2} Htilde_n(z_i)``, ``n < n_basis``."""
    alpha = check_alpha(alpha)
    z = np.atleast_1d(np.asarray(z, dtype=float))
    out = np.empty((z.size, n_basis))
    n_even = (n_basis + 1) // 2
    n_odd = n_basis // 2
    arg = -z * z
    if n_even:
        f = hyp1f1_chain(alpha / 2 + 0.5, 0.5, arg, n_even, method)
        pref = _overscaled_prefactors(alpha, np.arange(n_even), odd=False)
        out[:, 0::2] = (pref[:, None] * f).T
    if n_odd:
        f = hyp1f1_chain(alpha / 2 + 1.5, 1.5, arg, n_odd, method)
        pref = _overscaled_prefactors(alpha, np.arange(n_odd), odd=True)
        out[:, 1::2] = (pref[:, None] * f * z[None, :]).T
    return out


# ---------------------------------------------------------------------------
# normalised basis, 1-D
# ---------------------------------------------------------------------------

def _kernel_hyp_param(k, alpha):
    """First 1F1 parameter of kernel ``k``: ``(2m+1+a)/2`` or ``(2m+3+a)/2``."""
    k = np.asarray(k, dtype=float)
    return (k + 1 + alpha + k % 2) / 2


def _normalized_kernel_prefactor(k, alpha):
    """``2^{(2m+a)/2}`` (even) or ``2^{(2m+2+a)/2}`` (odd), times
    ``G(first 1F1 parameter) / sqrt(pi)``, as an array over ``k``."""
    k = np.asarray(k, dtype=float)
    a = _kernel_hyp_param(k, alpha)
    return np.exp((k + k % 2 + alpha) / 2 * LN2 + gammaln(a)) / SQRT_PI


def frac_normalized_kernel(k, alpha, x):
    """Real part of ``F^{-1}[exp(-xi^2/2) xi^k |xi|^alpha](x)`` up to ``i``.

    Even ``k`` gives a real kernel.  For odd ``k`` the transform is purely
    imaginary; the returned value is the coefficient of ``i``::

        k = 2m:   2^{(2m+a)/2}/sqrt(pi) G((2m+1+a)/2) 1F1((2m+1+a)/2; 1/2; -x^2/2)
        k = 2m+1: 2^{(2m+2+a)/2}/sqrt(pi) G((2m+3+a)/2) x 1F1((2m+3+a)/2; 3/2; -x^2/2)
    """
    if k < 0:
        raise ValueError("order must be non-negative")
    alpha = check_alpha(alpha)
    x = np.asarray(x, dtype=float)
    pref = float(_normalized_kernel_prefactor(k, alpha))
    a = float(_kernel_hyp_param(k, alpha))
    if k % 2:
        val = pref * x * hyp1f1(a, 1.5, -x * x / 2)
    else:
        val = pref * hyp1f1(a, 0.5, -x * x / 2)
    return float(val) if np.ndim(val) == 0 else val


def kernel_parity(k):
    """Imaginary-unit power stripped from :func:`frac_normalized_kernel`."""
    return k % 2


def normalized_kernels(n_kernels, alpha, x, method="direct"):
    """``K[i, k]`` = :func:`frac_normalized_kernel` ``(k, alpha, x_i)``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty((x.size, n_kernels))
    n_even = (n_kernels + 1) // 2
    n_odd = n_kernels // 2
    arg = -x * x / 2
    if n_even:
        f = hyp1f1_chain((1 + alpha) / 2, 0.5, arg, n_even, method)
        pref = _normalized_kernel_prefactor(2 * np.arange(n_even), alpha)
        out[:, 0::2] = (pref[:, None] * f).T
    if n_odd:
        f = hyp1f1_chain((3 + alpha) / 2, 1.5, arg, n_odd, method)
        pref = _normalized_kernel_prefactor(2 * np.arange(n_odd) + 1, alpha)
        out[:, 1::2] = (pref[:, None] * f * x[None, :]).T
    return out


def _column_signs(n):
    """Sign left after pairing ``(-i)^n`` with the kernel's ``i`` factor."""
    idx = np.arange(n)
    return np.where((idx // 2) % 2 == 0, 1.0, -1.0)


def _transform_nodes(alpha, omega, support):
    """Quadrature on ``[0, support]`` for ``xi^alpha * smooth``.

    A Gauss-Jacobi panel absorbs the ``xi^alpha`` factor near the origin,
    Gauss-Legendre panels cover the rest; panel width keeps
    ``omega * width`` small enough for 32 points per panel.
    """
    width = min(0.5, 12.0 / max(omega, 1.0))
    n_pan = int(math.ceil(support / width))
    width = support / n_pan
    tj, wj = roots_jacobi(40, 0.0, alpha)
    xi0 = (tj + 1) * (width / 2)
    w0 = wj * (width / 2) ** (alpha + 1)
    tg, wg = np.polynomial.legendre.leggauss(32)
    left = width * np.arange(1, n_pan)
    xi1 = (left[:, None] + (tg[None, :] + 1) * (width / 2)).ravel()
    w1 = np.tile(wg * (width / 2), n_pan - 1) * xi1 ** alpha
    return np.concatenate([xi0, xi1]), np.concatenate([w0, w1])


def normalized_values_transform(n_basis, alpha, x):
    """``(-Delta)^{alpha/2} Hhat_n(x_i)`` by quadrature of the inverse transform.

    Uses ``F[Hhat_n] = (-i)^n Hhat_n``, so the value is
    ``(-i)^n sqrt(2/pi) int_0^inf xi^alpha Hhat_n(xi) {cos, i sin}(x xi) dxi``.
    Stable for every ``n`` because it never expands ``Hhat_n`` in monomials.
    """
    alpha = check_alpha(alpha)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    turning = math.sqrt(2 * n_basis + 1)
    support = turning + 12.0
    omega = turning + float(np.max(np.abs(x), initial=0.0))
    xi, w = _transform_nodes(alpha, omega, support)
    h = hermite_functions(n_basis, xi) * w[None, :]
    arg = np.outer(x, xi)
    even = np.cos(arg) @ h[0::2].T
    odd = np.sin(arg) @ h[1::2].T
    out = np.empty((x.size, n_basis))
    out[:, 0::2] = even
    out[:, 1::2] = odd
    return out * _column_signs(n_basis)[None, :] * math.sqrt(2 / math.pi)


def normalized_values(n_basis, alpha, x, method="auto"):
    """``V[i, n] = (-Delta)^{alpha/2} Hhat_n(x_i)``.

    ``method``:
        ``"closed"`` -- monomial expansion of ``Hhat_n`` against the closed-form
        kernels (direct 1F1 per kernel);
        ``"recurrence"`` -- same, with kernels advanced by the 1F1 recurrence;
        ``"transform"`` -- inverse-transform quadrature;
        ``"auto"`` -- ``closed`` up to ``NORMALIZED_CLOSED_MAX`` functions,
        ``transform`` beyond.
    """
    alpha = check_alpha(alpha)
    if method == "auto":
        method = "closed" if n_basis <= NORMALIZED_CLOSED_MAX else "transform"
    if method == "transform":
        return normalized_values_transform(n_basis, alpha, x)
    if method not in ("closed", "recurrence"):
        raise ValueError(f"unknown method {method!r}")
    table = monomial_coeffs(n_basis).coeffs
    kern = normalized_kernels(n_basis, alpha, x,
                              "recurrence" if method == "recurrence" else "direct")
    return (kern @ table.T) * _column_signs(n_basis)[None, :]


# ---------------------------------------------------------------------------
# 1-D matrices
# ---------------------------------------------------------------------------

def _check_size(N, cap, what):
    if not 1 <= N <= cap:
        raise ValueError(f"{what} needs 1 <= N <= {cap}, got {N}")


def _check_r(r):
    r = float(r)
    if not (r > 0 and math.isfinite(r)):
        raise ValueError("scaling factor must be positive and finite")
    return r


def _finite_or_raise(mat, ncols):
    bad = np.argwhere(~np.isfinite(mat))
    if bad.size:
        i, j = bad[0]
        raise AssemblyError(f"non-finite entry at (row {i}, column {j})")
    return mat


def dm_overscaled_1d(N, alpha, r=1.0, method="direct"):
    """Over-scaled Hermite DM: ``D[i, j] = r^alpha (-Delta)^{alpha/2} Htilde_j(x_i)``.

    ``method="recurrence"`` seeds columns 0..3 directly and fills the rest
    with the 1F1 recurrence in the first parameter.
    """
    _check_size(N, MAX_N_1D, "dm_overscaled_1d")
    alpha = check_alpha(alpha)
    r = _check_r(r)
    nodes = gauss_hermite(N).nodes
    try:
        vals = overscaled_values(N, alpha, nodes, method)
    except AccuracyError as exc:
        raise AssemblyError(f"1F1 failure while assembling: {exc}") from exc
    ent = _finite_or_raise(r ** alpha * vals, N)
    return FracDiffMatrix(BasisKind.OVERSCALED, (alpha,), r, 1, N, ent,
                          {"method": method, "scaling": SCALING_CONVENTION})


def dm_normalized_1d(N, alpha, r=1.0, method="auto"):
    """Normalised Hermite-function DM, ``D[m, n] = r^alpha (-Delta)^{alpha/2} Hhat_n(x_m)``."""
    _check_size(N, MAX_N_1D, "dm_normalized_1d")
    alpha = check_alpha(alpha)
    r = _check_r(r)
    nodes = gauss_hermite(N).nodes
    used = method if method != "auto" else (
        "closed" if N <= NORMALIZED_CLOSED_MAX else "transform")
    try:
        vals = normalized_values(N, alpha, nodes, used)
    except AccuracyError as exc:
        raise AssemblyError(f"1F1 failure while assembling: {exc}") from exc
    ent = _finite_or_raise(r ** alpha * vals, N)
    return FracDiffMatrix(BasisKind.NORMALIZED, (alpha,), r, 1, N, ent,
                          {"method": used, "scaling": SCALING_CONVENTION})


def lagrange_coefficients(rule):
    """``B[k, j] = pi^{-1/2} Hhat_k(x_j) w_j``: cardinal functions in the Hhat basis."""
    h = hermite_functions(rule.N, rule.nodes)
    return h * rule.weights_function[None, :] / SQRT_PI


def dm_lagrange_1d(N, alpha, r=1.0, method="auto"):
    """Lagrange-basis DM ``D^L = Dhat B`` (cardinal functions on the nodes)."""
    _check_size(N, MAX_N_1D, "dm_lagrange_1d")
    dhat = dm_normalized_1d(N, alpha, r, method)
    B = lagrange_coefficients(gauss_hermite(N))
    ent = dhat.entries @ B
    return FracDiffMatrix(BasisKind.LAGRANGE, (dhat.alpha,), dhat.r, 1, N, ent,
                          dict(dhat.meta))


# ---------------------------------------------------------------------------
# 2-D matrices
# ---------------------------------------------------------------------------
#
# Both 2-D families reduce to mixed derivatives of a radial kernel
# Phi(s), s = x^2 + y^2:
#
#   over-scaled  (-Delta)^{a/2}[Ht_p(x) Ht_q(y)]
#                   = (-1)^{p+q} / (2 c_p c_q) d^p_x d^q_y G(s),
#                G(s) = 2^{a+1} Gamma(A) 1F1(A; 1; -s),
#   normalised   F^{-1}[|k|^a e^{-|k|^2/2} xi^k eta^l] = (-i)^{k+l} d^k_x d^l_y Psi(s),
#                Psi(s) = 2^{a/2} Gamma(A) 1F1(A; 1; -s/2),
#
# with A = a/2 + 1 and c_p = sqrt(2^p p!).  For g(x^2),
#   d^p_x g(x^2) = sum_j p! / (j! (p-2j)!) (2x)^{p-2j} g^{(p-j)}(x^2).

def _radial_derivatives(alpha, s, kmax, arg_scale):
    """``Phi^{(k)}(s)`` for ``k <= kmax`` of ``2^{a+1} G(A) 1F1(A; 1; -s*arg_scale)``
    (times ``arg_scale^k`` from the chain rule), shape ``(kmax+1,) + s.shape``."""
    A = alpha / 2 + 1
    k = np.arange(kmax + 1).reshape((-1,) + (1,) * s.ndim)
    f = hyp1f1(A + k, 1 + k, -arg_scale * s[None, ...])
    log_c = (alpha + 1) * LN2 + gammaln(A + k) - gammaln(1 + k) + k * math.log(arg_scale)
    sign = np.where(k % 2 == 0, 1.0, -1.0)
    return sign * np.exp(log_c) * f


def _axis_expansion(n, x, normalise):
    """``E[i, p, u]``: coefficient of ``g^{(u)}`` in ``d^p_x g(x^2)`` at ``x_i``.

    With ``normalise`` the row ``p`` is divided by ``sqrt(2^p p!)``.
    """
    x = np.asarray(x, dtype=float)
    out = np.zeros((x.size, n, n))
    for p in range(n):
        for j in range(p // 2 + 1):
            u = p - j
            log_c = gammaln(p + 1) - gammaln(j + 1) - gammaln(p - 2 * j + 1) + (p - 2 * j) * LN2
            if normalise:
                log_c -= 0.5 * (p * LN2 + gammaln(p + 1))
            out[:, p, u] = math.exp(log_c) * x ** (p - 2 * j)
    return out


def _mixed_derivative_blocks(alpha, x, y, n, arg_scale, normalise):
    """``T[i, p, q] = d^p_x d^q_y Phi`` at the points ``(x_i, y_i)``."""
    s = x * x + y * y
    phi = _radial_derivatives(alpha, s, 2 * n - 2, arg_scale)  # (2n-1, pts)
    u = np.arange(n)
    hankel = phi[u[:, None] + u[None, :]]                      # (n, n, pts)
    hankel = np.moveaxis(hankel, -1, 0)                          # (pts, n, n)
    ex = _axis_expansion(n, x, normalise)
    ey = _axis_expansion(n, y, normalise)
    return ex @ hankel @ np.swapaxes(ey, 1, 2)


def overscaled_values_2d(n_basis, alpha, x, y):
    """``V[i, p*n + q] = (-Delta)^{alpha/2}[Htilde_p Htilde_q](x_i, y_i)``."""
    alpha = check_alpha(alpha)
    x = np.atleast_1d(np.asarray(x, float)).ravel()
    y = np.atleast_1d(np.asarray(y, float)).ravel()
    t = _mixed_derivative_blocks(alpha, x, y, n_basis, 1.0, normalise=True)
    p = np.arange(n_basis)
    sign = np.where((p[:, None] + p[None, :]) % 2 == 0, 0.5, -0.5)
    return (t * sign[None]).reshape(x.size, n_basis * n_basis)


def normalized_values_2d(n_basis, alpha, x, y):
    """``V[i, n*N + m] = (-Delta)^{alpha/2}[Hhat_n Hhat_m](x_i, y_i)``.

    ``sum_{k,l} a_{n,k} a_{m,l} (-1)^{(n+k)/2 + (m+l)/2} d^k_x d^l_y Psi``.
    """
    alpha = check_alpha(alpha)
    x = np.atleast_1d(np.asarray(x, float)).ravel()
    y = np.atleast_1d(np.asarray(y, float)).ravel()
    t = _mixed_derivative_blocks(alpha, x, y, n_basis, 0.5, normalise=False)
    t = t * 2.0 ** (-alpha / 2 - 1)   # 2^{a+1} -> 2^{a/2}
    a = monomial_coeffs(n_basis).coeffs
    n = np.arange(n_basis)
    signed = a * np.where(((n[:, None] + n[None, :]) // 2) % 2 == 0, 1.0, -1.0)
    out = signed[None] @ t @ signed.T[None]
    return out.reshape(x.size, n_basis * n_basis)


# ---------------------------------------------------------------------------
# heat-semigroup path
# ---------------------------------------------------------------------------
#
# For 0 < a < 2,
#   (-Delta)^{a/2} u = Gamma(-a/2)^{-1} int_0^inf t^{-a/2-1} (e^{t Delta} u - u) dt,
# and the heat flow of a tensor function is the tensor product of 1-D heat
# flows.  Both families have closed-form heat flows:
#   over-scaled   e^{t Delta} Ht_p(x) = s^{-(p+1)/2} Ht_p(x / sqrt s),  s = 1 + 4t,
#   normalised    e^{t Delta} Hh_p(x) = s^{-1/2} sum_i sqrt(p!/m!) 2^{-i} / i!
#                       g^m (1 - g^2)^i Hh_m(x / sqrt s),  m = p - 2i,
#                 s = 1 + 2t, g = s^{-1/2}; every coefficient is positive.
# This avoids the monomial expansion, whose cancellation grows like 2^{N/2}
# and is squared in 2-D.

HEAT_SPLIT = 1.0


@dataclass(frozen=True)
class _HeatRule:
    t_near: np.ndarray   # Gauss-Jacobi nodes on [0, HEAT_SPLIT]
    w_near: np.ndarray   # weights for the bracket (P - H) itself
    t_far: np.ndarray    # Gauss-Legendre in log t beyond the split
    w_far: np.ndarray
    tail: float          # int_split^inf t^{-a/2-1} dt
    scale: float         # 1 / Gamma(-a/2)


def _heat_rule(alpha, n_basis, n_near=24, n_panels=40, order=20, span=45.0):
    """Quadrature in ``t`` for the heat-semigroup integral.

    ``[0, h]``: Gauss-Jacobi with the ``t^{-a/2}`` weight, ``h ~ 4/n`` since
    the flow of order-``n`` functions varies on that scale; ``[h, 1]``:
    geometric Gauss-Legendre panels; ``[1, e^span]``: Gauss-Legendre in
    ``log t``.
    """
    if not 0 < alpha < 2:
        raise ValueError("heat-semigroup path needs 0 < alpha < 2")
    tg, wg = np.polynomial.legendre.leggauss(order)
    h = min(HEAT_SPLIT, 4.0 / max(n_basis, 1))
    tj, wj = roots_jacobi(n_near, 0.0, -alpha / 2)
    t0 = (tj + 1) * h / 2
    # int_0^h t^{-a/2-1} b(t) dt = int_0^h t^{-a/2} (b/t) dt
    w0 = wj * (h / 2) ** (1 - alpha / 2) / t0
    n_geo = int(math.ceil(math.log2(HEAT_SPLIT / h)))
    if n_geo:
        edges = h * (HEAT_SPLIT / h) ** (np.arange(n_geo + 1) / n_geo)
        half = np.diff(edges) / 2
        tm = (edges[:-1, None] + (tg[None, :] + 1) * half[:, None]).ravel()
        wm = (half[:, None] * wg[None, :]).ravel() * tm ** (-alpha / 2 - 1)
        t0 = np.concatenate([t0, tm])
        w0 = np.concatenate([w0, wm])
    lo = math.log(HEAT_SPLIT)
    edges = np.linspace(lo, lo + span, n_panels + 1)
    half = (edges[1] - edges[0]) / 2
    tau = (edges[:-1, None] + (tg[None, :] + 1) * half).ravel()
    t1 = np.exp(tau)
    w1 = np.tile(wg * half, n_panels) * t1 ** (-alpha / 2)
    tail = (2 / alpha) * HEAT_SPLIT ** (-alpha / 2)
    return _HeatRule(t0, w0, t1, w1, tail, 1.0 / float(gamma_fn(-alpha / 2)))


def heat_flow(basis, n_basis, t, x):
    """``P[k, i, p] = (e^{t_k Delta} phi_p)(x_i)`` for a modal family."""
    basis = BasisKind.parse(basis)
    t = np.atleast_1d(np.asarray(t, float))
    x = np.atleast_1d(np.asarray(x, float))
    p = np.arange(n_basis)
    if basis is BasisKind.OVERSCALED:
        s = 1 + 4 * t
        h = hermite_functions(n_basis, x[None, :] / np.sqrt(s)[:, None], BasisKind.OVERSCALED)
        with np.errstate(under="ignore"):
            fac = np.exp(-0.5 * (p[:, None] + 1) * np.log(s)[None, :])
        return np.transpose(h * fac[:, :, None], (1, 2, 0))
    if basis is not BasisKind.NORMALIZED:
        raise ValueError(f"no heat flow for basis {basis.value}")
    s = 1 + 2 * t
    h = hermite_functions(n_basis, x[None, :] / np.sqrt(s)[:, None])   # (m, k, i)
    # C[k, p, m]: coefficient of Hh_m in the flow of Hh_p
    i = (p[:, None] - p[None, :]) / 2
    valid = (i >= 0) & (i == np.floor(i))
    m = np.broadcast_to(p[None, :], i.shape)
    i = np.where(valid, i, 0)
    log_c = (0.5 * (gammaln(p[:, None] + 1) - gammaln(m + 1)) - i * LN2 - gammaln(i + 1))
    log_g2 = -np.log(s)
    log_1mg2 = np.log(2 * t) - np.log(s)
    with np.errstate(under="ignore", invalid="ignore"):
        expo = (log_c[None] + 0.5 * m[None] * log_g2[:, None, None]
                + i[None] * np.where(i[None] > 0, log_1mg2[:, None, None], 0.0))
        C = np.where(valid[None], np.exp(expo), 0.0)
    out = np.einsum("kpm,mki->kip", C, h)
    return out / np.sqrt(s)[:, None, None]


def heat_values(basis, n_basis, alpha, x):
    """1-D ``(-Delta)^{alpha/2} phi_n(x_i)`` via the heat-semigroup integral."""
    basis = BasisKind.parse(basis)
    rule = _heat_rule(alpha, n_basis)
    x = np.atleast_1d(np.asarray(x, float))
    H = hermite_functions(n_basis, x, basis).T                 # (i, p)
    near = np.einsum("k,kip->ip", rule.w_near,
                     heat_flow(basis, n_basis, rule.t_near, x) - H[None])
    far = np.einsum("k,kip->ip", rule.w_far, heat_flow(basis, n_basis, rule.t_far, x))
    return rule.scale * (near + far - rule.tail * H)


def heat_values_2d(basis, n_basis, alpha, x, y):
    """``V[i, p*n + q]`` for tensor functions, via the heat-semigroup integral.

    The near-origin bracket is split as
    ``(Px - Hx) Py + Hx (Py - Hy)`` so no O(1) quantities are subtracted.
    """
    basis = BasisKind.parse(basis)
    rule = _heat_rule(alpha, n_basis)
    x = np.atleast_1d(np.asarray(x, float)).ravel()
    y = np.atleast_1d(np.asarray(y, float)).ravel()
    Hx = hermite_functions(n_basis, x, basis).T
    Hy = hermite_functions(n_basis, y, basis).T
    Px = heat_flow(basis, n_basis, rule.t_near, x)
    Py = heat_flow(basis, n_basis, rule.t_near, y)
    # batched over points: (i, p, k) @ (i, k, q)
    wPx = np.transpose((Px - Hx[None]) * rule.w_near[:, None, None], (1, 2, 0))
    near = wPx @ np.transpose(Py, (1, 0, 2))
    near += Hx[:, :, None] * np.einsum("k,kiq->iq", rule.w_near, Py - Hy[None])[:, None, :]
    Px = heat_flow(basis, n_basis, rule.t_far, x)
    Py = heat_flow(basis, n_basis, rule.t_far, y)
    wPx = np.transpose(Px * rule.w_far[:, None, None], (1, 2, 0))
    far = wPx @ np.transpose(Py, (1, 0, 2))
    out = rule.scale * (near + far - rule.tail * Hx[:, :, None] * Hy[:, None, :])
    return out.reshape(x.size, n_basis * n_basis)


def _grid_2d(N):
    nodes = gauss_hermite(N).nodes
    X, Y = np.meshgrid(nodes, nodes, indexing="ij")
    return X.ravel(), Y.ravel()


#: largest per-dimension size for which ``auto`` keeps the radial-derivative
#: closed form in 2-D; beyond it the heat-semigroup path is used
CLOSED_2D_MAX = {BasisKind.OVERSCALED: 16, BasisKind.NORMALIZED: 10}


def _resolve_2d_method(basis, n_basis, alpha, method):
    if method == "auto":
        if alpha == 2.0 or n_basis <= CLOSED_2D_MAX[basis]:
            return "closed"
        return "heat"
    if method not in ("closed", "heat"):
        raise ValueError(f"unknown 2-D method {method!r}")
    return method


def values_2d(basis, n_basis, alpha, x, y, method="auto"):
    """2-D operator values ``V[i, p*n + q]`` on either modal family."""
    basis = BasisKind.parse(basis)
    alpha = check_alpha(alpha)
    method = _resolve_2d_method(basis, n_basis, alpha, method)
    if method == "heat":
        return heat_values_2d(basis, n_basis, alpha, x, y)
    if basis is BasisKind.OVERSCALED:
        return overscaled_values_2d(n_basis, alpha, x, y)
    if basis is BasisKind.NORMALIZED:
        return normalized_values_2d(n_basis, alpha, x, y)
    raise ValueError(f"no 2-D values for basis {basis.value}")


def _dm_2d(basis, N, alpha, r, method, cap):
    _check_size(N, cap, f"dm_{basis.value}_2d")
    alpha = check_alpha(alpha)
    r = _check_r(r)
    used = _resolve_2d_method(basis, N, alpha, method)
    X, Y = _grid_2d(N)
    try:
        vals = values_2d(basis, N, alpha, X, Y, used)
    except AccuracyError as exc:
        raise AssemblyError(f"1F1 failure while assembling: {exc}") from exc
    ent = _finite_or_raise(r ** alpha * vals, N * N)
    return FracDiffMatrix(basis, (alpha,), r, 2, N, ent,
                          {"method": used, "scaling": SCALING_CONVENTION})


def dm_overscaled_2d(N, alpha, r=1.0, method="auto"):
    """Over-scaled tensor-basis DM of size ``N^2 x N^2`` (row-major ordering).

    ``method``: ``"closed"`` (mixed derivatives of the radial kernel),
    ``"heat"`` (heat-semigroup quadrature) or ``"auto"``.
    """
    return _dm_2d(BasisKind.OVERSCALED, N, alpha, r, method, MAX_N_2D_OVERSCALED)


def dm_normalized_2d(N, alpha, r=1.0, method="auto"):
    """Normalised tensor-basis DM of size ``N^2 x N^2`` (row-major ordering).

    The closed form expands both factors in monomials, so its cancellation
    is squared; ``auto`` switches to the heat-semigroup path above
    ``CLOSED_2D_MAX``.
    """
    return _dm_2d(BasisKind.NORMALIZED, N, alpha, r, method, MAX_N_2D_NORMALIZED)


# ---------------------------------------------------------------------------
# dispatch, multi-term
# ---------------------------------------------------------------------------

def dm(N, alpha, basis, r=1.0, dim=1, **kw):
    """Single-order matrix for any basis and dimension."""
    basis = BasisKind.parse(basis)
    if dim == 1:
        builder = {BasisKind.OVERSCALED: dm_overscaled_1d,
                   BasisKind.NORMALIZED: dm_normalized_1d,
                   BasisKind.LAGRANGE: dm_lagrange_1d}[basis]
        return builder(N, alpha, r, **kw)
    if dim == 2:
        if basis is BasisKind.OVERSCALED:
            return dm_overscaled_2d(N, alpha, r, **kw)
        if basis is BasisKind.NORMALIZED:
            return dm_normalized_2d(N, alpha, r, **kw)
        raise ValueError("2-D Lagrange matrices are not provided")
    raise ValueError("dim must be 1 or 2")


def dm_multiterm(N, alphas, basis, r=1.0, dim=1, **kw):
    """``sum_j D^{alpha_j}``, summed left to right over the orders sorted ascending."""
    alphas = [check_alpha(a) for a in alphas]
    if not 1 <= len(alphas) <= MAX_TERMS_MULTI:
        raise ValueError(f"between 1 and {MAX_TERMS_MULTI} orders allowed")
    parts = [dm(N, a, basis, r, dim, **kw) for a in sorted(alphas)]
    return sum_matrices(parts)


def sum_matrices(parts):
    """Elementwise sum of compatible matrices (order of ``parts`` is kept)."""
    first = parts[0]
    for p in parts[1:]:
        if (p.basis, p.r, p.dim, p.n_per_dim) != (first.basis, first.r, first.dim, first.n_per_dim):
            raise ValueError("cannot sum matrices on different bases, scalings or grids")
    total = first.entries.copy()
    for p in parts[1:]:
        total = total + p.entries
    alphas = tuple(a for p in parts for a in p.alphas)
    return FracDiffMatrix(first.basis, alphas, first.r, first.dim, first.n_per_dim,
                          total, dict(first.meta))


def operator_values(basis, n_basis, alpha, points, r=1.0, dim=1):
    """``r^alpha (-Delta)^{alpha/2} phi_n(r x)`` at physical points.

    1-D: ``points`` is an array, result ``(len, n_basis)``.  2-D: ``points``
    is a pair ``(X, Y)`` of equally shaped arrays, result
    ``(X.size, n_basis^2)``.  Lagrange is not supported here because its
    functions depend on the node set; use the ``NORMALIZED`` values with
    :func:`lagrange_coefficients`.
    """
    basis = BasisKind.parse(basis)
    alpha = check_alpha(alpha)
    scale = r ** alpha
    if dim == 1:
        z = r * np.atleast_1d(np.asarray(points, float)).ravel()
        if basis is BasisKind.OVERSCALED:
            return scale * overscaled_values(n_basis, alpha, z)
        if basis is BasisKind.NORMALIZED:
            return scale * normalized_values(n_basis, alpha, z)
    else:
        X, Y = (r * np.asarray(p, float).ravel() for p in points)
        if basis is not BasisKind.LAGRANGE:
            return scale * values_2d(basis, n_basis, alpha, X, Y)
    raise ValueError(f"operator values unavailable for basis {basis.value} in {dim}-D")


# ---------------------------------------------------------------------------
# independent oracle: direct quadrature of the inverse transform
# ---------------------------------------------------------------------------

ORACLE_CUTOFF = 40.0


def _graded_legendre(cutoff, uniform_width, levels, order=20, ratio=0.2):
    """Composite Gauss-Legendre on ``[0, cutoff]``: geometric panels towards
    0 inside ``[0, 1]`` and uniform panels of ``uniform_width`` after."""
    t, w = np.polynomial.legendre.leggauss(order)
    edges = [0.0] + [ratio ** k for k in range(levels, 0, -1)] + [1.0]
    n_uni = int(math.ceil((cutoff - 1.0) / uniform_width))
    edges += list(1.0 + (cutoff - 1.0) * np.arange(1, n_uni + 1) / n_uni)
    edges = np.asarray(edges)
    a, b = edges[:-1], edges[1:]
    half = (b - a) / 2
    nodes = (a[:, None] + half[:, None] * (t[None, :] + 1)).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def _log_overscaled_transform(n, xi):
    """``log |F[Htilde_n](xi)| = n log xi - xi^2/4 - log(sqrt2 sqrt(2^n n!))``."""
    with np.errstate(divide="ignore"):
        return (n * np.log(xi) - xi * xi / 4 - 0.5 * LN2
                - 0.5 * (n * LN2 + gammaln(n + 1)))


def _oracle_1d_once(basis, n, alpha, x, uniform_width, levels):
    xi, w = _graded_legendre(ORACLE_CUTOFF, uniform_width, levels)
    if basis is BasisKind.NORMALIZED:
        profile = hermite_functions(n + 1, xi)[n]
    else:
        profile = np.exp(_log_overscaled_transform(n, xi)) if n > 0 else \
            np.exp(-xi * xi / 4) / math.sqrt(2)
    wave = np.cos(np.outer(x, xi)) if n % 2 == 0 else np.sin(np.outer(x, xi))
    integral = wave @ (w * xi ** alpha * profile)
    # F[phi_n] = (-i)^n * profile; odd integrands pick up i from e^{i x xi}
    sign = 1.0 if (n // 2) % 2 == 0 else -1.0
    return sign * math.sqrt(2 / math.pi) * integral


def oracle_frac_apply(basis, n, alpha, x, tol=1e-10):
    """``(-Delta)^{alpha/2} phi_n(x)`` by brute-force quadrature in ``xi``.

    Integrates ``|xi|^alpha F[phi_n](xi) e^{i x xi}`` with composite
    Gauss-Legendre on ``[0, 40]`` (graded towards the ``|xi|^alpha`` kink,
    about 3000 points), using only the known transforms
    ``F[Hhat_n] = (-i)^n Hhat_n`` and
    ``F[Htilde_n] = (-i)^n xi^n e^{-xi^2/4} / (sqrt2 sqrt(2^n n!))``.
    The result is recomputed on a refined grid and an :class:`AccuracyError`
    is raised if the two differ by more than ``tol``.

    ``basis`` may also be ``LAGRANGE`` with ``n = (N, j)`` for the ``j``-th
    cardinal function on the ``N``-point grid, and ``n`` may be a pair
    ``(p, q)`` with ``x`` a pair of coordinates for 2-D tensor functions.
    """
    basis = BasisKind.parse(basis)
    alpha = check_alpha(alpha)
    if basis is BasisKind.LAGRANGE:
        N, j = n
        B = lagrange_coefficients(gauss_hermite(N))
        return sum(B[k, j] * oracle_frac_apply(BasisKind.NORMALIZED, k, alpha, x, tol)
                   for k in range(N))
    if isinstance(n, tuple):
        return oracle_frac_apply_2d(basis, n, alpha, x, tol)
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(np.abs(x_arr) > 20) or n > 64:
        raise ValueError("oracle supports |x| <= 20 and n <= 64")
    coarse = _oracle_1d_once(basis, n, alpha, x_arr, 0.25, 20)
    fine = _oracle_1d_once(basis, n, alpha, x_arr, 0.125, 30)
    if np.max(np.abs(fine - coarse)) > tol:
        raise AccuracyError("oracle quadrature not converged",
                            partial=fine if np.ndim(x) else float(fine[0]))
    return float(fine[0]) if np.ndim(x) == 0 else fine


def _transform_1d(basis, n, xi):
    """Complex ``F[phi_n](xi)`` for the two modal families."""
    phase = (-1j) ** n
    if basis is BasisKind.NORMALIZED:
        return phase * hermite_functions(n + 1, xi)[n]
    if n == 0:
        return np.exp(-xi * xi / 4) / math.sqrt(2) + 0j
    return phase * np.sign(xi) ** n * np.exp(_log_overscaled_transform(n, np.abs(xi)))


def _oracle_2d_once(basis, pq, alpha, x, y, n_theta, uniform_width, levels):
    p, q = pq
    rho, w_rho = _graded_legendre(ORACLE_CUTOFF, uniform_width, levels, order=16)
    theta = 2 * math.pi * np.arange(n_theta) / n_theta
    c, s = np.cos(theta), np.sin(theta)
    kx = rho[:, None] * c[None, :]
    ky = rho[:, None] * s[None, :]
    f = _transform_1d(basis, p, kx) * _transform_1d(basis, q, ky)
    weight = (w_rho * rho ** (alpha + 1))[:, None] * (2 * math.pi / n_theta)
    out = []
    for xx, yy in zip(np.ravel(x), np.ravel(y)):
        out.append(np.sum(weight * f * np.exp(1j * (kx * xx + ky * yy))).real)
    return np.array(out) / (2 * math.pi)


def oracle_frac_apply_2d(basis, pq, alpha, point, tol=1e-8):
    """2-D analogue of :func:`oracle_frac_apply` on a polar tensor grid.

    Radial composite Gauss-Legendre (graded at the origin) times a
    trapezoid rule in angle, which is spectrally accurate for the periodic
    angular integrand.
    """
    basis = BasisKind.parse(basis)
    alpha = check_alpha(alpha)
    x, y = point
    coarse = _oracle_2d_once(basis, pq, alpha, x, y, 192, 0.25, 16)
    fine = _oracle_2d_once(basis, pq, alpha, x, y, 288, 0.125, 24)
    if np.max(np.abs(fine - coarse)) > tol:
        raise AccuracyError("2-D oracle quadrature not converged", partial=fine)
    return float(fine[0]) if np.ndim(x) == 0 else fine.reshape(np.shape(x))


# ---------------------------------------------------------------------------
# dump format
# ---------------------------------------------------------------------------

DUMP_MAGIC = "# hermfrac-dump v1"


def _fmt(v):
    return format(float(v), ".17g")


def dump_matrix(mat, path_or_buf):
    """Write a matrix as text: ``#``-header lines, then CSV rows of doubles.

    Header keys: ``kind=matrix``, ``basis``, ``alphas`` (comma list), ``r``,
    ``dim``, ``n_per_dim``, ``rows``, ``cols``.  Values use 17 significant
    digits so a load round-trips bit for bit.
    """
    header = {
        "kind": "matrix",
        "basis": mat.basis.value,
        "alphas": ",".join(_fmt(a) for a in mat.alphas),
        "r": _fmt(mat.r),
        "dim": str(mat.dim),
        "n_per_dim": str(mat.n_per_dim),
        "rows": str(mat.entries.shape[0]),
        "cols": str(mat.entries.shape[1]),
    }
    _write_dump(header, mat.entries, path_or_buf)


def _write_dump(header, rows, path_or_buf):
    buf = io.StringIO()
    buf.write(DUMP_MAGIC + "\n")
    for k, v in header.items():
        buf.write(f"# {k}={v}\n")
    for row in np.atleast_2d(rows):
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    text = buf.getvalue()
    if hasattr(path_or_buf, "write"):
        path_or_buf.write(text)
    else:
        with open(path_or_buf, "w", newline="") as fh:
            fh.write(text)


def read_dump(path_or_buf):
    """Parse a dump into ``(header dict, 2-D array)``."""
    if hasattr(path_or_buf, "read"):
        lines = path_or_buf.read().splitlines()
    else:
        with open(path_or_buf) as fh:
            lines = fh.read().splitlines()
    if not lines or lines[0].strip() != DUMP_MAGIC:
        raise ValueError("not a hermfrac dump")
    header, data = {}, []
    for line in lines[1:]:
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            header[key] = val
        elif line.strip():
            data.append([float(v) for v in line.split(",")])
    return header, np.array(data)


def load_matrix(path_or_buf):
    header, data = read_dump(path_or_buf)
    if header.get("kind") != "matrix":
        raise ValueError("dump does not hold a matrix")
    shape = (int(header["rows"]), int(header["cols"]))
    if data.shape != shape:
        raise ValueError(f"dump declares shape {shape} but holds {data.shape}")
    alphas = tuple(float(a) for a in header["alphas"].split(","))
    return FracDiffMatrix(BasisKind.parse(header["basis"]), alphas, float(header["r"]),
                          int(header["dim"]), int(header["n_per_dim"]), data,
                          {"loaded": True})
