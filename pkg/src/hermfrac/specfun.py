"""Special functions: 1F1, gamma ratios, Hermite polynomials/functions.

Everything here works on NumPy arrays.  The confluent hypergeometric
function is summed in double precision first; entries whose estimated
cancellation would cost more than the requested accuracy are recomputed
with mpmath at raised precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import mpmath
import numpy as np
from scipy.special import gammaln

from .basis import BasisKind

EPS = np.finfo(float).eps

#: series stops after this many consecutive negligible terms
SERIES_QUIET_TERMS = 3
SERIES_MAX_TERMS = 10_000
SERIES_TERM_TOL = 1e-16

#: default relative accuracy target of :func:`hyp1f1`
HYP1F1_RTOL = 1e-13

#: rows of the monomial table stay well inside double range up to here
MONOMIAL_MAX_N = 400


class AccuracyError(ArithmeticError):
    """A series did not reach its accuracy target; ``partial`` holds the last value."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


# ---------------------------------------------------------------------------
# gamma helpers
# ---------------------------------------------------------------------------

def gamma_ratio(a, b):
    """Return ``Gamma(a) / Gamma(b)`` for positive arguments.

    Evaluated as ``exp(lgamma(a) - lgamma(b))`` so large arguments never
    overflow.  Accepts scalars or arrays (broadcast).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(~(a > 0)) or np.any(~(b > 0)):
        raise ValueError("gamma_ratio needs strictly positive arguments")
    out = np.exp(gammaln(a) - gammaln(b))
    return float(out) if out.ndim == 0 else out


def log_central_binomial_factor(n):
    """``log(sqrt((2n)!) / (2^n n!))``, the even-order Hermite normaliser."""
    n = np.asarray(n, dtype=float)
    return 0.5 * gammaln(2 * n + 1) - n * math.log(2.0) - gammaln(n + 1)


def log_hermite_norm(n):
    """``log(sqrt(2^n n!))``."""
    n = np.asarray(n, dtype=float)
    return 0.5 * (n * math.log(2.0) + gammaln(n + 1))


# ---------------------------------------------------------------------------
# confluent hypergeometric function
# ---------------------------------------------------------------------------

def _check_hyp_params(b):
    if np.any(~np.isfinite(b)):
        raise ValueError("1F1 parameters must be finite")
    bad = (b <= 0) & (b == np.round(b))
    if np.any(bad):
        raise ValueError("1F1 second parameter must not be a non-positive integer")


def _series_positive_arg(a, b, x):
    """Sum ``sum_k (a)_k/(b)_k x^k/k!`` for ``x >= 0``, elementwise.

    Returns ``(sum, abs_sum, converged)``; ``abs_sum`` is the sum of term
    magnitudes and measures cancellation.
    """
    total = np.ones_like(x)
    abs_total = np.ones_like(x)
    term = np.ones_like(x)
    quiet = np.zeros(x.shape, dtype=int)
    done = x == 0
    k = 0
    while not np.all(done) and k < SERIES_MAX_TERMS:
        active = ~done
        ta = term[active] * ((a[active] + k) / (b[active] + k)) * (x[active] / (k + 1))
        term[active] = ta
        total[active] += ta
        abs_total[active] += np.abs(ta)
        k += 1
        # only count quiet terms once past the sign changes and the peak
        past = (k > -a[active]) & (k > x[active])
        small = np.abs(ta) <= SERIES_TERM_TOL * np.abs(total[active])
        q = np.where(past & small, quiet[active] + 1, 0)
        quiet[active] = q
        stop = (q >= SERIES_QUIET_TERMS) | ((ta == 0) & past) | ~np.isfinite(total[active])
        idx = np.flatnonzero(active)
        done[idx[stop]] = True
    return total, abs_total, done


def _hyp1f1_mp(a, b, x, dps=20):
    with mpmath.workdps(dps):
        try:
            return float(mpmath.hyp1f1(a, b, x))
        except mpmath.libmp.NoConvergence as exc:
            raise AccuracyError(f"1F1({a}, {b}; {x}) did not converge") from exc


def hyp1f1(a, b, x, *, rtol=HYP1F1_RTOL, fallback=True):
    """Confluent hypergeometric function ``1F1(a; b; x)``.

    For ``x < 0`` the value is always obtained from Kummer's transformation
    ``1F1(a; b; x) = exp(x) 1F1(b - a; b; -x)`` so the summed series has a
    positive argument.  Entries whose cancellation estimate
    ``eps * sum|t_k| / |sum t_k|`` exceeds ``rtol`` (or that failed to
    converge) are recomputed with mpmath when ``fallback`` is true.

    Parameters
    ----------
    a, b, x : array_like
        Broadcast together.  ``b`` may not be a non-positive integer.
    rtol : float
        Relative accuracy target used to decide on the fallback.
    fallback : bool
        If false, inaccurate entries raise :class:`AccuracyError` instead.

    Returns
    -------
    float or ndarray
    """
    a, b, x = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float),
                                  np.asarray(x, float))
    shape = a.shape
    a, b, x = (np.array(v, dtype=float).ravel() for v in (a, b, x))
    _check_hyp_params(b)
    if np.any(~np.isfinite(a)) or np.any(~np.isfinite(x)):
        raise ValueError("1F1 arguments must be finite")

    neg = x < 0
    ap = np.where(neg, b - a, a)
    xp = np.abs(x)
    s, abs_s, converged = _series_positive_arg(ap, b, xp)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        log_mag = np.log(np.abs(s)) - np.where(neg, xp, 0.0)
        value = np.sign(s) * np.exp(log_mag)
        cond = abs_s / np.abs(s)
    suspect = ~converged | ~np.isfinite(value) | ~(cond * EPS <= rtol)
    if np.any(suspect):
        idx = np.flatnonzero(suspect)
        if not fallback:
            i = idx[0]
            raise AccuracyError(
                f"1F1({a[i]}, {b[i]}; {x[i]}) lost accuracy (cancellation {cond[i]:.2e})",
                partial=value[i])
        for i in idx:
            extra = int(np.log10(cond[i])) if np.isfinite(cond[i]) and cond[i] > 1 else 40
            value[i] = _hyp1f1_mp(a[i], b[i], x[i], dps=20 + extra)
    if shape == ():
        return float(value[0])
    return value.reshape(shape)


def hyp1f1_series_direct(a, b, x, dps=60, terms=None):
    """Plain power series summed in mpmath arithmetic (test oracle).

    No Kummer reflection; the working precision absorbs the cancellation of
    the alternating series.
    """
    with mpmath.workdps(dps):
        a, b, x = mpmath.mpf(a), mpmath.mpf(b), mpmath.mpf(x)
        total = term = mpmath.mpf(1)
        k = 0
        limit = terms if terms is not None else SERIES_MAX_TERMS
        while k < limit:
            term *= (a + k) / (b + k) * x / (k + 1)
            total += term
            k += 1
            if terms is None and k > abs(x) and abs(term) < mpmath.mpf(10) ** (-dps) * abs(total):
                break
        return float(total)


def hyp1f1_recur_step(fm1, f0, a, b, x):
    """Advance ``1F1(a-1), 1F1(a)`` to ``1F1(a+1)`` at fixed ``b, x``.

    ``a 1F1(a+1) = (2a - b + x) 1F1(a) + (b - a) 1F1(a-1)``.
    """
    a = np.asarray(a, dtype=float)
    if np.any(a == 0):
        raise ZeroDivisionError("recurrence step undefined at a = 0")
    out = ((2 * a - b + x) * f0 + (b - a) * fm1) / a
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# Hermite polynomials and functions
# ---------------------------------------------------------------------------

_RESCALE_AT = 1e100


def hermite_functions(n, x, kind=BasisKind.NORMALIZED):
    """Table of the first ``n`` Hermite-type functions at ``x``.

    Returns an array of shape ``(n,) + x.shape`` whose row ``k`` holds
    ``Hhat_k(x)`` (``kind=NORMALIZED``) or ``Htilde_k(x)``
    (``kind=OVERSCALED``).  The normalised recurrence

        p_{k+1} = x sqrt(2/(k+1)) p_k - sqrt(k/(k+1)) p_{k-1}

    runs on the polynomial part with a per-point running exponent, and the
    Gaussian factor is folded in when each row is stored, so nothing
    overflows or underflows prematurely.
    """
    kind = BasisKind.parse(kind)
    if kind is BasisKind.LAGRANGE:
        raise ValueError("Lagrange functions are node-dependent; use fracdm.lagrange_* helpers")
    x = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(x)):
        raise ValueError("Hermite evaluation needs finite points")
    decay = 0.5 * x * x if kind is BasisKind.NORMALIZED else x * x
    out = np.empty((n,) + x.shape)
    prev = np.zeros_like(x)
    cur = np.ones_like(x)
    log_scale = np.zeros_like(x)
    for k in range(n):
        with np.errstate(under="ignore"):
            out[k] = cur * np.exp(log_scale - decay)
        nxt = x * math.sqrt(2.0 / (k + 1)) * cur - math.sqrt(k / (k + 1.0)) * prev
        big = np.abs(nxt) > _RESCALE_AT
        if np.any(big):
            nxt = np.where(big, nxt / _RESCALE_AT, nxt)
            cur = np.where(big, cur / _RESCALE_AT, cur)
            log_scale = log_scale + np.where(big, math.log(_RESCALE_AT), 0.0)
        prev, cur = cur, nxt
    return out


def hermite_polynomials(n, x):
    """Physicists' Hermite polynomials ``H_0..H_{n-1}`` by the raw recurrence."""
    x = np.asarray(x, dtype=float)
    out = np.empty((n,) + x.shape)
    prev, cur = np.zeros_like(x), np.ones_like(x)
    for k in range(n):
        out[k] = cur
        prev, cur = cur, 2 * x * cur - 2 * k * prev
    return out


def hermite_eval(kind, n, x):
    """Evaluate a single Hermite polynomial or function of order ``n``.

    ``kind`` is ``"polynomial"`` or a :class:`BasisKind` (normalized /
    overscaled).
    """
    if n < 0:
        raise ValueError("order must be non-negative")
    if isinstance(kind, str) and kind.lower() in ("polynomial", "poly", "h"):
        table = hermite_polynomials(n + 1, x)
    else:
        table = hermite_functions(n + 1, x, kind)
    val = table[n]
    return float(val) if np.ndim(val) == 0 else val


# ---------------------------------------------------------------------------
# monomial coefficients of the normalised Hermite functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MonomialCoeffTable:
    """``coeffs[n, k]`` with ``Hhat_n(x) = sum_k coeffs[n, k] exp(-x^2/2) x^k``."""

    N: int
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs.flags.writeable = False


def monomial_coeffs(N):
    """Normalised monomial coefficients of ``Hhat_0 .. Hhat_{N-1}``.

    Uses ``a_{n+1,k} = 2 a_{n,k-1} - (k+1) a_{n,k+1}`` divided through by the
    norm ratio ``sqrt(2(n+1))`` at every step, so the table holds
    ``a_{n,k} / sqrt(2^n n!)`` directly without forming ``a_{n,k}``.
    """
    if N < 1:
        raise ValueError("N must be positive")
    if N > MONOMIAL_MAX_N:
        raise OverflowError(f"monomial table limited to N <= {MONOMIAL_MAX_N}")
    c = np.zeros((N, N))
    c[0, 0] = 1.0
    for n in range(N - 1):
        row = np.zeros(N)
        row[1:] += 2.0 * c[n, :-1]
        row[:-1] -= np.arange(1, N) * c[n, 1:]
        c[n + 1] = row / math.sqrt(2.0 * (n + 1))
    return MonomialCoeffTable(N, c)
