import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad
from scipy.special import gamma as sgamma

from hermfrac import (
    BasisKind,
    FracDiffMatrix,
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
    gauss_hermite,
    load_matrix,
    oracle_frac_apply,
)
from hermfrac.fracdm import (
    MAX_N_1D,
    _oracle_1d_once,
    check_alpha,
    hyp1f1,
    lagrange_coefficients,
    monomial_coeffs,
    oracle_frac_apply_2d,
    read_dump,
    values_2d,
)
from hermfrac.specfun import hermite_functions

OVER, NORM, LAG = BasisKind.OVERSCALED, BasisKind.NORMALIZED, BasisKind.LAGRANGE
ALPHAS = [0.4, 1.0, 1.6]


# --- orders ----------------------------------------------------------------

@pytest.mark.parametrize("a", [0.0, -0.5, 2.01, math.nan])
def test_alpha_out_of_range(a):
    with pytest.raises(ValueError):
        check_alpha(a)


def test_alpha_two_only_for_consistency():
    assert check_alpha(2.0) == 2.0
    with pytest.raises(ValueError):
        check_alpha(2.0, allow_two=False)


# --- over-scaled entries ---------------------------------------------------

def test_overscaled_entry_origin():
    assert frac_overscaled_entry(0, 1.0, 0.0) == pytest.approx(2 / math.sqrt(math.pi), rel=1e-14)


@pytest.mark.parametrize("a", ALPHAS)
def test_overscaled_odd_entry_vanishes_at_origin(a):
    assert frac_overscaled_entry(1, a, 0.0) == 0.0
    assert frac_overscaled_entry(7, a, 0.0) == 0.0


def test_overscaled_entry_frozen():
    # mpmath Fourier quadrature of Htilde_4 (tests/oracles.py)
    assert frac_overscaled_entry(4, 1.6, 0.7) == pytest.approx(-2.2491691932505438059, rel=1e-8)


def test_overscaled_r1_is_plain_entry():
    N, a = 10, 1.3
    D = dm_overscaled_1d(N, a, 1.0).entries
    x = gauss_hermite(N).nodes
    ref = np.array([[frac_overscaled_entry(j, a, xi) for j in range(N)] for xi in x])
    np.testing.assert_allclose(D, ref, rtol=1e-13, atol=0)


def test_overscaled_column_zero_closed_form():
    N, a = 8, 1.0
    x = gauss_hermite(N).nodes
    i = np.argmin(np.abs(x))
    ref = 2 ** a * sgamma(a / 2 + 0.5) / sgamma(0.5) * hyp1f1(a / 2 + 0.5, 0.5, -x[i] ** 2)
    assert dm_overscaled_1d(N, a).entries[i, 0] == pytest.approx(ref, rel=1e-14)


# --- normalised kernels and matrix -----------------------------------------

def test_normalized_kernel_origin():
    assert frac_normalized_kernel(0, 1.0, 0.0) == pytest.approx(math.sqrt(2 / math.pi), rel=1e-14)
    assert frac_normalized_kernel(1, 0.7, 0.0) == 0.0


def test_normalized_kernel_frozen():
    # mpmath inverse transform of exp(-xi^2/2) xi^3 |xi|^1.6, i dropped
    assert frac_normalized_kernel(3, 1.6, 1.1) == pytest.approx(2.1858301230299082557, rel=1e-8)


def test_normalized_single_entry():
    D = dm_normalized_1d(1, 1.0).entries
    assert D.shape == (1, 1)
    assert D[0, 0] == pytest.approx(math.sqrt(2 / math.pi), rel=1e-14)


def test_normalized_matches_complex_assembly():
    """Build the matrix with complex kernels and phases; imaginary parts cancel."""
    N, a = 12, 1.0
    x = gauss_hermite(N).nodes
    A = monomial_coeffs(N).coeffs
    F = np.array([[frac_normalized_kernel(k, a, xi) * (1j if k % 2 else 1.0)
                   for k in range(N)] for xi in x])
    Dc = (F @ A.T) * (-1j) ** np.arange(N)[None, :]
    D = dm_normalized_1d(N, a, method="closed").entries
    assert np.max(np.abs(Dc.imag)) <= 1e-12
    np.testing.assert_allclose(Dc.real, D, rtol=0, atol=1e-12 * np.max(np.abs(D)))


@pytest.mark.parametrize("a", ALPHAS)
def test_normalized_closed_vs_transform(a):
    N = 20
    c = dm_normalized_1d(N, a, method="closed").entries
    t = dm_normalized_1d(N, a, method="transform").entries
    assert np.max(np.abs(c - t)) <= 1e-9 * np.max(np.abs(t))


def test_normalized_transform_large_n_against_oracle():
    N, a = 64, 1.0
    x = gauss_hermite(N).nodes
    keep = np.abs(x) <= 20
    D = dm_normalized_1d(N, a).entries
    for j in (0, 31, 63):
        ref = oracle_frac_apply(NORM, j, a, x[keep])
        np.testing.assert_allclose(D[keep, j], ref, rtol=0, atol=1e-9)


# --- recurrence path --------------------------------------------------------

@pytest.mark.parametrize("N", [8, 16, 24, 32])
def test_overscaled_recurrence_equals_direct(N):
    for a in ALPHAS:
        d = dm_overscaled_1d(N, a, method="direct").entries
        r = dm_overscaled_1d(N, a, method="recurrence").entries
        big = np.abs(d) > 0
        assert np.max(np.abs(r - d)[big] / np.abs(d[big])) <= 1e-9


@pytest.mark.parametrize("N", [8, 16, 24, 32])
def test_normalized_recurrence_equals_direct(N):
    for a in ALPHAS:
        d = dm_normalized_1d(N, a, method="closed").entries
        r = dm_normalized_1d(N, a, method="recurrence").entries
        big = np.abs(d) > 0
        assert np.max(np.abs(r - d)[big] / np.abs(d[big])) <= 1e-9


# --- structural properties -------------------------------------------------

@pytest.mark.parametrize("basis", [OVER, NORM])
@pytest.mark.parametrize("N", [7, 16, 33])
@pytest.mark.parametrize("a", ALPHAS)
def test_column_parity(basis, N, a):
    D = dm(N, a, basis).entries
    sign = (-1.0) ** np.arange(N)
    flipped = D[::-1, :] * sign[None, :]
    assert np.max(np.abs(D - flipped)) <= 1e-12 * max(1.0, np.max(np.abs(D)))


@pytest.mark.parametrize("basis", [OVER, NORM, LAG])
def test_scaled_matrix_is_power_of_r(basis):
    base = dm(12, 0.8, basis, 1.0).entries
    scaled = dm(12, 0.8, basis, 1.9)
    np.testing.assert_allclose(scaled.entries, 1.9 ** 0.8 * base, rtol=1e-13,
                               atol=1e-15 * np.max(np.abs(base)))
    assert scaled.r == 1.9


def _direct_scaled_oracle(basis, n, alpha, r, x):
    """(-Delta)^{alpha/2} of phi_n(r .) at x from its own transform, by scipy quad."""
    if basis is OVER:
        cn = math.sqrt(math.pi / (2.0 ** n * math.factorial(n)))
        amp = lambda t: cn * (t / r) ** n * math.exp(-(t / r) ** 2 / 4) / r
    else:
        amp = lambda t: math.sqrt(2 * math.pi) * hermite_functions(n + 1, t / r)[n] / r
    c = math.cos if n % 2 == 0 else math.sin
    f = lambda t: t ** alpha * amp(t) * c(x * t)
    val = sum(quad(f, lo, hi, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
              for lo, hi in [(0, 1), (1, 5), (5, 15), (15, 30 * r)])
    return (-1) ** (n // 2) * val / math.pi


@settings(max_examples=25, deadline=None)
@given(st.sampled_from([OVER, NORM]), st.integers(0, 8), st.floats(0.2, 1.8),
       st.floats(0.6, 1.8), st.floats(-2.5, 2.5))
def test_scaling_law(basis, n, alpha, r, x):
    lhs = _direct_scaled_oracle(basis, n, alpha, r, x)
    rhs = r ** alpha * oracle_frac_apply(basis, n, alpha, r * x)
    assert abs(lhs - rhs) <= 1e-8 * max(1.0, abs(rhs))


def test_scaling_law_frozen():
    # mpmath values from tests/oracles.py for Htilde_3(0.7 x) and Hhat_5(1.3 x)
    assert -0.95687466697469455939 == pytest.approx(0.7 * -1.3669638099638493706, rel=1e-12)
    assert 1.067758862380954226 == pytest.approx(1.3 ** 0.4 * 0.96138168405533412038, rel=1e-12)
    assert 0.7 * oracle_frac_apply(OVER, 3, 1.0, 0.63) == pytest.approx(
        -0.95687466697469455939, rel=1e-9)
    assert 1.3 ** 0.4 * oracle_frac_apply(NORM, 5, 0.4, -1.56) == pytest.approx(
        1.067758862380954226, rel=1e-9)


@pytest.mark.parametrize("basis", [OVER, NORM])
def test_classical_limit(basis):
    N = 16
    D = dm(N, 2.0, basis).entries
    x = gauss_hermite(N).nodes
    for n in range(11):
        if basis is NORM:
            ref = (2 * n + 1 - x * x) * hermite_functions(n + 1, x)[n]
        else:
            # Htilde_n'' = sqrt((n+1)(n+2)) * 2 * Htilde_{n+2} in normalised form
            ref = -2 * math.sqrt((n + 1) * (n + 2)) * hermite_functions(n + 3, x, OVER)[n + 2]
        got = D[:, n]
        assert np.max(np.abs(got - ref)) <= 1e-8 * np.max(np.abs(ref))


# --- Lagrange basis ----------------------------------------------------------

def test_lagrange_cardinality():
    rule = gauss_hermite(32)
    B = lagrange_coefficients(rule)
    H = hermite_functions(32, rule.nodes)
    assert np.max(np.abs(H.T @ B - np.eye(32))) <= 1e-10


def test_lagrange_single_point():
    np.testing.assert_allclose(dm_lagrange_1d(1, 1.0).entries, dm_normalized_1d(1, 1.0).entries,
                               rtol=1e-14)


def test_lagrange_applied_to_gaussian():
    N = 16
    x = gauss_hermite(N).nodes
    got = dm_lagrange_1d(N, 1.0).entries @ np.exp(-x * x / 2)
    ref = oracle_frac_apply(NORM, 0, 1.0, x)
    assert np.max(np.abs(got - ref)) <= 1e-6


def test_lagrange_oracle_column():
    N = 10
    x = gauss_hermite(N).nodes
    D = dm_lagrange_1d(N, 0.6).entries
    np.testing.assert_allclose(D[:, 3], oracle_frac_apply(LAG, (N, 3), 0.6, x),
                               rtol=0, atol=1e-9)


# --- multi-term --------------------------------------------------------------

MULTI_ALPHAS = (0.139, 0.660, 1.340, 1.861)


def test_multiterm_single_is_identity():
    a = dm_multiterm(10, [0.7], "overscaled").entries
    np.testing.assert_array_equal(a, dm_overscaled_1d(10, 0.7).entries)


@pytest.mark.parametrize("basis", [OVER, NORM])
def test_multiterm_additivity_exact(basis):
    M = dm_multiterm(12, MULTI_ALPHAS, basis).entries
    total = dm(12, MULTI_ALPHAS[0], basis).entries.copy()
    for a in MULTI_ALPHAS[1:]:
        total = total + dm(12, a, basis).entries
    np.testing.assert_array_equal(M, total)


@settings(max_examples=10, deadline=None)
@given(st.permutations(list(MULTI_ALPHAS)))
def test_multiterm_order_independent(perm):
    a = dm_multiterm(8, perm, "normalized").entries
    b = dm_multiterm(8, MULTI_ALPHAS, "normalized").entries
    np.testing.assert_array_equal(a, b)


def test_multiterm_metadata_and_limits():
    M = dm_multiterm(6, [1.2, 0.3], "overscaled", r=1.1)
    assert M.alphas == (0.3, 1.2)
    with pytest.raises(AttributeError):
        M.alpha
    with pytest.raises(ValueError):
        dm_multiterm(6, [], "overscaled")
    with pytest.raises(ValueError):
        dm_multiterm(6, [0.5] * 17, "overscaled")


# --- 2-D matrices ------------------------------------------------------------

def test_2d_origin_values():
    o = np.array([0.0])
    assert values_2d(OVER, 1, 1.0, o, o)[0, 0] == pytest.approx(math.sqrt(math.pi), rel=1e-14)
    assert values_2d(NORM, 1, 1.0, o, o)[0, 0] == pytest.approx(math.sqrt(math.pi / 2), rel=1e-14)


@pytest.mark.parametrize("method", ["closed", "heat"])
def test_2d_frozen_values(method):
    # mpmath double quadrature (tests/oracles.py)
    v = values_2d(OVER, 3, 0.4, np.array([0.5]), np.array([-0.3]), method)[0, 2 * 3 + 1]
    assert v == pytest.approx(0.154527562976835, rel=1e-6)
    v = values_2d(NORM, 3, 1.6, np.array([0.4]), np.array([0.9]), method)[0, 1 * 3 + 2]
    assert v == pytest.approx(0.690657500542392, rel=1e-6)


@pytest.mark.parametrize("builder", [dm_overscaled_2d, dm_normalized_2d])
def test_2d_odd_functions_vanish_on_axes(builder):
    N = 5
    D = builder(N, 0.9).entries
    x = gauss_hermite(N).nodes
    X, Y = np.meshgrid(x, x, indexing="ij")
    on_x0 = np.abs(X.ravel()) < 1e-15
    on_y0 = np.abs(Y.ravel()) < 1e-15
    for p in range(N):
        for q in range(N):
            col = D[:, p * N + q]
            if p % 2:
                assert np.all(col[on_x0] == 0)
            if q % 2:
                assert np.all(col[on_y0] == 0)


def test_2d_heat_vs_closed():
    x = np.array([0.3, -1.7, 2.9])
    y = np.array([0.0, 1.1, -0.4])
    for basis, n in ((OVER, 12), (NORM, 8)):
        for a in ALPHAS:
            c = values_2d(basis, n, a, x, y, "closed")
            h = values_2d(basis, n, a, x, y, "heat")
            assert np.max(np.abs(c - h)) <= 1e-9 * max(1.0, np.max(np.abs(c)))


@pytest.mark.parametrize("basis,pq", [(OVER, (15, 14)), (NORM, (19, 20))])
def test_2d_heat_high_order_against_oracle(basis, pq):
    pt = (np.array([0.7, -2.1]), np.array([1.3, 0.4]))
    n = max(pq) + 1
    vals = values_2d(basis, n, 1.3, pt[0], pt[1], "heat")[:, pq[0] * n + pq[1]]
    ref = oracle_frac_apply_2d(basis, pq, 1.3, pt)
    np.testing.assert_allclose(vals, ref, rtol=0, atol=1e-8)


def test_2d_matrix_ordering_and_scaling():
    N, a, r = 4, 0.7, 1.3
    D = dm_overscaled_2d(N, a, r)
    assert D.entries.shape == (16, 16) and D.dim == 2 and D.n_per_dim == N
    x = gauss_hermite(N).nodes
    X, Y = np.meshgrid(x, x, indexing="ij")
    ref = r ** a * values_2d(OVER, N, a, X.ravel(), Y.ravel())
    np.testing.assert_allclose(D.entries, ref, rtol=1e-14)


def test_2d_caps():
    with pytest.raises(ValueError):
        dm_overscaled_2d(33, 1.0)
    with pytest.raises(ValueError):
        dm_normalized_2d(25, 1.0)
    with pytest.raises(ValueError):
        dm(4, 1.0, "lagrange", dim=2)


def test_1d_caps():
    with pytest.raises(ValueError):
        dm_overscaled_1d(MAX_N_1D + 1, 1.0)
    with pytest.raises(ValueError):
        dm_normalized_1d(4, 1.0, r=-1.0)


# --- oracle ----------------------------------------------------------------

@pytest.mark.parametrize("a", [0.3, 1.0, 1.7])
def test_oracle_gaussian_moment(a):
    ref = 2 ** (a / 2) / math.sqrt(math.pi) * sgamma((1 + a) / 2)
    assert oracle_frac_apply(NORM, 0, a, 0.0) == pytest.approx(ref, rel=1e-12)


def test_oracle_overscaled_origin():
    assert oracle_frac_apply(OVER, 0, 1.0, 0.0) == pytest.approx(2 / math.sqrt(math.pi), rel=1e-12)


def test_oracle_independent_values():
    assert oracle_frac_apply(OVER, 4, 1.6, 0.7) == pytest.approx(-2.2491691932505438059, rel=1e-10)
    assert oracle_frac_apply(NORM, 5, 0.4, -1.56) == pytest.approx(0.96138168405533412038,
                                                                   rel=1e-10)


def test_oracle_self_consistency():
    x = np.linspace(-6, 6, 13)
    for basis, n in ((OVER, 9), (NORM, 12)):
        a = _oracle_1d_once(basis, n, 1.1, x, 0.25, 20)
        b = _oracle_1d_once(basis, n, 1.1, x, 0.125, 30)
        assert np.max(np.abs(a - b)) <= 1e-10


def test_oracle_domain():
    with pytest.raises(ValueError):
        oracle_frac_apply(NORM, 2, 1.0, 25.0)


# --- dumps -----------------------------------------------------------------

@pytest.mark.parametrize("basis,dim", [(OVER, 1), (NORM, 2)])
def test_dump_round_trip(basis, dim, tmp_path):
    M = dm_multiterm(4, [0.5, 1.5], basis, r=1.25, dim=dim)
    path = tmp_path / "m.csv"
    dump_matrix(M, path)
    L = load_matrix(path)
    np.testing.assert_array_equal(L.entries, M.entries)
    assert (L.basis, L.alphas, L.r, L.dim, L.n_per_dim) == (M.basis, M.alphas, M.r, M.dim,
                                                            M.n_per_dim)


def test_dump_header_and_errors():
    buf = io.StringIO()
    dump_matrix(dm_normalized_1d(3, 1.0), buf)
    header, data = read_dump(io.StringIO(buf.getvalue()))
    assert header["basis"] == "normalized" and header["rows"] == "3"
    assert data.shape == (3, 3)
    with pytest.raises(ValueError):
        load_matrix(io.StringIO("garbage\n1,2\n"))
    truncated = "\n".join(buf.getvalue().splitlines()[:-1])
    with pytest.raises(ValueError):
        load_matrix(io.StringIO(truncated))


def test_matrix_immutable():
    M = dm_normalized_1d(3, 1.0)
    assert isinstance(M, FracDiffMatrix)
    with pytest.raises(ValueError):
        M.entries[0, 0] = 1.0
