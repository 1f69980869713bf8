import csv
import io
import math
import warnings

import numpy as np
import pytest

from hermfrac import BasisKind, frac_overscaled_entry, oracle_frac_apply
from hermfrac.bench import (
    CATALOG,
    CSV_HEADER,
    EIGEN_HEADER,
    ConvergenceRecord,
    ExperimentSpec,
    default_spec,
    eigen_to_csv,
    exact_solution,
    records_to_csv,
    run_convergence,
    run_eigen,
    synth_rhs,
    verify_oracle,
)
from hermfrac.specfun import hermite_functions

SQRT2 = math.sqrt(2.0)


def test_catalog_contents():
    assert len(CATALOG) == 7
    x = np.array([0.0, 0.7])
    np.testing.assert_allclose(exact_solution("gauss-sin")(x), np.exp(-x * x) * np.sin(x))
    assert exact_solution("gauss-sin-2d").dim == 2
    with pytest.raises(ValueError):
        exact_solution("nope")


# --- RHS synthesis -------------------------------------------------------------

def test_synth_single_overscaled_function():
    h2 = lambda x: hermite_functions(3, x, BasisKind.OVERSCALED)[2]
    from hermfrac.bench import ExactSolution
    ex = ExactSolution("h2", 1, h2, "Htilde_2")
    g = synth_rhs(ex, (1.3,), 0.0, "none", "overscaled", 1.0, 64)
    x = np.linspace(-4, 4, 9)
    ref = [frac_overscaled_entry(2, 1.3, v) for v in x]
    np.testing.assert_allclose(g(x), ref, rtol=0, atol=1e-10)


def test_synth_linear_reaction():
    from hermfrac.bench import ExactSolution
    h0 = lambda x: np.exp(-x * x / 2)
    ex = ExactSolution("h0", 1, h0, "Hhat_0")
    g = synth_rhs(ex, (0.7,), 2.0, "linear-u", "normalized", 1.0, 64)
    x = np.linspace(-3, 3, 7)
    ref = oracle_frac_apply(BasisKind.NORMALIZED, 0, 0.7, x) + 2 * h0(x)
    np.testing.assert_allclose(g(x), ref, rtol=1e-8, atol=1e-10)


def test_synth_independent_of_oversampling():
    x = np.linspace(-6, 6, 61)
    g80 = synth_rhs("gauss-sin", (1.0,), 0.0, "none", "overscaled", 1.0, 80)
    g120 = synth_rhs("gauss-sin", (1.0,), 0.0, "none", "overscaled", 1.0, 120)
    assert np.max(np.abs(g80(x) - g120(x))) <= 1e-9


def test_synth_tail_warning():
    with pytest.warns(RuntimeWarning):
        g = synth_rhs("multiterm", (1.0,), 0.0, "none", "normalized", 1.0, 8)
    assert g.underresolved and g.tail_ratio > 1e-10
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        g = synth_rhs("gauss-sin", (1.0,), 0.0, "none", "overscaled", 1.0, 64)
    assert not g.underresolved


def test_synth_2d_shape():
    g = synth_rhs("gauss-sin-2d", (1.0,), 2.0, "linear-u", "overscaled", 1.0, 16)
    X, Y = np.meshgrid(np.linspace(-1, 1, 3), np.linspace(-1, 1, 4), indexing="ij")
    assert g(X, Y).shape == (3, 4)


# --- experiment specs ----------------------------------------------------------

@pytest.mark.parametrize("kw", [dict(experiment="heat-1d"), dict(exact="nope"),
                                dict(nlist=(20, 10)), dict(nlist=()),
                                dict(oversample=30)])
def test_spec_validation(kw):
    base = dict(experiment="laplace-1d", exact="gauss-sin", alphas=(1.0,), gamma=0.0,
                nonlinearity="none", basis="normalized", r=1.0, nlist=(10, 20))
    base.update(kw)
    with pytest.raises(ValueError):
        ExperimentSpec(**base)


def test_default_spec_overrides():
    s = default_spec("linear-1d", r=1.0)
    assert s.r == 1.0 and s.basis is BasisKind.OVERSCALED and s.exact == "half-x2cos"
    assert s.rhs_size(10) == 64 and s.rhs_size(100) == 200
    with pytest.raises(ValueError):
        default_spec("bogus")


# --- CSV ------------------------------------------------------------------------

def _rows(text):
    return list(csv.reader(io.StringIO(text)))


def test_csv_schema():
    spec = default_spec("laplace-1d", basis="normalized", r=SQRT2, nlist=(10, 20))
    rows = _rows(records_to_csv(run_convergence(spec)))
    assert tuple(rows[0]) == CSV_HEADER
    assert [int(r[0]) for r in rows[1:]] == [10, 20]
    for r in rows[1:]:
        assert r[7] in {"ok", "warn-underresolved", "fail"}
        # at least 12 significant digits in scientific notation
        assert "e" in r[4] and len(r[4].split("e")[0].replace(".", "").lstrip("-")) >= 12


def _strip_wall(text):
    return [r[:6] + r[7:] for r in _rows(text)]


@pytest.mark.parametrize("experiment", ["laplace-1d", "nonlinear-1d"])
def test_csv_determinism(experiment):
    spec = default_spec(experiment, nlist=(10, 20))
    a = records_to_csv(run_convergence(spec))
    b = records_to_csv(run_convergence(spec))
    assert _strip_wall(a) == _strip_wall(b)


def test_multi_alpha_column():
    rec = ConvergenceRecord(8, (0.5, 1.5), 1.0, 0.0, 0.0, 1.0, 0.0, "ok")
    rows = _rows(records_to_csv([rec]))
    assert [float(v) for v in rows[1][1].split(";")] == [0.5, 1.5]


def test_sweep_failure_recorded_in_row():
    # N beyond the quadrature cap for 2D fails per row; the sweep continues
    spec = default_spec("linear-2d", nlist=(4, 40))
    recs = run_convergence(spec)
    assert recs[0].status in {"ok", "warn-underresolved"}
    assert recs[1].status == "fail" and math.isnan(recs[1].e_m) and recs[1].message


def test_eigen_csv():
    recs = run_eigen(1.0, (16, 32))
    rows = _rows(eigen_to_csv(recs))
    assert tuple(rows[0]) == EIGEN_HEADER and len(rows) == 3
    assert all(r[-1] == "ok" for r in rows[1:])
    nan_err = run_eigen(0.8, (16,))[0].errors
    assert all(math.isnan(e) for e in nan_err)


# --- convergence trends -----------------------------------------------------------

def test_cross_basis_agreement():
    kw = dict(r=SQRT2, nlist=(10, 20, 30, 40))
    rn = run_convergence(default_spec("laplace-1d", basis="normalized", **kw))
    rl = run_convergence(default_spec("laplace-1d", basis="lagrange", **kw))
    for a, b in zip(rn, rl):
        # below the rounding floor a factor says nothing
        if max(a.e_m, b.e_m) > 1e-12:
            assert 1 / 3 <= a.e_m / b.e_m <= 3, (a.N, a.e_m, b.e_m)


def test_laplace_strict_decrease_to_floor():
    recs = run_convergence(default_spec("laplace-1d", basis="normalized", r=SQRT2))
    e = [r.e_m for r in recs]
    for a, b in zip(e, e[1:]):
        assert b < a or b <= 1e-12, e


def test_two_x2cos_with_r2():
    kw = dict(exact="two-x2cos", basis="normalized", nlist=(10, 20))
    e2 = [r.e_m for r in run_convergence(default_spec("linear-1d", r=2.0, **kw))]
    e1 = [r.e_m for r in run_convergence(default_spec("linear-1d", r=1.0, **kw))]
    assert e2[-1] <= 1e-12 and e2[0] < e1[0]


def test_verify_oracle_small():
    rel, small, ok = verify_oracle("normalized", (0.4, 1.6), 6)
    assert ok and rel <= 1e-7 and small <= 1e-9
