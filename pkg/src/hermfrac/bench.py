"""Manufactured-solution experiments and the command-line harness."""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
import time
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .basis import BasisKind
from .fracdm import (
    AssemblyError,
    check_alpha,
    dm,
    dm_multiterm,
    dump_matrix,
    operator_values,
    oracle_frac_apply,
)
from .quadrature import error_norms, error_rule_size, gauss_hermite, project
from .solve import (
    CollocationProblem,
    basis_value_matrix,
    condition_number,
    nonlinearity,
    solve_eigen,
    solve_linear,
    solve_newton,
)
from .specfun import AccuracyError

SQRT2 = math.sqrt(2.0)
TAIL_TOL = 1e-10
ORACLE_RTOL = 1e-7
ORACLE_ATOL = 1e-9
ORACLE_FLOOR = 1e-8

#: first three eigenvalues of (-Delta)^{1/2} + x^2: -a'_1, -a_1, -a'_2 (Airy roots)
AIRY_EIGENVALUES = (1.01879297164747, 2.33810741045976, 3.24819758217983)


# ---------------------------------------------------------------------------
# exact-solution catalog
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExactSolution:
    name: str
    dim: int
    func: object
    formula: str

    def __call__(self, *xs):
        return self.func(*xs)


def _catalog():
    e = np.exp
    items = [
        ExactSolution("gauss-sin", 1, lambda x: e(-x**2) * np.sin(x),
                      "exp(-x^2) sin x"),
        ExactSolution("half-x2cos", 1, lambda x: e(-x**2 / 2) * x**2 * np.cos(x),
                      "exp(-x^2/2) x^2 cos x"),
        ExactSolution("two-x2cos", 1, lambda x: e(-2 * x**2) * x**2 * np.cos(x),
                      "exp(-2x^2) x^2 cos x"),
        ExactSolution("gauss-sin-2d", 2, lambda x, y: e(-(x**2 + y**2)) * np.sin(x + y),
                      "exp(-(x^2+y^2)) sin(x+y)"),
        ExactSolution("multiterm", 1,
                      lambda x: e(-1.5 * x**2) * (np.sin(x) + x**6 + x**2 * np.cos(x)),
                      "exp(-3x^2/2) (sin x + x^6 + x^2 cos x)"),
        ExactSolution("gauss-sin-x2", 1, lambda x: e(-x**2) * (np.sin(x) + x**2),
                      "exp(-x^2) (sin x + x^2)"),
        ExactSolution("half-sin-x2", 1, lambda x: e(-x**2 / 2) * (np.sin(x) + x**2),
                      "exp(-x^2/2) (sin x + x^2)"),
    ]
    return {s.name: s for s in items}


CATALOG = _catalog()


def exact_solution(name):
    try:
        return CATALOG[name]
    except KeyError:
        raise ValueError(f"unknown exact solution {name!r}; catalog: "
                         + ", ".join(CATALOG)) from None


# ---------------------------------------------------------------------------
# right-hand side synthesis
# ---------------------------------------------------------------------------

@dataclass
class RhsSampler:
    """Point sampler for a manufactured right-hand side.

    ``coeffs`` are the projection coefficients of the exact solution;
    ``underresolved`` is set when the trailing coefficients are not
    negligible, in which case ``g`` only approximates the true data.
    """

    exact: ExactSolution
    alphas: tuple
    gamma: float
    f: object
    basis: BasisKind
    r: float
    M: int
    coeffs: np.ndarray
    tail_ratio: float
    underresolved: bool

    def __call__(self, *xs):
        dim = self.exact.dim
        if dim == 1:
            x = np.asarray(xs[0], dtype=float)
            pts, shape = x.ravel(), x.shape
        else:
            X, Y = (np.asarray(v, dtype=float) for v in xs)
            pts, shape = (X.ravel(), Y.ravel()), X.shape
        total = np.zeros(int(np.prod(shape)))
        for a in sorted(self.alphas):
            total = total + operator_values(self.basis, self.M, a, pts, self.r, dim) @ self.coeffs
        total = total.reshape(shape)
        if self.gamma:
            u = self.exact(*xs)
            total = total + self.gamma * self.f.f(np.asarray(u, dtype=float))
        return total


def _tail_ratio(c, M, dim):
    """Largest of the last three coefficients (per direction) over ``||c||``."""
    norm = np.linalg.norm(c)
    if norm == 0:
        return 0.0
    if dim == 1:
        tail = np.abs(c[-3:])
    else:
        C = np.abs(c.reshape(M, M))
        tail = np.concatenate([C[-3:, :].ravel(), C[:, -3:].ravel()])
    return float(tail.max() / norm)


def synth_rhs(exact, alphas, gamma, f, basis, r, M, dim=None):
    """Manufacture ``g = sum_j (-Delta)^{a_j/2} u + gamma f(u)``.

    ``u`` is projected onto ``M`` functions of ``basis`` (Lagrange problems
    use the normalised family, which spans the same space); the operator is
    applied per basis function with the closed-form values, and
    ``gamma f(u)`` is added pointwise from the exact solution.
    """
    if isinstance(exact, str):
        exact = exact_solution(exact)
    dim = exact.dim if dim is None else dim
    if isinstance(f, str):
        f = nonlinearity(f)
    basis = BasisKind.parse(basis)
    modal = BasisKind.NORMALIZED if basis is BasisKind.LAGRANGE else basis
    alphas = tuple(check_alpha(a) for a in alphas)
    c = project(exact, modal, M, r, dim)
    tail = _tail_ratio(c, M, dim)
    under = tail > TAIL_TOL
    if under:
        warnings.warn(f"projection of {exact.name} onto {M} {modal.value} functions "
                      f"is under-resolved (tail ratio {tail:.1e})", RuntimeWarning,
                      stacklevel=2)
    return RhsSampler(exact, alphas, float(gamma), f, modal, float(r), M, c, tail, under)


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

EXPERIMENTS = ("laplace-1d", "linear-1d", "linear-2d", "multiterm-1d",
               "nonlinear-1d", "eigen-1d")


@dataclass(frozen=True)
class ExperimentSpec:
    experiment: str
    exact: str
    alphas: tuple
    gamma: float
    nonlinearity: str
    basis: BasisKind
    r: float
    nlist: tuple
    oversample: int | None = None

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        object.__setattr__(self, "basis", BasisKind.parse(self.basis))
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(self, "nlist", tuple(int(n) for n in self.nlist))
        exact_solution(self.exact)
        nonlinearity(self.nonlinearity)
        if list(self.nlist) != sorted(set(self.nlist)) or not self.nlist:
            raise ValueError("N-list must be non-empty and strictly ascending")
        if self.oversample is not None and self.oversample < 2 * max(self.nlist):
            raise ValueError("oversampling M must be at least 2 max(N)")

    @property
    def dim(self):
        return exact_solution(self.exact).dim

    def rhs_size(self, N):
        if self.oversample is not None:
            return self.oversample
        return error_rule_size(N)


def default_spec(experiment, **overrides):
    """Default settings for an experiment, with ``overrides`` applied on top."""
    base = {
        "laplace-1d": dict(exact="gauss-sin", alphas=(1.0,), gamma=0.0,
                           nonlinearity="none", basis="overscaled", r=1.0,
                           nlist=(10, 20, 30, 40)),
        "linear-1d": dict(exact="half-x2cos", alphas=(1.0,), gamma=2.0,
                          nonlinearity="linear-u", basis="overscaled", r=1 / SQRT2,
                          nlist=(10, 20, 30, 40)),
        "linear-2d": dict(exact="gauss-sin-2d", alphas=(1.0,), gamma=2.0,
                          nonlinearity="linear-u", basis="overscaled", r=1.0,
                          nlist=(8, 12, 16, 20)),
        "multiterm-1d": dict(exact="multiterm", alphas=(0.139, 0.660, 1.340, 1.861),
                             gamma=0.0, nonlinearity="none", basis="overscaled",
                             r=math.sqrt(1.5), nlist=(10, 20, 30, 40, 50)),
        "nonlinear-1d": dict(exact="gauss-sin-x2", alphas=(1.0,), gamma=1.0,
                             nonlinearity="square-u", basis="normalized",
                             r=math.sqrt(2.0), nlist=(10, 20, 30, 40)),
        "eigen-1d": dict(exact="gauss-sin", alphas=(1.0,), gamma=0.0,
                         nonlinearity="none", basis="lagrange", r=1.0,
                         nlist=(32, 64, 128, 256)),
    }
    if experiment not in base:
        raise ValueError(f"unknown experiment {experiment!r}; expected one of "
                         + ", ".join(EXPERIMENTS))
    kw = dict(base[experiment])
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentSpec(experiment=experiment, **kw)


@dataclass
class ConvergenceRecord:
    N: int
    alphas: tuple
    r: float
    e_w: float
    e_m: float
    kappa: float
    wall_ms: float
    status: str
    message: str = ""
    iterations: int = 0
    residual: float = math.nan


def build_problem(spec, N, rhs=None):
    rhs = rhs if rhs is not None else synth_rhs(
        spec.exact, spec.alphas, spec.gamma, spec.nonlinearity, spec.basis,
        spec.r, spec.rhs_size(N))
    return CollocationProblem(spec.alphas, spec.gamma, nonlinearity(spec.nonlinearity),
                              rhs, spec.basis, spec.r, N, spec.dim)


def solve_one(spec, N):
    """Assemble, synthesise, solve and measure one ``N``.

    Returns ``(solution, record)``.  ``kappa`` is the 2-norm condition number
    of the matrix of the last linear solve (the Jacobian at the final
    iterate for Newton runs).
    """
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        rhs = synth_rhs(spec.exact, spec.alphas, spec.gamma, spec.nonlinearity,
                        spec.basis, spec.r, spec.rhs_size(N))
    problem = build_problem(spec, N, rhs)
    D = dm_multiterm(N, spec.alphas, spec.basis, spec.r, spec.dim).entries
    B = basis_value_matrix(spec.basis, N, spec.dim)
    nl = problem.nonlinearity
    if nl.is_linear:
        sol = solve_linear(problem, D)
        A = D + spec.gamma * B if nl.name == "linear-u" else D
    else:
        sol = solve_newton(problem, D=D)
        A = D + spec.gamma * (nl.df(B @ sol.coeffs)[:, None] * B)
    kappa = condition_number(A)
    errs = error_norms(exact_solution(spec.exact), sol,
                       gauss_hermite(error_rule_size(N)), spec.basis)
    wall = (time.perf_counter() - t0) * 1e3
    status = "warn-underresolved" if rhs.underresolved else "ok"
    rec = ConvergenceRecord(N, spec.alphas, spec.r, errs.e_w, errs.e_m, kappa, wall,
                            status, iterations=sol.iterations, residual=sol.residual_norm)
    return sol, rec


def run_convergence(spec):
    """One :class:`ConvergenceRecord` per ``N`` of ``spec.nlist`` (ascending).

    Numerical failures are recorded with ``status="fail"`` and NaN errors
    and the sweep continues.
    """
    if spec.experiment == "eigen-1d":
        raise ValueError("use run_eigen for the eigenvalue study")
    out = []
    for N in spec.nlist:
        t0 = time.perf_counter()
        try:
            _, rec = solve_one(spec, N)
        except (ArithmeticError, AssemblyError, AccuracyError, ValueError) as exc:
            rec = ConvergenceRecord(N, spec.alphas, spec.r, math.nan, math.nan, math.nan,
                                    (time.perf_counter() - t0) * 1e3, "fail", str(exc))
        out.append(rec)
    return out


CSV_HEADER = ("N", "alpha", "r", "e_w", "e_m", "kappa", "wall_ms", "status")


def _num(v):
    return format(float(v), ".15e")


def records_to_csv(records, buf=None):
    """Write records with the fixed header; returns the text."""
    buf = io.StringIO() if buf is None else buf
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for rec in records:
        w.writerow([rec.N, ";".join(_num(a) for a in rec.alphas), _num(rec.r),
                    _num(rec.e_w), _num(rec.e_m), _num(rec.kappa), _num(rec.wall_ms),
                    rec.status])
    return buf.getvalue() if isinstance(buf, io.StringIO) else None


@dataclass
class EigenRecord:
    N: int
    alpha: float
    eigenvalues: tuple
    errors: tuple
    max_imag: float
    wall_ms: float
    status: str = "ok"


EIGEN_HEADER = ("N", "alpha", "lambda1", "lambda2", "lambda3",
                "err1", "err2", "err3", "max_imag", "wall_ms", "status")


def run_eigen(alpha, nlist, r=1.0):
    """First three eigenvalues of the fractional oscillator for each ``N``.

    Errors are against the Airy-root values, which are exact only for
    ``alpha = 1``; for other orders the error columns are NaN.
    """
    out = []
    for N in nlist:
        t0 = time.perf_counter()
        try:
            res = solve_eigen(N, alpha, r)
            lam = tuple(float(v) for v in res.eigenvalues[:3])
            if alpha == 1.0:
                err = tuple(abs(a - b) for a, b in zip(lam, AIRY_EIGENVALUES))
            else:
                err = (math.nan,) * 3
            out.append(EigenRecord(N, alpha, lam, err, res.max_imag,
                                   (time.perf_counter() - t0) * 1e3))
        except ArithmeticError as exc:
            out.append(EigenRecord(N, alpha, (math.nan,) * 3, (math.nan,) * 3,
                                   getattr(exc, "max_imag", math.nan),
                                   (time.perf_counter() - t0) * 1e3, "fail"))
    return out


def eigen_to_csv(records, buf=None):
    buf = io.StringIO() if buf is None else buf
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EIGEN_HEADER)
    for rec in records:
        w.writerow([rec.N, _num(rec.alpha), *(_num(v) for v in rec.eigenvalues),
                    *(_num(v) for v in rec.errors), _num(rec.max_imag),
                    _num(rec.wall_ms), rec.status])
    return buf.getvalue() if isinstance(buf, io.StringIO) else None


def verify_oracle(basis, alphas, N, r=1.0):
    """Largest deviation of a 1-D DM from the quadrature oracle.

    Returns ``(max_rel, max_abs_small, passed)``: relative deviation over
    entries above ``ORACLE_FLOOR`` in magnitude, absolute deviation over the
    rest, and whether both meet ``ORACLE_RTOL`` / ``ORACLE_ATOL``.
    """
    basis = BasisKind.parse(basis)
    x = gauss_hermite(N).nodes
    worst_rel = worst_abs = 0.0
    for a in alphas:
        D = dm(N, a, basis, r).entries / r ** a
        for j in range(N):
            n = (N, j) if basis is BasisKind.LAGRANGE else j
            ref = oracle_frac_apply(basis, n, a, x)
            big = np.abs(D[:, j]) > ORACLE_FLOOR
            dev = np.abs(D[:, j] - ref)
            if np.any(big):
                worst_rel = max(worst_rel, float(np.max(dev[big] / np.abs(D[big, j]))))
            if np.any(~big):
                worst_abs = max(worst_abs, float(np.max(dev[~big])))
    return worst_rel, worst_abs, worst_rel <= ORACLE_RTOL and worst_abs <= ORACLE_ATOL


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------

class UsageError(Exception):
    pass


def _floats(text):
    return [float(v) for v in str(text).replace(";", ",").split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


def read_config(path):
    """``key=value`` lines; ``#`` starts a comment.  Keys use flag names."""
    conf = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            conf[key.strip().replace("-", "_")] = val.strip()
    return conf


CONFIG_KEYS = {"experiment", "basis", "alpha", "gamma", "r", "nlist", "n", "oversample",
               "out", "seed", "format", "exact", "nonlinearity", "dim", "method"}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value file; flags override it")
    common.add_argument("--experiment", choices=EXPERIMENTS)
    common.add_argument("--basis", choices=[b.value for b in BasisKind])
    common.add_argument("--alpha", action="append",
                        help="fractional order; repeat or give a comma list")
    common.add_argument("--gamma", type=float)
    common.add_argument("--r", type=float, help="scaling factor")
    common.add_argument("--nlist", help="comma-separated N values")
    common.add_argument("--n", type=int, help="single N")
    common.add_argument("--oversample", type=int, help="RHS projection size M")
    common.add_argument("--exact", choices=sorted(CATALOG))
    common.add_argument("--nonlinearity", choices=["none", "linear-u", "square-u"])
    common.add_argument("--dim", type=int, choices=[1, 2])
    common.add_argument("--method", help="assembly method passed to the DM builder")
    common.add_argument("--out", help="output file (default: stdout)")
    common.add_argument("--seed", type=int, help="reserved; runs are deterministic")
    common.add_argument("--format", choices=["csv"], default=None)

    p = argparse.ArgumentParser(prog="hermfrac",
                                description="Hermite collocation for fractional Laplacians")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("dm", parents=[common], help="assemble a matrix, dump it, print kappa")
    sub.add_parser("solve", parents=[common], help="solve one problem")
    sub.add_parser("sweep", parents=[common], help="convergence sweep to CSV")
    sub.add_parser("eigen", parents=[common], help="oscillator eigenvalues to CSV")
    sub.add_parser("verify", parents=[common], help="compare DMs with the oracle")
    return p


def _merge_config(args):
    if not args.config:
        return args
    conf = read_config(args.config)
    unknown = set(conf) - CONFIG_KEYS
    if unknown:
        raise UsageError("unknown config keys: " + ", ".join(sorted(unknown)))
    casts = {"gamma": float, "r": float, "n": int, "oversample": int, "seed": int,
             "dim": int}
    for key, val in conf.items():
        if getattr(args, key, None) is None:
            if key == "alpha":
                val = [val]
            elif key in casts:
                val = casts[key](val)
            setattr(args, key, val)
    return args


def _alphas(args, default=None):
    if not args.alpha:
        if default is None:
            raise UsageError("--alpha is required")
        return list(default)
    vals = [a for chunk in args.alpha for a in _floats(chunk)]
    for a in vals:
        if not 0 < a <= 2:
            raise UsageError(f"fractional order {a} outside (0, 2]")
    return vals


def _spec_from_args(args):
    experiment = args.experiment or "laplace-1d"
    nlist = _ints(args.nlist) if args.nlist else ([args.n] if args.n else None)
    return default_spec(
        experiment,
        exact=args.exact,
        alphas=tuple(_alphas(args)) if args.alpha else None,
        gamma=args.gamma,
        nonlinearity=args.nonlinearity,
        basis=args.basis,
        r=args.r,
        nlist=tuple(nlist) if nlist else None,
        oversample=args.oversample,
    )


def _emit(text, out):
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _cmd_dm(args):
    basis = args.basis or "normalized"
    alphas = _alphas(args, [1.0])
    N = args.n or 16
    kw = {"method": args.method} if args.method else {}
    mat = dm_multiterm(N, alphas, basis, args.r or 1.0, args.dim or 1, **kw)
    if args.out:
        dump_matrix(mat, args.out)
    kappa = condition_number(mat.entries)
    print(f"basis={mat.basis.value} alphas={','.join(map(str, mat.alphas))} "
          f"r={mat.r} dim={mat.dim} N={N} kappa={kappa:.6e}")
    return 0


def _cmd_solve(args):
    spec = _spec_from_args(args)
    N = args.n or spec.nlist[-1]
    sol, rec = solve_one(replace(spec, nlist=(N,)), N)
    print(f"experiment={spec.experiment} basis={spec.basis.value} N={N} "
          f"e_w={rec.e_w:.6e} e_m={rec.e_m:.6e} kappa={rec.kappa:.6e} "
          f"residual={sol.residual_norm:.3e} iterations={sol.iterations} "
          f"status={rec.status}")
    return 0


def _cmd_sweep(args):
    spec = _spec_from_args(args)
    if spec.experiment == "eigen-1d":
        raise UsageError("use the eigen subcommand for eigen-1d")
    records = run_convergence(spec)
    _emit(records_to_csv(records), args.out)
    return 1 if all(r.status == "fail" for r in records) else 0


def _cmd_eigen(args):
    alphas = _alphas(args, [1.0])
    nlist = _ints(args.nlist) if args.nlist else [32, 64, 128, 256]
    rows = []
    for a in alphas:
        rows.extend(run_eigen(a, nlist, args.r or 1.0))
    _emit(eigen_to_csv(rows), args.out)
    return 1 if any(r.status == "fail" for r in rows) else 0


def _cmd_verify(args):
    basis = args.basis or "overscaled"
    alphas = _alphas(args, [0.4, 1.0, 1.6])
    N = args.n or 16
    rel, small, ok = verify_oracle(basis, alphas, N)
    print(f"basis={basis} N={N} alphas={','.join(map(str, alphas))} "
          f"max_rel={rel:.3e} max_abs_small={small:.3e} {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


COMMANDS = {"dm": _cmd_dm, "solve": _cmd_solve, "sweep": _cmd_sweep,
            "eigen": _cmd_eigen, "verify": _cmd_verify}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _merge_config(args)
        return COMMANDS[args.command](args)
    except (UsageError, ValueError, OSError) as exc:
        print(f"hermfrac {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except ArithmeticError as exc:
        print(f"hermfrac {args.command}: numeric failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
