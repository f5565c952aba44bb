"""Cubic smoothing splines with AR(1)-correlated errors.

The fitted curve minimises

    (y - f)' W_phi (y - f) + alpha * integral f''(t)^2 dt

where ``W_phi`` is the inverse AR(1) correlation matrix of the residuals in
sequence order.  The curve is represented in a cubic B-spline basis with
breakpoints at the (unique) observed times, so the minimiser over that basis is
the natural cubic smoothing spline.  All linear algebra is banded: the
normal-equation matrix ``B'WB + alpha*Omega`` has half bandwidth 4 and is
factorised with LAPACK ``pbtrf`` in O(n).

``alpha`` and ``phi`` are chosen jointly by generalized maximum likelihood
(the restricted likelihood of the equivalent mixed model).  The straight-line
limit ``alpha -> inf`` is evaluated in closed form and competes with the
finite-alpha optimum, which is how exactly linear fits arise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize, sparse
from scipy.interpolate import BSpline
from scipy.linalg.lapack import dpbtrf, dpbtrs

from .errors import DegenerateSequenceError, SkillDecompError, UndefinedAutocorrelationError

DEGREE = 3
LINEAR_EDF = 2.01
PHI_CLAMP = 0.99
LINE_TOL = 1e-3

__all__ = [
    "SplineOptions",
    "SplineFit",
    "FitDiagnostics",
    "SplineBasis",
    "fit_player_spline",
    "predict_mean",
    "estimate_ar1",
    "pseudo_r2",
    "ar1_whiten",
    "diagnostics",
    "dump_fits",
    "load_fits",
]


@dataclass(frozen=True)
class SplineOptions:
    """Knobs for :func:`fit_player_spline`.

    ``smoothing_parameter`` and ``phi`` fix the corresponding parameter when
    given (``math.inf`` forces the straight-line fit).  ``start`` is a warm
    start ``(log10(alpha / n), phi)`` that skips the coarse grid.
    """

    smoothing_parameter: float | None = None
    phi: float | None = None
    max_knots: int = 200
    log_alpha_bounds: tuple[float, float] = (-8.0, 3.0)
    phi_bounds: tuple[float, float] = (-0.9, 0.95)
    log_alpha_step: float = 1.0
    phi_step: float = 0.15
    start: tuple[float, float] | None = None
    xatol: float = 1e-4
    fatol: float = 1e-7


@dataclass(frozen=True)
class SplineFit:
    player_id: object
    knots: np.ndarray
    coefficients: np.ndarray
    log_smoothing_parameter: float
    phi: float
    times: np.ndarray
    fitted_values: np.ndarray
    effective_df: float
    criterion: float = float("nan")
    log_alpha_rel: float = float("nan")

    @property
    def smoothing_parameter(self) -> float:
        return 10.0 ** self.log_smoothing_parameter

    @property
    def linear_flag(self) -> bool:
        return self.effective_df <= LINEAR_EDF

    def __call__(self, t):
        return predict_mean(self, t)

    def shifted(self, delta: float) -> "SplineFit":
        """Same curve moved up by ``delta`` strokes (B-splines sum to one)."""
        return replace(
            self,
            coefficients=self.coefficients + delta,
            fitted_values=self.fitted_values + delta,
        )


@dataclass(frozen=True)
class FitDiagnostics:
    pseudo_r2: float
    residual_sd: float
    linear_flag: bool


def _full_knots(breaks):
    return np.concatenate([np.repeat(breaks[0], DEGREE), breaks, np.repeat(breaks[-1], DEGREE)])


def _thin_breaks(times, max_knots):
    breaks = np.unique(times)
    if breaks.size > max_knots:
        breaks = np.unique(np.quantile(breaks, np.linspace(0.0, 1.0, max_knots)))
    return breaks


def _to_upper_band(mat, u):
    """Symmetric sparse matrix -> LAPACK upper banded storage with ``u`` superdiagonals."""
    mat = sparse.triu(mat).tocoo()
    p = mat.shape[0]
    ab = np.zeros((u + 1, p))
    np.add.at(ab, (u + mat.row - mat.col, mat.col), mat.data)
    return ab


def _bandwidth(mat):
    coo = sparse.coo_matrix(mat)
    return int(np.max(np.abs(coo.row - coo.col))) if coo.nnz else 0


class SplineBasis:
    """Everything about a fit that depends only on the observation times.

    Building this once and reusing it across many response vectors (backfitting
    passes, bootstrap replicates) keeps each fit to a handful of banded solves.
    """

    def __init__(self, times, max_knots=200):
        times = np.asarray(times, dtype=float)
        if times.ndim != 1 or times.size < 2:
            raise DegenerateSequenceError("need at least 2 observation times", module="spline-skill")
        if not np.all(np.isfinite(times)):
            raise SkillDecompError("non-finite observation time", module="spline-skill")
        if np.any(np.diff(times) < 0):
            raise SkillDecompError("observation times must be non-decreasing", module="spline-skill")
        self.times = times
        self.n = times.size
        self.breaks = _thin_breaks(times, max_knots)
        if self.breaks.size < 2:
            raise DegenerateSequenceError("observation times are all equal", module="spline-skill")
        self.knot_vector = _full_knots(self.breaks)
        self.p = self.breaks.size + DEGREE - 1
        self.greville = np.array(
            [self.knot_vector[j + 1 : j + DEGREE + 1].mean() for j in range(self.p)]
        )

        B = BSpline.design_matrix(times, self.knot_vector, DEGREE).tocsr()
        n = self.n
        d1 = np.ones(n)
        d1[[0, -1]] = 0.0
        D1 = sparse.diags(d1)
        E = sparse.diags([np.ones(n - 1), np.ones(n - 1)], [-1, 1])
        self.B = B
        self._D1 = D1
        self._E = E
        G0 = (B.T @ B).tocsr()
        G1 = (B.T @ D1 @ B).tocsr()
        G2 = (B.T @ E @ B).tocsr()
        omega = self._penalty()
        self.u = max(_bandwidth(G0), _bandwidth(G1), _bandwidth(G2), _bandwidth(omega), 1)
        self.G0 = _to_upper_band(G0, self.u)
        self.G1 = _to_upper_band(G1, self.u)
        self.G2 = _to_upper_band(G2, self.u)
        self.omega = _to_upper_band(omega, self.u)
        self.omega_dense = omega.toarray()
        self._gram_dense = (G0.toarray(), G1.toarray(), G2.toarray())

        # Straight-line limit: log det+(Omega) and the orthonormalisation of the
        # null-space basis (coefficients of 1 and t are 1 and the Greville points).
        eig = np.linalg.eigvalsh(self.omega_dense)
        self.logdet_omega_plus = float(np.sum(np.log(eig[2:])))
        null = np.column_stack([np.ones(self.p), self.greville])
        _, rn = np.linalg.qr(null)
        self.log_abs_det_rn = float(np.sum(np.log(np.abs(np.diag(rn)))))
        self.T = np.column_stack([np.ones(n), times])

    def _penalty(self):
        # B'' is piecewise linear, so 2-point Gauss-Legendre per interval is exact.
        nodes, weights = np.polynomial.legendre.leggauss(2)
        a, b = self.breaks[:-1], self.breaks[1:]
        half = (b - a) / 2.0
        xq = (a[:, None] + half[:, None] * (nodes[None, :] + 1.0)).ravel()
        wq = (half[:, None] * weights[None, :]).ravel()
        d2 = BSpline(self.knot_vector, np.eye(self.p), DEGREE).derivative(2)(xq)
        omega = d2.T @ (wq[:, None] * d2)
        omega[np.abs(omega) < 1e-14 * np.abs(omega).max()] = 0.0
        return sparse.csr_matrix(omega)

    def moments(self, y):
        y = np.asarray(y, dtype=float)
        B = self.B
        D1y = self._D1 @ y
        Ey = self._E @ y
        return _Moments(
            b0=B.T @ y,
            b1=B.T @ D1y,
            b2=B.T @ Ey,
            q0=float(y @ y),
            q1=float(y @ D1y),
            q2=float(y @ Ey),
            t0=self.T.T @ y,
            t1=self.T.T @ D1y,
            t2=self.T.T @ Ey,
        )

    def gram(self, phi):
        g0, g1, g2 = self._gram_dense
        return (g0 + phi**2 * g1 - phi * g2) / (1.0 - phi**2)

    def gram_T(self, phi):
        T, D1, E = self.T, self._D1, self._E
        return (T.T @ T + phi**2 * (T.T @ (D1 @ T)) - phi * (T.T @ (E @ T))) / (1.0 - phi**2)


@dataclass
class _Moments:
    b0: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    q0: float
    q1: float
    q2: float
    t0: np.ndarray
    t1: np.ndarray
    t2: np.ndarray
    cache: dict = field(default_factory=dict)


class _Problem:
    """GML criterion for one response vector on a fixed basis."""

    def __init__(self, basis: SplineBasis, y):
        self.basis = basis
        self.y = np.asarray(y, dtype=float)
        # Lines are unpenalised, so removing the OLS line leaves the criterion
        # unchanged while avoiding cancellation at large alpha.
        self.trend, *_ = np.linalg.lstsq(basis.T, self.y, rcond=None)
        self.m = basis.moments(self.y - basis.T @ self.trend)

    def _weighted(self, phi):
        m = self.m
        s = 1.0 / (1.0 - phi * phi)
        b = (m.b0 + phi * phi * m.b1 - phi * m.b2) * s
        ywy = (m.q0 + phi * phi * m.q1 - phi * m.q2) * s
        return b, ywy

    def solve(self, log_alpha_rel, phi):
        """Return (criterion, coefficients, cholesky factor) for finite alpha."""
        bs = self.basis
        alpha = bs.n * 10.0**log_alpha_rel
        s = 1.0 / (1.0 - phi * phi)
        ab = (bs.G0 + phi * phi * bs.G1 - phi * bs.G2) * s + alpha * bs.omega
        chol, info = dpbtrf(ab, lower=0)
        if info != 0:
            return math.inf, None, None
        b, ywy = self._weighted(phi)
        coef, info = dpbtrs(chol, b, lower=0)
        if info != 0:
            return math.inf, None, None
        n, p = bs.n, bs.p
        rss = max(ywy - float(coef @ b), 1e-300)
        logdet = 2.0 * float(np.sum(np.log(chol[-1])))
        coef = coef + self.trend[0] + self.trend[1] * bs.greville
        crit = (
            (n - 2) * math.log(rss / (n - 2))
            - (p - 2) * math.log(alpha)
            + (n - 1) * math.log(1.0 - phi * phi)
            + logdet
        )
        return crit, coef, chol

    def criterion(self, x):
        log_alpha_rel, phi = x
        return self.solve(log_alpha_rel, phi)[0]

    def solve_line(self, phi):
        """GLS straight line under AR(1) errors: (criterion, intercept/slope)."""
        bs, m = self.basis, self.m
        s = 1.0 / (1.0 - phi * phi)
        gram = bs.gram_T(phi)
        rhs = (m.t0 + phi * phi * m.t1 - phi * m.t2) * s
        beta = np.linalg.solve(gram, rhs)
        _, ywy = self._weighted(phi)
        n = bs.n
        rss = max(ywy - float(beta @ rhs), 1e-300)
        beta = beta + self.trend
        sign, logdet_t = np.linalg.slogdet(gram)
        crit = (
            (n - 2) * math.log(rss / (n - 2))
            + (n - 1) * math.log(1.0 - phi * phi)
            + bs.logdet_omega_plus
            + logdet_t
            - 2.0 * bs.log_abs_det_rn
        )
        return crit, beta


def _check_inputs(times, y):
    times = np.asarray(times, dtype=float)
    y = np.asarray(y, dtype=float)
    if times.shape != y.shape or times.ndim != 1:
        raise SkillDecompError("times and scores must be 1-d and of equal length", module="spline-skill")
    if times.size < 2:
        raise DegenerateSequenceError("need at least 2 scores to fit a skill curve", module="spline-skill")
    if not (np.all(np.isfinite(times)) and np.all(np.isfinite(y))):
        raise SkillDecompError("non-finite input to spline fit", module="spline-skill")
    return times, y


def _is_affine(times, y):
    T = np.column_stack([np.ones_like(times), times])
    beta, *_ = np.linalg.lstsq(T, y, rcond=None)
    resid = y - T @ beta
    scale = max(1.0, float(np.max(np.abs(y))))
    return float(np.max(np.abs(resid))) <= 1e-10 * scale


def _edf(basis, chol, phi):
    # trace of the hat matrix; tr(A^-1 G) avoids cancellation at large alpha
    sol, _ = dpbtrs(chol, basis.gram(phi), lower=0)
    return float(np.trace(sol))


def _line_fit(problem, phi, player_id):
    crit, beta = problem.solve_line(phi)
    bs = problem.basis
    coef = beta[0] + beta[1] * bs.greville
    return _assemble(bs, coef, math.inf, phi, 2.0, crit, math.inf, player_id)


def _assemble(basis, coef, log_alpha, phi, edf, crit, log_alpha_rel, player_id):
    fit = SplineFit(
        player_id=player_id,
        knots=basis.breaks.copy(),
        coefficients=np.asarray(coef, dtype=float),
        log_smoothing_parameter=float(log_alpha),
        phi=float(phi),
        times=basis.times.copy(),
        fitted_values=np.empty(0),
        effective_df=float(edf),
        criterion=float(crit),
        log_alpha_rel=float(log_alpha_rel),
    )
    return replace(fit, fitted_values=predict_mean(fit, basis.times))


def _bounded(fun, lo, hi):
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)

    def wrapped(x):
        if np.any(x < lo) or np.any(x > hi):
            return math.inf
        return fun(x)

    return wrapped


def _minimize(fun, x0, lo, hi, opts, step):
    x0 = np.clip(np.asarray(x0, dtype=float), lo, hi)
    simplex = [x0]
    for i, h in enumerate(step):
        v = x0.copy()
        v[i] = v[i] + h if v[i] + h <= hi[i] else v[i] - h
        simplex.append(v)
    res = optimize.minimize(
        _bounded(fun, lo, hi),
        x0,
        method="Nelder-Mead",
        options={
            "initial_simplex": np.array(simplex),
            "xatol": opts.xatol,
            "fatol": opts.fatol,
            "maxiter": 400,
        },
    )
    return np.atleast_1d(res.x), float(res.fun)


def fit_player_spline(times, adjusted_scores, options: SplineOptions | None = None, *,
                      player_id=None, basis: SplineBasis | None = None) -> SplineFit:
    """Fit one player's time-varying mean skill curve.

    Parameters
    ----------
    times : array_like
        Scaled times in [0, 1], non-decreasing, one per score.
    adjusted_scores : array_like
        Scores net of round-course and player-course effects.
    options : SplineOptions, optional
    basis : SplineBasis, optional
        Precomputed basis for ``times``; must have been built from the same times.

    Returns
    -------
    SplineFit
        With ``phi = 0`` and a GLS line when fewer than 4 scores are given.
    """
    opts = options or SplineOptions()
    times, y = _check_inputs(times, adjusted_scores)
    if basis is None:
        basis = SplineBasis(times, opts.max_knots)
    problem = _Problem(basis, y)
    n = times.size

    fixed_phi = opts.phi
    if fixed_phi is not None and not abs(fixed_phi) < 1:
        raise SkillDecompError("phi must lie in (-1, 1)", module="spline-skill")

    if n < 4 or basis.breaks.size < 3:
        return _line_fit(problem, 0.0 if fixed_phi is None else fixed_phi, player_id)
    if _is_affine(times, y):
        return _line_fit(problem, 0.0 if fixed_phi is None else fixed_phi, player_id)

    if opts.smoothing_parameter is not None and math.isinf(opts.smoothing_parameter):
        return _line_only(problem, opts, player_id)

    phi_lo, phi_hi = opts.phi_bounds
    la_lo, la_hi = opts.log_alpha_bounds

    if opts.smoothing_parameter is not None:
        if opts.smoothing_parameter <= 0:
            raise SkillDecompError("smoothing parameter must be positive", module="spline-skill")
        la = math.log10(opts.smoothing_parameter / n)
        if fixed_phi is not None:
            phi = fixed_phi
        else:
            grid = np.arange(phi_lo, phi_hi + 1e-12, opts.phi_step)
            vals = [problem.solve(la, f)[0] for f in grid]
            x0 = grid[int(np.argmin(vals))] if opts.start is None else opts.start[1]
            (phi,), _ = _minimize(lambda x: problem.solve(la, x[0])[0], [x0], [phi_lo], [phi_hi],
                                  opts, [opts.phi_step / 2])
        return _finite_fit(problem, la, phi, player_id)

    # GML over log alpha (and phi unless fixed); the straight line competes separately.
    if fixed_phi is not None:
        f1 = lambda x: problem.solve(x[0], fixed_phi)[0]  # noqa: E731
        if opts.start is None:
            grid = np.arange(la_lo, la_hi + 1e-12, opts.log_alpha_step)
            x0 = [grid[int(np.argmin([f1([g]) for g in grid]))]]
        else:
            x0 = [opts.start[0]]
        x, best = _minimize(f1, x0, [la_lo], [la_hi], opts, [opts.log_alpha_step / 2])
        la, phi = float(x[0]), fixed_phi
        line_crit = problem.solve_line(fixed_phi)[0]
        if _prefer_line(line_crit, best, la, opts):
            return _line_fit(problem, fixed_phi, player_id)
        return _finite_fit(problem, la, phi, player_id)

    if opts.start is None:
        la_grid = np.arange(la_lo, la_hi + 1e-12, opts.log_alpha_step)
        phi_grid = np.arange(phi_lo, phi_hi + 1e-12, opts.phi_step)
        vals = np.array([[problem.solve(a, f)[0] for f in phi_grid] for a in la_grid])
        i, j = np.unravel_index(int(np.argmin(vals)), vals.shape)
        x0 = [la_grid[i], phi_grid[j]]
        step = [opts.log_alpha_step / 2, opts.phi_step / 2]
    else:
        x0 = list(opts.start)
        if not math.isfinite(x0[0]):
            x0[0] = la_hi
        step = [0.25, 0.05]
    x, best = _minimize(problem.criterion, x0, [la_lo, phi_lo], [la_hi, phi_hi], opts, step)
    line_phi, line_crit = _best_line_phi(problem, opts)
    if _prefer_line(line_crit, best, float(x[0]), opts):
        return _line_fit(problem, line_phi, player_id)
    return _finite_fit(problem, float(x[0]), float(x[1]), player_id)


def _prefer_line(line_crit, best, log_alpha_rel, opts):
    # The finite criterion approaches the line value from either side within
    # rounding near the upper bound; an optimum pinned there is the line.
    at_bound = log_alpha_rel >= opts.log_alpha_bounds[1] - 1e-3
    return at_bound or line_crit <= best + LINE_TOL


def _best_line_phi(problem, opts):
    lo, hi = opts.phi_bounds
    res = optimize.minimize_scalar(
        lambda f: problem.solve_line(f)[0], bounds=(lo, hi), method="bounded",
        options={"xatol": opts.xatol},
    )
    return float(res.x), float(res.fun)


def _line_only(problem, opts, player_id):
    if opts.phi is not None:
        return _line_fit(problem, opts.phi, player_id)
    phi, _ = _best_line_phi(problem, opts)
    return _line_fit(problem, phi, player_id)


def _finite_fit(problem, log_alpha_rel, phi, player_id):
    crit, coef, chol = problem.solve(log_alpha_rel, phi)
    if coef is None:
        raise SkillDecompError("spline system is not positive definite", module="spline-skill")
    bs = problem.basis
    alpha = bs.n * 10.0**log_alpha_rel
    return _assemble(bs, coef, math.log10(alpha), phi, _edf(bs, chol, phi), crit,
                     log_alpha_rel, player_id)


def predict_mean(fit: SplineFit, t):
    """Evaluate the skill curve; straight-line extrapolation outside the knots."""
    t_arr = np.asarray(t, dtype=float)
    scalar = t_arr.ndim == 0
    t_arr = np.atleast_1d(t_arr)
    kv = _full_knots(fit.knots)
    spl = BSpline(kv, fit.coefficients, DEGREE, extrapolate=False)
    lo, hi = fit.knots[0], fit.knots[-1]
    inside = np.clip(t_arr, lo, hi)
    out = spl(inside)
    below, above = t_arr < lo, t_arr > hi
    if below.any() or above.any():
        d1 = spl.derivative(1)
        out = np.where(below, spl(lo) + d1(lo) * (t_arr - lo), out)
        out = np.where(above, spl(hi) + d1(hi) * (t_arr - hi), out)
    return float(out[0]) if scalar else out


def estimate_ar1(residuals) -> float:
    """Lag-1 sample autocorrelation about the mean, clamped to [-0.99, 0.99]."""
    x = np.asarray(residuals, dtype=float)
    if x.size < 3:
        raise SkillDecompError("need at least 3 residuals to estimate AR(1)", module="spline-skill")
    d = x - x.mean()
    denom = float(d @ d)
    if denom <= 0.0:
        raise UndefinedAutocorrelationError("zero-variance residuals: autocorrelation undefined")
    rho = float(d[1:] @ d[:-1]) / denom
    return min(max(rho, -PHI_CLAMP), PHI_CLAMP)


def ar1_whiten(x, phi):
    """Prais-Winsten transform: unit-variance white noise under AR(1)(phi)."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    out[0] = math.sqrt(1.0 - phi * phi) * x[0]
    out[1:] = x[1:] - phi * x[:-1]
    return out


def pseudo_r2(fitted, observed) -> float:
    """1 - MSE / MST, MST taken about the sample mean; can be negative."""
    fitted = np.asarray(fitted, dtype=float)
    observed = np.asarray(observed, dtype=float)
    if fitted.shape != observed.shape or observed.size < 2:
        raise SkillDecompError("pseudo_r2 needs two equal-length vectors, n >= 2", module="spline-skill")
    mst = float(np.mean((observed - observed.mean()) ** 2))
    if mst == 0.0:
        raise SkillDecompError("zero total variance: pseudo R-squared undefined", module="spline-skill")
    mse = float(np.mean((observed - fitted) ** 2))
    return 1.0 - mse / mst


def diagnostics(fit: SplineFit, observed) -> FitDiagnostics:
    observed = np.asarray(observed, dtype=float)
    resid = observed - fit.fitted_values
    sd = float(np.std(resid, ddof=1)) if resid.size > 1 else 0.0
    try:
        r2 = pseudo_r2(fit.fitted_values, observed)
    except SkillDecompError:
        r2 = 1.0 if np.allclose(resid, 0.0) else float("nan")
    return FitDiagnostics(pseudo_r2=r2, residual_sd=sd, linear_flag=fit.linear_flag)


_DUMP_SCALARS = ("log_smoothing_parameter", "phi", "effective_df")


def dump_fits(fits, path) -> None:
    """Write fits as text blocks, one ``name value...`` line per field.

    Each block starts with ``player_id`` and holds the log10 smoothing
    parameter (``inf`` for a straight line), phi, effective df, knots and
    coefficients; blocks are separated by a blank line.  Floats use ``repr``
    so reading them back is exact.
    """
    with open(path, "w") as fh:
        for fit in fits:
            fh.write(f"player_id {fit.player_id}\n")
            for name in _DUMP_SCALARS:
                fh.write(f"{name} {float(getattr(fit, name))!r}\n")
            fh.write("knots " + " ".join(repr(float(v)) for v in fit.knots) + "\n")
            fh.write("coefficients " + " ".join(repr(float(v)) for v in fit.coefficients) + "\n")
            fh.write("\n")


def load_fits(path) -> list:
    """Read :func:`dump_fits` output back into curves (no observed times)."""
    fits, cur = [], {}

    def flush():
        if not cur:
            return
        try:
            fits.append(SplineFit(
                player_id=cur["player_id"],
                knots=np.array(cur["knots"], dtype=float),
                coefficients=np.array(cur["coefficients"], dtype=float),
                log_smoothing_parameter=float(cur["log_smoothing_parameter"][0]),
                phi=float(cur["phi"][0]),
                times=np.empty(0),
                fitted_values=np.empty(0),
                effective_df=float(cur["effective_df"][0]),
            ))
        except KeyError as exc:
            raise SkillDecompError(f"fit dump block lacks {exc}", module="spline-skill") from None
        cur.clear()

    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                flush()
                continue
            name, _, rest = line.partition(" ")
            cur[name] = rest if name == "player_id" else [float(v) for v in rest.split()]
    flush()
    return fits
