"""Is a smoothing spline needed, or does a simpler skill model do?

The null is the simpler model with AR(1) errors.  Each bootstrap replicate
draws a series from the fitted null, refits both models and records the
same statistic as the observed data.
"""
from __future__ import annotations

import enum
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import SkillDecompError
from .spline import SplineOptions, SplineBasis, estimate_ar1, fit_player_spline

log = logging.getLogger(__name__)

__all__ = ["AltModelKind", "BootstrapResult", "fit_alternative", "bootstrap_compare", "MIN_BOOT"]

_MODULE = "model-compare"
MIN_BOOT = 200


class AltModelKind(enum.Enum):
    ConstantMean = "constant"
    LinearTrend = "linear"
    QuadraticTrend = "quadratic"
    YearMeans = "year"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        for k in cls:
            if value in (k.name, k.value):
                return k
        raise ValueError(f"unknown model kind {value!r}")


@dataclass(frozen=True)
class BootstrapResult:
    kind: AltModelKind
    observed_stat: float
    null_stats: np.ndarray
    p_value: float
    n_boot: int
    n_dropped: int = 0


def _design(times, kind, years):
    t = np.asarray(times, dtype=float)
    if kind is AltModelKind.ConstantMean:
        return np.ones((t.size, 1))
    if kind is AltModelKind.LinearTrend:
        return np.column_stack([np.ones_like(t), t])
    if kind is AltModelKind.QuadraticTrend:
        return np.column_stack([np.ones_like(t), t, t * t])
    if years is None:
        raise SkillDecompError("YearMeans needs a calendar year per round", module=_MODULE)
    years = np.asarray(years)
    if years.shape != t.shape:
        raise SkillDecompError("years and times differ in length", module=_MODULE)
    levels = np.unique(years)
    return (years[:, None] == levels[None, :]).astype(float)


def fit_alternative(times, scores, kind, *, years=None) -> np.ndarray:
    """Least-squares fitted values of a simpler skill model."""
    kind = AltModelKind.parse(kind)
    y = np.asarray(scores, dtype=float)
    X = _design(times, kind, years)
    if y.size != X.shape[0]:
        raise SkillDecompError("times and scores differ in length", module=_MODULE)
    if y.size < X.shape[1] or np.linalg.matrix_rank(X) < X.shape[1]:
        raise SkillDecompError(f"{y.size} scores cannot identify a {kind.name} fit", module=_MODULE)
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    return X @ beta


def _gcv(y, fitted, df):
    n = y.size
    return float(np.mean((y - fitted) ** 2)) / (1.0 - df / n) ** 2


def _stat(times, y, kind, years, basis, opts, statistic):
    alt = fit_alternative(times, y, kind, years=years)
    fit = fit_player_spline(times, y, opts, basis=basis)
    if statistic == "mse":
        return float(np.mean((y - alt) ** 2) - np.mean((y - fit.fitted_values) ** 2))
    k = _design(times, kind, years).shape[1]
    return _gcv(y, alt, k) - _gcv(y, fit.fitted_values, fit.effective_df)


def _ar1_draw(rng, n, phi, sd_innov):
    e = rng.standard_normal(n) * sd_innov
    x = np.empty(n)
    x[0] = e[0] / math.sqrt(1.0 - phi * phi)
    for k in range(1, n):
        x[k] = phi * x[k - 1] + e[k]
    return x


def bootstrap_compare(times, adjusted_scores, kind, n_boot: int = MIN_BOOT, seed: int = 0, *,
                      years=None, spline_options: SplineOptions | None = None,
                      statistic: str = "mse", threads: int = 1) -> BootstrapResult:
    """Parametric bootstrap test of the spline against a simpler model.

    The statistic is MSE(alternative) - MSE(spline) on the observed points
    (``statistic="gcv"`` uses GCV scores instead).  Replicates use independent
    child seeds, so the result does not depend on ``threads``.  Replicates
    whose spline fit fails are dropped and counted.
    """
    kind = AltModelKind.parse(kind)
    if statistic not in ("mse", "gcv"):
        raise ValueError(f"unknown statistic {statistic!r}")
    if n_boot < MIN_BOOT:
        log.warning("n_boot=%d is below the recommended %d", n_boot, MIN_BOOT)
    t = np.asarray(times, dtype=float)
    y = np.asarray(adjusted_scores, dtype=float)
    opts = spline_options or SplineOptions()
    basis = SplineBasis(t, opts.max_knots) if t.size >= 4 else None
    observed = _stat(t, y, kind, years, basis, opts, statistic)

    null_fit = fit_alternative(t, y, kind, years=years)
    resid = y - null_fit
    phi = estimate_ar1(resid) if np.ptp(resid) > 0 else 0.0
    sd_innov = float(np.std(resid, ddof=_design(t, kind, years).shape[1])) * math.sqrt(1.0 - phi * phi)
    children = np.random.SeedSequence(seed).spawn(n_boot)

    def one(ss):
        rng = np.random.default_rng(ss)
        ystar = null_fit + _ar1_draw(rng, y.size, phi, sd_innov)
        try:
            return _stat(t, ystar, kind, years, basis, opts, statistic)
        except SkillDecompError as exc:
            log.warning("bootstrap replicate dropped: %s", exc)
            return math.nan

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            stats_ = list(pool.map(one, children))
    else:
        stats_ = [one(ss) for ss in children]
    stats_ = np.asarray(stats_, dtype=float)
    ok = np.isfinite(stats_)
    dropped = int(np.count_nonzero(~ok))
    null = stats_[ok]
    p = (1.0 + np.count_nonzero(null >= observed)) / (null.size + 1.0)
    return BootstrapResult(kind=kind, observed_stat=observed, null_stats=null, p_value=float(p),
                           n_boot=int(null.size), n_dropped=dropped)
