"""Luck residuals: AR(1) decomposition and autocorrelation diagnostics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import SkillDecompError, UndefinedAutocorrelationError

__all__ = [
    "ResidualSeries",
    "LjungBoxResult",
    "decompose",
    "ljung_box",
    "sample_autocorrelations",
    "proportion_negative",
    "theta_sd",
]


@dataclass(frozen=True)
class ResidualSeries:
    """theta = lambda + eta for one player's chronological rounds."""

    player_id: object
    theta: np.ndarray
    lam: np.ndarray
    eta: np.ndarray
    phi: float

    def reconstruct(self) -> np.ndarray:
        return self.lam + self.eta


@dataclass(frozen=True)
class LjungBoxResult:
    statistic: float
    lags: int
    p_value: float


def decompose(theta, phi, *, player_id=None, breaks=None) -> ResidualSeries:
    """Split theta into its one-step AR(1) prediction and the innovation.

    ``lam[k] = phi * theta[k-1]`` and ``eta = theta - lam``.  ``breaks`` is an
    optional boolean mask marking positions where the chain restarts (for
    example the first round of each tournament); there ``lam`` is 0.
    """
    if not abs(phi) < 1:
        raise SkillDecompError("phi must lie in (-1, 1)", module="residual-lab")
    theta = np.asarray(theta, dtype=float)
    lam = np.zeros_like(theta)
    if theta.size > 1:
        lam[1:] = phi * theta[:-1]
    if breaks is not None:
        lam[np.asarray(breaks, dtype=bool)] = 0.0
    lam[:1] = 0.0
    eta = theta - lam
    return ResidualSeries(player_id=player_id, theta=theta, lam=lam, eta=eta, phi=float(phi))


def sample_autocorrelations(series, max_lag: int) -> np.ndarray:
    x = np.asarray(series, dtype=float)
    d = x - x.mean()
    denom = float(d @ d)
    if denom <= 0.0:
        raise UndefinedAutocorrelationError("zero-variance series", module="residual-lab")
    n = x.size
    return np.array([float(d[k:] @ d[: n - k]) / denom for k in range(1, max_lag + 1)])


def ljung_box(series, max_lag: int = 10) -> LjungBoxResult:
    """Portmanteau Q = n(n+2) sum_k rho_k^2 / (n-k), chi-square with ``max_lag`` df."""
    x = np.asarray(series, dtype=float)
    n = x.size
    if not 1 <= max_lag < n:
        raise SkillDecompError(f"need 1 <= max_lag < n, got max_lag={max_lag}, n={n}",
                               module="residual-lab")
    rho = sample_autocorrelations(x, max_lag)
    k = np.arange(1, max_lag + 1)
    q = float(n * (n + 2) * np.sum(rho**2 / (n - k)))
    return LjungBoxResult(statistic=q, lags=max_lag, p_value=float(stats.chi2.sf(q, max_lag)))


def proportion_negative(residuals) -> float:
    """Share of rounds better than normal; exact zeros do not count."""
    x = np.asarray(residuals, dtype=float)
    if x.size == 0:
        raise SkillDecompError("no residuals", module="residual-lab")
    return float(np.count_nonzero(x < 0)) / x.size


def theta_sd(residuals) -> float:
    x = np.asarray(residuals, dtype=float)
    if x.size < 2:
        raise SkillDecompError("need at least 2 residuals", module="residual-lab")
    return float(np.std(x, ddof=1))
