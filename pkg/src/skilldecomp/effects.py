"""Joint estimation of round-course effects, player-course effects and skill curves.

Backfitting alternates two steps until nothing moves by more than ``tol``:

1. refit every player's skill spline on ``score - r - c``;
2. shrink partial residuals to BLUPs of ``r`` (per tournament/round/course)
   and then ``c`` (per player/course), re-estimating both variance components
   from the current residuals.

BLUPs have mean-zero priors.  After each effect update the (equal prior
precision) mean of the effects is moved into the splines; this is a pure gauge
change (fitted totals and residuals are untouched) that pins the location split
between splines and effects, which the additive model leaves free.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from scipy import optimize

from .data import RoundCourseKey, build_roster, rotation_rounds, scaled_time
from .errors import SkillDecompError
from .residuals import ResidualSeries, decompose
from .spline import SplineBasis, SplineFit, SplineOptions, fit_player_spline, pseudo_r2

log = logging.getLogger(__name__)

__all__ = [
    "EffectsOptions",
    "EffectsModel",
    "FullModelResult",
    "fit_full_model",
    "blup_update",
    "total_residual",
    "rotation_spread",
    "spread",
]


@dataclass(frozen=True)
class EffectsOptions:
    tol: float = 1e-4
    max_iter: int = 50
    freeze_effects: bool = False
    spline: SplineOptions = field(default_factory=SplineOptions)
    phi_mode: str = "per_player"
    var_round_course: float | None = None
    var_player_course: float | None = None
    variance_method: str = "moments"
    min_key_obs: int = 2
    spacing: str = "rank"
    reset_chain_at_tournament: bool = False
    threads: int = 1


@dataclass(frozen=True)
class EffectsModel:
    round_course_effects: dict
    player_course_effects: dict
    var_round_course: float
    var_player_course: float
    var_residual: float
    n_iterations: int
    converged: bool
    warnings: tuple = ()


@dataclass(frozen=True)
class FullModelResult:
    effects: EffectsModel
    fits: dict
    residuals: dict
    model_pseudo_r2: float
    records: pd.DataFrame

    def theta(self) -> np.ndarray:
        return self.records["theta"].to_numpy()


def total_residual(theta_total, rc_total, pc_total) -> float:
    """A player's tournament deviation from normal, effects included."""
    return theta_total + rc_total + pc_total


def spread(totals) -> float:
    totals = np.asarray(list(totals), dtype=float)
    if totals.size < 2:
        raise SkillDecompError("need at least two rotation paths", module="effects-estimator")
    return float(totals.max() - totals.min())


def rotation_spread(effects: EffectsModel, df: pd.DataFrame, tournament_id) -> float:
    """Difficulty gap between the hardest and easiest course rotation of an event.

    A rotation path is the sequence of courses a player is assigned over the
    rounds played on more than one course; its difficulty is the summed
    round-course effect along the path.
    """
    rounds = rotation_rounds(df, tournament_id)
    if not rounds:
        raise SkillDecompError(f"{tournament_id} has no course rotation", module="effects-estimator")
    sub = df[(df["tournament_id"] == tournament_id) & df["round"].isin(rounds)]
    paths = {}
    for _, g in sub.groupby("player_id"):
        if len(g) != len(rounds):
            continue
        g = g.sort_values("round")
        path = tuple(g["course_id"])
        paths[path] = sum(
            effects.round_course_effects.get(RoundCourseKey(tournament_id, int(r), c), 0.0)
            for r, c in zip(g["round"], g["course_id"])
        )
    if len(paths) < 2:
        raise SkillDecompError(f"{tournament_id} has a single rotation path", module="effects-estimator")
    return spread(paths.values())


def _group_stats(codes, values, n_groups):
    counts = np.bincount(codes, minlength=n_groups).astype(float)
    sums = np.bincount(codes, weights=values, minlength=n_groups)
    return counts, sums


def _moment_variances(codes, values, counts, sums, usable):
    means = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    within = float(np.sum((values - means[codes]) ** 2))
    dof = float(np.sum(counts[usable]) - np.count_nonzero(usable))
    var_e = within / dof if dof > 0 else float(np.var(values))
    m, nk = means[usable], counts[usable]
    var_g = max(0.0, float(np.mean(m**2) - var_e * np.mean(1.0 / nk))) if m.size else 0.0
    return var_g, var_e


def _likelihood_variances(codes, values, counts, sums, usable, start):
    """ML for the zero-mean one-way random-effects model (no fixed effects, so REML = ML)."""
    means = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    within = np.bincount(codes, weights=(values - means[codes]) ** 2, minlength=counts.size)
    nk, mk, wk = counts[usable], means[usable], within[usable]
    n_extra = float(np.sum(counts[~usable]))
    ss_extra = float(np.sum(within[~usable]) + np.sum((counts * means**2)[~usable]))

    def negll(x):
        ve, vg = math.exp(x[0]), math.exp(x[1])
        tot = ve + nk * vg
        ll = np.sum((nk - 1) * math.log(ve) + np.log(tot) + wk / ve + nk * mk**2 / tot)
        return float(ll + n_extra * math.log(ve) + ss_extra / ve)

    x0 = [math.log(max(start[1], 1e-6)), math.log(max(start[0], 1e-6))]
    res = optimize.minimize(negll, x0, method="Nelder-Mead", options={"xatol": 1e-8, "fatol": 1e-10})
    ve, vg = math.exp(res.x[0]), math.exp(res.x[1])
    return (vg if vg > 1e-10 else 0.0), ve


def blup_update(codes, partial, n_groups, *, var_group=None, method="moments", min_obs=1):
    """Shrink group means of ``partial`` to BLUPs.

    Returns ``(effects, var_group, var_resid)``; groups with fewer than
    ``min_obs`` observations get exactly zero.  ``var_group`` fixes the group
    variance instead of estimating it.
    """
    counts, sums = _group_stats(codes, partial, n_groups)
    usable = counts >= max(min_obs, 1)
    var_g, var_e = _moment_variances(codes, partial, counts, sums, usable)
    if method == "reml":
        var_g, var_e = _likelihood_variances(codes, partial, counts, sums, usable, (var_g, var_e))
    elif method != "moments":
        raise ValueError(f"unknown variance method {method!r}")
    if var_group is not None:
        var_g = float(var_group)
    eff = np.zeros(n_groups)
    if var_g > 0:
        kappa = var_e / var_g
        eff[usable] = sums[usable] / (counts[usable] + kappa)
    return eff, var_g, var_e


@dataclass
class _Player:
    pid: str
    rows: np.ndarray
    times: np.ndarray
    basis: SplineBasis | None
    fit: SplineFit | None = None


def _fit_one(player: _Player, y, opts: SplineOptions):
    start = None
    if player.fit is not None and player.basis is not None:
        prev = player.fit
        la = prev.log_alpha_rel if math.isfinite(prev.log_alpha_rel) else opts.log_alpha_bounds[1]
        start = (la, prev.phi)
    o = replace(opts, start=start) if start is not None and opts.start is None else opts
    return fit_player_spline(player.times, y, o, player_id=player.pid, basis=player.basis)


def _pooled_phi(theta, players):
    num = den = 0.0
    for pl in players:
        x = theta[pl.rows]
        if x.size < 3:
            continue
        d = x - x.mean()
        num += float(d[1:] @ d[:-1])
        den += float(d @ d)
    if den <= 0:
        return 0.0
    return min(max(num / den, -0.99), 0.99)


def fit_full_model(df: pd.DataFrame, options: EffectsOptions | None = None) -> FullModelResult:
    """Backfit splines and random effects over a validated, filtered dataset."""
    opts = options or EffectsOptions()
    if opts.phi_mode not in ("per_player", "pooled"):
        raise ValueError(f"unknown phi_mode {opts.phi_mode!r}")
    df = df.reset_index(drop=True)
    n = len(df)
    s = df["score"].to_numpy(dtype=float)
    roster = build_roster(df)
    players = []
    times = np.zeros(n)
    for pid, rows in roster.sequences.items():
        t = scaled_time(roster, pid, spacing=opts.spacing, df=df)
        times[rows] = t
        basis = SplineBasis(t, opts.spline.max_knots) if len(rows) >= 4 else None
        players.append(_Player(pid, rows, t, basis))

    rc_codes, rc_uniques = pd.factorize(pd.MultiIndex.from_frame(df[["tournament_id", "round", "course_id"]]),
                                        sort=True)
    pc_codes, pc_uniques = pd.factorize(pd.MultiIndex.from_frame(df[["player_id", "course_id"]]), sort=True)
    n_rc, n_pc = len(rc_uniques), len(pc_uniques)
    rc_counts = np.bincount(rc_codes, minlength=n_rc)
    warnings = []
    thin = np.flatnonzero(rc_counts < opts.min_key_obs)
    if thin.size and not opts.freeze_effects:
        msg = f"{thin.size} round-course key(s) with fewer than {opts.min_key_obs} scores; effects set to 0"
        log.warning(msg)
        warnings.append(msg)

    r_eff = np.zeros(n_rc)
    c_eff = np.zeros(n_pc)
    h = np.zeros(n)
    var_r = var_c = 0.0
    spline_opts = opts.spline
    pool = ThreadPoolExecutor(max_workers=opts.threads) if opts.threads > 1 else None

    def refit(y):
        if pool is None:
            fits = [_fit_one(pl, y[pl.rows], spline_opts) for pl in players]
        else:
            fits = list(pool.map(lambda pl: _fit_one(pl, y[pl.rows], spline_opts), players))
        for pl, f in zip(players, fits):
            pl.fit = f
            h[pl.rows] = f.fitted_values

    best = None
    converged = False
    it = 0
    try:
        for it in range(1, opts.max_iter + 1):
            h_old, r_old, c_old = h.copy(), r_eff.copy(), c_eff.copy()
            refit(s - r_eff[rc_codes] - c_eff[pc_codes])
            if opts.freeze_effects:
                converged = True
                break
            r_eff, var_r, _ = blup_update(rc_codes, s - h - c_eff[pc_codes], n_rc,
                                          var_group=opts.var_round_course,
                                          method=opts.variance_method, min_obs=opts.min_key_obs)
            _recentre(r_eff, rc_counts >= opts.min_key_obs, players, h)
            c_eff, var_c, _ = blup_update(pc_codes, s - h - r_eff[rc_codes], n_pc,
                                          var_group=opts.var_player_course,
                                          method=opts.variance_method)
            _recentre(c_eff, np.ones(n_pc, dtype=bool), players, h)
            if opts.phi_mode == "pooled":
                phi = _pooled_phi(s - h - r_eff[rc_codes] - c_eff[pc_codes], players)
                spline_opts = replace(opts.spline, phi=phi)
            change = max(
                float(np.max(np.abs(h - h_old))),
                float(np.max(np.abs(r_eff - r_old), initial=0.0)),
                float(np.max(np.abs(c_eff - c_old), initial=0.0)),
            )
            log.info("backfitting pass %d: max change %.3g", it, change)
            if best is None or change < best[0]:
                best = (change, it, h.copy(), r_eff.copy(), c_eff.copy(), var_r, var_c,
                        [pl.fit for pl in players])
            if change < opts.tol:
                converged = True
                break
    finally:
        if pool is not None:
            pool.shutdown()

    if not converged and best is not None:
        log.warning("backfitting did not converge in %d passes; keeping pass %d", opts.max_iter, best[1])
        warnings.append(f"not converged after {opts.max_iter} passes")
        _, _, h, r_eff, c_eff, var_r, var_c, fits = best
        for pl, f in zip(players, fits):
            pl.fit = f

    return _assemble(df, s, times, players, h, r_eff, c_eff, rc_codes, pc_codes, rc_uniques,
                     pc_uniques, var_r, var_c, it, converged, warnings, opts)


def _recentre(eff, mask, players, h):
    if not mask.any():
        return
    delta = float(np.mean(eff[mask]))
    if delta == 0.0:
        return
    eff[mask] -= delta
    for pl in players:
        pl.fit = pl.fit.shifted(delta)
        h[pl.rows] = pl.fit.fitted_values


def _assemble(df, s, times, players, h, r_eff, c_eff, rc_codes, pc_codes, rc_uniques, pc_uniques,
              var_r, var_c, n_iter, converged, warnings, opts):
    r_rec = r_eff[rc_codes]
    c_rec = c_eff[pc_codes]
    theta = s - r_rec - c_rec - h
    lam = np.zeros_like(theta)
    eta = np.zeros_like(theta)
    fits, resid = {}, {}
    for pl in players:
        breaks = None
        if opts.reset_chain_at_tournament:
            tid = df["tournament_id"].to_numpy()[pl.rows]
            breaks = np.r_[True, tid[1:] != tid[:-1]]
        rs = decompose(theta[pl.rows], pl.fit.phi, player_id=pl.pid, breaks=breaks)
        lam[pl.rows] = rs.lam
        eta[pl.rows] = rs.eta
        fits[pl.pid] = pl.fit
        resid[pl.pid] = rs
    records = df.copy()
    records["time"] = times
    records["skill"] = h
    records["rc_effect"] = r_rec
    records["pc_effect"] = c_rec
    records["theta"] = theta
    records["lambda"] = lam
    records["eta"] = eta
    effects = EffectsModel(
        round_course_effects={RoundCourseKey(t, int(r), c): float(v)
                              for (t, r, c), v in zip(rc_uniques, r_eff)},
        player_course_effects={(p, c): float(v) for (p, c), v in zip(pc_uniques, c_eff)},
        var_round_course=float(var_r),
        var_player_course=float(var_c),
        var_residual=float(np.var(theta)),
        n_iterations=int(n_iter),
        converged=bool(converged),
        warnings=tuple(warnings),
    )
    return FullModelResult(
        effects=effects,
        fits=fits,
        residuals=resid,
        model_pseudo_r2=pseudo_r2(h + r_rec + c_rec, s),
        records=records,
    )
