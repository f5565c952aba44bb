"""Does a focal player change how others score?

Dummy-variable regressions of white-noise residuals (η) on indicators built
from the field, the pairing groups and the standings entering each round.
The focal player's own rounds never enter a regression.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import stats

from .data import scheduled_rounds
from .errors import CollinearityError, DataValidationError, SkillDecompError

log = logging.getLogger(__name__)

__all__ = [
    "RegressionResult",
    "build_standings",
    "run_dummy_regression",
    "prior_round_adjustment",
    "paired_with",
    "run_test_suite",
    "CONTENTION_MARGINS",
]

_MODULE = "interaction-effects"
CONTENTION_MARGINS = (10, 8, 6, 4, 2, 0)


@dataclass(frozen=True)
class RegressionResult:
    name: str
    coefficients: dict
    std_errors: dict
    p_values: dict
    n_obs: int
    intercept: float

    @property
    def labels(self):
        return list(self.coefficients)


def build_standings(df: pd.DataFrame, *, final_group_size: int = 2, default_rounds: int = 4) -> pd.DataFrame:
    """Tournament position of every player entering every round.

    Returns a frame aligned with ``df`` holding ``entering_total`` (strokes
    before this round), ``leader_total``, ``margin`` (strokes behind the leader,
    0 when leading or tied), ``final_round`` (this is the event's last
    scheduled round), ``final_group`` (among the ``final_group_size`` best
    entering the final round, ties broken by player id) and ``shortened`` (the
    event stopped before its last scheduled round).
    """
    if final_group_size < 1:
        raise ValueError("final_group_size must be >= 1")
    d = df[["player_id", "tournament_id", "round", "score"]].copy()
    d = d.sort_values(["tournament_id", "player_id", "round"], kind="mergesort")
    pos = d.groupby(["tournament_id", "player_id"]).cumcount() + 1
    gaps = d["round"].to_numpy() != pos.to_numpy()
    if gaps.any():
        bad = d[gaps].iloc[0]
        raise DataValidationError(
            f"{bad['player_id']} has round {bad['round']} of {bad['tournament_id']} without the rounds before it")
    d["entering_total"] = d.groupby(["tournament_id", "player_id"])["score"].cumsum() - d["score"]
    d["leader_total"] = d.groupby(["tournament_id", "round"])["entering_total"].transform("min")
    d["margin"] = d["entering_total"] - d["leader_total"]
    sched = scheduled_rounds(df, default=default_rounds)
    played = d.groupby("tournament_id")["round"].transform("max")
    d["final_round"] = d["round"].to_numpy() == d["tournament_id"].map(sched).to_numpy()
    d["shortened"] = played.to_numpy() < d["tournament_id"].map(sched).to_numpy()
    fin = d[d["final_round"]].sort_values(["tournament_id", "entering_total", "player_id"], kind="mergesort")
    rank = fin.groupby("tournament_id").cumcount() + 1
    d["final_group"] = False
    d.loc[rank.index[rank.to_numpy() <= final_group_size], "final_group"] = True
    cols = ["entering_total", "leader_total", "margin", "final_round", "final_group", "shortened"]
    return d.loc[df.index, cols]


def _first_collinear(X, names):
    for j, name in enumerate(names):
        if not np.any(X[:, j]):
            return [name]
    r = 0
    for j in range(X.shape[1]):
        rank = np.linalg.matrix_rank(X[:, : j + 1])
        if rank == r:
            # column j lies in the span of the earlier ones; report it with its partners
            coef, *_ = np.linalg.lstsq(X[:, :j], X[:, j], rcond=None)
            partners = [names[i] for i in np.flatnonzero(np.abs(coef) > 1e-8)]
            return partners + [names[j]]
        r = rank
    return []


def run_dummy_regression(eta, dummies, *, with_intercept: bool = True, robust: bool = False,
                         name: str = "") -> RegressionResult:
    """OLS of ``eta`` on dummy columns with two-sided t-test p-values.

    ``dummies`` maps labels to 0/1 vectors (a dict or a DataFrame).  With an
    intercept and mutually exclusive dummies each coefficient is the contrast
    of that group's mean with the rows where every dummy is 0.  ``robust``
    swaps the classical variance for the HC1 sandwich.
    """
    y = np.asarray(eta, dtype=float)
    frame = pd.DataFrame(dummies)
    names = [str(c) for c in frame.columns]
    D = frame.to_numpy(dtype=float)
    if D.shape[0] != y.size:
        raise SkillDecompError("dummies and residuals differ in length", module=_MODULE)
    labels = (["(intercept)"] if with_intercept else []) + names
    X = np.column_stack([np.ones(y.size), D]) if with_intercept else D
    n, p = X.shape
    if n <= p:
        raise SkillDecompError(f"{n} observations cannot support {p} parameters", module=_MODULE)
    if np.linalg.matrix_rank(X) < p:
        cols = _first_collinear(X, labels)
        raise CollinearityError(f"collinear design columns: {', '.join(cols)}", columns=tuple(cols))
    q, r = np.linalg.qr(X)
    beta = np.linalg.solve(r, q.T @ y)
    resid = y - X @ beta
    dof = n - p
    rinv = np.linalg.inv(r)
    xtx_inv = rinv @ rinv.T
    if robust:
        meat = (X * resid[:, None] ** 2).T @ X
        cov = xtx_inv @ meat @ xtx_inv * (n / dof)
    else:
        cov = xtx_inv * float(resid @ resid) / dof
    se = np.sqrt(np.diag(cov))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, beta / se, 0.0)
    pv = 2.0 * stats.t.sf(np.abs(t), dof)
    pv = np.where(se > 0, pv, 1.0)
    off = 1 if with_intercept else 0
    return RegressionResult(
        name=name,
        coefficients={k: float(v) for k, v in zip(names, beta[off:])},
        std_errors={k: float(v) for k, v in zip(names, se[off:])},
        p_values={k: float(v) for k, v in zip(names, pv[off:])},
        n_obs=int(n),
        intercept=float(beta[0]) if with_intercept else 0.0,
    )


def prior_round_adjustment(player_etas_in_event, total_career_rounds: int) -> float:
    """Expected per-round η for a player's remaining rounds.

    If residuals sum to about zero over a career, rounds already played in
    the event predict the opposite sign for the rest.  The caller subtracts
    the result from the paired-round η.
    """
    prior = np.asarray(player_etas_in_event, dtype=float)
    remaining = int(total_career_rounds) - prior.size
    if remaining <= 0:
        raise SkillDecompError(
            f"career of {total_career_rounds} rounds leaves none after {prior.size} prior rounds",
            module=_MODULE)
    return float(-prior.sum() / remaining)


def paired_with(df: pd.DataFrame, focal) -> np.ndarray:
    """True where the row's pairing group is the focal player's in that round."""
    if "group" not in df:
        raise DataValidationError("pairing groups are needed (the 'group' column)")
    fg = df.loc[df["player_id"] == focal, ["tournament_id", "round", "group"]]
    fg = fg.rename(columns={"group": "_focal_group"})
    m = df[["tournament_id", "round", "group"]].merge(fg, on=["tournament_id", "round"], how="left")
    out = m["group"].notna().to_numpy() & (m["group"].to_numpy() == m["_focal_group"].to_numpy())
    return out & (df["player_id"].to_numpy() != focal)


def _adjusted_eta(d, paired):
    """η with the prior-round expectation removed from paired rounds."""
    eta = d["eta"].to_numpy(dtype=float).copy()
    career = d.groupby("player_id")["eta"].transform("size").to_numpy()
    prior_sum = (d.groupby(["player_id", "tournament_id"])["eta"].cumsum() - d["eta"]).to_numpy()
    prior_n = (d["round"].to_numpy() - 1)
    for i in np.flatnonzero(paired):
        remaining = career[i] - prior_n[i]
        if remaining <= 0:
            raise SkillDecompError("no remaining rounds for prior-round adjustment", module=_MODULE)
        eta[i] -= -prior_sum[i] / remaining
    return eta


def _table3_designs(d, fin_rounds):
    paired = d["paired"].to_numpy()
    infield = d["focal_in_field"].to_numpy()
    final = d["final_round"].to_numpy()
    rnd = d["round"].to_numpy()
    b = lambda x: x.astype(float)
    designs = [
        ("test 1", {"focal in field": b(infield)}),
        ("test 2", {"in field, paired": b(infield & paired), "in field, not paired": b(infield & ~paired)}),
        ("test 3", {"paired": b(paired)}),
        ("test 4", {f"paired, round {r}": b(paired & (rnd == r)) for r in range(1, int(rnd.max()) + 1)}),
        ("test 5", {"final round, paired": b(final & paired), "final round, not paired": b(final & ~paired)}),
    ]
    early = {f"paired, round {r}": b(paired & (rnd == r) & ~final) for r in range(1, fin_rounds)}
    fg = d["focal_final_group"].to_numpy()
    designs.append(("test 6 final group", {
        **early,
        "final round, paired, focal in final group": b(final & paired & fg),
        "final round, paired, focal not in final group": b(final & paired & ~fg),
    }))
    fm = d["focal_margin"].to_numpy()
    for k in CONTENTION_MARGINS:
        within = fm <= k
        designs.append((f"test 6 focal within {k}", {
            **early,
            f"final round, paired, focal within {k}": b(final & paired & within),
            f"final round, paired, focal not within {k}": b(final & paired & ~within),
        }))
    return designs


def _table4_designs(d):
    final = d["final_round"].to_numpy()
    paired = d["paired"].to_numpy()
    margin = d["margin"].to_numpy()
    designs = []
    for i, k in enumerate(CONTENTION_MARGINS, start=1):
        designs.append((f"test {i}", {
            f"player within {k}": (final & (margin <= k)).astype(float),
            f"player not within {k}": (final & (margin > k)).astype(float),
            "final round, paired": (final & paired).astype(float),
        }))
    return designs


def run_test_suite(records: pd.DataFrame, focal_player, suite: str = "table3", *,
                   final_group_size: int = 2, adjust_prior_rounds: bool = False,
                   robust: bool = False, on_degenerate: str = "raise") -> list[RegressionResult]:
    """Run the focal-player regression suite on fitted records.

    ``records`` needs the dataset columns plus ``group`` and ``eta``.
    ``suite="table3"`` asks whether the focal player's presence or company
    moves others' residuals (tests 1-6, test 6 in seven variants).
    ``suite="table4"`` asks the same of final-round contention at margins
    10, 8, 6, 4, 2 and 0, on events played to their full schedule only.
    ``on_degenerate="skip"`` drops a specification whose design is rank
    deficient instead of raising.
    """
    if suite not in ("table3", "table4"):
        raise ValueError(f"unknown suite {suite!r}")
    if on_degenerate not in ("raise", "skip"):
        raise ValueError(f"unknown on_degenerate {on_degenerate!r}")
    focal = str(focal_player)
    if "eta" not in records:
        raise SkillDecompError("records have no eta residuals", module=_MODULE)
    if not (records["player_id"] == focal).any():
        raise DataValidationError(f"focal player {focal} not in dataset")
    d = records.reset_index(drop=True)
    st = build_standings(d, final_group_size=final_group_size)
    d = pd.concat([d, st], axis=1)
    d["paired"] = paired_with(d, focal)
    eta = _adjusted_eta(d, d["paired"].to_numpy()) if adjust_prior_rounds else d["eta"].to_numpy(float)
    d["eta_used"] = eta

    foc = d[d["player_id"] == focal]
    d["focal_in_field"] = d["tournament_id"].isin(set(foc["tournament_id"]))
    ff = foc[foc["final_round"]].set_index("tournament_id")
    d["focal_margin"] = d["tournament_id"].map(ff["margin"]).fillna(np.inf).to_numpy()
    d["focal_final_group"] = d["tournament_id"].map(ff["final_group"]).eq(True).to_numpy()

    sample = d[d["player_id"] != focal]
    if suite == "table4":
        sample = sample[~sample["shortened"]]
        designs = _table4_designs(sample)
    else:
        fin = int(min(scheduled_rounds(d).values()))
        designs = _table3_designs(sample, fin)
    y = sample["eta_used"].to_numpy()
    out = []
    for name, cols in designs:
        try:
            out.append(run_dummy_regression(y, cols, robust=robust, name=name))
        except CollinearityError as exc:
            if on_degenerate == "raise":
                raise CollinearityError(f"{name}: {exc}", columns=exc.columns) from None
            log.warning("skipping %s: %s", name, exc)
    return out
