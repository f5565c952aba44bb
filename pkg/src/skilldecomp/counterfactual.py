"""What-if placements: playing to one's norm, and borrowing another event's luck."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import SkillDecompError

__all__ = [
    "CounterfactualRow",
    "TransplantOutcome",
    "RoundSummary",
    "expected_total",
    "place_if_normal",
    "wins_if_normal",
    "average_finish",
    "luck_transplant",
    "mean_residual_by_round",
    "counterfactual_rows",
]

_MODULE = "counterfactual"


@dataclass(frozen=True)
class CounterfactualRow:
    tournament_id: str
    winning_score: float
    actual_score: float
    expected_score: float
    theta_total: float
    actual_place: int
    ties_at_place: int
    place_if_normal: int


@dataclass(frozen=True)
class TransplantOutcome:
    tournament_id: str
    transplanted_total: float
    winning_score: float
    verdict: str

    @property
    def wins(self) -> bool:
        return self.verdict == "Win"


def expected_total(actual, theta_total):
    """Score the player would have posted with zero luck."""
    return actual - theta_total


def place_if_normal(subject_expected, field_totals) -> int:
    """Finish position of ``subject_expected`` against an unchanged field.

    The subject is ranked ahead of anyone they tie exactly.
    """
    field = np.asarray(field_totals, dtype=float)
    if field.size == 0:
        raise SkillDecompError("field is empty", module=_MODULE)
    return 1 + int(np.count_nonzero(field < subject_expected))


def wins_if_normal(rows) -> int:
    return sum(1 for r in rows if r.place_if_normal == 1)


def average_finish(rows) -> float:
    places = [r.place_if_normal for r in rows]
    if not places:
        raise SkillDecompError("no rows to average", module=_MODULE)
    return float(np.mean(places))


def luck_transplant(expected, donor_residual, winning, *, tournament_id="") -> TransplantOutcome:
    """Replay an event with the luck of a donor event.

    Win iff the transplanted total beats the actual winning score outright.
    """
    total = expected + donor_residual
    return TransplantOutcome(
        tournament_id=tournament_id,
        transplanted_total=float(total),
        winning_score=float(winning),
        verdict="Win" if total < winning else "Lose",
    )


@dataclass(frozen=True)
class RoundSummary:
    """Per-round means of a residual, plus the overall mean and its standard error."""

    round_means: dict
    round_counts: dict
    overall_mean: float
    std_error: float
    n: int


def mean_residual_by_round(values, rounds) -> RoundSummary:
    """Average residuals by round number.

    ``values`` and ``rounds`` are aligned vectors, typically one player's θ in
    a subset of events.  The standard error is ``sd / sqrt(n)`` of the pooled
    values.
    """
    x = np.asarray(values, dtype=float)
    r = np.asarray(rounds)
    if x.size == 0 or x.shape != r.shape:
        raise SkillDecompError("need aligned, nonempty values and rounds", module=_MODULE)
    means, counts = {}, {}
    for k in np.unique(r):
        sel = x[r == k]
        means[int(k)] = float(sel.mean())
        counts[int(k)] = int(sel.size)
    se = float(np.std(x, ddof=1) / math.sqrt(x.size)) if x.size > 1 else math.nan
    return RoundSummary(round_means=means, round_counts=counts, overall_mean=float(x.mean()),
                        std_error=se, n=int(x.size))


def counterfactual_rows(records: pd.DataFrame, player_id, *, events=None) -> list[CounterfactualRow]:
    """Build placement rows for one player from fitted per-round records.

    ``records`` needs ``player_id, tournament_id, round, score, theta`` (the
    ``records`` frame of a full-model fit).  Only events where the player
    completed every round that was played count; the field is everyone else who
    did the same.  Tournaments come out in calendar order.
    """
    need = {"player_id", "tournament_id", "round", "score", "theta"}
    missing = need - set(records.columns)
    if missing:
        raise SkillDecompError(f"records lack columns {sorted(missing)}", module=_MODULE)
    player_id = str(player_id)
    mine = records[records["player_id"] == player_id]
    if mine.empty:
        raise SkillDecompError(f"player {player_id} not in records", module=_MODULE)
    tids = list(dict.fromkeys(mine.sort_values(["calendar_index", "round"] if "calendar_index" in mine
                                               else ["round"], kind="mergesort")["tournament_id"]))
    if events is not None:
        wanted = set(events)
        tids = [t for t in tids if t in wanted]
    rows = []
    for tid in tids:
        ev = records[records["tournament_id"] == tid]
        n_rounds = int(ev["round"].max())
        per = ev.groupby("player_id").agg(n=("round", "size"), total=("score", "sum"),
                                          theta=("theta", "sum"))
        done = per[per["n"] == n_rounds]
        if player_id not in done.index:
            continue
        others = done.drop(index=player_id)
        if others.empty:
            continue
        actual = float(done.at[player_id, "total"])
        theta = float(done.at[player_id, "theta"])
        exp = expected_total(actual, theta)
        field = others["total"].to_numpy(dtype=float)
        rows.append(CounterfactualRow(
            tournament_id=tid,
            winning_score=float(done["total"].min()),
            actual_score=actual,
            expected_score=float(exp),
            theta_total=theta,
            actual_place=1 + int(np.count_nonzero(field < actual)),
            ties_at_place=1 + int(np.count_nonzero(field == actual)),
            place_if_normal=place_if_normal(exp, field),
        ))
    return rows
