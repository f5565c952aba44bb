"""Score panels: ingestion, validation, eligibility filtering and scaled time.

A dataset is a :class:`pandas.DataFrame` with one row per 18-hole score and the
canonical columns in :data:`COLUMNS` (plus the optional ``group`` and
``scheduled_rounds`` columns).  Rows are kept in canonical order: player, then
calendar position, then tournament and round.
"""
from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import pandas as pd

from .errors import (
    DataValidationError,
    DegenerateSequenceError,
    DuplicateKeyError,
    InputFileError,
    MalformedRowError,
)

log = logging.getLogger(__name__)

COLUMNS = ["player_id", "tournament_id", "round", "course_id", "calendar_index", "score"]
OPTIONAL_COLUMNS = ["group", "scheduled_rounds"]
KEY = ["player_id", "tournament_id", "round"]
SORT_ORDER = ["player_id", "calendar_index", "tournament_id", "round"]


class ScoreRecord(NamedTuple):
    player_id: str
    tournament_id: str
    round: int
    course_id: str
    calendar_index: int
    score: int
    group: str | None = None
    scheduled_rounds: int | None = None


class RoundCourseKey(NamedTuple):
    tournament_id: str
    round: int
    course_id: str


@dataclass(frozen=True)
class Schema:
    """Column contract for score files."""

    score_min: int = 55
    score_max: int = 130
    required: tuple[str, ...] = tuple(COLUMNS)
    optional: tuple[str, ...] = tuple(OPTIONAL_COLUMNS)


@dataclass
class IngestReport:
    n_records: int = 0
    rejects: list[tuple[int, str]] = field(default_factory=list)


def _parse_int(value, name):
    try:
        return int(value)
    except (TypeError, ValueError):
        raise ValueError(f"{name} is not an integer: {value!r}") from None


def _parse_row(row, has_group, has_sched, schema):
    for name in ("player_id", "tournament_id", "course_id"):
        if not row[name].strip():
            raise ValueError(f"empty {name}")
    rnd = _parse_int(row["round"], "round")
    if rnd < 1:
        raise ValueError(f"round must be >= 1, got {rnd}")
    score = _parse_int(row["score"], "score")
    if not schema.score_min <= score <= schema.score_max:
        raise ValueError(f"score {score} outside [{schema.score_min}, {schema.score_max}]")
    sched = None
    if has_sched and row["scheduled_rounds"].strip():
        sched = _parse_int(row["scheduled_rounds"], "scheduled_rounds")
        if rnd > sched:
            raise ValueError(f"round {rnd} exceeds scheduled rounds {sched}")
    group = row["group"].strip() or None if has_group else None
    return ScoreRecord(
        player_id=row["player_id"].strip(),
        tournament_id=row["tournament_id"].strip(),
        round=rnd,
        course_id=row["course_id"].strip(),
        calendar_index=_parse_int(row["calendar_index"], "calendar_index"),
        score=score,
        group=group,
        scheduled_rounds=sched,
    )


def ingest_scores(path, schema: Schema | None = None, *, skip_bad_rows: bool = False,
                  report: IngestReport | None = None) -> pd.DataFrame:
    """Read a score CSV into a validated, canonically ordered dataset.

    Bad rows raise :class:`MalformedRowError` or :class:`DuplicateKeyError`
    (with 1-based file line numbers) unless ``skip_bad_rows`` is set, in which
    case they are logged and recorded in ``report.rejects``.
    """
    schema = schema or Schema()
    report = report if report is not None else IngestReport()
    if not os.path.isfile(path):
        raise InputFileError(str(path))
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in schema.required if c not in header]
        if missing:
            raise MalformedRowError(f"{path}: header is missing columns {missing}", line_numbers=(1,))
        has_group = "group" in header
        has_sched = "scheduled_rounds" in header
        records, lines, seen = [], [], {}
        for row in reader:
            line = reader.line_num
            try:
                if None in row or any(row[c] is None for c in header):
                    raise ValueError("wrong number of fields")
                rec = _parse_row(row, has_group, has_sched, schema)
            except ValueError as exc:
                if not skip_bad_rows:
                    raise MalformedRowError(f"line {line}: {exc}", line_numbers=(line,)) from None
                log.warning("skipping line %d: %s", line, exc)
                report.rejects.append((line, str(exc)))
                continue
            key = (rec.player_id, rec.tournament_id, rec.round)
            if key in seen:
                msg = f"duplicate key {key} on lines {seen[key]} and {line}"
                if not skip_bad_rows:
                    raise DuplicateKeyError(msg, line_numbers=(seen[key], line))
                log.warning("skipping %s", msg)
                report.rejects.append((line, msg))
                continue
            seen[key] = line
            records.append(rec)
            lines.append(line)
    df = records_to_frame(records, with_group=has_group, with_scheduled=has_sched)
    report.n_records = len(df)
    return df


def records_to_frame(records, *, with_group=None, with_scheduled=None) -> pd.DataFrame:
    records = list(records)
    if with_group is None:
        with_group = any(r.group is not None for r in records)
    if with_scheduled is None:
        with_scheduled = any(r.scheduled_rounds is not None for r in records)
    cols = list(COLUMNS)
    if with_group:
        cols.append("group")
    if with_scheduled:
        cols.append("scheduled_rounds")
    df = pd.DataFrame([r._asdict() for r in records], columns=list(ScoreRecord._fields))
    df = df[cols]
    return normalize(df)


def normalize(df: pd.DataFrame) -> pd.DataFrame:
    """Coerce dtypes, check the key is unique and put rows in canonical order."""
    df = df.copy()
    for c in ("player_id", "tournament_id", "course_id"):
        df[c] = df[c].astype(str)
    for c in ("round", "calendar_index"):
        df[c] = df[c].astype(np.int64)
    score = df["score"].to_numpy(dtype=float)
    # in-memory synthetic panels may carry unrounded scores
    df["score"] = score.astype(np.int64) if np.all(score == np.round(score)) else score
    if "group" in df:
        df["group"] = df["group"].astype(object).where(df["group"].notna(), None)
    if "scheduled_rounds" in df:
        df["scheduled_rounds"] = df["scheduled_rounds"].astype("Int64")
    dup = df.duplicated(KEY, keep=False)
    if dup.any():
        first = df.loc[dup, KEY].iloc[0].tolist()
        raise DuplicateKeyError(f"duplicate key {tuple(first)}")
    return df.sort_values(SORT_ORDER, kind="mergesort").reset_index(drop=True)


def write_scores(df: pd.DataFrame, path) -> None:
    cols = [c for c in COLUMNS + OPTIONAL_COLUMNS if c in df.columns]
    out = df[cols].copy()
    if "group" in out:
        out["group"] = out["group"].fillna("")
    out.to_csv(path, index=False, lineterminator="\n")


def filter_eligible(df: pd.DataFrame, min_scores: int = 90):
    """Keep players with strictly more than ``min_scores`` scores.

    Returns the filtered dataset and a ``{player_id: n_scores}`` dict of the
    players dropped.
    """
    if min_scores < 0:
        raise DataValidationError("min_scores must be non-negative")
    counts = df.groupby("player_id", sort=True).size()
    keep = counts.index[counts > min_scores]
    dropped = {str(p): int(n) for p, n in counts[counts <= min_scores].items()}
    out = df[df["player_id"].isin(keep)].reset_index(drop=True)
    return out, dropped


def round_course_keys(df: pd.DataFrame) -> list[RoundCourseKey]:
    keys = df[["tournament_id", "round", "course_id"]].drop_duplicates()
    keys = keys.sort_values(["tournament_id", "round", "course_id"])
    return [RoundCourseKey(t, int(r), c) for t, r, c in keys.itertuples(index=False)]


def rotation_rounds(df: pd.DataFrame, tournament_id) -> list[int]:
    """Rounds of ``tournament_id`` played on more than one course."""
    sub = df[df["tournament_id"] == tournament_id]
    n_courses = sub.groupby("round")["course_id"].nunique()
    return [int(r) for r in n_courses.index[n_courses > 1]]


def scheduled_rounds(df: pd.DataFrame, default: int = 4) -> dict:
    """Scheduled rounds per tournament.

    Uses the ``scheduled_rounds`` column where present; otherwise
    ``max(default, highest round played)``.
    """
    played = df.groupby("tournament_id")["round"].max()
    declared = df.groupby("tournament_id")["scheduled_rounds"].max() if "scheduled_rounds" in df else None
    out = {}
    for t, p in played.items():
        if declared is not None and pd.notna(declared[t]):
            out[t] = int(declared[t])
        else:
            out[t] = max(int(default), int(p))
    return out


@dataclass(frozen=True)
class Roster:
    """Per-player chronological round sequences (row indices into the dataset)."""

    sequences: dict

    @property
    def players(self):
        return list(self.sequences)

    @property
    def counts(self):
        return {p: len(ix) for p, ix in self.sequences.items()}


def build_roster(df: pd.DataFrame) -> Roster:
    ordered = df.sort_values(SORT_ORDER, kind="mergesort")
    seqs = {str(p): g.index.to_numpy() for p, g in ordered.groupby("player_id", sort=True)}
    return Roster(sequences=seqs)


def scaled_time(roster_or_df, player_id, *, spacing: str = "rank", df: pd.DataFrame | None = None):
    """Map a player's rounds onto [0, 1].

    ``spacing="rank"`` sends the k-th round to (k-1)/(n-1).  ``"calendar"``
    uses calendar_index proportionally and needs the dataset.
    """
    if isinstance(roster_or_df, pd.DataFrame):
        df = roster_or_df
        roster = build_roster(df)
    else:
        roster = roster_or_df
    idx = roster.sequences[str(player_id)]
    n = len(idx)
    if n < 2:
        raise DegenerateSequenceError(f"player {player_id} has {n} round(s); need at least 2")
    if spacing == "rank":
        return np.arange(n, dtype=float) / (n - 1)
    if spacing == "calendar":
        if df is None:
            raise ValueError("calendar spacing needs the dataset")
        cal = df.loc[idx, "calendar_index"].to_numpy(dtype=float)
        span = cal[-1] - cal[0]
        if span <= 0:
            raise DegenerateSequenceError(f"player {player_id} has no calendar spread")
        return (cal - cal[0]) / span
    raise ValueError(f"unknown spacing {spacing!r}")


def calendar_year(calendar_index) -> np.ndarray:
    """Calendar year for days-since-1970-01-01 indices."""
    days = np.asarray(calendar_index, dtype="int64")
    return days.astype("datetime64[D]").astype("datetime64[Y]").astype(int) + 1970
