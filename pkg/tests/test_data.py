import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from skilldecomp.data import (
    IngestReport,
    Schema,
    build_roster,
    filter_eligible,
    ingest_scores,
    normalize,
    rotation_rounds,
    round_course_keys,
    scaled_time,
    scheduled_rounds,
    write_scores,
)
from skilldecomp.errors import (
    DegenerateSequenceError,
    DuplicateKeyError,
    InputFileError,
    MalformedRowError,
)

from conftest import HEADER, write_csv


def _rows(n_players=2, n_rounds=5):
    rows = []
    for p in range(n_players):
        for k in range(n_rounds):
            rows.append([f"P{p}", f"T{k // 4}", k % 4 + 1, "C1", 100 + k, 70 + (p + k) % 5])
    return rows


def test_wellformed_file_ingests_every_row(tmp_path):
    path = write_csv(tmp_path / "s.csv", HEADER, _rows())
    report = IngestReport()
    df = ingest_scores(path, report=report)
    assert len(df) == 10
    assert report.rejects == []
    assert list(df.columns) == HEADER


def test_duplicate_key_names_both_lines(tmp_path):
    rows = _rows()
    rows.append(list(rows[2]))
    path = write_csv(tmp_path / "s.csv", HEADER, rows)
    with pytest.raises(DuplicateKeyError) as err:
        ingest_scores(path)
    assert err.value.line_numbers == (4, 12)
    assert "4" in str(err.value) and "12" in str(err.value)


def test_rotation_event_gives_three_round_one_keys(tmp_path):
    rows = [[f"P{i}", "PEB", 1, f"C{i % 3}", 10, 72] for i in range(9)]
    df = ingest_scores(write_csv(tmp_path / "s.csv", HEADER, rows))
    keys = [k for k in round_course_keys(df) if k.round == 1]
    assert len(set(keys)) == 3
    assert rotation_rounds(df, "PEB") == [1]


def test_malformed_row_reports_line(tmp_path):
    rows = _rows()
    rows[3][5] = "seventy"
    path = write_csv(tmp_path / "s.csv", HEADER, rows)
    with pytest.raises(MalformedRowError) as err:
        ingest_scores(path)
    assert err.value.line_numbers == (5,)


def test_skip_bad_rows_collects_rejects(tmp_path):
    rows = _rows()
    rows[0][5] = 200  # outside the sanity bounds
    rows.append(list(rows[4]))
    report = IngestReport()
    df = ingest_scores(write_csv(tmp_path / "s.csv", HEADER, rows), skip_bad_rows=True, report=report)
    assert len(df) == 9
    assert [line for line, _ in report.rejects] == [2, 12]


def test_score_bounds_are_configurable(tmp_path):
    rows = _rows()
    rows[0][5] = 140
    path = write_csv(tmp_path / "s.csv", HEADER, rows)
    with pytest.raises(MalformedRowError):
        ingest_scores(path)
    assert len(ingest_scores(path, Schema(score_max=150))) == 10


def test_missing_file():
    with pytest.raises(InputFileError):
        ingest_scores("/nonexistent/scores.csv")


def test_missing_header_column(tmp_path):
    path = write_csv(tmp_path / "s.csv", HEADER[:-1], [r[:-1] for r in _rows()])
    with pytest.raises(MalformedRowError):
        ingest_scores(path)


def test_round_beyond_schedule_rejected(tmp_path):
    rows = [r + [3] for r in _rows(1, 4)]
    path = write_csv(tmp_path / "s.csv", HEADER + ["scheduled_rounds"], rows)
    with pytest.raises(MalformedRowError):
        ingest_scores(path)


def test_roundtrip_is_lossless(tmp_path):
    rows = [r + [f"G{r[2]}", 4] for r in _rows(3, 8)]
    rows[0][6] = ""
    df = ingest_scores(write_csv(tmp_path / "a.csv", HEADER + ["group", "scheduled_rounds"], rows))
    write_scores(df, tmp_path / "b.csv")
    again = ingest_scores(tmp_path / "b.csv")
    pd.testing.assert_frame_equal(df, again)
    assert df["group"].isna().sum() == 1


def _panel(counts):
    rows = []
    for p, n in enumerate(counts):
        for k in range(n):
            rows.append((f"P{p}", f"T{k // 4:03d}", k % 4 + 1, "C", k, 72))
    return normalize(pd.DataFrame(rows, columns=HEADER))


def test_filter_is_strict():
    df = _panel([90, 91])
    kept, dropped = filter_eligible(df, 90)
    assert set(kept["player_id"]) == {"P1"}
    assert dropped == {"P0": 90}


def test_filter_zero_keeps_everything():
    df = _panel([1, 3, 7])
    kept, dropped = filter_eligible(df, 0)
    pd.testing.assert_frame_equal(kept, df)
    assert dropped == {}


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 12), min_size=1, max_size=6), st.integers(0, 10))
def test_filter_is_idempotent(counts, m):
    df = _panel(counts)
    once, _ = filter_eligible(df, m)
    twice, _ = filter_eligible(once, m)
    pd.testing.assert_frame_equal(once, twice)


@pytest.mark.parametrize("n,expected", [(2, [0, 1]), (3, [0, 0.5, 1]), (5, [0, 0.25, 0.5, 0.75, 1])])
def test_scaled_time_rank_spacing(n, expected):
    roster = build_roster(_panel([n]))
    np.testing.assert_allclose(scaled_time(roster, "P0"), expected)


def test_scaled_time_needs_two_rounds():
    with pytest.raises(DegenerateSequenceError):
        scaled_time(build_roster(_panel([1])), "P0")


@settings(max_examples=25, deadline=None)
@given(st.integers(-10_000, 10_000), st.sampled_from(["rank", "calendar"]))
def test_scaled_time_ignores_calendar_shift(shift, spacing):
    df = _panel([9])
    df["calendar_index"] = df["calendar_index"] * 3 + 1
    moved = df.assign(calendar_index=df["calendar_index"] + shift)
    a = scaled_time(df, "P0", spacing=spacing)
    b = scaled_time(moved, "P0", spacing=spacing)
    np.testing.assert_array_equal(a, b)


def test_roster_orders_by_calendar_then_tournament_then_round():
    df = normalize(pd.DataFrame([
        ("P", "B", 1, "C", 5, 70),
        ("P", "A", 2, "C", 5, 71),
        ("P", "A", 1, "C", 5, 72),
        ("P", "Z", 1, "C", 1, 73),
    ], columns=HEADER))
    seq = build_roster(df).sequences["P"]
    assert list(df.loc[seq, "score"]) == [73, 72, 71, 70]


def test_scheduled_rounds_fallback():
    df = _panel([6])
    assert scheduled_rounds(df) == {"T000": 4, "T001": 4}
    df["scheduled_rounds"] = pd.array([4, 4, 4, 4, 3, 3], dtype="Int64")
    assert scheduled_rounds(df) == {"T000": 4, "T001": 3}
