import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from skilldecomp.counterfactual import (
    CounterfactualRow,
    average_finish,
    counterfactual_rows,
    expected_total,
    luck_transplant,
    mean_residual_by_round,
    place_if_normal,
    wins_if_normal,
)
from skilldecomp.errors import SkillDecompError
from skilldecomp.synth import GeneratorConfig, generate


def _rows(frame):
    return [CounterfactualRow(str(r.event), r.winning, r.actual, r.expected, r.residual, r.place, r.ties,
                              r.place_if_normal) for r in frame.itertuples()]


def test_expected_total_examples():
    assert expected_total(272, -3.87) == pytest.approx(275.87)
    assert expected_total(286, -4.66) == pytest.approx(290.66)
    assert expected_total(281, 0.0) == 281


@given(st.floats(-1e3, 1e3), st.floats(-50, 50))
def test_expected_total_inverts(actual, theta):
    assert expected_total(actual, theta) + theta == pytest.approx(actual, abs=1e-9)


def test_table1_expected_scores(table1):
    got = expected_total(table1["actual"], table1["residual"])
    assert np.max(np.abs(got - table1["expected"])) <= 0.01


def test_table1_yearly_summaries(table1):
    want = {1998: 10.94, 1999: 6.00, 2000: 2.42, 2001: 6.53}
    for year, avg in want.items():
        rows = _rows(table1[table1["year"] == year])
        assert average_finish(rows) == pytest.approx(avg, abs=0.01)
    assert wins_if_normal(_rows(table1[table1["year"] == 2000])) == 3
    assert wins_if_normal(_rows(table1[table1["year"] == 1998])) == 0
    assert wins_if_normal([]) == 0


def test_average_finish_edge_cases():
    assert average_finish([CounterfactualRow("x", 270, 272, 271, 1, 2, 1, 7)]) == 7
    with pytest.raises(SkillDecompError):
        average_finish([])


def test_place_if_normal_examples():
    assert place_if_normal(273.0, [270, 272, 274]) == 3
    assert place_if_normal(260.0, [270, 272, 274]) == 1
    assert place_if_normal(272.0, [272, 272]) == 1
    with pytest.raises(SkillDecompError):
        place_if_normal(270.0, [])


@given(st.lists(st.integers(250, 300), min_size=1, max_size=30), st.floats(240, 310), st.floats(0, 20))
def test_place_if_normal_monotone(field, expected, drop):
    assert place_if_normal(expected - drop, field) <= place_if_normal(expected, field)


def _event(totals, subject_theta):
    rows = []
    for i, tot in enumerate(totals):
        per = [tot // 4 + (1 if j < tot % 4 else 0) for j in range(4)]
        for k, sc in enumerate(per, start=1):
            th = subject_theta / 4 if i == 0 else 0.0
            rows.append((f"P{i}", "E1", k, 100, sc, th))
    return pd.DataFrame(rows, columns=["player_id", "tournament_id", "round", "calendar_index", "score", "theta"])


def test_ten_player_field_places_sixth():
    rec = _event([272, 271, 272, 273, 274, 275, 276, 277, 278, 279], -3.87)
    (row,) = counterfactual_rows(rec, "P0")
    assert row.expected_score == pytest.approx(275.87)
    assert (row.winning_score, row.actual_place, row.ties_at_place, row.place_if_normal) == (271, 2, 2, 6)


def test_rows_skip_incomplete_events():
    rec = _event([272, 271, 273], 0.0)
    rec = rec[~((rec["player_id"] == "P0") & (rec["round"] == 4))]
    assert counterfactual_rows(rec, "P0") == []
    with pytest.raises(SkillDecompError):
        counterfactual_rows(rec, "nobody")


def test_transplant_examples():
    a = luck_transplant(290.66, -12.31, 279)
    assert a.transplanted_total == pytest.approx(278.35) and a.verdict == "Win" and a.wins
    b = luck_transplant(275.49, -9.49, 265)
    assert b.transplanted_total == pytest.approx(266.00) and b.verdict == "Lose"
    assert luck_transplant(281.0, 0.0, 280).verdict == "Lose"


def test_table5_verdicts(table5):
    made = table5.dropna(subset=["actual"])
    assert len(made) == 15
    np.testing.assert_allclose(expected_total(made["actual"], made["residual"]), made["expected"], atol=0.01)
    for donor, col in ((-12.31, "usopen99"), (-9.49, "pga01")):
        for r in made.itertuples():
            out = luck_transplant(r.expected, donor, r.winning)
            assert out.transplanted_total == pytest.approx(getattr(r, f"if_{col}"), abs=0.011)
            assert out.verdict == getattr(r, f"verdict_{col}")


def test_round_summary_identities():
    s = mean_residual_by_round([1.5, -2.0, 0.25], [1, 2, 3])
    assert s.round_means == {1: 1.5, 2: -2.0, 3: 0.25}
    rng = np.random.default_rng(0)
    x = rng.normal(size=37)
    r = rng.integers(1, 5, size=37)
    s = mean_residual_by_round(x, r)
    weighted = sum(s.round_means[k] * s.round_counts[k] for k in s.round_means) / s.n
    assert s.overall_mean == pytest.approx(weighted, abs=1e-12)
    assert s.std_error == pytest.approx(np.std(x, ddof=1) / np.sqrt(37))
    with pytest.raises(SkillDecompError):
        mean_residual_by_round([], [])


def test_round_four_shift_in_majors():
    cfg = GeneratorConfig(n_players=3, n_events=4000, major_every=1, major_round_shift=((4, -0.5),),
                          sigma_round_course=0.0, seed=1)
    _, truth = generate(cfg)
    focal = truth.records[truth.records["player_id"] == truth.focal_player]
    s = mean_residual_by_round(focal["theta"], focal["round"])
    assert s.round_means[4] == pytest.approx(-0.5, abs=0.1)
    assert all(abs(s.round_means[k]) <= 0.1 for k in (1, 2, 3))
