import numpy as np
import pandas as pd
import pytest

from skilldecomp.errors import ConfigError
from skilldecomp.synth import GeneratorConfig, desk_config, generate, write_truth

KEY = ["player_id", "tournament_id", "round"]


def _joined(cfg):
    data, truth = generate(cfg)
    return data, truth, data.merge(truth.records, on=KEY)


def test_noiseless_scores_equal_skill():
    cfg = GeneratorConfig(n_players=6, n_events=5, sigma_round_course=0, sigma_player_course=0,
                          sigma_eta=0, phi=0.0, integer_scores=False)
    _, _, m = _joined(cfg)
    np.testing.assert_allclose(m["score"], m["skill"], atol=1e-12)


def test_identity_is_exact_with_rounding():
    _, _, m = _joined(desk_config(3, n_players=10, n_events=8))
    total = m["skill"] + m["rc_effect"] + m["pc_effect"] + m["theta"]
    assert np.max(np.abs(total - m["score"])) <= 1e-9
    assert np.max(np.abs(m["lambda"] + m["eta"] - m["theta"])) <= 1e-12
    assert np.all(m["score"] == np.round(m["score"]))


def test_deterministic(tmp_path):
    cfg = desk_config(5, n_players=8, n_events=6)
    a, ta = generate(cfg)
    b, tb = generate(cfg)
    pd.testing.assert_frame_equal(a, b)
    write_truth(ta, tmp_path / "a.csv")
    write_truth(tb, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    c, _ = generate(desk_config(6, n_players=8, n_events=6))
    assert not a["score"].equals(c["score"])


def test_round_course_sd():
    _, truth = generate(desk_config(0))
    assert 1.2 <= np.std(list(truth.round_course.values()), ddof=1) <= 1.8


def test_theta_autocorrelation_matches_phi():
    cfg = GeneratorConfig(n_players=2, n_events=500, phi=0.3, sigma_round_course=0.0,
                          integer_scores=False, seed=2)
    _, truth = generate(cfg)
    for _, g in truth.records.groupby("player_id"):
        x = g["theta"].to_numpy()
        assert x.size == 2000
        d = x - x.mean()
        assert abs(d[1:] @ d[:-1] / (d @ d) - 0.3) <= 0.05


def test_special_events():
    cfg = desk_config(0, n_players=12, n_events=10, shortened_events=1, five_round_events=1)
    data, truth = generate(cfg)
    rounds = data.groupby("tournament_id")["round"].max()
    for t in truth.shortened:
        assert rounds[t] == 3
    for t in truth.five_round:
        assert rounds[t] == 5
    assert all(t.endswith("-major") for t in truth.majors)


@pytest.mark.parametrize("bad", [
    {"phi": 1.0},
    {"sigma_eta": -1.0},
    {"rounds_per_event": 2},
    {"participation": 0.0},
    {"skill_family": "zigzag"},
    {"shortened_events": 30, "n_events": 10},
])
def test_invalid_config(bad):
    with pytest.raises(ConfigError):
        GeneratorConfig(**bad).validate()


def test_from_mapping_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        GeneratorConfig.from_mapping({"n_player": 3})
    cfg = GeneratorConfig.from_mapping({"n_players": 3, "seed": 9})
    assert GeneratorConfig.from_mapping(cfg.to_dict()) == cfg
