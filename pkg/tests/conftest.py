import os

import numpy as np
import pandas as pd
import pytest

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


def fixture_path(name):
    return os.path.join(FIXTURES, name)


def ar1_series(rng, n, phi, sd):
    """Stationary AR(1) draw with innovation sd ``sd``."""
    e = rng.standard_normal(n) * sd
    x = np.empty(n)
    x[0] = e[0] / np.sqrt(1.0 - phi * phi)
    for k in range(1, n):
        x[k] = phi * x[k - 1] + e[k]
    return x


def write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(str(v) for v in r) + "\n")
    return str(path)


HEADER = ["player_id", "tournament_id", "round", "course_id", "calendar_index", "score"]


@pytest.fixture
def table1():
    return pd.read_csv(fixture_path("table1.csv"))


@pytest.fixture
def table2():
    return pd.read_csv(fixture_path("table2.csv"))


@pytest.fixture
def table5():
    return pd.read_csv(fixture_path("table5.csv"))


SMALL_CONFIG = """\
simulate.n_players = 12
simulate.n_events = 10
simulate.focal_participation = 0.8
simulate.major_every = 5
data.min_scores = 0
fit.max_iter = 20
counterfactual.player = P000
pairing.focal = P000
compare.player = P000
compare.n_boot = 200
report.player = P000
"""


def bundle_digest(directory):
    """File name -> bytes for an output bundle; manifest timestamps are dropped."""
    import json

    out = {}
    for name in sorted(os.listdir(directory)):
        with open(os.path.join(directory, name), "rb") as fh:
            data = fh.read()
        if name == "manifest.json":
            m = json.loads(data)
            m.pop("started_at", None)
            m.pop("finished_at", None)
            data = json.dumps(m, sort_keys=True).encode()
        out[name] = data
    return out


def simulate_fit_report(root, config, seed):
    """Run simulate -> fit -> report into root/{sim,fit,report}; returns the three dirs."""
    from skilldecomp.cli import main

    sim, fit, rep = (os.path.join(root, x) for x in ("sim", "fit", "report"))
    assert main(["simulate", "--config", config, "--seed", str(seed), "--out", sim]) == 0
    assert main(["fit", "--config", config, "--input", os.path.join(sim, "scores.csv"), "--out", fit]) == 0
    assert main(["report", "--config", config, "--fit-dir", fit, "--out", rep,
                 "--style", "table1", "--style", "table6", "--style", "table3", "--style", "table4"]) == 0
    return sim, fit, rep


ACCEPTANCE_LINES = []


def record_criterion(number, ok, detail):
    """Log one acceptance line; the terminal summary prints them all."""
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
