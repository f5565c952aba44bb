"""Fixed-layout CSV tables.

Each style has a fixed header.  Floats print with two decimals; the values
passed in are never rounded.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, is_dataclass

from .counterfactual import RoundSummary
from .errors import ReportError

__all__ = ["STYLES", "emit_report", "render_report"]

STYLES = ("table1", "table3", "table4", "table5", "table6")

_TABLE1 = [
    ("tournament_id", "tournament_id"),
    ("winning", "winning_score"),
    ("actual", "actual_score"),
    ("expected", "expected_score"),
    ("residual", "theta_total"),
    ("place", "actual_place"),
    ("ties", "ties_at_place"),
    ("place_if_normal", "place_if_normal"),
]
_TABLE34 = ["test", "dummy", "coef", "p_value", "n_obs"]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, float):
        if math.isnan(v):
            return ""
        return f"{v:.2f}"
    return str(v)


def _fmt_p(v):
    return f"{v:.4f}"


def _as_dict(row):
    if is_dataclass(row):
        return asdict(row)
    if isinstance(row, dict):
        return row
    raise ReportError(f"cannot read fields from {type(row).__name__}")


def _get(d, key, style):
    if key not in d:
        raise ReportError(f"{style} needs field {key!r}")
    return d[key]


def _table1(results):
    header = [h for h, _ in _TABLE1]
    rows = []
    for r in results:
        d = _as_dict(r)
        rows.append([_fmt(_get(d, k, "table1")) for _, k in _TABLE1])
    return header, rows


def _table34(results, style):
    rows = []
    for res in results:
        for label, coef in res.coefficients.items():
            rows.append([res.name, label, f"{coef:.3f}", _fmt_p(res.p_values[label]), str(res.n_obs)])
    return list(_TABLE34), rows


def _table5(results):
    """``results``: dicts with tournament_id, winning, actual, expected, residual, transplants.

    ``transplants`` maps a donor label to a TransplantOutcome; rows with
    ``actual`` None (missed cut) print blanks and lose under every donor.
    """
    results = [_as_dict(r) for r in results]
    donors = []
    for d in results:
        for k in _get(d, "transplants", "table5"):
            if k not in donors:
                donors.append(k)
    header = ["tournament_id", "winning", "actual", "expected", "residual"]
    for k in donors:
        header += [f"if_like_{k}", f"verdict_{k}"]
    rows = []
    for d in results:
        row = [_fmt(_get(d, c, "table5")) for c in ("tournament_id", "winning", "actual", "expected", "residual")]
        for k in donors:
            out = d["transplants"].get(k)
            if out is None:
                row += ["", "Lose"]
            else:
                row += [_fmt(out.transplanted_total), out.verdict]
        rows.append(row)
    return header, rows


def _table6(results):
    """``results``: mapping of column label to RoundSummary."""
    if not isinstance(results, dict):
        raise ReportError("table6 needs a mapping of label to RoundSummary")
    labels = list(results)
    for v in results.values():
        if not isinstance(v, RoundSummary):
            raise ReportError("table6 needs RoundSummary values")
    rounds = sorted({k for v in results.values() for k in v.round_means})
    header = [""] + labels
    rows = []
    for k in rounds:
        rows.append([f"Round {k}"] + [_fmt(results[c].round_means.get(k)) for c in labels])
    if labels:
        rows.append(["Overall"] + [_fmt(results[c].overall_mean) for c in labels])
        rows.append(["Std error"] + [_fmt(results[c].std_error) for c in labels])
    return header, rows


def render_report(results, style: str) -> str:
    if style not in STYLES:
        raise ReportError(f"unknown report style {style!r}")
    if style == "table1":
        header, rows = _table1(results)
    elif style in ("table3", "table4"):
        header, rows = _table34(results, style)
    elif style == "table5":
        header, rows = _table5(results)
    else:
        header, rows = _table6(results if results else {})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def emit_report(results, style: str, path, fmt: str = "csv") -> str:
    """Write ``results`` as a ``style`` table to ``path``; returns the text written."""
    if fmt != "csv":
        raise ReportError(f"unsupported report format {fmt!r}")
    text = render_report(results, style)
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return text
