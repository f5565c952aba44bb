"""``skilldecomp`` command line.

Subcommands: ingest, fit, residuals, counterfactual, pairing, compare,
simulate, report.  Every run writes its files plus ``manifest.json`` (config
snapshot, input and output digests, seed, versions) under ``--out``.
Failures print one ``E_CODE: message`` line on stderr and exit nonzero.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import re
import sys
from datetime import datetime, timezone

import numpy as np
import pandas as pd
import scipy

from . import __version__
from . import config as cfgmod
from .compare import AltModelKind, bootstrap_compare
from .counterfactual import counterfactual_rows, luck_transplant, mean_residual_by_round
from .data import calendar_year, filter_eligible, ingest_scores, write_scores
from .effects import EffectsOptions, fit_full_model
from .errors import InputFileError, SkillDecompError
from .interactions import run_test_suite
from .reports import emit_report
from .residuals import ljung_box, proportion_negative, theta_sd
from .spline import SplineOptions, diagnostics, dump_fits
from .synth import GeneratorConfig, generate, write_truth

log = logging.getLogger("skilldecomp")

SUBCOMMANDS = ("ingest", "fit", "residuals", "counterfactual", "pairing", "compare", "simulate", "report")
_FLOAT = "%.17g"


class UsageError(SkillDecompError):
    code = "E_USAGE"
    module = "cli"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class _Run:
    """Collects outputs and writes the manifest."""

    def __init__(self, out_dir, subcommand, seed, settings):
        self.out = out_dir
        self.subcommand = subcommand
        self.seed = seed
        self.settings = settings
        self.inputs = {}
        self.outputs = []
        self.started = datetime.now(timezone.utc).isoformat(timespec="seconds")
        os.makedirs(out_dir, exist_ok=True)

    def path(self, name):
        self.outputs.append(name)
        return os.path.join(self.out, name)

    def add_input(self, path):
        self.inputs[os.path.basename(path)] = _digest(path)

    def write_csv(self, df, name):
        df.to_csv(self.path(name), index=False, float_format=_FLOAT, lineterminator="\n")

    def finish(self):
        versions = {"python": platform.python_version(), "numpy": np.__version__,
                    "scipy": scipy.__version__, "pandas": pd.__version__}
        versions["skilldecomp"] = __version__
        manifest = {
            "subcommand": self.subcommand,
            "seed": self.seed,
            "config": self.settings,
            "inputs": self.inputs,
            "outputs": {n: _digest(os.path.join(self.out, n)) for n in sorted(set(self.outputs))},
            "versions": versions,
            "started_at": self.started,
            "finished_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }
        with open(os.path.join(self.out, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")


def build_parser() -> argparse.ArgumentParser:
    def globals_(parser, default):
        parser.add_argument("--config", default=default,
                            help="config file, or the name of a bundled config (e.g. desk)")
        parser.add_argument("--out", default=default,
                            help="output directory (default $SKILLDECOMP_OUT or ./skilldecomp-out)")
        parser.add_argument("--seed", type=int, default=default, help="random seed")
        parser.add_argument("--threads", type=int, default=default, help="worker threads")
        parser.add_argument("-v", "--verbose", action="store_true", default=default)

    # global flags are accepted before or after the subcommand
    common = _Parser(add_help=False)
    globals_(common, argparse.SUPPRESS)
    top = _Parser(add_help=False)
    globals_(top, None)

    p = _Parser(prog="skilldecomp", description="Skill and luck decomposition of round-by-round scores.",
                parents=[top])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def scores_args(sp, need_input=True):
        sp.add_argument("--input", required=need_input, help="score CSV")
        sp.add_argument("--min-scores", type=int, help="keep players with more than this many scores (90)")
        sp.add_argument("--skip-bad-rows", action="store_true", default=None)

    def fitted_args(sp):
        scores_args(sp, need_input=False)
        sp.add_argument("--fit-dir", help="output directory of an earlier 'fit' run")

    sp = sub.add_parser("ingest", parents=[common], help="validate and filter a score file")
    scores_args(sp)

    sp = sub.add_parser("fit", parents=[common], help="fit skill curves and course effects")
    scores_args(sp)
    sp.add_argument("--tol", type=float)
    sp.add_argument("--max-iter", type=int)
    sp.add_argument("--freeze-effects", action="store_true", default=None)
    sp.add_argument("--phi-mode", choices=["per_player", "pooled"])

    sp = sub.add_parser("residuals", parents=[common], help="per-round theta/lambda/eta")
    fitted_args(sp)
    sp.add_argument("--max-lag", type=int, default=10)

    sp = sub.add_parser("counterfactual", parents=[common], help="placements if a player played to norm")
    fitted_args(sp)
    sp.add_argument("--player")
    sp.add_argument("--events", help="regular expression selecting tournament ids")
    sp.add_argument("--donor", action="append", help="tournament whose luck to transplant (repeatable)")

    sp = sub.add_parser("pairing", parents=[common], help="focal-player interaction regressions")
    fitted_args(sp)
    sp.add_argument("--focal")
    sp.add_argument("--suite", choices=["table3", "table4"])
    sp.add_argument("--adjust-prior-rounds", action="store_true", default=None)
    sp.add_argument("--final-group-size", type=int, choices=[2, 3])
    sp.add_argument("--robust", action="store_true", default=None)

    sp = sub.add_parser("compare", parents=[common], help="bootstrap spline vs simpler model")
    fitted_args(sp)
    sp.add_argument("--player")
    sp.add_argument("--kind", choices=[k.value for k in AltModelKind] + [k.name for k in AltModelKind])
    sp.add_argument("--n-boot", type=int)

    sp = sub.add_parser("simulate", parents=[common], help="generate a synthetic panel with truth")

    sp = sub.add_parser("report", parents=[common], help="write table-style reports")
    fitted_args(sp)
    sp.add_argument("--player", action="append")
    sp.add_argument("--style", action="append", choices=["table1", "table3", "table4", "table6"])
    return p


def _pick(flag, section, key, default=None):
    if flag is not None:
        return flag
    if key in section:
        return section[key]
    return default


def _out_dir(args):
    return args.out or os.environ.get("SKILLDECOMP_OUT") or "skilldecomp-out"


def _load_scores(args, cfg, run):
    data = cfg.get("data", {})
    skip = bool(_pick(args.skip_bad_rows, data, "skip_bad_rows", False))
    df = ingest_scores(args.input, skip_bad_rows=skip)
    run.add_input(args.input)
    min_scores = int(_pick(args.min_scores, data, "min_scores", 90))
    df, dropped = filter_eligible(df, min_scores)
    if df.empty:
        raise SkillDecompError(f"no player has more than {min_scores} scores", module="score-data")
    run.settings.update(min_scores=min_scores, skip_bad_rows=skip)
    return df, dropped


def _effects_options(args, cfg):
    f = cfg.get("fit", {})
    spline = SplineOptions(max_knots=int(f.get("max_knots", 200)))
    return EffectsOptions(
        tol=float(_pick(getattr(args, "tol", None), f, "tol", 1e-4)),
        max_iter=int(_pick(getattr(args, "max_iter", None), f, "max_iter", 50)),
        freeze_effects=bool(_pick(getattr(args, "freeze_effects", None), f, "freeze_effects", False)),
        phi_mode=str(_pick(getattr(args, "phi_mode", None), f, "phi_mode", "per_player")),
        variance_method=str(f.get("variance_method", "moments")),
        spacing=str(f.get("spacing", "rank")),
        reset_chain_at_tournament=bool(f.get("reset_chain_at_tournament", False)),
        min_key_obs=int(f.get("min_key_obs", 2)),
        spline=spline,
        threads=max(1, int(args.threads)),
    )


def _read_records(path):
    df = pd.read_csv(path, dtype={"player_id": str, "tournament_id": str, "course_id": str, "group": str},
                     keep_default_na=False, na_values={"scheduled_rounds": [""]})
    if "group" in df:
        df["group"] = df["group"].where(df["group"] != "", None)
    if "scheduled_rounds" in df:
        df["scheduled_rounds"] = df["scheduled_rounds"].astype("Int64")
    return df


def _records(args, cfg, run):
    """Fitted per-round records, from --fit-dir or by fitting --input."""
    if getattr(args, "fit_dir", None):
        path = os.path.join(args.fit_dir, "records.csv")
        if not os.path.isfile(path):
            raise InputFileError(path)
        run.add_input(path)
        return _read_records(path)
    if not args.input:
        raise UsageError("give --input or --fit-dir")
    df, _ = _load_scores(args, cfg, run)
    return fit_full_model(df, _effects_options(args, cfg)).records


def _records_frame(records):
    out = records.copy()
    if "group" in out:
        out["group"] = out["group"].fillna("")
    return out


def cmd_ingest(args, cfg, run):
    df, dropped = _load_scores(args, cfg, run)
    write_scores(df, run.path("scores.csv"))
    run.write_csv(pd.DataFrame(sorted(dropped.items()), columns=["player_id", "n_scores"]), "dropped.csv")


def cmd_fit(args, cfg, run):
    df, dropped = _load_scores(args, cfg, run)
    opts = _effects_options(args, cfg)
    run.settings.update(fit={k: v for k, v in vars(opts).items() if k != "spline"})
    res = fit_full_model(df, opts)
    run.write_csv(_records_frame(res.records), "records.csv")
    rc = pd.DataFrame([(k.tournament_id, k.round, k.course_id, v)
                       for k, v in res.effects.round_course_effects.items()],
                      columns=["tournament_id", "round", "course_id", "effect"])
    run.write_csv(rc, "round_course_effects.csv")
    pc = pd.DataFrame([(p, c, v) for (p, c), v in res.effects.player_course_effects.items()],
                      columns=["player_id", "course_id", "effect"])
    run.write_csv(pc, "player_course_effects.csv")
    fits = [res.fits[p] for p in sorted(res.fits)]
    dump_fits(fits, run.path("fits.txt"))
    rec = res.records
    rows = []
    for f in fits:
        adj = rec.loc[rec["player_id"] == f.player_id]
        y = (adj["score"] - adj["rc_effect"] - adj["pc_effect"]).to_numpy(float)
        try:
            dg = diagnostics(f, y)
            r2, sd, lin = dg.pseudo_r2, dg.residual_sd, dg.linear_flag
        except SkillDecompError:
            r2, sd, lin = float("nan"), 0.0, f.linear_flag
        rows.append((f.player_id, len(y), f.phi, f.log_smoothing_parameter, f.effective_df, lin, r2, sd))
    run.write_csv(pd.DataFrame(rows, columns=["player_id", "n", "phi", "log10_smoothing", "effective_df",
                                              "linear", "pseudo_r2", "residual_sd"]), "fit_summary.csv")
    e = res.effects
    summary = {
        "var_round_course": e.var_round_course,
        "var_player_course": e.var_player_course,
        "var_residual": e.var_residual,
        "n_iterations": e.n_iterations,
        "converged": e.converged,
        "model_pseudo_r2": res.model_pseudo_r2,
        "n_records": int(len(rec)),
        "n_players": len(fits),
        "n_dropped_players": len(dropped),
        "warnings": list(e.warnings),
    }
    with open(run.path("model.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_residuals(args, cfg, run):
    rec = _records(args, cfg, run)
    out = rec[["player_id", "theta", "lambda", "eta"]].copy()
    out.insert(1, "seq", rec.groupby("player_id").cumcount() + 1)
    run.write_csv(out, "residuals.csv")
    rows = []
    for pid, g in rec.groupby("player_id", sort=True):
        th = g["theta"].to_numpy(float)
        eta = g["eta"].to_numpy(float)
        q = p = float("nan")
        if eta.size > args.max_lag and np.ptp(eta) > 0:
            lb = ljung_box(eta, args.max_lag)
            q, p = lb.statistic, lb.p_value
        rows.append((pid, th.size, theta_sd(th) if th.size > 1 else float("nan"),
                     proportion_negative(th), q, p))
    run.write_csv(pd.DataFrame(rows, columns=["player_id", "n", "theta_sd", "proportion_negative",
                                              "ljung_box_q", "ljung_box_p"]), "residual_tests.csv")


def _event_filter(pattern):
    if not pattern:
        return None
    rx = re.compile(str(pattern))
    return lambda tid: bool(rx.search(tid))


def _table5_rows(rec, player, events, donors):
    rows_all = counterfactual_rows(rec, player)
    by_tid = {r.tournament_id: r for r in rows_all}
    donor_luck = {}
    for d in donors:
        if d not in by_tid:
            raise SkillDecompError(f"{player} did not complete donor event {d}", module="counterfactual")
        donor_luck[d] = by_tid[d].theta_total
    mine = rec[rec["player_id"] == player]
    order = list(dict.fromkeys(mine.sort_values(["calendar_index", "round"], kind="mergesort")["tournament_id"]))
    out = []
    for tid in order:
        if events is not None and not events(tid):
            continue
        r = by_tid.get(tid)
        if r is None:
            ev = rec[rec["tournament_id"] == tid]
            n_rounds = int(ev["round"].max())
            tot = ev.groupby("player_id")["score"].agg(["size", "sum"])
            win = float(tot.loc[tot["size"] == n_rounds, "sum"].min())
            out.append({"tournament_id": tid, "winning": win, "actual": None, "expected": None,
                        "residual": None, "transplants": {d: None for d in donors}})
            continue
        tr = {d: luck_transplant(r.expected_score, donor_luck[d], r.winning_score, tournament_id=tid)
              for d in donors}
        out.append({"tournament_id": tid, "winning": r.winning_score, "actual": r.actual_score,
                    "expected": r.expected_score, "residual": r.theta_total, "transplants": tr})
    return out


def cmd_counterfactual(args, cfg, run):
    c = cfg.get("counterfactual", {})
    player = _pick(args.player, c, "player")
    if player is None:
        raise UsageError("counterfactual needs --player")
    player = str(player)
    pattern = _pick(args.events, c, "events")
    donors = args.donor or c.get("donors") or []
    if isinstance(donors, str):
        donors = [d.strip() for d in donors.split(",") if d.strip()]
    run.settings.update(player=player, events=pattern, donors=list(donors))
    rec = _records(args, cfg, run)
    events = _event_filter(pattern)
    rows = [r for r in counterfactual_rows(rec, player) if events is None or events(r.tournament_id)]
    emit_report(rows, "table1", run.path("table1.csv"))
    if donors:
        emit_report(_table5_rows(rec, player, events, list(donors)), "table5", run.path("table5.csv"))


def cmd_pairing(args, cfg, run):
    c = cfg.get("pairing", {})
    focal = _pick(args.focal, c, "focal")
    if focal is None:
        raise UsageError("pairing needs --focal")
    suite = str(_pick(args.suite, c, "suite", "table3"))
    adjust = bool(_pick(args.adjust_prior_rounds, c, "adjust_prior_rounds", False))
    size = int(_pick(args.final_group_size, c, "final_group_size", 2))
    robust = bool(_pick(args.robust, c, "robust", False))
    run.settings.update(focal=str(focal), suite=suite, adjust_prior_rounds=adjust, final_group_size=size,
                        robust=robust)
    rec = _records(args, cfg, run)
    res = run_test_suite(rec, str(focal), suite, final_group_size=size, adjust_prior_rounds=adjust,
                         robust=robust, on_degenerate="skip")
    emit_report(res, suite, run.path(f"{suite}.csv"))


def cmd_compare(args, cfg, run):
    c = cfg.get("compare", {})
    player = _pick(args.player, c, "player")
    if player is None:
        raise UsageError("compare needs --player")
    kind = AltModelKind.parse(_pick(args.kind, c, "kind", "constant"))
    n_boot = int(_pick(args.n_boot, c, "n_boot", 200))
    statistic = str(c.get("statistic", "mse"))
    seed = 0 if args.seed is None else args.seed
    run.seed = seed
    run.settings.update(player=str(player), kind=kind.value, n_boot=n_boot, statistic=statistic)
    rec = _records(args, cfg, run)
    g = rec[rec["player_id"] == str(player)]
    if g.empty:
        raise SkillDecompError(f"player {player} not in records", module="model-compare")
    y = (g["score"] - g["rc_effect"] - g["pc_effect"]).to_numpy(float)
    years = calendar_year(g["calendar_index"].to_numpy()) if kind is AltModelKind.YearMeans else None
    res = bootstrap_compare(g["time"].to_numpy(float), y, kind, n_boot, seed, years=years,
                            statistic=statistic, threads=max(1, args.threads))
    run.write_csv(pd.DataFrame([{
        "player_id": str(player), "kind": kind.name, "observed_stat": res.observed_stat,
        "p_value": res.p_value, "n_boot": res.n_boot, "n_dropped": res.n_dropped,
    }]), "compare.csv")


def cmd_simulate(args, cfg, run):
    values = dict(cfg.get("simulate", {}))
    if args.seed is not None:
        values["seed"] = args.seed
    gc = GeneratorConfig.from_mapping(values)
    run.seed = gc.seed
    run.settings.update(simulate=gc.to_dict())
    data, truth = generate(gc)
    write_scores(data, run.path("scores.csv"))
    write_truth(truth, run.path("truth.csv"))


def cmd_report(args, cfg, run):
    c = cfg.get("report", {})
    players = args.player or c.get("player")
    if players is None:
        raise UsageError("report needs --player")
    if isinstance(players, str):
        players = [p.strip() for p in players.split(",") if p.strip()]
    players = [str(p) for p in players]
    styles = args.style or c.get("styles") or ["table1", "table6"]
    if isinstance(styles, str):
        styles = [s.strip() for s in styles.split(",") if s.strip()]
    majors = c.get("majors", "-major")
    focal = str(c.get("focal", players[0]))
    run.settings.update(players=players, styles=list(styles), majors=majors, focal=focal)
    rec = _records(args, cfg, run)
    for style in styles:
        if style == "table1":
            for p in players:
                name = "table1.csv" if len(players) == 1 else f"table1_{p}.csv"
                emit_report(counterfactual_rows(rec, p), "table1", run.path(name))
        elif style == "table6":
            sel = _event_filter(majors)
            sub = rec[rec["tournament_id"].map(sel)] if sel is not None else rec
            summaries = {}
            for p in players:
                g = sub[sub["player_id"] == p]
                if not g.empty:
                    summaries[p] = mean_residual_by_round(g["theta"].to_numpy(float), g["round"].to_numpy())
            emit_report(summaries, "table6", run.path("table6.csv"))
        elif style in ("table3", "table4"):
            res = run_test_suite(rec, focal, style, on_degenerate="skip")
            emit_report(res, style, run.path(f"{style}.csv"))
        else:
            raise UsageError(f"report cannot build style {style}")


_COMMANDS = {
    "ingest": cmd_ingest,
    "fit": cmd_fit,
    "residuals": cmd_residuals,
    "counterfactual": cmd_counterfactual,
    "pairing": cmd_pairing,
    "compare": cmd_compare,
    "simulate": cmd_simulate,
    "report": cmd_report,
}


def _error_line(exc):
    if isinstance(exc, InputFileError):
        return f"{exc.code}: {exc}"
    if isinstance(exc, SkillDecompError):
        return f"{exc.code}: [{exc.module}] {exc}"
    if isinstance(exc, (OSError,)):
        return f"E_IO: {exc}"
    return f"E_INTERNAL: {type(exc).__name__}: {exc}"


def run_pipeline(config, subcommand, flags=()) -> int:
    """Programmatic entry: ``run_pipeline("desk", "simulate", ["--out", "d"])``."""
    argv = [subcommand] + list(flags)
    if config is not None:
        argv += ["--config", str(config)]
    return main(argv)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        parser = build_parser()
        if argv and not argv[0].startswith("-") and argv[0] not in SUBCOMMANDS:
            raise UsageError(f"unknown subcommand {argv[0]!r}")
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("missing subcommand")
        if args.threads is None:
            args.threads = 1
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        cfg = cfgmod.load_config(args.config)
        run = _Run(_out_dir(args), args.command, args.seed, {"config_file": args.config})
        if args.config and os.path.isfile(args.config):
            run.add_input(args.config)
        _COMMANDS[args.command](args, cfg, run)
        run.finish()
        return 0
    except UsageError as exc:
        print(_error_line(exc), file=sys.stderr)
        return 2
    except (SkillDecompError, OSError) as exc:
        print(_error_line(exc), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
