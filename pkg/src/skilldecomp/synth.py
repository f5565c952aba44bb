"""Synthetic score panels with known truth.

Scores are generated as skill + round-course effect + player-course effect +
AR(1) luck, with pairings drawn the way a tour event is run: random groups for
the first two rounds, then groups by standing with the leaders in the last
group.  Optional injections shift the luck term of selected rounds so the
interaction tests have something to find.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np
import pandas as pd
from scipy.interpolate import CubicSpline

from .data import normalize
from .errors import ConfigError

__all__ = ["GeneratorConfig", "TruthSet", "generate", "desk_config"]

FAMILIES = ("constant", "linear", "quadratic", "u_shaped")
EPOCH_START = 10231  # 1998-01-05


@dataclass(frozen=True)
class GeneratorConfig:
    n_players: int = 50
    n_events: int = 40
    rounds_per_event: int = 4
    n_courses: int | None = None
    rotation_events: int = 0
    participation: float = 1.0
    focal_participation: float = 1.0
    focal_skill_offset: float = -1.0
    skill_family: str | tuple = "mixed"
    skill_level_mean: float = 71.0
    skill_level_sd: float = 0.8
    skill_change_sd: float = 1.0
    custom_knots: tuple = ()
    sigma_round_course: float = 1.5
    sigma_player_course: float = 0.03
    phi: float | tuple = 0.1
    sigma_eta: float = 2.5
    pairing_effect: float = 0.0
    pairing_rounds: tuple | None = None
    contention_effect: float = 0.0
    contention_margin: int = 4
    major_every: int = 10
    major_round_shift: tuple = ()  # ((round, strokes), ...) added to the focal player's luck in majors
    cut: bool = False
    cut_size: int = 70
    shortened_events: int = 0
    five_round_events: int = 0
    group_size_early: int = 3
    group_size_late: int = 2
    integer_scores: bool = True
    seed: int = 0

    def validate(self):
        if self.n_players < 2 or self.n_events < 1:
            raise ConfigError("need at least 2 players and 1 event")
        for name in ("sigma_round_course", "sigma_player_course", "sigma_eta", "skill_level_sd",
                     "skill_change_sd"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        phis = np.atleast_1d(np.asarray(self.phi, dtype=float))
        if np.any(np.abs(phis) >= 1):
            raise ConfigError("phi must lie in (-1, 1)")
        if phis.size not in (1, self.n_players):
            raise ConfigError("phi must be a scalar or one value per player")
        if self.rounds_per_event not in (3, 4, 5):
            raise ConfigError("rounds_per_event must be 3, 4 or 5")
        if not (0 < self.participation <= 1 and 0 < self.focal_participation <= 1):
            raise ConfigError("participation rates must be in (0, 1]")
        if self.group_size_early < 2 or self.group_size_late < 2:
            raise ConfigError("groups need at least 2 players")
        if self.shortened_events + self.five_round_events > self.n_events:
            raise ConfigError("more special events than events")
        if self.rotation_events > self.n_events:
            raise ConfigError("more rotation events than events")
        fam = self.skill_family
        fams = (fam,) if isinstance(fam, str) else tuple(fam)
        for f in fams:
            if f not in FAMILIES + ("mixed", "knots"):
                raise ConfigError(f"unknown skill family {f!r}")
        if "knots" in fams and len(self.custom_knots) < 2:
            raise ConfigError("skill family 'knots' needs custom_knots")
        return self

    @classmethod
    def from_mapping(cls, values: dict) -> "GeneratorConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for k, v in values.items():
            if k not in known:
                raise ConfigError(f"unknown simulate option {k!r}")
            kwargs[k] = v
        return cls(**kwargs).validate()

    def to_dict(self):
        return asdict(self)


def desk_config(seed: int = 0, **overrides) -> GeneratorConfig:
    """50 players x 40 events x 4 rounds with tour-like noise levels."""
    return GeneratorConfig(seed=seed, **overrides).validate()


@dataclass(frozen=True)
class TruthSet:
    records: pd.DataFrame
    round_course: dict
    player_course: dict
    phi: dict
    focal_player: str
    majors: tuple
    shortened: tuple
    five_round: tuple


def _curve(family, rng, cfg, knots):
    a = 0.0
    sd = cfg.skill_change_sd
    if family == "constant":
        return lambda u: np.full_like(u, a)
    if family == "linear":
        b = rng.normal(0.0, sd)
        return lambda u: a + b * (u - 0.5)
    if family == "quadratic":
        b = rng.normal(0.0, sd)
        q = rng.normal(0.0, 4.0 * sd)
        return lambda u: a + b * (u - 0.5) + q * ((u - 0.5) ** 2 - 1.0 / 12.0)
    if family == "u_shaped":
        q = rng.uniform(2.0, 6.0) * sd
        return lambda u: a + q * ((u - 0.5) ** 2 - 1.0 / 12.0)
    if family == "knots":
        x, y = zip(*knots)
        cs = CubicSpline(np.asarray(x, float), np.asarray(y, float), bc_type="natural")
        return lambda u: cs(u)
    raise ConfigError(f"unknown skill family {family!r}")


def _spread_indices(n_events, k, offset):
    if k <= 0:
        return set()
    return {int(i) for i in np.unique(np.linspace(offset, n_events - 1, k).round().astype(int))}


def generate(config: GeneratorConfig):
    """Draw a dataset and its truth. Deterministic for a given config."""
    cfg = config.validate()
    ss = np.random.SeedSequence(cfg.seed)
    r_skill, r_effects, r_pc, r_noise, r_pair, r_part = (np.random.default_rng(s) for s in ss.spawn(6))

    P, E = cfg.n_players, cfg.n_events
    pids = [f"P{i:03d}" for i in range(P)]
    focal = pids[0]
    phis = np.broadcast_to(np.asarray(cfg.phi, dtype=float), (P,)).copy()

    fam = cfg.skill_family
    if fam == "mixed":
        families = [FAMILIES[i % len(FAMILIES)] for i in range(P)]
    elif isinstance(fam, str):
        families = [fam] * P
    else:
        families = [fam[i % len(fam)] for i in range(P)]
    levels = cfg.skill_level_mean + cfg.skill_level_sd * r_skill.standard_normal(P)
    levels[0] += cfg.focal_skill_offset
    curves = [_curve(f, r_skill, cfg, cfg.custom_knots) for f in families]

    n_courses = cfg.n_courses or max(1, E // 4)
    rotation = _spread_indices(E, cfg.rotation_events, 1)
    majors = {e for e in range(E) if cfg.major_every and e % cfg.major_every == cfg.major_every - 1}
    specials = list(np.arange(2, E, max(1, E // max(1, cfg.shortened_events + cfg.five_round_events + 1))))
    shortened = set(int(e) for e in specials[: cfg.shortened_events])
    five = set(int(e) for e in specials[cfg.shortened_events : cfg.shortened_events + cfg.five_round_events])
    tids = [f"T{e:03d}" + ("-major" if e in majors else "") for e in range(E)]

    sched = [5 if e in five else cfg.rounds_per_event for e in range(E)]
    total_slots = sum(sched)
    slot_start = np.cumsum([0] + sched[:-1])
    noise = cfg.sigma_eta * r_noise.standard_normal((P, total_slots))
    shift = dict(cfg.major_round_shift)
    pairing_rounds = None if cfg.pairing_rounds is None else set(int(r) for r in cfg.pairing_rounds)

    course_ids = {}
    for e in range(E):
        if e in rotation:
            course_ids[e] = [f"C{e:03d}{x}" for x in "abc"]
        else:
            course_ids[e] = [f"C{e % n_courses:03d}"]
    all_courses = sorted({c for cs in course_ids.values() for c in cs})
    pc_draw = cfg.sigma_player_course * r_pc.standard_normal((P, len(all_courses)))
    pc_index = {c: j for j, c in enumerate(all_courses)}

    theta_prev = np.full(P, np.nan)
    rows = []
    rc_truth = {}
    for e in range(E):
        tid = tids[e]
        part = r_part.random(P)
        rate = np.full(P, cfg.participation)
        rate[0] = cfg.focal_participation
        field_ = np.flatnonzero(part < rate)
        if field_.size < 2:
            continue
        n_sched = sched[e]
        n_played = n_sched - 1 if e in shortened else n_sched
        totals = np.zeros(P)
        active = field_
        early_order = r_pair.permutation(field_)
        rot_group = {int(p): i % 3 for i, p in enumerate(r_pair.permutation(field_))}
        for k in range(1, n_played + 1):
            if cfg.cut and k == 3 and active.size > cfg.cut_size:
                ordered = active[np.argsort(totals[active], kind="stable")]
                line = totals[ordered[cfg.cut_size - 1]]
                active = np.sort(active[totals[active] <= line])
            courses = course_ids[e]
            if len(courses) > 1 and k <= 3:
                course_of = {int(p): courses[(rot_group[int(p)] + k - 1) % 3] for p in active}
            else:
                course_of = {int(p): courses[0] for p in active}
            if k <= 2:
                order = [p for p in early_order if p in set(active.tolist())]
                size = cfg.group_size_early
            else:
                tie = r_pair.random(P)
                order = sorted(active.tolist(), key=lambda p: (totals[p], tie[p]))
                size = cfg.group_size_late
            groups = {}
            by_course = {}
            for p in order:
                by_course.setdefault(course_of[int(p)], []).append(int(p))
            gi = 0
            for course in sorted(by_course):
                members = by_course[course]
                for j in range(0, len(members), size):
                    chunk = members[j : j + size]
                    if len(chunk) == 1 and j > 0:
                        gid = f"{tid}-R{k}-G{gi - 1:02d}"
                    else:
                        gid = f"{tid}-R{k}-G{gi:02d}"
                        gi += 1
                    for p in chunk:
                        groups[p] = gid
            focal_on = 0 in groups
            leader = min(totals[p] for p in active) if k > 1 else 0.0
            slot = slot_start[e] + k - 1
            day = EPOCH_START + 7 * e + (k - 1)
            u = slot / max(total_slots - 1, 1)
            for p in active:
                p = int(p)
                course = course_of[p]
                key = (tid, k, course)
                if key not in rc_truth:
                    rc_truth[key] = cfg.sigma_round_course * r_effects.standard_normal()
                rc = rc_truth[key]
                pc = pc_draw[p, pc_index[course]]
                skill = levels[p] + float(curves[p](np.array([u]))[0])
                paired = focal_on and p != 0 and groups[p] == groups[0]
                inj = 0.0
                if paired and (pairing_rounds is None or k in pairing_rounds):
                    inj += cfg.pairing_effect
                if k == n_sched and k > 1 and totals[p] - leader <= cfg.contention_margin:
                    inj += cfg.contention_effect
                if e in majors and p == 0:
                    inj += shift.get(k, 0.0)
                lam = 0.0 if np.isnan(theta_prev[p]) else phis[p] * theta_prev[p]
                first_scale = 1.0 / np.sqrt(1.0 - phis[p] ** 2) if np.isnan(theta_prev[p]) else 1.0
                theta = lam + first_scale * noise[p, slot] + inj
                raw = skill + rc + pc + theta
                score = float(np.round(raw)) if cfg.integer_scores else raw
                theta = score - skill - rc - pc
                theta_prev[p] = theta
                totals[p] += score
                rows.append((pids[p], tid, k, course, day, score, groups[p], n_sched,
                             skill, rc, pc, theta, lam, theta - lam, paired))
            active = np.asarray(sorted(int(p) for p in active))

    cols = ["player_id", "tournament_id", "round", "course_id", "calendar_index", "score", "group",
            "scheduled_rounds", "skill", "rc_effect", "pc_effect", "theta", "lambda", "eta",
            "paired_with_focal"]
    full = pd.DataFrame(rows, columns=cols)
    data = normalize(full[cols[:8]])
    truth = full.set_index(["player_id", "tournament_id", "round"]).loc[
        pd.MultiIndex.from_frame(data[["player_id", "tournament_id", "round"]])
    ].reset_index()
    truth = truth[["player_id", "tournament_id", "round", "skill", "rc_effect", "pc_effect", "theta",
                   "lambda", "eta", "paired_with_focal"]]
    pc_truth = {(pids[p], c): float(pc_draw[p, j]) for p in range(P) for c, j in pc_index.items()}
    return data, TruthSet(
        records=truth,
        round_course={k: float(v) for k, v in rc_truth.items()},
        player_course=pc_truth,
        phi={pids[i]: float(phis[i]) for i in range(P)},
        focal_player=focal,
        majors=tuple(tids[e] for e in sorted(majors)),
        shortened=tuple(tids[e] for e in sorted(shortened)),
        five_round=tuple(tids[e] for e in sorted(five)),
    )


def write_truth(truth: TruthSet, path) -> None:
    truth.records.to_csv(path, index=False, float_format="%.10g", lineterminator="\n")
