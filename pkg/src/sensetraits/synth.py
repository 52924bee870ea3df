"""Synthetic cohorts with planted trait-behaviour effects.

Every user gets integer trait scores and a questionnaire that scores back to
them exactly. Each day, the drawable metrics (base activity durations, device
metrics, wake and sleep-onset hours) are drawn as

    base + user offset + sum(beta * (trait - 30)) + day noise

and then laid out as one event per activity:

    walking starts at the wake hour, then running, cycling and stationary
    follow with 30 min gaps, and the automotive event ends at the sleep-onset
    hour, so the night gap between it and the next morning's walk is the
    longest uncovered stretch of the night window.

The generator keeps its own record of what every daily metric should be
(``UserSim.intended``), computed from the written, rounded values.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from datetime import date, datetime, time, timedelta, timezone
from pathlib import Path
from typing import Sequence
from zoneinfo import ZoneInfo

import numpy as np

from .featurize import CONTEXTS, DayContext
from .ingest import (ActivityEvent, ActivityKind, BfiResponse, CohortDataset, DailyMetrics,
                     write_bfi, write_daily_metrics, write_events)
from .seeding import derive_seed
from .targets import TRAITS, ScoringKey, TraitScores, default_key, score_bfi

CENTER = 30.0
GAP_S = 1800
WAKE_RANGE = (6.0, 9.5)
ASLEEP_RANGE = (22.5, 24.5)  # hours from the start of the evening's day
MIN_WALK_S = 900
MIN_AUTO_S = 60
MAX_MOVE_S = {"walking": 3 * 3600, "running": 2 * 3600, "cycling": 3 * 3600, "automotive": 3 * 3600}

# metrics the generator draws directly; all other catalog metrics follow from these
DRAWABLE = {
    "stationary_duration", "walking_duration", "running_duration", "cycling_duration",
    "automotive_duration", "distance_travelled", "floors_ascended", "floors_descended",
    "accumulated_steps", "longest_untouched", "wake_hour", "asleep_hour",
}


@dataclass(frozen=True)
class PlantedEffect:
    trait: str
    metric: str
    context: str  # weekday | weekend | overall (days on which the shift applies)
    beta: float  # metric units per trait point
    sigma: float = 0.0  # extra per-day noise sd

    def __post_init__(self):
        if self.trait not in TRAITS:
            raise ValueError(f"unknown trait {self.trait}")
        if self.metric not in DRAWABLE:
            raise ValueError(f"metric {self.metric} cannot carry a planted effect "
                             f"(drawable: {sorted(DRAWABLE)})")
        if self.context not in CONTEXTS:
            raise ValueError(f"unknown context {self.context}")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")

    @property
    def feature(self) -> str:
        return f"{self.metric}_{self.context}"


@dataclass(frozen=True)
class BaseRate:
    mean: float
    user_sd: float  # between-user spread (trait-unrelated)
    day_sd: float


DEFAULT_BASE = {
    "stationary_duration": BaseRate(30000, 2000, 4000),
    "walking_duration": BaseRate(3600, 900, 1200),
    "running_duration": BaseRate(900, 400, 600),
    "cycling_duration": BaseRate(1200, 400, 800),
    "automotive_duration": BaseRate(1800, 600, 900),
    "distance_travelled": BaseRate(4000, 800, 1200),
    "floors_ascended": BaseRate(8, 3, 4),
    "floors_descended": BaseRate(8, 3, 4),
    "accumulated_steps": BaseRate(6500, 1500, 2000),
    "longest_untouched": BaseRate(25000, 2500, 4000),
    "wake_hour": BaseRate(7.5, 0.35, 0.6),
    "asleep_hour": BaseRate(23.6, 0.3, 0.4),
}

# mirrors the directions discussed for the published importance table
DEFAULT_EFFECTS = (
    PlantedEffect("EXT", "stationary_duration", "weekday", -300.0),
    PlantedEffect("AGR", "floors_ascended", "weekend", 0.5),
    PlantedEffect("CON", "wake_hour", "weekday", -0.05),
    PlantedEffect("NEU", "floors_descended", "weekday", 0.5),
    PlantedEffect("OPE", "cycling_duration", "weekend", 60.0),
)

DEFAULT_TRAIT_MEANS = {"EXT": 32.0, "AGR": 43.74, "CON": 35.0, "NEU": 21.27, "OPE": 41.51}
NOISE_LEVELS = {"none": 0.0, "low": 0.35, "medium": 1.0, "high": 1.6}


@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 144
    n_days: int = 60
    start_date: date = date(2021, 3, 1)
    tz: str = "Europe/London"
    trait_means: dict = field(default_factory=lambda: dict(DEFAULT_TRAIT_MEANS))
    trait_sds: dict = field(default_factory=lambda: {t: 6.0 for t in TRAITS})
    effects: tuple = DEFAULT_EFFECTS
    base: dict = field(default_factory=lambda: dict(DEFAULT_BASE))
    noise: float = NOISE_LEVELS["medium"]  # multiplies every user_sd and day_sd
    seed: int = 0

    def __post_init__(self):
        if self.n_users < 10:
            raise ValueError("n_users must be >= 10")
        if self.n_days < 14:
            raise ValueError("n_days must be >= 14 to cover weekdays and weekends")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        missing = DRAWABLE - set(self.base)
        if missing:
            raise ValueError(f"base rates missing for {sorted(missing)}")

    @classmethod
    def preset(cls, noise: str = "medium", seed: int = 0, **kw) -> "SynthConfig":
        return cls(noise=NOISE_LEVELS[noise], seed=seed, **kw)

    def null(self) -> "SynthConfig":
        """Same config with every planted coefficient set to 0."""
        return replace(self, effects=tuple(replace(e, beta=0.0) for e in self.effects))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["start_date"] = self.start_date.isoformat()
        d["effects"] = [asdict(e) for e in self.effects]
        d["base"] = {k: asdict(v) for k, v in self.base.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        if "start_date" in d:
            d["start_date"] = date.fromisoformat(str(d["start_date"]))
        if "effects" in d:
            d["effects"] = tuple(PlantedEffect(**e) for e in d["effects"])
        if "base" in d:
            d["base"] = {k: BaseRate(**v) for k, v in d["base"].items()}
        if isinstance(d.get("noise"), str):
            d["noise"] = NOISE_LEVELS[d["noise"]]
        return cls(**d)


@dataclass
class UserSim:
    user_id: str
    scores: TraitScores
    response: BfiResponse
    events: list[ActivityEvent]
    metrics: list[DailyMetrics]
    intended: dict[date, dict[str, float | None]]


@dataclass
class SynthCohort:
    cohort: CohortDataset
    truth: list[TraitScores]
    manifest: dict
    users: list[UserSim]

    def write(self, out_dir) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"events": out / "events.csv", "metrics": out / "daily_metrics.csv",
                 "bfi": out / "bfi.csv", "manifest": out / "manifest.json"}
        with open(paths["events"], "w", newline="") as fh:
            write_events(self.cohort.events, fh)
        with open(paths["metrics"], "w", newline="") as fh:
            write_daily_metrics(self.cohort.metrics, fh)
        with open(paths["bfi"], "w", newline="") as fh:
            write_bfi(self.cohort.responses, fh)
        with open(paths["manifest"], "w") as fh:
            json.dump(self.manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return paths


def items_for_scores(scores: dict[str, int], key: ScoringKey, rng: np.random.Generator) -> tuple[int, ...]:
    """Questionnaire answers that score exactly to ``scores`` under ``key``."""
    items = [0] * len(key.traits)
    for t in TRAITS:
        idx = [i for i, kt in enumerate(key.traits) if kt == t]
        s = int(scores[t])
        if not len(idx) <= s <= 5 * len(idx):
            raise ValueError(f"score {s} for {t} not reachable with {len(idx)} items")
        base, extra = divmod(s - len(idx), len(idx))
        contrib = [1 + base] * len(idx)
        for j in rng.permutation(len(idx))[:extra]:
            contrib[j] += 1
        for i, c in zip(idx, contrib):
            items[i] = c if key.polarity[i] > 0 else 6 - c
    return tuple(items)


def _draw_scores(config: SynthConfig, rng: np.random.Generator) -> dict[str, int]:
    return {t: int(np.clip(round(rng.normal(config.trait_means[t], config.trait_sds[t])), 10, 50))
            for t in TRAITS}


def _local_ts(day: date, hours: float, zone: ZoneInfo) -> datetime:
    naive = datetime.combine(day, time(0)) + timedelta(seconds=round(hours * 3600))
    utc = naive.replace(tzinfo=zone).astimezone(timezone.utc)
    return utc.replace(microsecond=0)


def _clock(ts: datetime, zone: ZoneInfo) -> float:
    t = ts.astimezone(zone)
    return t.hour + t.minute / 60 + t.second / 3600


def simulate_user(config: SynthConfig, index: int, key: ScoringKey) -> UserSim:
    rng = np.random.default_rng(derive_seed(config.seed, index))
    zone = ZoneInfo(config.tz)
    uid = f"u{index:03d}"
    scores = _draw_scores(config, rng)
    response = BfiResponse(uid, items_for_scores(scores, key, rng))
    offsets = {m: rng.normal(0.0, b.user_sd * config.noise) for m, b in sorted(config.base.items())}

    days = [config.start_date + timedelta(days=i) for i in range(config.n_days)]
    draws: list[dict[str, float]] = []
    for day in days:
        v = {}
        for m in sorted(config.base):
            b = config.base[m]
            x = b.mean + offsets[m] + rng.normal(0.0, b.day_sd * config.noise)
            for e in config.effects:
                if e.metric == m and DayContext(e.context).includes(day):
                    x += e.beta * (scores[e.trait] - CENTER)
                    if e.sigma > 0:
                        x += rng.normal(0.0, e.sigma)
            v[m] = x
        draws.append(v)

    events: list[ActivityEvent] = []
    metrics: list[DailyMetrics] = []
    realized = []
    for day, v in zip(days, draws):
        wake = float(np.clip(v["wake_hour"], *WAKE_RANGE))
        asleep = float(np.clip(v["asleep_hour"], *ASLEEP_RANGE))
        dur = {
            "walking": min(max(round(v["walking_duration"]), MIN_WALK_S), MAX_MOVE_S["walking"]),
            "running": min(max(round(v["running_duration"]), 0), MAX_MOVE_S["running"]),
            "cycling": min(max(round(v["cycling_duration"]), 0), MAX_MOVE_S["cycling"]),
            "automotive": min(max(round(v["automotive_duration"]), MIN_AUTO_S), MAX_MOVE_S["automotive"]),
        }
        # the evening drive must start before midnight to stay on this day
        dur["automotive"] = max(dur["automotive"], round((asleep - 24.0) * 3600) + 600)

        day_events = []
        t = _local_ts(day, wake, zone)
        for kind in ("walking", "running", "cycling"):
            if dur[kind] > 0:
                day_events.append(ActivityEvent(uid, ActivityKind(kind), t, float(dur[kind])))
                t = t + timedelta(seconds=dur[kind] + GAP_S)
        auto_end = _local_ts(day, asleep, zone)
        auto_start = auto_end - timedelta(seconds=dur["automotive"])
        room = int((auto_start - t).total_seconds()) - GAP_S
        stationary = int(min(max(round(v["stationary_duration"]), 0), max(room, 0)))
        if stationary > 0:
            day_events.append(ActivityEvent(uid, ActivityKind.STATIONARY, t, float(stationary)))
        day_events.append(ActivityEvent(uid, ActivityKind.AUTOMOTIVE, auto_start, float(dur["automotive"])))
        dur["stationary"] = stationary
        events.extend(day_events)

        distance = round(max(v["distance_travelled"], 0.0), 1)
        m = DailyMetrics(uid, day, distance,
                         int(max(round(v["floors_ascended"]), 0)),
                         int(max(round(v["floors_descended"]), 0)),
                         int(max(round(v["accumulated_steps"]), 0)),
                         float(min(max(round(v["longest_untouched"]), 0), 86400)))
        metrics.append(m)
        realized.append((day, dur, day_events, auto_end, m))

    intended = {}
    prev_end = None
    for day, dur, day_events, auto_end, m in realized:
        wake_ts = day_events[0].start
        if prev_end is None:
            night_start = datetime.combine(day - timedelta(days=1), time(22)).replace(tzinfo=zone)
            sleep_start = night_start.astimezone(timezone.utc)
        else:
            sleep_start = prev_end
        intended[day] = _intended_day(dur, day_events, m, sleep_start, wake_ts, zone)
        prev_end = auto_end
    return UserSim(uid, TraitScores(uid, scores), response, events, metrics, intended)


def _intended_day(dur, day_events, m: DailyMetrics, sleep_start, wake_ts, zone) -> dict[str, float | None]:
    counts = {k: 0 for k in ("stationary", "walking", "running", "cycling", "automotive")}
    for e in day_events:
        counts[e.kind.value] += 1
    out: dict[str, float | None] = {}
    for k in counts:
        out[f"{k}_duration"] = float(dur[k])
        out[f"{k}_count"] = float(counts[k])
    out["physical_duration"] = float(dur["running"] + dur["cycling"])
    out["nonphysical_duration"] = float(dur["stationary"] + dur["walking"] + dur["automotive"])
    out["physical_count"] = float(counts["running"] + counts["cycling"])
    out["nonphysical_count"] = float(counts["stationary"] + counts["walking"] + counts["automotive"])
    out["distance_travelled"] = m.distance_m
    out["floors_ascended"] = float(m.floors_ascended)
    out["floors_descended"] = float(m.floors_descended)
    out["accumulated_steps"] = float(m.steps)
    out["longest_untouched"] = m.longest_untouched_s
    out["total_event_count"] = float(len(day_events))
    moving = dur["walking"] + dur["running"] + dur["cycling"]
    non_stat = moving + dur["automotive"]
    total = non_stat + dur["stationary"]
    out["active_pace"] = m.distance_m / moving if moving else 0.0
    out["cycling_duration_pct"] = dur["cycling"] / non_stat if non_stat else 0.0
    out["physical_duration_pct"] = (dur["running"] + dur["cycling"]) / non_stat if non_stat else 0.0
    out["walking_duration_pct"] = dur["walking"] / non_stat if non_stat else 0.0
    out["stationary_duration_pct"] = dur["stationary"] / total if total else 0.0
    out["sleep_duration"] = (wake_ts - sleep_start).total_seconds() / 3600
    asleep = _clock(sleep_start, zone)
    out["asleep_hour"] = asleep - 24.0 if asleep >= 12 else asleep
    out["wake_hour"] = _clock(wake_ts, zone)
    return out


def gen_cohort(config: SynthConfig, key: ScoringKey | None = None) -> SynthCohort:
    """Simulate ``config.n_users`` users; deterministic in ``config.seed``."""
    key = key or default_key()
    sims = [simulate_user(config, i, key) for i in range(config.n_users)]
    events = [e for s in sims for e in s.events]
    metrics = [m for s in sims for m in s.metrics]
    responses = [s.response for s in sims]
    users = [s.user_id for s in sims]
    cohort = CohortDataset(events, metrics, responses, users, config.tz)
    truth = [s.scores for s in sims]
    manifest = {
        "seed": config.seed,
        "config": config.to_dict(),
        "effects": [asdict(e) | {"feature": e.feature} for e in config.effects],
        "scores": {s.user_id: s.scores.scores for s in sims},
    }
    return SynthCohort(cohort, truth, manifest, sims)


def intended_features(sim: UserSim) -> dict[str, float]:
    """Per-context means of the generator's own daily values."""
    out = {}
    metrics = next(iter(sim.intended.values())).keys()
    for m in metrics:
        for ctx in DayContext:
            xs = [v[m] for d, v in sorted(sim.intended.items()) if ctx.includes(d) and v[m] is not None]
            out[f"{m}_{ctx.value}"] = math.fsum(xs) / len(xs) if xs else math.nan
    return out


@dataclass
class RoundtripResult:
    passed: bool
    mismatched: list[str]


def score_roundtrip_check(cohort: CohortDataset, key: ScoringKey | None,
                          truth: Sequence[TraitScores]) -> RoundtripResult:
    """Re-score the questionnaires and compare with the ground-truth scores."""
    if not cohort.responses:
        raise ValueError("empty cohort")
    key = key or default_key()
    expected = {t.user_id: t.scores for t in truth}
    bad = []
    for r in cohort.responses:
        if score_bfi(r, key).scores != expected.get(r.user_id):
            bad.append(r.user_id)
    return RoundtripResult(not bad, sorted(bad))
