"""Per-user behavioural features from activity events and daily device metrics.

Pipeline: label each event Physical (running, cycling) or NonPhysical, sum
events into local-calendar-day summaries (with a sleep interval inferred
from the night before), then average every daily metric over weekdays,
weekend days and all days.
"""

from __future__ import annotations

import bisect
import enum
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import date, datetime, time, timedelta
from typing import IO, Iterable, Sequence
from zoneinfo import ZoneInfo

import numpy as np

from .ingest import ActivityEvent, ActivityKind, CohortDataset, DailyMetrics

log = logging.getLogger(__name__)

CATALOG_VERSION = "1"
DEFAULT_NIGHT = (22.0, 10.0)


class SyntheticKind(enum.Enum):
    PHYSICAL = "physical"
    NONPHYSICAL = "nonphysical"


class DayContext(enum.Enum):
    WEEKDAY = "weekday"
    WEEKEND = "weekend"
    OVERALL = "overall"

    def includes(self, day: date) -> bool:
        if self is DayContext.OVERALL:
            return True
        return (day.weekday() >= 5) == (self is DayContext.WEEKEND)


KINDS = [k.value for k in ActivityKind] + [s.value for s in SyntheticKind]

METRICS: list[str] = (
    [f"{k}_duration" for k in KINDS]
    + [f"{k}_count" for k in KINDS]
    + ["distance_travelled", "floors_ascended", "floors_descended", "accumulated_steps",
       "sleep_duration", "asleep_hour", "wake_hour", "longest_untouched", "total_event_count",
       "active_pace", "cycling_duration_pct", "physical_duration_pct",
       "stationary_duration_pct", "walking_duration_pct"]
)
CONTEXTS = [c.value for c in DayContext]
FEATURE_NAMES: list[str] = [f"{m}_{c}" for m in METRICS for c in CONTEXTS]

# display labels of the published importance table -> catalog metric
DISPLAY_LABELS = {
    "stationary duration": "stationary_duration",
    "walking duration": "walking_duration",
    "running duration": "running_duration",
    "cycling duration": "cycling_duration",
    "automotive duration": "automotive_duration",
    "physical activity duration": "physical_duration",
    "stationary count": "stationary_count",
    "walking count": "walking_count",
    "running count": "running_count",
    "cycling count": "cycling_count",
    "automotive count": "automotive_count",
    "physical activity count": "physical_count",
    "distance travelled": "distance_travelled",
    "floors ascended": "floors_ascended",
    "floors descended": "floors_descended",
    "accumulated steps": "accumulated_steps",
    "sleep duration": "sleep_duration",
    "hour of asleep": "asleep_hour",
    "hour of waking up": "wake_hour",
    "activity count for 24h": "total_event_count",
    "average active pace": "active_pace",
    "cycling duration pct": "cycling_duration_pct",
}


def normalize_label(label: str) -> str:
    """``"Hour of Waking Up weekday"`` -> ``"wake_hour_weekday"``."""
    words = label.strip().split()
    ctx = words[-1].lower()
    if ctx not in CONTEXTS:
        raise ValueError(f"label has no day context: {label!r}")
    metric = DISPLAY_LABELS.get(" ".join(words[:-1]).lower())
    if metric is None:
        raise ValueError(f"unknown feature label: {label!r}")
    return f"{metric}_{ctx}"


def synthetic_kind(kind: ActivityKind) -> SyntheticKind:
    if kind in (ActivityKind.RUNNING, ActivityKind.CYCLING):
        return SyntheticKind.PHYSICAL
    return SyntheticKind.NONPHYSICAL


@dataclass(frozen=True)
class SleepRecord:
    date: date  # waking day
    asleep_hour: float  # local clock hour in [0, 24)
    wake_hour: float
    duration_h: float


@dataclass
class DailySummary:
    user_id: str
    date: date
    duration_s: dict[str, float]
    count: dict[str, int]
    distance_m: float | None
    floors_ascended: int | None
    floors_descended: int | None
    steps: int | None
    longest_untouched_s: float | None
    sleep: SleepRecord | None
    total_event_count: int
    active_pace_mps: float | None
    cycling_duration_pct: float
    physical_duration_pct: float
    stationary_duration_pct: float
    walking_duration_pct: float
    night_start_hour: float = DEFAULT_NIGHT[0]

    def metric_values(self) -> dict[str, float | None]:
        """Catalog metric -> value for this day; ``None`` when unavailable."""
        out: dict[str, float | None] = {}
        for k in KINDS:
            out[f"{k}_duration"] = self.duration_s[k]
        for k in KINDS:
            out[f"{k}_count"] = float(self.count[k])
        out["distance_travelled"] = self.distance_m
        out["floors_ascended"] = _opt(self.floors_ascended)
        out["floors_descended"] = _opt(self.floors_descended)
        out["accumulated_steps"] = _opt(self.steps)
        if self.sleep is None:
            out["sleep_duration"] = out["asleep_hour"] = out["wake_hour"] = None
        else:
            out["sleep_duration"] = self.sleep.duration_h
            out["asleep_hour"] = waking_day_hour(self.sleep.asleep_hour, self.night_start_hour)
            out["wake_hour"] = waking_day_hour(self.sleep.wake_hour, self.night_start_hour)
        out["longest_untouched"] = self.longest_untouched_s
        out["total_event_count"] = float(self.total_event_count)
        out["active_pace"] = self.active_pace_mps
        out["cycling_duration_pct"] = self.cycling_duration_pct
        out["physical_duration_pct"] = self.physical_duration_pct
        out["stationary_duration_pct"] = self.stationary_duration_pct
        out["walking_duration_pct"] = self.walking_duration_pct
        return out


def _opt(v) -> float | None:
    return None if v is None else float(v)


def waking_day_hour(clock_hour: float, night_start_hour: float = DEFAULT_NIGHT[0]) -> float:
    """Clock hour on a continuous axis anchored at the waking day's midnight.

    Hours from the evening part of a midnight-spanning night window become
    negative (23.5 -> -0.5), so averages across days do not wrap.
    """
    if night_start_hour > 12 and clock_hour >= night_start_hour:
        return clock_hour - 24.0
    return clock_hour


# -- sleep -------------------------------------------------------------------

def _local(day: date, hour: float, zone: ZoneInfo) -> datetime:
    return datetime.combine(day, time(0), tzinfo=zone) + timedelta(hours=hour)


def night_window(waking_day: date, zone: ZoneInfo, night=DEFAULT_NIGHT) -> tuple[datetime, datetime]:
    """Window ``[start, end)`` of the night ending on ``waking_day``, as aware datetimes."""
    start_h, end_h = night
    start_day = waking_day - timedelta(days=1) if start_h >= end_h else waking_day
    start = datetime.combine(start_day, time(0)) + timedelta(hours=start_h)
    end = datetime.combine(waking_day, time(0)) + timedelta(hours=end_h)
    return start.replace(tzinfo=zone), end.replace(tzinfo=zone)


def _clock_hour(ts: datetime, zone: ZoneInfo) -> float:
    t = ts.astimezone(zone)
    return t.hour + t.minute / 60 + (t.second + t.microsecond / 1e6) / 3600


def infer_sleep(events: Sequence[ActivityEvent], waking_day: date, tz: str | ZoneInfo = "UTC",
                night=DEFAULT_NIGHT) -> SleepRecord | None:
    """Longest stretch of the night window not covered by a non-stationary event.

    Stationary events and gaps both count as possible sleep. Returns ``None``
    when no event of the user falls within 24 h of the window.
    """
    zone = ZoneInfo(tz) if isinstance(tz, str) else tz
    ws, we = night_window(waking_day, zone, night)
    ws_u, we_u = ws.timestamp(), we.timestamp()
    lo, hi = ws_u - 86400, we_u + 86400
    covered = []
    evidence = False
    for e in events:
        s = e.start.timestamp()
        t = s + e.duration
        if t >= lo and s <= hi:
            evidence = True
        if e.kind is ActivityKind.STATIONARY:
            continue
        s, t = max(s, ws_u), min(t, we_u)
        if t > s:
            covered.append((s, t))
    if not evidence:
        return None

    covered.sort()
    best_len, best_s, best_t = -1.0, ws_u, ws_u
    cursor = ws_u
    for s, t in covered:
        if s > cursor and s - cursor > best_len:
            best_len, best_s, best_t = s - cursor, cursor, s
        cursor = max(cursor, t)
    if we_u > cursor and we_u - cursor > best_len:
        best_len, best_s, best_t = we_u - cursor, cursor, we_u
    if best_len < 0:
        best_len = 0.0
    return SleepRecord(
        date=waking_day,
        asleep_hour=_clock_hour(datetime.fromtimestamp(best_s, zone), zone),
        wake_hour=_clock_hour(datetime.fromtimestamp(best_t, zone), zone),
        duration_h=best_len / 3600.0,
    )


# -- daily aggregation -------------------------------------------------------

class _UserEvents:
    """One user's events sorted by start, for windowed lookups."""

    def __init__(self, events: Iterable[ActivityEvent]):
        self.events = sorted(events, key=lambda e: (e.start, e.kind.value, e.duration))
        self.starts = [e.start.timestamp() for e in self.events]
        self.max_dur = max((e.duration for e in self.events), default=0.0)

    def between(self, lo: float, hi: float) -> list[ActivityEvent]:
        """Events that may intersect ``[lo, hi]`` (a superset is fine)."""
        i = bisect.bisect_left(self.starts, lo - self.max_dur)
        j = bisect.bisect_right(self.starts, hi)
        return self.events[i:j]


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def aggregate_daily(events: Sequence[ActivityEvent], metrics: DailyMetrics | Sequence[DailyMetrics] | None,
                    user: str, day: date, tz: str = "UTC", night=DEFAULT_NIGHT,
                    _index: _UserEvents | None = None) -> DailySummary:
    """Summarize one user-day. Events belong to the local day of their start."""
    zone = ZoneInfo(tz)
    index = _index or _UserEvents(e for e in events if e.user_id == user)
    if metrics is None or isinstance(metrics, DailyMetrics):
        m = metrics
    else:
        m = next((x for x in metrics if x.user_id == user and x.date == day), None)

    ds, de = _local(day, 0, zone).timestamp(), _local(day + timedelta(days=1), 0, zone).timestamp()
    todays = [e for e in index.between(ds, de)
              if ds <= e.start.timestamp() < de]
    dur_parts: dict[str, list[float]] = {k: [] for k in KINDS}
    count = {k: 0 for k in KINDS}
    for e in todays:
        for k in (e.kind.value, synthetic_kind(e.kind).value):
            dur_parts[k].append(e.duration)
            count[k] += 1
    dur = {k: math.fsum(v) for k, v in dur_parts.items()}

    ws, we = night_window(day, zone, night)
    sleep = infer_sleep(index.between(ws.timestamp() - 86400, we.timestamp() + 86400), day, zone, night)

    total = math.fsum(dur[k.value] for k in ActivityKind)
    moving = math.fsum(dur[k] for k in ("walking", "running", "cycling"))
    non_stationary = total - dur["stationary"]
    distance = m.distance_m if m else None
    return DailySummary(
        user_id=user,
        date=day,
        duration_s=dur,
        count=count,
        distance_m=distance,
        floors_ascended=m.floors_ascended if m else None,
        floors_descended=m.floors_descended if m else None,
        steps=m.steps if m else None,
        longest_untouched_s=m.longest_untouched_s if m else None,
        sleep=sleep,
        total_event_count=len(todays),
        active_pace_mps=None if distance is None else _ratio(distance, moving),
        cycling_duration_pct=_ratio(dur["cycling"], non_stationary),
        physical_duration_pct=_ratio(dur["physical"], non_stationary),
        stationary_duration_pct=_ratio(dur["stationary"], total),
        walking_duration_pct=_ratio(dur["walking"], non_stationary),
        night_start_hour=night[0],
    )


def user_days(events: Sequence[ActivityEvent], metrics: Sequence[DailyMetrics], user: str,
              tz: str = "UTC", night=DEFAULT_NIGHT) -> list[DailySummary]:
    """Summaries for every local day on which the user has events or a metrics record."""
    zone = ZoneInfo(tz)
    index = _UserEvents(e for e in events if e.user_id == user)
    mine = {m.date: m for m in metrics if m.user_id == user}
    days = sorted({e.start.astimezone(zone).date() for e in index.events} | set(mine))
    return [aggregate_daily(index.events, mine.get(d), user, d, tz, night, _index=index) for d in days]


# -- per-user summary --------------------------------------------------------

@dataclass
class FeatureVector:
    user_id: str
    values: dict[str, float]  # NaN marks a missing value

    def as_array(self, names: Sequence[str] = FEATURE_NAMES) -> np.ndarray:
        return np.array([self.values[n] for n in names], dtype=float)


def summarize_user(daily: Sequence[DailySummary]) -> FeatureVector:
    """Mean of every catalog metric over weekday, weekend and all days.

    A metric is averaged over the days on which it is available; a context
    without any such day yields NaN.
    """
    if not daily:
        raise ValueError("summarize_user needs at least one daily summary")
    user = daily[0].user_id
    per_day = [(s.date, s.metric_values()) for s in sorted(daily, key=lambda s: s.date)]
    values: dict[str, float] = {}
    for metric in METRICS:
        for ctx in DayContext:
            xs = [mv[metric] for d, mv in per_day if ctx.includes(d) and mv[metric] is not None]
            values[f"{metric}_{ctx.value}"] = math.fsum(xs) / len(xs) if xs else math.nan
    return FeatureVector(user, {n: values[n] for n in FEATURE_NAMES})


def featurize_cohort(cohort: CohortDataset, night=DEFAULT_NIGHT) -> list[FeatureVector]:
    """Feature vectors for the cohort's modelable users, in user order."""
    by_user: dict[str, list[ActivityEvent]] = {}
    for e in cohort.events:
        by_user.setdefault(e.user_id, []).append(e)
    met: dict[str, list[DailyMetrics]] = {}
    for m in cohort.metrics:
        met.setdefault(m.user_id, []).append(m)
    out = []
    for u in cohort.users:
        out.append(summarize_user(user_days(by_user.get(u, []), met.get(u, []), u, cohort.tz, night)))
    return out


# -- matrix ------------------------------------------------------------------

@dataclass
class FeatureMatrix:
    users: list[str]
    names: list[str]
    values: np.ndarray  # (n_users, n_features), fully imputed
    imputed: np.ndarray  # bool mask of imputed cells
    dropped: list[str] = field(default_factory=list)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def columns(self, names: Sequence[str]) -> np.ndarray:
        idx = [self.names.index(n) for n in names]
        return self.values[:, idx]

    def sidecar(self) -> dict:
        return {
            "catalog_version": CATALOG_VERSION,
            "n_users": len(self.users),
            "n_features": len(self.names),
            "dropped": self.dropped,
            "imputed": {n: [self.users[i] for i in np.flatnonzero(self.imputed[:, j])]
                        for j, n in enumerate(self.names) if self.imputed[:, j].any()},
        }

    def write_csv(self, fh: IO[str]) -> None:
        fh.write(",".join(["user_id", *self.names]) + "\n")
        for u, row in zip(self.users, self.values):
            fh.write(",".join([u, *(repr(float(v)) for v in row)]) + "\n")

    @classmethod
    def read_csv(cls, fh: IO[str], sidecar: dict | None = None) -> "FeatureMatrix":
        header = fh.readline().rstrip("\n").split(",")
        if header[:1] != ["user_id"]:
            raise ValueError("feature matrix header must start with user_id")
        users, rows = [], []
        for line in fh:
            if not line.strip():
                continue
            parts = line.rstrip("\n").split(",")
            users.append(parts[0])
            rows.append([float(x) for x in parts[1:]])
        names = header[1:]
        values = np.array(rows, dtype=float).reshape(len(users), len(names))
        imputed = np.zeros(values.shape, dtype=bool)
        dropped = []
        if sidecar:
            dropped = list(sidecar.get("dropped", []))
            for n, us in sidecar.get("imputed", {}).items():
                j = names.index(n)
                for u in us:
                    imputed[users.index(u), j] = True
        return cls(users, names, values, imputed, dropped)


def build_matrix(vectors: Sequence[FeatureVector], max_missing: float = 0.5,
                 names: Sequence[str] = FEATURE_NAMES) -> FeatureMatrix:
    """Stack feature vectors, drop sparse columns and mean-impute the rest.

    Columns missing for more than ``max_missing`` of users (or for all) are
    dropped with a warning.
    """
    if len(vectors) < 2:
        raise ValueError("build_matrix needs at least 2 users")
    raw = np.array([v.as_array(names) for v in vectors], dtype=float)
    missing = np.isnan(raw)
    frac = missing.mean(axis=0)
    keep = (frac <= max_missing) & ~missing.all(axis=0)
    dropped = [n for n, k in zip(names, keep) if not k]
    for n in dropped:
        log.warning("dropping feature %s: missing for %.0f%% of users", n, 100 * frac[names.index(n)])
    vals = raw[:, keep].copy()
    miss = missing[:, keep]
    for j in range(vals.shape[1]):
        if miss[:, j].any():
            present = vals[~miss[:, j], j]
            vals[miss[:, j], j] = math.fsum(present) / len(present)
    return FeatureMatrix([v.user_id for v in vectors], [n for n, k in zip(names, keep) if k],
                         vals, miss, dropped)


def write_sidecar(matrix: FeatureMatrix, fh: IO[str]) -> None:
    json.dump(matrix.sidecar(), fh, indent=2, sort_keys=True)
    fh.write("\n")
