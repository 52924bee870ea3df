"""Readers, writers and validation for the three cohort input files.

* activity events: CSV or JSON lines with ``user_id,activity,start,duration_s``
* daily device metrics: CSV ``user_id,date,distance_m,floors_up,floors_down,steps,longest_untouched_s``
* questionnaire responses: CSV ``user_id,q1,...,q50``
"""

from __future__ import annotations

import csv
import enum
import io
import json
import logging
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from typing import IO, Iterable, Union
from zoneinfo import ZoneInfo

log = logging.getLogger(__name__)

N_ITEMS = 50
EVENT_FIELDS = ["user_id", "activity", "start", "duration_s"]
METRIC_FIELDS = ["user_id", "date", "distance_m", "floors_up", "floors_down", "steps",
                 "longest_untouched_s"]
BFI_FIELDS = ["user_id"] + [f"q{i}" for i in range(1, N_ITEMS + 1)]
DEFAULT_TZ = "Europe/London"
DEFAULT_MIN_DAYS = 7
OVERLAP_MINOR_S = 60.0

Stream = Union[bytes, str, IO[bytes], IO[str]]


class IngestError(ValueError):
    """Malformed or invalid input data."""


class ActivityKind(enum.Enum):
    STATIONARY = "stationary"
    WALKING = "walking"
    RUNNING = "running"
    CYCLING = "cycling"
    AUTOMOTIVE = "automotive"

    @classmethod
    def parse(cls, s: str) -> "ActivityKind":
        key = s.strip().lower()
        if key == "driving":
            return cls.AUTOMOTIVE
        try:
            return cls(key)
        except ValueError:
            raise IngestError(f"unknown activity kind: {s.strip()}") from None


@dataclass(frozen=True)
class ActivityEvent:
    user_id: str
    kind: ActivityKind
    start: datetime  # tz-aware UTC
    duration: float  # seconds

    @property
    def end(self) -> datetime:
        return self.start + timedelta(seconds=self.duration)


@dataclass(frozen=True)
class DailyMetrics:
    user_id: str
    date: date
    distance_m: float
    floors_ascended: int
    floors_descended: int
    steps: int
    longest_untouched_s: float


@dataclass(frozen=True)
class BfiResponse:
    user_id: str
    items: tuple[int, ...]


@dataclass
class ValidationReport:
    n_events: int
    n_users: int
    n_modelable: int
    date_first: str | None
    date_last: str | None
    excluded: dict[str, str] = field(default_factory=dict)
    overlaps_minor: int = 0
    overlaps_major: int = 0
    warnings: list[str] = field(default_factory=list)

    def summary(self) -> str:
        return f"{self.n_events} events, {self.n_users} users"

    def to_dict(self) -> dict:
        return {
            "summary": self.summary(),
            "n_events": self.n_events,
            "n_users": self.n_users,
            "n_modelable": self.n_modelable,
            "date_span": [self.date_first, self.date_last],
            "excluded": dict(sorted(self.excluded.items())),
            "overlaps": {"under_60s": self.overlaps_minor, "60s_or_more": self.overlaps_major},
            "warnings": self.warnings,
        }


@dataclass
class CohortDataset:
    events: list[ActivityEvent]
    metrics: list[DailyMetrics]
    responses: list[BfiResponse]
    users: list[str]  # modelable users, sorted
    tz: str = DEFAULT_TZ
    min_days: int = DEFAULT_MIN_DAYS

    def response_for(self, user: str) -> BfiResponse:
        for r in self.responses:
            if r.user_id == user:
                return r
        raise KeyError(user)


# -- parsing helpers -------------------------------------------------------

def _text(stream: Stream) -> str:
    if isinstance(stream, bytes):
        return stream.decode("utf-8-sig")
    if isinstance(stream, str):
        return stream
    data = stream.read()
    return data.decode("utf-8-sig") if isinstance(data, bytes) else data


def _csv_rows(text: str, header: list[str], what: str) -> Iterable[tuple[int, list[str]]]:
    if not text.strip():
        raise IngestError(f"empty {what} file")
    reader = csv.reader(io.StringIO(text))
    try:
        first = next(reader)
    except StopIteration:
        raise IngestError(f"empty {what} file") from None
    if [h.strip() for h in first] != header:
        raise IngestError(f"line 1: {what} header must be {','.join(header)}")
    for row in reader:
        if not row or all(not c.strip() for c in row):
            continue
        yield reader.line_num, [c.strip() for c in row]


def parse_timestamp(s: str) -> datetime:
    s = s.strip()
    if s.endswith("Z"):
        s = s[:-1] + "+00:00"
    ts = datetime.fromisoformat(s)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _num(s: str) -> float:
    v = float(s)
    if v != v or v in (float("inf"), float("-inf")):
        raise ValueError(f"non-finite value {s!r}")
    return v


def _fmt_num(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def _make_event(lineno: int, user: str, activity: str, start: str, duration) -> ActivityEvent:
    if not user:
        raise IngestError(f"line {lineno}: empty user_id")
    kind = ActivityKind.parse(activity)
    try:
        ts = parse_timestamp(start)
    except ValueError:
        raise IngestError(f"line {lineno}: unparseable start timestamp {start!r}") from None
    try:
        dur = _num(str(duration))
    except ValueError:
        raise IngestError(f"line {lineno}: unparseable duration {duration!r}") from None
    if dur < 0:
        raise IngestError(f"line {lineno}: negative duration")
    return ActivityEvent(user, kind, ts, dur)


# -- public parsers --------------------------------------------------------

def parse_events(stream: Stream, fmt: str = "csv") -> list[ActivityEvent]:
    text = _text(stream)
    if fmt == "csv":
        out = []
        for lineno, row in _csv_rows(text, EVENT_FIELDS, "events"):
            if len(row) != 4:
                raise IngestError(f"line {lineno}: expected 4 fields, got {len(row)}")
            out.append(_make_event(lineno, *row))
        if not out:
            raise IngestError("empty events file")
        return out
    if fmt == "jsonl":
        out = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                vals = [obj[k] for k in EVENT_FIELDS]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise IngestError(f"line {lineno}: malformed record ({exc})") from None
            out.append(_make_event(lineno, str(vals[0]), str(vals[1]), str(vals[2]), vals[3]))
        if not out:
            raise IngestError("empty events file")
        return out
    raise IngestError(f"unknown events format: {fmt}")


def parse_daily_metrics(stream: Stream) -> list[DailyMetrics]:
    out = []
    seen = set()
    for lineno, row in _csv_rows(_text(stream), METRIC_FIELDS, "daily metrics"):
        if len(row) != len(METRIC_FIELDS):
            raise IngestError(f"line {lineno}: expected {len(METRIC_FIELDS)} fields, got {len(row)}")
        user, day = row[0], row[1]
        try:
            d = date.fromisoformat(day)
        except ValueError:
            raise IngestError(f"line {lineno}: unparseable date {day!r}") from None
        try:
            dist, up, down, steps, untouched = (_num(v) for v in row[2:])
        except ValueError as exc:
            raise IngestError(f"line {lineno}: {exc}") from None
        for name, v in (("distance", dist), ("floors_up", up), ("floors_down", down),
                        ("steps", steps), ("longest_untouched_s", untouched)):
            if v < 0:
                raise IngestError(f"line {lineno}: negative {name}")
        for name, v in (("floors_up", up), ("floors_down", down), ("steps", steps)):
            if not v.is_integer():
                raise IngestError(f"line {lineno}: {name} must be an integer count")
        if untouched > 86400:
            raise IngestError(f"line {lineno}: longest_untouched_s exceeds 86400")
        if (user, d) in seen:
            raise IngestError(f"line {lineno}: duplicate daily record for {user} on {d}")
        seen.add((user, d))
        out.append(DailyMetrics(user, d, dist, int(up), int(down), int(steps), untouched))
    return out


def parse_bfi(stream: Stream) -> list[BfiResponse]:
    out = []
    seen = set()
    text = _text(stream)
    if not text.strip():
        raise IngestError("empty questionnaire file")
    reader = csv.reader(io.StringIO(text))
    header = [h.strip() for h in next(reader)]
    if header[:1] != ["user_id"] or header[1:] != BFI_FIELDS[1:len(header)]:
        raise IngestError(f"line 1: questionnaire header must be user_id,q1,...,q{N_ITEMS}")
    for row in reader:
        if not row or all(not c.strip() for c in row):
            continue
        lineno = reader.line_num
        user, raw = row[0].strip(), [c.strip() for c in row[1:]]
        if len(raw) != N_ITEMS:
            raise IngestError(f"line {lineno}: expected {N_ITEMS} items, got {len(raw)}")
        items = []
        for i, v in enumerate(raw, start=1):
            try:
                x = int(v)
            except ValueError:
                raise IngestError(f"line {lineno}: item q{i} is not an integer") from None
            if not 1 <= x <= 5:
                raise IngestError(f"line {lineno}: item q{i} out of range")
            items.append(x)
        if user in seen:
            raise IngestError(f"line {lineno}: duplicate response for {user}")
        seen.add(user)
        out.append(BfiResponse(user, tuple(items)))
    return out


# -- writers ---------------------------------------------------------------

def write_events(events: Iterable[ActivityEvent], fh: IO[str], fmt: str = "csv") -> None:
    if fmt == "jsonl":
        for e in events:
            rec = {"user_id": e.user_id, "activity": e.kind.value, "start": format_timestamp(e.start),
                   "duration_s": int(e.duration) if float(e.duration).is_integer() else e.duration}
            fh.write(json.dumps(rec) + "\n")
        return
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(EVENT_FIELDS)
    for e in events:
        w.writerow([e.user_id, e.kind.value, format_timestamp(e.start), _fmt_num(e.duration)])


def write_daily_metrics(metrics: Iterable[DailyMetrics], fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(METRIC_FIELDS)
    for m in metrics:
        w.writerow([m.user_id, m.date.isoformat(), _fmt_num(m.distance_m), m.floors_ascended,
                    m.floors_descended, m.steps, _fmt_num(m.longest_untouched_s)])


def write_bfi(responses: Iterable[BfiResponse], fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(BFI_FIELDS)
    for r in responses:
        w.writerow([r.user_id, *r.items])


# -- validation ------------------------------------------------------------

def local_date(ts: datetime, tz: ZoneInfo) -> date:
    return ts.astimezone(tz).date()


def _count_overlaps(events: list[ActivityEvent]) -> tuple[int, int]:
    minor = major = 0
    by_user: dict[str, list[ActivityEvent]] = {}
    for e in events:
        by_user.setdefault(e.user_id, []).append(e)
    for evs in by_user.values():
        evs = sorted(evs, key=lambda e: (e.start, e.duration))
        latest_end = None
        for e in evs:
            if latest_end is not None and e.start < latest_end:
                overlap = (min(latest_end, e.end) - e.start).total_seconds()
                if overlap < OVERLAP_MINOR_S:
                    minor += 1
                else:
                    major += 1
            latest_end = e.end if latest_end is None else max(latest_end, e.end)
    return minor, major


def validate_cohort(events: list[ActivityEvent], metrics: list[DailyMetrics],
                    responses: list[BfiResponse], *, tz: str = DEFAULT_TZ,
                    min_days: int = DEFAULT_MIN_DAYS) -> tuple[CohortDataset, ValidationReport]:
    """Decide which users can be modelled.

    Users without a questionnaire response or with fewer than ``min_days``
    distinct local event days are excluded from modelling; their records are
    kept. Overlapping events are counted, never rejected.
    """
    zone = ZoneInfo(tz)
    days: dict[str, set[date]] = {}
    for e in events:
        days.setdefault(e.user_id, set()).add(local_date(e.start, zone))
    with_bfi = {r.user_id for r in responses}
    all_users = sorted(set(days) | {m.user_id for m in metrics} | with_bfi)

    excluded: dict[str, str] = {}
    warnings = []
    for u in all_users:
        if u not in with_bfi:
            excluded[u] = "no questionnaire response"
        elif len(days.get(u, ())) < min_days:
            excluded[u] = f"{len(days.get(u, ()))} event days < min_days={min_days}"
    for u, why in excluded.items():
        warnings.append(f"user {u} excluded: {why}")
        log.warning("user %s excluded: %s", u, why)
    modelable = [u for u in all_users if u not in excluded]
    if not modelable:
        raise IngestError("zero modelable users")
    if len(modelable) < 2:
        raise IngestError(f"only {len(modelable)} modelable user; at least 2 are required")

    all_days = sorted(d for ds in days.values() for d in ds)
    minor, major = _count_overlaps(events)
    if minor or major:
        warnings.append(f"overlapping events: {minor} under 60 s, {major} of 60 s or more")
    report = ValidationReport(
        n_events=len(events),
        n_users=len(days),
        n_modelable=len(modelable),
        date_first=all_days[0].isoformat() if all_days else None,
        date_last=all_days[-1].isoformat() if all_days else None,
        excluded=excluded,
        overlaps_minor=minor,
        overlaps_major=major,
        warnings=warnings,
    )
    cohort = CohortDataset(list(events), list(metrics), list(responses), modelable, tz, min_days)
    return cohort, report
