"""Trait scoring and percentile-based class labels."""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass
from importlib import resources
from typing import IO, Mapping, Sequence

import numpy as np

from .ingest import N_ITEMS, BfiResponse


class Trait(enum.Enum):
    EXT = "EXT"
    AGR = "AGR"
    CON = "CON"
    NEU = "NEU"
    OPE = "OPE"


TRAITS = [t.value for t in Trait]


class LabelScheme(enum.Enum):
    BINARY = "binary"
    TERNARY = "ternary"

    @property
    def quantiles(self) -> tuple[float, ...]:
        return (0.5,) if self is LabelScheme.BINARY else (0.33, 0.67)

    @property
    def n_classes(self) -> int:
        return len(self.quantiles) + 1


@dataclass(frozen=True)
class ScoringKey:
    traits: tuple[str, ...]  # per item
    polarity: tuple[int, ...]  # +1 or -1 per item

    def __post_init__(self):
        if len(self.traits) != len(self.polarity):
            raise ValueError("key traits and polarities differ in length")
        for p in self.polarity:
            if p not in (1, -1):
                raise ValueError(f"polarity must be +1 or -1, got {p}")
        for t in TRAITS:
            n = self.traits.count(t)
            if n != 10:
                raise ValueError(f"trait {t} has {n} items, expected 10")
        unknown = set(self.traits) - set(TRAITS)
        if unknown:
            raise ValueError(f"unknown traits in key: {sorted(unknown)}")

    @classmethod
    def read_csv(cls, fh: IO[str]) -> "ScoringKey":
        rows = sorted(csv.DictReader(fh), key=lambda r: int(r["item_index"]))
        if [int(r["item_index"]) for r in rows] != list(range(1, len(rows) + 1)):
            raise ValueError("key item_index must run 1..N without gaps")
        return cls(tuple(r["trait"].strip() for r in rows), tuple(int(r["polarity"]) for r in rows))

    def write_csv(self, fh: IO[str]) -> None:
        fh.write("item_index,trait,polarity\n")
        for i, (t, p) in enumerate(zip(self.traits, self.polarity), start=1):
            fh.write(f"{i},{t},{'+1' if p > 0 else '-1'}\n")


def default_key() -> ScoringKey:
    text = resources.files("sensetraits").joinpath("data/bfi_key.csv").read_text()
    return ScoringKey.read_csv(io.StringIO(text))


@dataclass(frozen=True)
class TraitScores:
    user_id: str
    scores: dict[str, int]

    def __getitem__(self, trait: str) -> int:
        return self.scores[trait]


def score_bfi(response: BfiResponse, key: ScoringKey) -> TraitScores:
    """Sum each trait's items, reverse-keyed items counted as ``6 - item``."""
    if len(response.items) != len(key.traits):
        raise ValueError(f"key has {len(key.traits)} items but response has {len(response.items)}")
    scores = {t: 0 for t in TRAITS}
    for x, t, p in zip(response.items, key.traits, key.polarity):
        scores[t] += x if p > 0 else 6 - x
    return TraitScores(response.user_id, scores)


def percentile(values: Sequence[float], p: float) -> float:
    """Linear-interpolation quantile at fraction ``p``."""
    if len(values) == 0:
        raise ValueError("percentile of empty input")
    if not 0 <= p <= 1:
        raise ValueError("p must be in [0, 1]")
    v = sorted(float(x) for x in values)
    h = (len(v) - 1) * p
    lo, hi = math.floor(h), math.ceil(h)
    return v[lo] + (h - lo) * (v[hi] - v[lo])


@dataclass
class LabelSet:
    scheme: LabelScheme
    trait: str | None
    thresholds: tuple[float, ...]
    labels: dict[str, int]

    def vector(self, users: Sequence[str]) -> np.ndarray:
        return np.array([self.labels[u] for u in users], dtype=np.int64)


def thresholds_for(values: Sequence[float], scheme: LabelScheme) -> tuple[float, ...]:
    return tuple(percentile(values, q) for q in scheme.quantiles)


def apply_thresholds(value: float, thresholds: Sequence[float]) -> int:
    """Class index: number of thresholds strictly below ``value`` (ties go down)."""
    return sum(1 for t in thresholds if value > t)


def discretize(scores: Mapping[str, float], scheme: LabelScheme | str,
               trait: str | None = None) -> LabelSet:
    """Cohort-percentile labels.

    Binary: 1 iff value > p50. Ternary: 0 if value <= p33, 1 if <= p67, else 2.
    """
    scheme = LabelScheme(scheme)
    if len(scores) < 2:
        raise ValueError("discretize needs at least 2 users")
    vals = list(scores.values())
    if min(vals) == max(vals):
        raise ValueError("degenerate target: zero variance")
    th = thresholds_for(vals, scheme)
    return LabelSet(scheme, trait, th, {u: apply_thresholds(v, th) for u, v in scores.items()})


def score_cohort(responses: Sequence[BfiResponse], key: ScoringKey | None = None,
                 users: Sequence[str] | None = None) -> list[TraitScores]:
    key = key or default_key()
    by_user = {r.user_id: r for r in responses}
    order = users if users is not None else sorted(by_user)
    return [score_bfi(by_user[u], key) for u in order]


def write_scores(scores: Sequence[TraitScores], fh: IO[str]) -> None:
    fh.write(",".join(["user_id", *TRAITS]) + "\n")
    for s in scores:
        fh.write(",".join([s.user_id, *(str(s.scores[t]) for t in TRAITS)]) + "\n")


def read_scores(fh: IO[str]) -> list[TraitScores]:
    return [TraitScores(r["user_id"], {t: int(r[t]) for t in TRAITS}) for r in csv.DictReader(fh)]


def write_labels(label_sets: Sequence[LabelSet], users: Sequence[str], fh: IO[str]) -> None:
    """One column per trait; thresholds are kept in the run's JSON outputs."""
    fh.write(",".join(["user_id", *(ls.trait or "label" for ls in label_sets)]) + "\n")
    for u in users:
        fh.write(",".join([u, *(str(ls.labels[u]) for ls in label_sets)]) + "\n")


def read_labels(fh: IO[str]) -> dict[str, dict[str, int]]:
    """trait -> user -> label."""
    out: dict[str, dict[str, int]] = {}
    for r in csv.DictReader(fh):
        for t, v in r.items():
            if t != "user_id":
                out.setdefault(t, {})[r["user_id"]] = int(v)
    return out


__all__ = [
    "N_ITEMS", "LabelScheme", "LabelSet", "ScoringKey", "TRAITS", "Trait", "TraitScores",
    "apply_thresholds", "default_key", "discretize", "percentile", "read_labels", "read_scores",
    "score_bfi", "score_cohort", "thresholds_for", "write_labels", "write_scores",
]
