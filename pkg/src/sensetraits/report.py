"""Presentation artifacts: score densities, population comparison, result tables."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from importlib import resources
from typing import IO, Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import norm

from .modelsel.cv import CVReport
from .targets import TRAITS, TraitScores

GRID_SIZE = 256
SIMILAR_BAND = 1.0
MODEL_COLUMNS = (("rf", "Random Forest"), ("gbt", "XGBoost-style"))
SCHEME_COLUMNS = (("binary", "Binary"), ("ternary", "Multiclass"))


@dataclass
class DensityCurve:
    trait: str | None
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float

    def integral(self) -> float:
        return float(np.trapezoid(self.density, self.grid))

    def rows(self) -> list[tuple[float, float]]:
        return list(zip(self.grid.tolist(), self.density.tolist()))


def silverman_bandwidth(x: np.ndarray) -> float:
    sd = np.std(x, ddof=1)
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34)
    if spread <= 0:
        # heavily tied samples have IQR 0; fall back to the sd
        spread = sd
    return 0.9 * spread * len(x) ** (-0.2)


def kde(values, bandwidth: float | None = None, grid_size: int = GRID_SIZE,
        trait: str | None = None) -> DensityCurve:
    """Gaussian KDE on ``grid_size`` points over ``[min - 3h, max + 3h]``.

    The bandwidth defaults to Silverman's rule. The density is rescaled to
    integrate to 1 on the grid (trapezoid rule), which corrects the mass
    lost beyond +-3h.
    """
    x = np.asarray(values, dtype=float)
    if x.size < 2:
        raise ValueError("kde needs at least 2 values")
    if np.ptp(x) == 0:
        raise ValueError("zero variance")
    h = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    if h <= 0:
        raise ValueError("bandwidth must be positive")
    grid = np.linspace(x.min() - 3 * h, x.max() + 3 * h, grid_size)
    dens = norm.pdf((grid[:, None] - x[None, :]) / h).sum(axis=1) / (x.size * h)
    dens /= np.trapezoid(dens, grid)
    return DensityCurve(trait, grid, dens, h)


def write_curves(curves: Sequence[DensityCurve], fh: IO[str]) -> None:
    fh.write("trait,x,density,bandwidth\n")
    for c in curves:
        for x, d in c.rows():
            fh.write(f"{c.trait},{x!r},{d!r},{c.bandwidth!r}\n")


# -- population comparison ---------------------------------------------------

@dataclass(frozen=True)
class ReferenceStat:
    mean: float | None
    sd: float | None = None
    n: int | None = None


@dataclass
class ReferenceStats:
    stats: dict[str, ReferenceStat]
    provenance: str

    def __post_init__(self):
        for t, s in self.stats.items():
            if s.mean is not None and not 10 <= s.mean <= 50:
                raise ValueError(f"reference mean for {t} outside [10, 50]")

    @classmethod
    def read_csv(cls, fh: IO[str]) -> "ReferenceStats":
        stats, prov = {}, set()
        for r in csv.DictReader(fh):
            def opt(k, conv=float):
                v = (r.get(k) or "").strip()
                return conv(v) if v else None
            stats[r["trait"].strip()] = ReferenceStat(opt("mean"), opt("sd"), opt("n", int))
            if r.get("provenance"):
                prov.add(r["provenance"].strip())
        return cls(stats, "; ".join(sorted(prov)))


def default_reference() -> ReferenceStats:
    text = resources.files("sensetraits").joinpath("data/reference_bbc.csv").read_text()
    return ReferenceStats.read_csv(io.StringIO(text))


@dataclass
class ComparisonRow:
    trait: str
    cohort_mean: float
    reference_mean: float | None
    difference: float | None
    direction: str
    z: float | None = None
    p_value: float | None = None


def _direction(diff: float) -> str:
    if abs(diff) < SIMILAR_BAND:
        return "similar"
    return "higher" if diff > 0 else "lower"


def compare_means(trait: str, cohort_mean: float, reference: ReferenceStat,
                  cohort_sd: float | None = None, n_cohort: int | None = None) -> ComparisonRow:
    if reference.mean is None:
        return ComparisonRow(trait, cohort_mean, None, None, "")
    diff = cohort_mean - reference.mean
    row = ComparisonRow(trait, cohort_mean, reference.mean, diff, _direction(diff))
    if reference.sd is not None and cohort_sd is not None and n_cohort:
        var = cohort_sd**2 / n_cohort
        if reference.n:
            var += reference.sd**2 / reference.n
        if var > 0:
            row.z = diff / math.sqrt(var)
            row.p_value = float(2 * norm.sf(abs(row.z)))
    return row


def compare_population(cohort: Sequence[TraitScores], reference: ReferenceStats) -> list[ComparisonRow]:
    """Per-trait cohort mean against the reference mean.

    Means sum left to right over users sorted by id. A z-test is added only
    where the reference supplies an sd.
    """
    if len(cohort) < 2:
        raise ValueError("compare_population needs at least 2 cohort users")
    ordered = sorted(cohort, key=lambda s: s.user_id)
    rows = []
    for t in TRAITS:
        xs = [float(s.scores[t]) for s in ordered]
        total = 0.0
        for x in xs:
            total += x
        mean = total / len(xs)
        sd = float(np.std(xs, ddof=1))
        rows.append(compare_means(t, mean, reference.stats.get(t, ReferenceStat(None)), sd, len(xs)))
    return rows


def comparison_table(rows: Sequence[ComparisonRow]) -> "Table":
    def f(v):
        return "" if v is None else f"{v:.2f}"
    body = []
    for r in rows:
        body.append([r.trait, f"{r.cohort_mean:.2f}", f(r.reference_mean),
                     "" if r.difference is None else f"{r.difference:+.2f}", r.direction,
                     f(r.z), "" if r.p_value is None else f"{r.p_value:.3g}"])
    return Table(["trait", "cohort_mean", "reference_mean", "difference", "direction", "z", "p_value"], body)


# -- tables ------------------------------------------------------------------

@dataclass
class Table:
    header: list[str]
    rows: list[list[str]]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        w.writerows(self.rows)
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps([dict(zip(self.header, r)) for r in self.rows], indent=2) + "\n"

    def to_markdown(self) -> str:
        cols = list(zip(self.header, *self.rows)) if self.rows else [(h,) for h in self.header]
        widths = [max(len(c) for c in col) for col in cols]

        def line(cells):
            return "| " + " | ".join(c.ljust(w) for c, w in zip(cells, widths)) + " |"
        out = [line(self.header), "|" + "|".join("-" * (w + 2) for w in widths) + "|"]
        out += [line(r) for r in self.rows]
        return "\n".join(out) + "\n"

    def render(self, fmt: str) -> str:
        if fmt == "csv":
            return self.to_csv()
        if fmt == "json":
            return self.to_json()
        if fmt == "md":
            return self.to_markdown()
        raise ValueError(f"unknown table format: {fmt}")


def _cell_key(r: CVReport) -> tuple[str, str, str]:
    return (r.trait, r.scheme, r.model)


def _index(reports: Iterable[CVReport]) -> dict[tuple[str, str, str], CVReport]:
    seen: dict[tuple[str, str, str], CVReport] = {}
    for r in reports:
        key = _cell_key(r)
        if key in seen:
            raise ValueError(f"duplicate report for trait={key[0]} scheme={key[1]} model={key[2]}")
        seen[key] = r
    return seen


def results_table(reports: Sequence[CVReport]) -> Table:
    """Mean cross-validated F1 per trait, grouped Binary/Multiclass x model."""
    header = ["trait"] + [f"{s_label} {m_label}" for _, s_label in SCHEME_COLUMNS
                          for _, m_label in MODEL_COLUMNS]
    if not reports:
        return Table(header, [])
    cells = _index(reports)
    rows = []
    for t in TRAITS:
        row = [t]
        for s, _ in SCHEME_COLUMNS:
            for m, _ in MODEL_COLUMNS:
                r = cells.get((t, s, m))
                row.append("" if r is None else f"{r.mean_f1:.2f}")
        rows.append(row)
    return Table(header, rows)


def importance_table(rankings: Mapping[tuple[str, str, str], Sequence] | Sequence[CVReport],
                     top: int = 3) -> Table:
    """Top features per (scheme, model, trait); short rankings pad with blanks.

    Accepts either CV reports carrying ``importance`` or a mapping
    ``(scheme, model, trait) -> ranking``, where a ranking lists feature names
    or ``(name, value)`` pairs.
    """
    if not isinstance(rankings, Mapping):
        rankings = {(r.scheme, r.model, r.trait): r.importance for r in rankings}
    header = ["scheme", "model", "trait"] + [f"feature_{i + 1}" for i in range(top)]
    scheme_order = {s: i for i, (s, _) in enumerate(SCHEME_COLUMNS)}
    model_order = {m: i for i, (m, _) in enumerate(MODEL_COLUMNS)}
    trait_order = {t: i for i, t in enumerate(TRAITS)}
    keys = sorted(rankings, key=lambda k: (scheme_order.get(k[0], 99), model_order.get(k[1], 99),
                                           trait_order.get(k[2], 99), k))
    rows = []
    for scheme, model, trait in keys:
        names = [x if isinstance(x, str) else x[0] for x in rankings[(scheme, model, trait)]][:top]
        rows.append([scheme, model, trait] + names + [""] * (top - len(names)))
    return Table(header, rows)
