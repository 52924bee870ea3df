"""Stage orchestration: cached CSV/JSON artifacts under one output directory.

Layout of ``output_dir``::

    ingest/     events.csv daily_metrics.csv bfi.csv cohort.json validation.json
    features/   raw_features.csv features.csv features.json
    targets/    scores.csv labels_<scheme>.csv thresholds.json
    select/     <cell>.json <cell>_trace.csv
    tune/       <cell>.json <cell>_trace.csv
    evaluate/   <cell>.json models/<cell>.json
    report/     table1.<fmt> importance.<fmt> comparison.<fmt> kde.csv
    manifest.json

A cell is ``<trait>_<scheme>_<model>``. Every stage seed is
``derive_seed(seed, stage_index, trait_index, scheme_index, model_index)``
with indices into ``STAGES``, ``TRAITS``, ``SCHEMES`` and ``MODELS``.
"""

from __future__ import annotations

import contextlib
import csv
import hashlib
import io
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterator

import numpy as np

from . import __version__
from .config import PipelineConfig
from .ensemble import model_importance
from .featurize import FEATURE_NAMES, FeatureMatrix, build_matrix, featurize_cohort
from .ingest import (
    CohortDataset, parse_bfi, parse_daily_metrics, parse_events, validate_cohort,
    write_bfi, write_daily_metrics, write_events,
)
from .modelsel import ModelSpec, SearchSpace, bayes_opt, cross_validate, rfe_cv
from .report import (
    ReferenceStats, comparison_table, compare_population, default_reference, importance_table,
    kde, results_table, write_curves,
)
from .seeding import derive_seed
from .targets import (
    TRAITS, LabelScheme, ScoringKey, apply_thresholds, default_key, discretize, read_labels,
    read_scores, score_cohort, thresholds_for, write_labels, write_scores,
)

log = logging.getLogger(__name__)

STAGES = ("ingest", "featurize", "targets", "select", "tune", "evaluate", "report")
SCHEMES = ("binary", "ternary")
MODELS = ("rf", "gbt")
LOCK_NAME = ".lock"
MANIFEST_NAME = "manifest.json"

_current_stage = "-"


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: str):
        super().__init__(f"stage {stage}: {cause}")
        self.stage = stage
        self.cause = cause


class LockError(RuntimeError):
    pass


class StageFilter(logging.Filter):
    """Adds ``record.stage`` for the ``[stage]`` log prefix."""

    def filter(self, record):
        record.stage = _current_stage
        return True


@contextlib.contextmanager
def _stage(name: str):
    global _current_stage
    prev, _current_stage = _current_stage, name
    try:
        yield
    finally:
        _current_stage = prev


def cell_name(trait: str, scheme: str, model: str) -> str:
    return f"{trait}_{scheme}_{model}"


def cell_seed(cfg: PipelineConfig, stage: str, trait: str, scheme: str, model: str) -> int:
    return derive_seed(cfg.seed, STAGES.index(stage), TRAITS.index(trait),
                       SCHEMES.index(scheme), MODELS.index(model))


def iter_cells(cfg: PipelineConfig, trait=None, scheme=None, model=None) -> Iterator[tuple[str, str, str]]:
    for t in cfg.traits:
        for s in cfg.schemes:
            for m in cfg.models:
                if (trait in (None, t)) and (scheme in (None, s)) and (model in (None, m)):
                    yield t, s, m


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


class Workspace:
    """Output directory handle; remembers every file written through it."""

    def __init__(self, root):
        self.root = Path(root)
        self.written: list[Path] = []

    def path(self, rel: str) -> Path:
        return self.root / rel

    def exists(self, rel: str) -> bool:
        return self.path(rel).exists()

    def write_text(self, rel: str, text: str) -> Path:
        p = self.path(rel)
        p.parent.mkdir(parents=True, exist_ok=True)
        with open(p, "w", newline="") as fh:
            fh.write(text)
        self.written.append(p)
        return p

    def write_json(self, rel: str, obj) -> Path:
        return self.write_text(rel, _json_text(obj))

    def write_with(self, rel: str, writer: Callable[[io.StringIO], None]) -> Path:
        buf = io.StringIO()
        writer(buf)
        return self.write_text(rel, buf.getvalue())

    def read_text(self, rel: str) -> str:
        p = self.path(rel)
        if not p.exists():
            raise FileNotFoundError(f"missing artifact {rel}; run the earlier stages first")
        return p.read_text()

    def read_json(self, rel: str):
        return json.loads(self.read_text(rel))

    def discard_written(self) -> None:
        for p in reversed(self.written):
            with contextlib.suppress(FileNotFoundError):
                p.unlink()
        self.written.clear()

    @contextlib.contextmanager
    def lock(self):
        self.root.mkdir(parents=True, exist_ok=True)
        lp = self.root / LOCK_NAME
        try:
            fd = os.open(lp, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise LockError(f"output directory {self.root} is locked by another run ({lp})") from None
        try:
            os.write(fd, str(os.getpid()).encode())
            os.close(fd)
            yield
        finally:
            with contextlib.suppress(FileNotFoundError):
                lp.unlink()


def _rows_csv(rows: list[dict[str, Any]]) -> str:
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return buf.getvalue()


# -- stages ------------------------------------------------------------------

def _input_path(value: str | None, what: str) -> Path:
    if not value:
        raise FileNotFoundError(f"file not found: no {what} input configured")
    p = Path(value)
    if not p.is_file():
        raise FileNotFoundError(f"file not found: {p}")
    return p


def stage_ingest(cfg: PipelineConfig, ws: Workspace) -> None:
    ev_path = _input_path(cfg.inputs.events, "events")
    met_path = _input_path(cfg.inputs.metrics, "daily metrics")
    bfi_path = _input_path(cfg.inputs.bfi, "questionnaire")
    events = parse_events(ev_path.read_bytes(), fmt=cfg.inputs.events_format)
    metrics = parse_daily_metrics(met_path.read_bytes())
    responses = parse_bfi(bfi_path.read_bytes())
    cohort, report = validate_cohort(events, metrics, responses, tz=cfg.tz, min_days=cfg.min_days)
    log.info("%s; %d modelable", report.summary(), report.n_modelable)
    keep = set(cohort.users)
    ev = sorted((e for e in events if e.user_id in keep), key=lambda e: (e.user_id, e.start, e.kind.value))
    met = sorted((m for m in metrics if m.user_id in keep), key=lambda m: (m.user_id, m.date))
    resp = sorted((r for r in responses if r.user_id in keep), key=lambda r: r.user_id)
    ws.write_with("ingest/events.csv", lambda fh: write_events(ev, fh))
    ws.write_with("ingest/daily_metrics.csv", lambda fh: write_daily_metrics(met, fh))
    ws.write_with("ingest/bfi.csv", lambda fh: write_bfi(resp, fh))
    ws.write_json("ingest/validation.json", report.to_dict())
    ws.write_json("ingest/cohort.json", {"users": cohort.users, "tz": cfg.tz, "min_days": cfg.min_days})


def load_cohort(ws: Workspace) -> CohortDataset:
    meta = ws.read_json("ingest/cohort.json")
    return CohortDataset(
        parse_events(ws.read_text("ingest/events.csv")),
        parse_daily_metrics(ws.read_text("ingest/daily_metrics.csv")),
        parse_bfi(ws.read_text("ingest/bfi.csv")),
        list(meta["users"]), meta["tz"], meta["min_days"],
    )


def stage_featurize(cfg: PipelineConfig, ws: Workspace) -> None:
    cohort = load_cohort(ws)
    vectors = featurize_cohort(cohort, night=cfg.night)

    def raw(fh):
        fh.write(",".join(["user_id", *FEATURE_NAMES]) + "\n")
        for v in vectors:
            cells = ["" if math.isnan(v.values[n]) else repr(float(v.values[n])) for n in FEATURE_NAMES]
            fh.write(",".join([v.user_id, *cells]) + "\n")

    ws.write_with("features/raw_features.csv", raw)
    matrix = build_matrix(vectors, max_missing=cfg.max_missing)
    log.info("feature matrix %d x %d (%d dropped)", *matrix.shape, len(matrix.dropped))
    ws.write_with("features/features.csv", matrix.write_csv)
    ws.write_json("features/features.json", matrix.sidecar())


def load_matrix(ws: Workspace) -> FeatureMatrix:
    return FeatureMatrix.read_csv(io.StringIO(ws.read_text("features/features.csv")),
                                  ws.read_json("features/features.json"))


def _scoring_key(cfg: PipelineConfig) -> ScoringKey:
    if cfg.inputs.key is None:
        return default_key()
    with open(_input_path(cfg.inputs.key, "scoring key")) as fh:
        return ScoringKey.read_csv(fh)


def stage_targets(cfg: PipelineConfig, ws: Workspace) -> None:
    users = ws.read_json("ingest/cohort.json")["users"]
    responses = parse_bfi(ws.read_text("ingest/bfi.csv"))
    scores = score_cohort(responses, _scoring_key(cfg), users=users)
    ws.write_with("targets/scores.csv", lambda fh: write_scores(scores, fh))
    thresholds = {}
    for scheme in cfg.schemes:
        sets = []
        for t in TRAITS:
            try:
                sets.append(discretize({s.user_id: s.scores[t] for s in scores}, scheme, trait=t))
            except ValueError as exc:
                raise ValueError(f"{t}: {exc}") from None
        thresholds[scheme] = {ls.trait: list(ls.thresholds) for ls in sets}
        ws.write_with(f"targets/labels_{scheme}.csv", lambda fh, sets=sets: write_labels(sets, users, fh))
    ws.write_json("targets/thresholds.json", thresholds)


@dataclass
class CellData:
    X: np.ndarray
    y: np.ndarray
    raw_scores: np.ndarray
    names: list[str]
    n_classes: int


def load_cell(ws: Workspace, trait: str, scheme: str) -> CellData:
    matrix = load_matrix(ws)
    labels = read_labels(io.StringIO(ws.read_text(f"targets/labels_{scheme}.csv")))[trait]
    scores = {s.user_id: s.scores[trait] for s in read_scores(io.StringIO(ws.read_text("targets/scores.csv")))}
    y = np.array([labels[u] for u in matrix.users], dtype=np.int64)
    raw = np.array([scores[u] for u in matrix.users], dtype=float)
    return CellData(matrix.values, y, raw, list(matrix.names), LabelScheme(scheme).n_classes)


def _select(cfg: PipelineConfig, model: str, n_classes: int, X, y, names, seed: int):
    spec = ModelSpec(model, dict(cfg.base_params[model]), n_classes)
    return rfe_cv(spec, X, y, cfg.folds, seed, step=cfg.rfe.step, feature_names=names, average=cfg.f1)


def _tune(cfg: PipelineConfig, model: str, n_classes: int, X, y, seed: int):
    space = SearchSpace.from_dict(cfg.spaces[model])
    base = dict(cfg.base_params[model])
    spec = ModelSpec(model, base, n_classes)
    cv_seed = derive_seed(seed, 0)

    def objective(config):
        return cross_validate(spec.with_params({**base, **config}), X, y, cfg.folds, cv_seed,
                              average=cfg.f1).mean_f1

    res = bayes_opt(space, objective, cfg.bo.budget, derive_seed(seed, 1),
                    init_points=cfg.bo.init_points, n_candidates=cfg.bo.n_candidates,
                    n_restarts=cfg.bo.n_restarts)
    return {**base, **res.best_config}, res


def stage_select(cfg: PipelineConfig, ws: Workspace, **only) -> None:
    for t, s, m in iter_cells(cfg, **only):
        d = load_cell(ws, t, s)
        seed = cell_seed(cfg, "select", t, s, m)
        res = _select(cfg, m, d.n_classes, d.X, d.y, d.names, seed)
        name = cell_name(t, s, m)
        log.info("%s: %d of %d features, mean F1 %.3f", name, len(res.selected), len(d.names), res.score)
        ws.write_json(f"select/{name}.json", {"trait": t, "scheme": s, "model": m, "seed": seed,
                                             "selected": res.selected, "score": res.score})
        ws.write_text(f"select/{name}_trace.csv", _rows_csv(res.trace_rows()))


def _selected(cfg: PipelineConfig, ws: Workspace, name: str, names: list[str]) -> list[str]:
    rel = f"select/{name}.json"
    if ws.exists(rel):
        return list(ws.read_json(rel)["selected"])
    log.warning("%s: no cached selection, using all %d features", name, len(names))
    return list(names)


def stage_tune(cfg: PipelineConfig, ws: Workspace, **only) -> None:
    for t, s, m in iter_cells(cfg, **only):
        d = load_cell(ws, t, s)
        name = cell_name(t, s, m)
        feats = _selected(cfg, ws, name, d.names)
        seed = cell_seed(cfg, "tune", t, s, m)
        idx = [d.names.index(f) for f in feats]
        params, res = _tune(cfg, m, d.n_classes, d.X[:, idx], d.y, seed)
        log.info("%s: best mean F1 %.3f after %d evaluations", name, res.best_score, len(res.trace))
        ws.write_json(f"tune/{name}.json", {"trait": t, "scheme": s, "model": m, "seed": seed,
                                           "features": feats, "params": params,
                                           "best_config": res.best_config, "best_score": res.best_score})
        ws.write_text(f"tune/{name}_trace.csv", _rows_csv(res.trace_rows()))


def _tuned_params(cfg: PipelineConfig, ws: Workspace, name: str, model: str) -> dict[str, Any]:
    rel = f"tune/{name}.json"
    if ws.exists(rel):
        return dict(ws.read_json(rel)["params"])
    log.warning("%s: no cached tuning, using base parameters", name)
    return dict(cfg.base_params[model])


def stage_evaluate(cfg: PipelineConfig, ws: Workspace, **only) -> None:
    for t, s, m in iter_cells(cfg, **only):
        d = load_cell(ws, t, s)
        name = cell_name(t, s, m)
        feats = _selected(cfg, ws, name, d.names)
        params = _tuned_params(cfg, ws, name, m)
        seed = cell_seed(cfg, "evaluate", t, s, m)
        scheme = LabelScheme(s)

        labeler = None
        if cfg.fold_local_thresholds:
            def labeler(tr, te, raw=d.raw_scores):
                th = thresholds_for(raw[tr], scheme)
                lab = np.array([apply_thresholds(v, th) for v in raw], dtype=np.int64)
                return lab[tr], lab[te]

        spec = ModelSpec(m, params, d.n_classes)
        fold_info: list[dict[str, Any]] = []
        if cfg.rfe.mode == "paper":
            idx = [d.names.index(f) for f in feats]
            rep = cross_validate(spec, d.X[:, idx], d.y, cfg.folds, seed, average=cfg.f1,
                                 feature_names=feats, trait=t, scheme=s, fold_labeler=labeler)
        else:
            def fold_fit(X_tr, y_tr, X_te, fseed):
                sel = _select(cfg, m, d.n_classes, X_tr, y_tr, d.names, derive_seed(fseed, 0))
                j = [d.names.index(f) for f in sel.selected]
                p, _ = _tune(cfg, m, d.n_classes, X_tr[:, j], y_tr, derive_seed(fseed, 1))
                model = ModelSpec(m, p, d.n_classes).fit(X_tr[:, j], y_tr, derive_seed(fseed, 2))
                fold_info.append({"selected": sel.selected, "params": p})
                return model.predict(X_te[:, j])

            rep = cross_validate(spec, d.X, d.y, cfg.folds, seed, average=cfg.f1, trait=t, scheme=s,
                                 fold_labeler=labeler, fold_fit=fold_fit)
            rep.selected_features = feats
            rep.params = params

        # the importance ranking comes from one model fitted on every user
        idx = [d.names.index(f) for f in feats]
        final = spec.fit(d.X[:, idx], d.y, derive_seed(seed, 99), feature_names=feats)
        rep.importance = model_importance(final)
        rep.extra = {"mode": cfg.rfe.mode, "folds": cfg.folds,
                     "fold_local_thresholds": cfg.fold_local_thresholds}
        if fold_info:
            rep.extra["fold_selection"] = fold_info
        log.info("%s: mean F1 %.3f (sd %.3f)", name, rep.mean_f1, rep.std_f1)
        ws.write_json(f"evaluate/{name}.json", rep.to_dict())
        ws.write_json(f"evaluate/models/{name}.json", final.to_dict())


def _reference(cfg: PipelineConfig) -> ReferenceStats:
    if cfg.inputs.reference is None:
        return default_reference()
    with open(_input_path(cfg.inputs.reference, "reference statistics")) as fh:
        return ReferenceStats.read_csv(fh)


def stage_report(cfg: PipelineConfig, ws: Workspace) -> None:
    from .modelsel import CVReport

    reports = [CVReport.from_dict(ws.read_json(f"evaluate/{cell_name(*c)}.json")) for c in iter_cells(cfg)]
    tables = {"table1": results_table(reports), "importance": importance_table(reports)}
    scores = read_scores(io.StringIO(ws.read_text("targets/scores.csv")))
    tables["comparison"] = comparison_table(compare_population(scores, _reference(cfg)))
    for stem, table in tables.items():
        for fmt in cfg.report_formats:
            ws.write_text(f"report/{stem}.{fmt}", table.render(fmt))
    curves = []
    for t in TRAITS:
        try:
            curves.append(kde([s.scores[t] for s in scores], trait=t))
        except ValueError as exc:
            log.warning("no density curve for %s: %s", t, exc)
    ws.write_with("report/kde.csv", lambda fh: write_curves(curves, fh))


STAGE_FUNCS = {
    "ingest": stage_ingest, "featurize": stage_featurize, "targets": stage_targets,
    "select": stage_select, "tune": stage_tune, "evaluate": stage_evaluate, "report": stage_report,
}


# -- runs --------------------------------------------------------------------

@dataclass
class RunManifest:
    config_hash: str
    seed: int
    version: str
    artifacts: list[dict[str, str]] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"config_hash": self.config_hash, "seed": self.seed, "version": self.version,
                "artifacts": self.artifacts, "timings": self.timings}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunManifest":
        return cls(d["config_hash"], d["seed"], d["version"], list(d["artifacts"]), dict(d["timings"]))

    def hashes(self) -> dict[str, str]:
        return {a["path"]: a["sha256"] for a in self.artifacts}


def _artifact_list(root: Path) -> list[dict[str, str]]:
    out = []
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.name not in (LOCK_NAME, MANIFEST_NAME):
            out.append({"path": p.relative_to(root).as_posix(), "sha256": sha256_file(p)})
    return out


def run_stage(cfg: PipelineConfig, stage: str, ws: Workspace | None = None, **only) -> Workspace:
    """Run one stage against the cached artifacts in ``cfg.output_dir``.

    On failure the stage's own outputs are removed and a ``StageError`` naming
    the stage is raised.
    """
    ws = ws or Workspace(cfg.output_dir)
    func = STAGE_FUNCS[stage]
    mark = len(ws.written)
    with _stage(stage):
        log.info("starting")
        try:
            if only:
                func(cfg, ws, **only)
            else:
                func(cfg, ws)
        except Exception as exc:
            for p in ws.written[mark:]:
                with contextlib.suppress(FileNotFoundError):
                    p.unlink()
            del ws.written[mark:]
            raise StageError(stage, str(exc)) from exc
    return ws


def run_pipeline(cfg: PipelineConfig) -> RunManifest:
    """Every stage in order for every configured cell; writes ``manifest.json``."""
    ws = Workspace(cfg.output_dir)
    manifest = RunManifest(cfg.digest(), cfg.seed, __version__)
    with ws.lock():
        with contextlib.suppress(FileNotFoundError):
            (ws.root / MANIFEST_NAME).unlink()
        try:
            for stage in STAGES:
                t0 = time.perf_counter()
                run_stage(cfg, stage, ws)
                manifest.timings[stage] = round(time.perf_counter() - t0, 3)
        except StageError:
            ws.discard_written()
            raise
        manifest.artifacts = _artifact_list(ws.root)
        (ws.root / MANIFEST_NAME).write_text(_json_text(manifest.to_dict()))
    return manifest


def configure_logging(level: int = logging.INFO) -> None:
    handler = logging.StreamHandler()
    handler.addFilter(StageFilter())
    handler.setFormatter(logging.Formatter("[%(stage)s] %(levelname)s %(message)s"))
    root = logging.getLogger("sensetraits")
    root.handlers[:] = [handler]
    root.setLevel(level)
    root.propagate = False
