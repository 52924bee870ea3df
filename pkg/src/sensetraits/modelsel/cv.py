"""Stratified folds, F1 scoring and cross-validation."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from ..ensemble import ClassifierModel, fit_model, params_for
from ..seeding import derive_seed

AVERAGES = ("macro", "per-class", "positive", "weighted")


@dataclass(frozen=True)
class ModelSpec:
    """What to fit: model kind, hyperparameters and class count."""

    kind: str
    params: dict[str, Any] = field(default_factory=dict)
    n_classes: int | None = None

    def fit(self, X, y, seed: int, feature_names=None) -> ClassifierModel:
        return fit_model(self.kind, X, y, params_for(self.kind, self.params), seed,
                         feature_names=feature_names, n_classes=self.n_classes)

    def with_params(self, params: dict[str, Any]) -> "ModelSpec":
        return ModelSpec(self.kind, dict(params), self.n_classes)


@dataclass
class FoldAssignment:
    k: int
    fold: np.ndarray

    def split(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        return np.flatnonzero(self.fold != i), np.flatnonzero(self.fold == i)

    def __iter__(self):
        return (self.split(i) for i in range(self.k))


@dataclass
class CVReport:
    trait: str | None
    scheme: str | None
    model: str
    fold_f1: list[float]
    mean_f1: float
    std_f1: float
    selected_features: list[str]
    params: dict[str, Any]
    seed: int
    average: str = "macro"
    importance: list[tuple[str, float]] = field(default_factory=list)
    extra: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["importance"] = [list(t) for t in self.importance]
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "CVReport":
        d = dict(d)
        d["importance"] = [tuple(t) for t in d.get("importance", [])]
        return cls(**d)


def stratified_folds(y, k: int, seed: int) -> FoldAssignment:
    """Shuffle each class by ``seed`` and deal its rows round-robin to ``k`` folds.

    The dealing offset carries over from one class to the next so fold sizes
    stay within one of each other overall.
    """
    y = np.asarray(y)
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    classes, counts = np.unique(y, return_counts=True)
    for c, n_c in zip(classes, counts):
        if n_c < k:
            raise ValueError(f"class {c} has {n_c} members, fewer than k={k} folds")
    rng = np.random.default_rng(seed)
    fold = np.empty(len(y), dtype=np.int64)
    offset = 0
    for c in classes:
        rows = rng.permutation(np.flatnonzero(y == c))
        fold[rows] = (offset + np.arange(len(rows))) % k
        offset = (offset + len(rows)) % k
    return FoldAssignment(k, fold)


def f1(y_true, y_pred, average: str = "macro", n_classes: int | None = None):
    """F1 score; per-class F1 is 0 when precision + recall is 0.

    ``macro`` averages over classes present in ``y_true``; ``per-class``
    returns the vector over ``0..K-1``; ``positive`` is class 1 only;
    ``weighted`` weights classes by their ``y_true`` support.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.size == 0:
        raise ValueError("f1 of empty input")
    if y_true.shape != y_pred.shape:
        raise ValueError("y_true and y_pred differ in length")
    if average not in AVERAGES:
        raise ValueError(f"unknown averaging: {average}")
    k = max(y_true.max(), y_pred.max()) + 1 if n_classes is None else n_classes
    tp = np.bincount(y_true[y_true == y_pred], minlength=k).astype(float)
    pred_pos = np.bincount(y_pred, minlength=k).astype(float)
    support = np.bincount(y_true, minlength=k).astype(float)
    # 2PR/(P+R) == 2TP/(pred_pos + support), and 0 when TP == 0
    denom = pred_pos + support
    per_class = np.divide(2 * tp, denom, out=np.zeros(k), where=denom > 0)
    if average == "per-class":
        return per_class
    if average == "positive":
        if k > 2:
            raise ValueError("positive-class F1 requires binary labels")
        return float(per_class[1])
    present = support > 0
    if average == "weighted":
        return float(np.sum(per_class * support) / support.sum())
    return float(np.mean(per_class[present]))


FoldLabeler = Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]


def cross_validate(spec: ModelSpec, X, y, k: int, seed: int, *, average: str = "macro",
                   feature_names: Sequence[str] | None = None, trait: str | None = None,
                   scheme: str | None = None, fold_labeler: FoldLabeler | None = None,
                   fold_fit: Callable | None = None) -> CVReport:
    """Stratified k-fold F1 of ``spec`` on ``(X, y)``.

    Folds are dealt from ``seed``; fold ``i`` fits with ``derive_seed(seed, i)``.
    ``fold_labeler(train_idx, test_idx)`` may replace the labels per fold
    (fold-local thresholds). ``fold_fit(X_tr, y_tr, X_te, seed)`` may replace
    the plain fit-and-predict (nested selection); it returns test predictions.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    folds = stratified_folds(y, k, seed)
    n_classes = spec.n_classes or int(y.max()) + 1
    scores = []
    for i, (tr, te) in enumerate(folds):
        y_tr, y_te = (y[tr], y[te]) if fold_labeler is None else fold_labeler(tr, te)
        fseed = derive_seed(seed, i)
        if fold_fit is None:
            model = spec.fit(X[tr], y_tr, fseed)
            pred = model.predict(X[te])
        else:
            pred = fold_fit(X[tr], y_tr, X[te], fseed)
        scores.append(f1(y_te, pred, average, n_classes=n_classes))
    scores = np.asarray(scores, dtype=float)
    return CVReport(trait=trait, scheme=scheme, model=spec.kind, fold_f1=scores.tolist(),
                    mean_f1=float(np.mean(scores)), std_f1=float(np.std(scores)),
                    selected_features=list(feature_names) if feature_names is not None else [],
                    params=dict(spec.params), seed=seed, average=average)
