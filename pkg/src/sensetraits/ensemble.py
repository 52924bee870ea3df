"""Random forest and gradient-boosted tree classifiers."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Sequence

import numpy as np
from scipy.special import expit, softmax

from .trees import GRADHESS, IMPURITY, Tree, TreeParams, fit_tree, presort, tree_importance

MODEL_FORMAT_VERSION = 1
RF = "rf"
GBT = "gbt"


class _Params:
    @classmethod
    def from_dict(cls, d: dict[str, Any]):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class RFParams(_Params):
    n_trees: int = 100
    max_depth: int = 8
    min_samples_leaf: int = 1
    feature_fraction: float = 0.3

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")

    def tree_params(self) -> TreeParams:
        return TreeParams(max_depth=self.max_depth, min_samples_leaf=self.min_samples_leaf,
                          feature_fraction=self.feature_fraction, mode=IMPURITY)


@dataclass(frozen=True)
class GBTParams(_Params):
    n_rounds: int = 100
    learning_rate: float = 0.1
    max_depth: int = 3
    lambda_l2: float = 1.0
    min_split_gain: float = 0.0
    subsample: float = 1.0
    feature_fraction: float = 1.0
    min_samples_leaf: int = 1

    def __post_init__(self):
        if self.n_rounds < 1:
            raise ValueError("n_rounds must be >= 1")
        # 0 is allowed so a model can be pinned at its prior
        if not 0 <= self.learning_rate <= 1:
            raise ValueError("learning_rate must be in [0, 1]")
        if not 0 < self.subsample <= 1:
            raise ValueError("subsample must be in (0, 1]")

    def tree_params(self) -> TreeParams:
        return TreeParams(max_depth=self.max_depth, min_samples_leaf=self.min_samples_leaf,
                          min_split_gain=self.min_split_gain, lambda_l2=self.lambda_l2,
                          feature_fraction=self.feature_fraction, mode=GRADHESS)


def params_for(kind: str, d: dict[str, Any] | None = None):
    cls = {RF: RFParams, GBT: GBTParams}.get(kind)
    if cls is None:
        raise ValueError(f"unknown model kind: {kind}")
    return cls.from_dict(d or {})


@dataclass
class ClassifierModel:
    kind: str
    n_classes: int
    params: dict[str, Any]
    seed: int
    feature_names: list[str]
    # RF: one probability tree per entry. GBT: one list of K (or 1) weight trees per round.
    trees: list = field(default_factory=list)
    init_margin: np.ndarray | None = None
    train_loss: list[float] = field(default_factory=list)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def all_trees(self) -> list[Tree]:
        if self.kind == RF:
            return list(self.trees)
        return [t for rnd in self.trees for t in rnd]

    def margins(self, X) -> np.ndarray:
        X = _check_X(X, self.n_features)
        cols = 1 if self.n_classes == 2 else self.n_classes
        out = np.tile(self.init_margin, (X.shape[0], 1)).reshape(X.shape[0], cols)
        if X.shape[0] == 0:
            return out
        eta = self.params["learning_rate"]
        for rnd in self.trees:
            for k, tree in enumerate(rnd):
                out[:, k] += eta * tree.predict(X)
        return out

    def predict_proba(self, X) -> np.ndarray:
        X = _check_X(X, self.n_features)
        if self.kind == RF:
            out = np.zeros((X.shape[0], self.n_classes))
            if X.shape[0] == 0:
                return out
            for tree in self.trees:
                out += tree.predict(X)
            return out / len(self.trees)
        return _margins_to_proba(self.margins(X), self.n_classes)

    def predict(self, X) -> np.ndarray:
        # np.argmax resolves ties to the lowest class index
        return np.argmax(self.predict_proba(X), axis=1)

    def to_dict(self) -> dict[str, Any]:
        if self.kind == RF:
            trees = [t.to_dict() for t in self.trees]
        else:
            trees = [[t.to_dict() for t in rnd] for rnd in self.trees]
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "kind": self.kind,
            "n_classes": self.n_classes,
            "params": self.params,
            "seed": self.seed,
            "feature_names": self.feature_names,
            "init_margin": None if self.init_margin is None else self.init_margin.tolist(),
            "trees": trees,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ClassifierModel":
        if d.get("format_version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model format version: {d.get('format_version')}")
        if d["kind"] == RF:
            trees = [Tree.from_dict(t) for t in d["trees"]]
        else:
            trees = [[Tree.from_dict(t) for t in rnd] for rnd in d["trees"]]
        init = d.get("init_margin")
        return cls(kind=d["kind"], n_classes=d["n_classes"], params=d["params"], seed=d["seed"],
                   feature_names=list(d["feature_names"]), trees=trees,
                   init_margin=None if init is None else np.asarray(init, dtype=float))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "ClassifierModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _check_X(X, n_features: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1 and X.size == 0:
        X = X.reshape(0, n_features)
    if X.ndim != 2 or X.shape[1] != n_features:
        raise ValueError(f"shape mismatch: model expects {n_features} columns, got {X.shape}")
    return X


def _check_labels(X, y, n_classes: int | None):
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError(f"shape mismatch: X {X.shape} vs y {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.mod(y, 1) == 0):
            raise ValueError("labels must be integers")
    y = y.astype(np.int64)
    k = int(y.max()) + 1 if n_classes is None else int(n_classes)
    present = np.unique(y)
    if present.min() < 0 or present.max() >= k:
        raise ValueError(f"labels must lie in 0..{k - 1}")
    if len(present) < 2:
        raise ValueError("degenerate training labels: a single class")
    if len(present) < k:
        raise ValueError(f"degenerate training labels: classes {sorted(set(range(k)) - set(present))} absent")
    return X, y, k


def _names(feature_names, d):
    if feature_names is None:
        return [f"f{i}" for i in range(d)]
    if len(feature_names) != d:
        raise ValueError("feature_names length differs from column count")
    return list(feature_names)


def _margins_to_proba(margins: np.ndarray, n_classes: int) -> np.ndarray:
    if n_classes == 2:
        p1 = expit(margins[:, 0])
        return np.column_stack([1.0 - p1, p1])
    return softmax(margins, axis=1)


def fit_rf(X, y, params: RFParams, seed: int, *, feature_names: Sequence[str] | None = None,
           n_classes: int | None = None, bootstrap: bool = True) -> ClassifierModel:
    """Random forest of Gini trees on bootstrap resamples.

    ``bootstrap=False`` gives every tree the identity sample (test hook).
    """
    X, y, k = _check_labels(X, y, n_classes)
    n = X.shape[0]
    order = presort(X)
    tp = params.tree_params()
    rng = np.random.default_rng(seed)
    trees = []
    for _ in range(params.n_trees):
        if bootstrap:
            w = np.bincount(rng.integers(0, n, n), minlength=n).astype(np.float64)
        else:
            w = np.ones(n)
        tree_seed = int(rng.integers(2**32))
        trees.append(fit_tree(X, y, tp, tree_seed, n_classes=k, sample_weight=w, order=order))
    return ClassifierModel(kind=RF, n_classes=k, params=params.to_dict(), seed=seed,
                           feature_names=_names(feature_names, X.shape[1]), trees=trees)


def log_loss(y: np.ndarray, proba: np.ndarray) -> float:
    p = np.clip(proba[np.arange(len(y)), y], 1e-300, None)
    return float(-np.mean(np.log(p)))


def fit_gbt(X, y, params: GBTParams, seed: int, *, feature_names: Sequence[str] | None = None,
            n_classes: int | None = None) -> ClassifierModel:
    """Second-order gradient boosting on log-loss.

    Binary targets use one sigmoid tree per round, multiclass targets K
    softmax trees per round. Margins start at the (log-odds / log) class
    priors.
    """
    X, y, k = _check_labels(X, y, n_classes)
    n = X.shape[0]
    order = presort(X)
    tp = params.tree_params()
    rng = np.random.default_rng(seed)
    prior = np.bincount(y, minlength=k) / n
    if k == 2:
        init = np.array([np.log(prior[1] / prior[0])])
        onehot = y[:, None].astype(np.float64)
    else:
        init = np.log(prior)
        onehot = np.eye(k)[y]
    margins = np.tile(init, (n, 1))
    eta = params.learning_rate
    n_keep = max(1, int(round(params.subsample * n)))

    rounds = []
    losses = [log_loss(y, _margins_to_proba(margins, k))]
    for _ in range(params.n_rounds):
        if n_keep < n:
            w = np.zeros(n)
            w[rng.choice(n, n_keep, replace=False)] = 1.0
        else:
            w = None
        if k == 2:
            p = expit(margins)
        else:
            p = softmax(margins, axis=1)
        grad = p - onehot
        hess = p * (1.0 - p)
        rnd = []
        for c in range(margins.shape[1]):
            tree = fit_tree(X, (grad[:, c], hess[:, c]), tp, int(rng.integers(2**32)),
                            sample_weight=w, order=order)
            rnd.append(tree)
        for c, tree in enumerate(rnd):
            margins[:, c] += eta * tree.predict(X)
        rounds.append(rnd)
        losses.append(log_loss(y, _margins_to_proba(margins, k)))

    model = ClassifierModel(kind=GBT, n_classes=k, params=params.to_dict(), seed=seed,
                            feature_names=_names(feature_names, X.shape[1]), trees=rounds,
                            init_margin=init)
    model.train_loss = losses
    return model


def fit_model(kind: str, X, y, params, seed: int, *, feature_names=None,
              n_classes: int | None = None) -> ClassifierModel:
    if isinstance(params, dict):
        params = params_for(kind, params)
    if kind == RF:
        return fit_rf(X, y, params, seed, feature_names=feature_names, n_classes=n_classes)
    if kind == GBT:
        return fit_gbt(X, y, params, seed, feature_names=feature_names, n_classes=n_classes)
    raise ValueError(f"unknown model kind: {kind}")


def predict(model: ClassifierModel, X) -> tuple[np.ndarray, np.ndarray]:
    """Labels and class-probability rows."""
    proba = model.predict_proba(X)
    return np.argmax(proba, axis=1), proba


def model_importance(model: ClassifierModel) -> list[tuple[str, float]]:
    """Features ranked by total split gain, normalized to sum 1.

    Features never used in a split are omitted; ties are ordered by name.
    """
    imp = np.zeros(model.n_features)
    for tree in model.all_trees():
        imp += tree_importance(tree)
    total = imp.sum()
    if total <= 0:
        return []
    ranked = [(name, float(v / total)) for name, v in zip(model.feature_names, imp) if v > 0]
    ranked.sort(key=lambda t: (-t[1], t[0]))
    return ranked
