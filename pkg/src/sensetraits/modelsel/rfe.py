"""Recursive feature elimination with cross-validated stopping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..ensemble import model_importance
from ..seeding import derive_seed
from .cv import ModelSpec, cross_validate


@dataclass
class RFEStep:
    n_features: int
    mean_f1: float
    features: list[str]


@dataclass
class RFEResult:
    selected: list[str]
    score: float
    trace: list[RFEStep] = field(default_factory=list)

    def trace_rows(self) -> list[dict]:
        return [{"n_features": s.n_features, "mean_f1": s.mean_f1, "features": ";".join(s.features)}
                for s in self.trace]


def rfe_cv(spec: ModelSpec, X, y, k: int, seed: int, step: float = 0.1,
           feature_names: Sequence[str] | None = None, average: str = "macro") -> RFEResult:
    """Eliminate the lowest-importance features until one remains.

    Each round scores the current set by ``cross_validate`` (fold seed fixed
    across rounds), then refits on all rows and drops the bottom
    ``max(1, ceil(step * d))`` features by model importance. The returned set
    has the best mean F1; ties go to the smaller set.
    """
    X = np.asarray(X, dtype=np.float64)
    d = X.shape[1]
    if d < 2:
        raise ValueError("rfe_cv needs at least 2 features")
    names = list(feature_names) if feature_names is not None else [f"f{i}" for i in range(d)]
    current = list(range(d))
    trace: list[RFEStep] = []
    cv_seed = derive_seed(seed, 0)
    rnd = 0
    while True:
        cur_names = [names[j] for j in current]
        rep = cross_validate(spec, X[:, current], y, k, cv_seed, average=average)
        trace.append(RFEStep(len(current), rep.mean_f1, cur_names))
        if len(current) == 1:
            break
        model = spec.fit(X[:, current], y, derive_seed(seed, 1, rnd), feature_names=cur_names)
        imp = dict(model_importance(model))
        n_drop = min(max(1, math.ceil(step * len(current) - 1e-12)), len(current) - 1)
        # ascending importance; among equals the later column goes first
        order = sorted(range(len(current)), key=lambda j: (imp.get(cur_names[j], 0.0), -j))
        dropped = set(order[:n_drop])
        current = [c for j, c in enumerate(current) if j not in dropped]
        rnd += 1

    best = max(trace, key=lambda s: (s.mean_f1, -s.n_features))
    return RFEResult(selected=list(best.features), score=best.mean_f1, trace=trace)
