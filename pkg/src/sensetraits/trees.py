"""CART-style decision trees.

One grower serves two purposes: class-probability trees split on Gini
impurity (random forest base learner) and weight trees split on the
second-order boosting gain (gradient boosting base learner).

Trees are stored as flat node arrays. Node 0 is the root; ``feature == -1``
marks a leaf. Split search runs in a numba kernel over per-feature presorted
row orders that are stably partitioned as the tree grows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np
from numba import njit

IMPURITY = "impurity"
GRADHESS = "gradhess"
_MODE_CODE = {IMPURITY: 0, GRADHESS: 1}
GREEDY = "greedy"
EXHAUSTIVE = "exhaustive"

# relative slack used for "strictly better" comparisons in split search
_TIE_RTOL = 1e-12


@dataclass(frozen=True)
class TreeParams:
    max_depth: int = 6
    min_samples_leaf: int = 1
    min_split_gain: float = 0.0
    lambda_l2: float = 1.0
    feature_fraction: float = 1.0
    mode: str = IMPURITY
    search: str = GREEDY

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError(f"max_depth must be >= 1, got {self.max_depth}")
        if self.min_samples_leaf < 1:
            raise ValueError(f"min_samples_leaf must be >= 1, got {self.min_samples_leaf}")
        if self.min_split_gain < 0:
            raise ValueError("min_split_gain must be >= 0")
        if self.lambda_l2 < 0:
            raise ValueError("lambda_l2 must be >= 0")
        if not 0 < self.feature_fraction <= 1:
            raise ValueError(f"feature_fraction must be in (0, 1], got {self.feature_fraction}")
        if self.mode not in _MODE_CODE:
            raise ValueError(f"unknown tree mode: {self.mode}")
        if self.search not in (GREEDY, EXHAUSTIVE):
            raise ValueError(f"unknown tree search: {self.search}")
        if self.search == EXHAUSTIVE and self.feature_fraction < 1:
            raise ValueError("exhaustive search needs feature_fraction = 1")


@dataclass
class Tree:
    feature: np.ndarray  # int64, -1 at leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # (n_nodes, K) probabilities or (n_nodes, 1) weights
    gain: np.ndarray  # split gain, 0 at leaves
    n_samples: np.ndarray  # weighted training rows reaching the node
    n_features: int
    mode: str

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depths[self.left[i]] = depths[i] + 1
                depths[self.right[i]] = depths[i] + 1
        return int(depths.max())

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        X = _check_rows(X, self.n_features)
        return _apply(X, self.feature, self.threshold, self.left, self.right)

    def predict(self, X) -> np.ndarray:
        """Leaf values for every row: ``(n, K)`` probabilities or ``(n,)`` weights."""
        out = self.value[self.apply(X)]
        return out[:, 0] if self.mode == GRADHESS else out

    def to_dict(self) -> dict[str, Any]:
        return {
            "mode": self.mode,
            "n_features": self.n_features,
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "gain": self.gain.tolist(),
            "n_samples": self.n_samples.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Tree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=np.float64),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            value=np.asarray(d["value"], dtype=np.float64).reshape(len(d["feature"]), -1),
            gain=np.asarray(d["gain"], dtype=np.float64),
            n_samples=np.asarray(d["n_samples"], dtype=np.float64),
            n_features=int(d["n_features"]),
            mode=d["mode"],
        )


def _check_rows(X, n_features: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != n_features:
        raise ValueError(f"dimension mismatch: tree expects {n_features} features, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite feature")
    return X


def presort(X) -> np.ndarray:
    """Per-feature stable row order, shape ``(d, n)``; reusable across trees on the same ``X``."""
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T.astype(np.int64))


def fit_tree(X, target, params: TreeParams, seed: int = 0, *, n_classes: int | None = None,
             sample_weight=None, order=None) -> Tree:
    """Grow one tree.

    The default search is greedy top-down growth. ``search="exhaustive"``
    instead returns a minimum-objective tree over every structure of depth
    at most ``max_depth``; its cost grows like ``(n * d) ** max_depth``.
    ``target`` is an integer label vector in impurity mode and a
    ``(gradient, hessian)`` pair in gradhess mode. ``sample_weight`` holds
    non-negative row multiplicities (bootstrap counts, subsample masks);
    rows with weight 0 are ignored. ``order`` is an optional ``presort(X)``.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("X must be a non-empty 2-D matrix")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite feature")
    n, d = X.shape
    w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
    if w.shape != (n,):
        raise ValueError("dimension mismatch: sample_weight length differs from X rows")
    if np.any(w < 0):
        raise ValueError("sample weights must be non-negative")

    if params.mode == IMPURITY:
        y = np.asarray(target)
        if y.shape != (n,):
            raise ValueError(f"dimension mismatch: {n} rows but {y.shape[0]} labels")
        y = y.astype(np.int64)
        if np.any(y < 0):
            raise ValueError("labels must be non-negative integers")
        k = int(y.max()) + 1 if n_classes is None else int(n_classes)
        stats = np.zeros((n, k))
        stats[np.arange(n), y] = w
    else:
        g, h = (np.asarray(a, dtype=np.float64) for a in target)
        if g.shape != (n,) or h.shape != (n,):
            raise ValueError(f"dimension mismatch: {n} rows but gradient/hessian of length {g.shape}/{h.shape}")
        if np.any(h < 0):
            raise ValueError("hessian must be non-negative")
        stats = np.column_stack([g * w, h * w])

    if params.search == EXHAUSTIVE:
        return _fit_exhaustive(X, stats, w, params)
    n_sub = max(1, math.ceil(params.feature_fraction * d - 1e-12))
    if order is None:
        order = presort(X)
    arrays = _grow(X, order, stats, w, _MODE_CODE[params.mode], params.max_depth,
                   float(params.min_samples_leaf), float(params.min_split_gain),
                   float(params.lambda_l2), n_sub, np.uint32(seed % 2**32))
    feature, threshold, left, right, value, gain, n_samples = arrays
    return Tree(feature, threshold, left, right, value, gain, n_samples, d, params.mode)


def predict_tree(tree: Tree, x) -> np.ndarray | float:
    """Leaf value for one row ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("predict_tree expects a single row")
    out = tree.predict(x.reshape(1, -1))[0]
    return float(out) if tree.mode == GRADHESS else out


def tree_importance(tree: Tree) -> np.ndarray:
    """Per-feature sum of split gains (Gini decrease or boosting gain)."""
    imp = np.zeros(tree.n_features)
    split = tree.feature >= 0
    np.add.at(imp, tree.feature[split], tree.gain[split])
    return imp


def training_loss(tree: Tree, X, target, lambda_l2: float = 1.0, min_split_gain: float = 0.0,
                  sample_weight=None) -> float:
    """Objective of a fitted tree on its training rows.

    Impurity mode: count-weighted Gini summed over leaves.
    Gradhess mode: ``sum_leaves(-G^2 / (2 (H + lambda))) + gamma * n_leaves``.
    """
    leaves = tree.apply(X)
    w = np.ones(len(leaves)) if sample_weight is None else np.asarray(sample_weight, float)
    total = 0.0
    for leaf in np.unique(leaves[w > 0]):
        rows = (leaves == leaf) & (w > 0)
        if tree.mode == IMPURITY:
            y = np.asarray(target)[rows]
            counts = np.bincount(y, weights=w[rows])
            m = counts.sum()
            total += m - np.sum(counts**2) / m
        else:
            g, h = target
            G = np.sum(np.asarray(g)[rows] * w[rows])
            H = np.sum(np.asarray(h)[rows] * w[rows])
            total += -0.5 * G * G / (H + lambda_l2) + min_split_gain
    return float(total)


@njit(cache=True)
def _apply(X, feature, threshold, left, right):
    out = np.empty(X.shape[0], dtype=np.int64)
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@njit(cache=True)
def _node_score(s, n, mode, lam):
    # impurity: sum_k c_k^2 / n (Gini decrease is score_L + score_R - score_P)
    # gradhess: G^2 / (H + lambda)
    if mode == 0:
        if n <= 0.0:
            return 0.0
        acc = 0.0
        for k in range(s.shape[0]):
            acc += s[k] * s[k]
        return acc / n
    denom = s[1] + lam
    if denom <= 0.0:
        return 0.0
    return s[0] * s[0] / denom


@njit(cache=True)
def _grow(X, order, stats, w, mode, max_depth, min_leaf, min_gain, lam, n_sub, seed):
    np.random.seed(seed)
    n, d = X.shape
    S = stats.shape[1]

    m = 0
    for i in range(n):
        if w[i] > 0.0:
            m += 1
    ords = np.empty((d, m), dtype=np.int64)
    for f in range(d):
        j = 0
        for i in range(n):
            r = order[f, i]
            if w[r] > 0.0:
                ords[f, j] = r
                j += 1

    cap = 2 * m + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    vdim = S if mode == 0 else 1
    value = np.zeros((cap, vdim))
    gain_out = np.zeros(cap)
    nsamp = np.zeros(cap)

    st_node = np.empty(cap, dtype=np.int64)
    st_lo = np.empty(cap, dtype=np.int64)
    st_hi = np.empty(cap, dtype=np.int64)
    st_depth = np.empty(cap, dtype=np.int64)
    top = 0
    st_node[0] = 0
    st_lo[0] = 0
    st_hi[0] = m
    st_depth[0] = 0
    top = 1
    n_nodes = 1

    goes_left = np.zeros(n, dtype=np.bool_)
    buf = np.empty(m, dtype=np.int64)
    tot = np.empty(S)
    acc = np.empty(S)
    rest = np.empty(S)
    perm = np.arange(d)

    while top > 0:
        top -= 1
        node = st_node[top]
        lo = st_lo[top]
        hi = st_hi[top]
        depth = st_depth[top]

        for k in range(S):
            tot[k] = 0.0
        cnt = 0.0
        for i in range(lo, hi):
            r = ords[0, i]
            cnt += w[r]
            for k in range(S):
                tot[k] += stats[r, k]
        nsamp[node] = cnt
        if mode == 0:
            for k in range(S):
                value[node, k] = tot[k] / cnt if cnt > 0 else 0.0
        else:
            den = tot[1] + lam
            value[node, 0] = -tot[0] / den if den > 0 else 0.0

        if depth >= max_depth or cnt < 2.0 * min_leaf:
            continue
        if mode == 0:
            pure = False
            for k in range(S):
                if tot[k] >= cnt:
                    pure = True
            if pure:
                continue

        parent = _node_score(tot, cnt, mode, lam)

        # feature subset for this split, visited in ascending index order
        if n_sub < d:
            for i in range(d):
                perm[i] = i
            for i in range(n_sub):
                jj = i + np.random.randint(d - i)
                t = perm[i]
                perm[i] = perm[jj]
                perm[jj] = t
            chosen = np.sort(perm[:n_sub].copy())
        else:
            chosen = np.arange(d)

        best_gain = -np.inf
        best_f = -1
        best_thr = 0.0
        for fi in range(chosen.shape[0]):
            f = chosen[fi]
            for k in range(S):
                acc[k] = 0.0
            cl = 0.0
            for i in range(lo, hi - 1):
                r = ords[f, i]
                cl += w[r]
                for k in range(S):
                    acc[k] += stats[r, k]
                a = X[r, f]
                b = X[ords[f, i + 1], f]
                if not a < b:
                    continue
                cr = cnt - cl
                if cl < min_leaf or cr < min_leaf:
                    continue
                for k in range(S):
                    rest[k] = tot[k] - acc[k]
                sl = _node_score(acc, cl, mode, lam)
                sr = _node_score(rest, cr, mode, lam)
                if mode == 0:
                    g = sl + sr - parent
                else:
                    g = 0.5 * (sl + sr - parent) - min_gain
                if g > best_gain + _TIE_RTOL * (abs(best_gain) + 1.0) or best_f < 0:
                    best_gain = g
                    best_f = f
                    thr = 0.5 * (a + b)
                    if thr >= b:
                        thr = a
                    best_thr = thr

        if best_f < 0:
            continue
        if mode == 0:
            if best_gain <= min_gain + _TIE_RTOL * (parent + 1.0):
                continue
        elif best_gain <= _TIE_RTOL * (parent + 1.0):
            continue

        for i in range(lo, hi):
            r = ords[best_f, i]
            goes_left[r] = X[r, best_f] <= best_thr
        n_left = 0
        for i in range(lo, hi):
            if goes_left[ords[0, i]]:
                n_left += 1
        for f in range(d):
            a_pos = 0
            b_pos = n_left
            for i in range(lo, hi):
                r = ords[f, i]
                if goes_left[r]:
                    buf[a_pos] = r
                    a_pos += 1
                else:
                    buf[b_pos] = r
                    b_pos += 1
            for i in range(hi - lo):
                ords[f, lo + i] = buf[i]

        li = n_nodes
        ri = n_nodes + 1
        n_nodes += 2
        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = li
        right[node] = ri
        gain_out[node] = best_gain
        # right pushed first so the left subtree is expanded first
        st_node[top] = ri
        st_lo[top] = lo + n_left
        st_hi[top] = hi
        st_depth[top] = depth + 1
        top += 1
        st_node[top] = li
        st_lo[top] = lo
        st_hi[top] = lo + n_left
        st_depth[top] = depth + 1
        top += 1

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy(), gain_out[:n_nodes].copy(),
            nsamp[:n_nodes].copy())


# -- exhaustive structure search ------------------------------------------------

def _leaf_objective(s: np.ndarray, cnt: float, mode: int, lam: float, gamma: float) -> float:
    if mode == 0:
        return cnt - float(np.sum(s * s)) / cnt if cnt > 0 else 0.0
    return -0.5 * s[0] * s[0] / (s[1] + lam) + gamma if s[1] + lam > 0 else gamma


def _fit_exhaustive(X: np.ndarray, stats: np.ndarray, w: np.ndarray, params: TreeParams) -> Tree:
    """Minimize the regularized training objective over all trees.

    Impurity mode: weighted Gini summed over leaves plus ``min_split_gain``
    per split. Gradhess mode: ``sum_leaves(-G^2 / (2 (H + lambda))) + gamma
    * n_leaves``. Equal objectives keep the earlier candidate: a leaf before
    any split, then lower feature, then lower threshold.
    """
    mode = _MODE_CODE[params.mode]
    lam, gamma = float(params.lambda_l2), float(params.min_split_gain)
    min_leaf = float(params.min_samples_leaf)
    leaf_gamma = gamma if mode == 1 else 0.0
    split_cost = gamma if mode == 0 else 0.0
    n, d = X.shape

    def better(a, b):
        return a < b - _TIE_RTOL * (abs(b) + 1.0)

    def search(rows: np.ndarray, depth: int):
        s = stats[rows].sum(axis=0)
        cnt = float(w[rows].sum())
        best = (_leaf_objective(s, cnt, mode, lam, leaf_gamma), None)
        if depth == 0 or cnt < 2 * min_leaf:
            return best
        if mode == 0 and np.any(s >= cnt):
            return best
        for f in range(d):
            xs = X[rows, f]
            vals = np.unique(xs)
            for a, b in zip(vals[:-1], vals[1:]):
                thr = 0.5 * (a + b)
                if thr >= b:
                    thr = a
                go_left = xs <= thr
                lrows, rrows = rows[go_left], rows[~go_left]
                if w[lrows].sum() < min_leaf or w[rrows].sum() < min_leaf:
                    continue
                lo = search(lrows, depth - 1)
                ro = search(rrows, depth - 1)
                total = lo[0] + ro[0] + split_cost
                if better(total, best[0]):
                    best = (total, (f, thr, lrows, rrows, lo, ro))
        return best

    nodes: list[dict] = []

    def emit(rows, result) -> int:
        idx = len(nodes)
        s = stats[rows].sum(axis=0)
        cnt = float(w[rows].sum())
        if mode == 0:
            value = s / cnt if cnt > 0 else np.zeros_like(s)
        else:
            value = np.array([-s[0] / (s[1] + lam) if s[1] + lam > 0 else 0.0])
        node = {"feature": -1, "threshold": 0.0, "left": -1, "right": -1, "value": value,
                "gain": 0.0, "n": cnt}
        nodes.append(node)
        split = result[1]
        if split is not None:
            f, thr, lrows, rrows, lo, ro = split
            sl, sr = stats[lrows].sum(axis=0), stats[rrows].sum(axis=0)
            cl, cr = float(w[lrows].sum()), float(w[rrows].sum())
            g = _node_score(sl, cl, mode, lam) + _node_score(sr, cr, mode, lam) - _node_score(s, cnt, mode, lam)
            node.update(feature=f, threshold=thr, gain=g if mode == 0 else 0.5 * g - gamma)
            node["left"] = emit(lrows, lo)
            node["right"] = emit(rrows, ro)
        return idx

    live = np.flatnonzero(w > 0)
    emit(live, search(live, params.max_depth))
    return Tree(
        feature=np.array([x["feature"] for x in nodes], dtype=np.int64),
        threshold=np.array([x["threshold"] for x in nodes], dtype=np.float64),
        left=np.array([x["left"] for x in nodes], dtype=np.int64),
        right=np.array([x["right"] for x in nodes], dtype=np.int64),
        value=np.array([x["value"] for x in nodes], dtype=np.float64),
        gain=np.array([x["gain"] for x in nodes], dtype=np.float64),
        n_samples=np.array([x["n"] for x in nodes], dtype=np.float64),
        n_features=d,
        mode=params.mode,
    )
