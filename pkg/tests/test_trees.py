import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import Problem, global_oracle, greedy_oracle, partition_loss, random_fixture
from sensetraits.trees import (
    Tree, TreeParams, fit_tree, predict_tree, tree_importance, training_loss,
)


def stump_params(**kw):
    return TreeParams(max_depth=1, **kw)


def test_separable_stump():
    x = np.array([-3.0, -2.0, -1.0, 0.0, 1.0, 2.0])[:, None]
    y = (x[:, 0] >= 0).astype(int)
    tree = fit_tree(x, y, stump_params())
    assert tree.feature[0] == 0 and tree.threshold[0] == -0.5
    assert np.array_equal(tree.predict(x).argmax(axis=1), y)


def test_pure_labels_make_one_leaf():
    tree = fit_tree(np.arange(10.0)[:, None], np.ones(10, int), TreeParams(), n_classes=2)
    assert tree.n_nodes == 1 and tree.n_leaves == 1


def test_gradhess_root_split_by_hand():
    x = np.array([[0.0], [1.0], [2.0], [3.0]])
    g = np.array([-1.0, -0.5, 0.5, 2.0])
    h = np.array([0.25, 0.25, 0.5, 0.5])
    lam = 1.0

    def score(G, H):
        return G * G / (H + lam)

    G, H = g.sum(), h.sum()
    gains = []
    for cut in (1, 2, 3):
        GL, HL = g[:cut].sum(), h[:cut].sum()
        gains.append(0.5 * (score(GL, HL) + score(G - GL, H - HL) - score(G, H)))
    best = int(np.argmax(gains)) + 1
    tree = fit_tree(x, (g, h), stump_params(mode="gradhess", lambda_l2=lam))
    assert tree.threshold[0] == best - 0.5
    assert tree.gain[0] == pytest.approx(max(gains), abs=1e-12)
    wl = -g[:best].sum() / (h[:best].sum() + lam)
    wr = -g[best:].sum() / (h[best:].sum() + lam)
    assert tree.value[tree.left[0], 0] == pytest.approx(wl, abs=1e-12)
    assert tree.value[tree.right[0], 0] == pytest.approx(wr, abs=1e-12)


def test_predict_single_leaf():
    tree = fit_tree(np.zeros((4, 2)), np.array([0, 1, 0, 1]), TreeParams())
    assert np.allclose(predict_tree(tree, [5.0, -7.0]), [0.5, 0.5])


def test_predict_goes_left_at_or_below_threshold():
    x = np.array([[-2.0], [-1.0], [1.0], [2.0]])
    tree = fit_tree(x, np.array([0, 0, 1, 1]), stump_params())
    assert predict_tree(tree, [-1.0])[0] == 1.0
    assert predict_tree(tree, [tree.threshold[0]])[0] == 1.0


def test_predict_rejects_nan_and_bad_width():
    tree = fit_tree(np.array([[0.0], [1.0]]), np.array([0, 1]), stump_params())
    with pytest.raises(ValueError, match="non-finite feature"):
        predict_tree(tree, [np.nan])
    with pytest.raises(ValueError, match="dimension mismatch"):
        predict_tree(tree, [0.0, 1.0])


def test_fit_errors():
    with pytest.raises(ValueError, match="dimension mismatch"):
        fit_tree(np.zeros((3, 1)), np.array([0, 1]), TreeParams())
    with pytest.raises(ValueError, match="hessian"):
        fit_tree(np.zeros((2, 1)), (np.zeros(2), -np.ones(2)), TreeParams(mode="gradhess"))


def test_importance():
    leaf = fit_tree(np.zeros((4, 5)), np.array([0, 1, 0, 1]), TreeParams())
    assert not tree_importance(leaf).any()
    X = np.zeros((6, 5))
    X[:, 3] = np.arange(6)
    stump = fit_tree(X, np.array([0, 0, 0, 1, 1, 1]), stump_params())
    imp = tree_importance(stump)
    assert np.flatnonzero(imp).tolist() == [3]


def test_importance_sums_two_split_gains():
    # root splits on feature 0, the left child on feature 1
    X = np.array([[0, 0], [0, 1], [0, 1], [1, 0], [1, 0], [1, 0]], dtype=float)
    y = np.array([0, 1, 1, 2, 2, 2])
    tree = fit_tree(X, y, TreeParams(max_depth=2))
    # Gini decrease in count units: sum c^2/n over children minus parent
    root = (1 + 4) / 3 + 9 / 3 - (1 + 4 + 9) / 6
    child = 1 / 1 + 4 / 2 - (1 + 4) / 3
    imp = tree_importance(tree)
    assert imp[0] == pytest.approx(root) and imp[1] == pytest.approx(child)


@pytest.mark.parametrize("mode", ["impurity", "gradhess"])
def test_greedy_matches_per_node_oracle(mode):
    rng = np.random.default_rng(7)
    for _ in range(40):
        X, target = random_fixture(rng, mode)
        depth = int(rng.integers(1, 3))
        lam = 1.0 if mode == "gradhess" else 0.0
        p = Problem(X, target, mode, lam=lam)
        tree = fit_tree(X, target, TreeParams(max_depth=depth, mode=mode, lambda_l2=lam))
        expected, _ = greedy_oracle(p, depth)
        assert partition_loss(p, tree.apply(X)) == expected


@pytest.mark.parametrize("mode", ["impurity", "gradhess"])
def test_exhaustive_matches_global_oracle(mode):
    rng = np.random.default_rng(8)
    for _ in range(25):
        X, target = random_fixture(rng, mode)
        depth = int(rng.integers(1, 3))
        lam, gamma = (1.0, 0.1) if mode == "gradhess" else (0.0, 0.0)
        p = Problem(X, target, mode, lam=lam, gamma=gamma)
        params = TreeParams(max_depth=depth, mode=mode, lambda_l2=lam, min_split_gain=gamma,
                            search="exhaustive")
        tree = fit_tree(X, target, params)
        assert partition_loss(p, tree.apply(X)) == global_oracle(p, depth)
        # the float-valued objective agrees with the exact one
        assert training_loss(tree, X, target, lam, gamma) == pytest.approx(float(global_oracle(p, depth)),
                                                                           abs=1e-9)


def test_greedy_not_worse_than_global_at_depth_one_equal():
    rng = np.random.default_rng(9)
    for _ in range(20):
        X, y = random_fixture(rng, "impurity")
        p = Problem(X, y, "impurity")
        for depth in (1, 2):
            tree = fit_tree(X, y, TreeParams(max_depth=depth))
            got = partition_loss(p, tree.apply(X))
            best = global_oracle(p, depth)
            assert best <= got
            if depth == 1:
                assert got == best


def test_xor_greedy_stops_where_exhaustive_splits():
    X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
    y = np.array([0, 1, 1, 0])
    greedy = fit_tree(X, y, TreeParams(max_depth=2))
    exact = fit_tree(X, y, TreeParams(max_depth=2, search="exhaustive"))
    assert greedy.n_leaves == 1
    assert training_loss(exact, X, y) == 0.0


def test_determinism_and_serialization():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(50, 4))
    y = (X[:, 0] + rng.normal(size=50) > 0).astype(int)
    p = TreeParams(max_depth=4, feature_fraction=0.5)
    a, b = fit_tree(X, y, p, seed=3), fit_tree(X, y, p, seed=3)
    assert a.to_dict() == b.to_dict()
    c = Tree.from_dict(a.to_dict())
    assert np.array_equal(c.predict(X), a.predict(X))


def _node_rows(tree, X):
    out = {0: np.arange(len(X))}
    stack = [0]
    while stack:
        node = stack.pop()
        if tree.feature[node] < 0:
            continue
        rows = out[node]
        go = X[rows, tree.feature[node]] <= tree.threshold[node]
        out[tree.left[node]], out[tree.right[node]] = rows[go], rows[~go]
        stack += [tree.left[node], tree.right[node]]
    return out


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(-1e3, 1e3), st.integers(1, 5), st.integers(1, 4))
def test_structural_invariants(seed, shift, depth, min_leaf):
    rng = np.random.default_rng(seed)
    n, d = int(rng.integers(5, 40)), int(rng.integers(1, 4))
    X = rng.integers(0, 8, size=(n, d)).astype(float)
    y = rng.integers(0, 3, n)
    params = TreeParams(max_depth=depth, min_samples_leaf=min_leaf)
    tree = fit_tree(X, y, params, n_classes=3)
    leaves = tree.apply(X)
    assert tree.depth() <= depth
    assert np.all(tree.feature[leaves] == -1)
    counts = np.bincount(leaves, minlength=tree.n_nodes)[tree.feature == -1]
    assert counts.sum() == n and counts.min() >= min_leaf
    # thresholds are midpoints of adjacent values among the rows reaching the node
    for node, rows in _node_rows(tree, X).items():
        if tree.feature[node] < 0:
            continue
        vals = np.unique(X[rows, tree.feature[node]])
        assert np.any(np.isclose((vals[:-1] + vals[1:]) / 2, tree.threshold[node]))
    # shifting one column shifts its thresholds and changes no prediction
    X2 = X.copy()
    X2[:, 0] += shift
    tree2 = fit_tree(X2, y, params, n_classes=3)
    assert np.array_equal(tree2.feature, tree.feature)
    assert np.array_equal(tree2.predict(X2), tree.predict(X))
    on0 = tree.feature == 0
    assert np.allclose(tree2.threshold[on0], tree.threshold[on0] + shift, rtol=0, atol=1e-9)
