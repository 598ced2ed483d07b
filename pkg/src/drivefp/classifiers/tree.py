"""Information-gain decision trees and bagged random forests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from drivefp.classifiers.base import (
    Hyperparameters,
    LabeledMatrix,
    TrainedModel,
    default_features_per_split,
)

LEAF = -1
_MIN_GAIN = 1e-12


@dataclass(eq=False)
class Tree:
    """Flat binary tree; ``x[feature] <= threshold`` goes left."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray  # (n_nodes, n_classes) training class counts

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] != LEAF:
                depths[self.left[i]] = depths[i] + 1
                depths[self.right[i]] = depths[i] + 1
        return int(depths.max())

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[node] != LEAF
        rows = np.arange(X.shape[0])
        while active.any():
            r = rows[active]
            n = node[r]
            go_left = X[r, self.feature[n]] <= self.threshold[n]
            node[r] = np.where(go_left, self.left[n], self.right[n])
            active = self.feature[node] != LEAF
        return node

    def leaf_distribution(self, X: np.ndarray) -> np.ndarray:
        counts = self.counts[self.apply(X)].astype(np.float64)
        return counts / counts.sum(axis=1, keepdims=True)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "counts": self.counts.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict, n_features: int, n_classes: int) -> "Tree":
        tree = cls(
            np.asarray(doc["feature"], dtype=np.int64),
            np.asarray(doc["threshold"], dtype=np.float64),
            np.asarray(doc["left"], dtype=np.int64),
            np.asarray(doc["right"], dtype=np.int64),
            np.asarray(doc["counts"], dtype=np.int64).reshape(-1, n_classes),
        )
        n = tree.n_nodes
        if n == 0 or any(len(a) != n for a in (tree.threshold, tree.left, tree.right, tree.counts)):
            raise ValueError("inconsistent tree arrays")
        inner = tree.feature != LEAF
        if np.any(tree.feature[inner] >= n_features) or np.any(tree.feature < LEAF):
            raise ValueError("tree splits on a feature outside the model dimension")
        for child in (tree.left[inner], tree.right[inner]):
            if np.any(child <= 0) or np.any(child >= n):
                raise ValueError("tree child index out of range")
        return tree


def xlogx_table(n: int) -> np.ndarray:
    """``c * log2(c)`` for integer counts 0..n, with 0 log 0 = 0."""
    c = np.arange(n + 1, dtype=np.float64)
    c[0] = 1.0
    out = c * np.log2(c)
    out[0] = 0.0
    return out


@njit(cache=True)
def _scan_splits(xs, y, n_classes, xlogx, parent):
    """Best (column, position, gain) over the columns of ``xs`` plus a fallback.

    Position ``p`` means splitting between the p-th and (p+1)-th smallest
    values. Gains are evaluated only between distinct values and always from
    the class counts directly, so equal partitions give identical gains.
    Ties keep the first column, then the first position. The fallback is the
    median candidate position of the first column that has any candidate.
    """
    n, f = xs.shape
    best_col, best_pos, best_gain = -1, -1, -np.inf
    fb_col, fb_pos = -1, -1
    total = np.zeros(n_classes, dtype=np.int64)
    for i in range(n):
        total[y[i]] += 1
    left = np.empty(n_classes, dtype=np.int64)
    cand = np.empty(n, dtype=np.int64)
    for j in range(f):
        col = xs[:, j]
        order = np.argsort(col, kind="mergesort")
        left[:] = 0
        n_cand = 0
        for i in range(n - 1):
            left[y[order[i]]] += 1
            if col[order[i]] < col[order[i + 1]]:
                cand[n_cand] = i
                n_cand += 1
                child = xlogx[i + 1] + xlogx[n - i - 1]
                for c in range(n_classes):
                    child -= xlogx[left[c]] + xlogx[total[c] - left[c]]
                gain = parent - child / n
                if gain > best_gain:
                    best_col, best_pos, best_gain = j, i, gain
        if fb_col < 0 and n_cand > 0:
            fb_col, fb_pos = j, cand[(n_cand - 1) // 2]
    return best_col, best_pos, best_gain, fb_col, fb_pos


def _best_split(X, y, idx, feats, n_classes, xlogx):
    """(feature, threshold, gain) of the best split of rows ``idx`` or None.

    Ties go to the lowest feature index, then the lowest threshold.
    """
    n = len(idx)
    yn = np.ascontiguousarray(y[idx])
    counts = np.bincount(yn, minlength=n_classes)
    parent = float((xlogx[n] - xlogx[counts].sum()) / n)
    xs = np.ascontiguousarray(X[np.ix_(idx, feats)])
    col, pos, gain, fb_col, fb_pos = _scan_splits(xs, yn, n_classes, xlogx, parent)
    if col >= 0 and gain > _MIN_GAIN:
        return int(feats[col]), _threshold_at(xs[:, col], pos), float(gain)
    if fb_col >= 0:
        return int(feats[fb_col]), _threshold_at(xs[:, fb_col], fb_pos), 0.0
    return None


def _threshold_at(col: np.ndarray, pos: int) -> float:
    s = np.sort(col)
    return _midpoint(s[pos], s[pos + 1])


def _midpoint(a: float, b: float) -> float:
    t = (a + b) / 2
    return float(a if t >= b else t)


def grow_tree(
    X: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    hp: Hyperparameters,
    rows: np.ndarray | None = None,
    features_per_split: int | None = None,
    rng: np.random.Generator | None = None,
) -> Tree:
    """Grow a tree on ``X[rows]``.

    With ``features_per_split`` set, each split looks at a uniformly drawn
    subset of that many features (drawn from ``rng``). A node becomes a leaf
    when it is pure, smaller than ``min_samples_split``, at ``max_depth``, or
    has no two distinct values in any candidate feature. When no candidate
    split has positive gain the node still splits at the median candidate of
    the first usable feature, so conflict-free data is always fit exactly.
    """
    d = X.shape[1]
    rows = np.arange(X.shape[0]) if rows is None else np.asarray(rows)
    all_feats = np.arange(d)
    xlogx = xlogx_table(len(rows))
    feature, threshold, left, right, counts = [], [], [], [], []

    def new_node(idx):
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        counts.append(np.bincount(y[idx], minlength=n_classes))
        return len(feature) - 1

    stack = [(new_node(rows), rows, 0)]
    while stack:
        node, idx, depth = stack.pop()
        c = counts[node]
        if (
            np.count_nonzero(c) <= 1
            or len(idx) < hp.min_samples_split
            or (hp.max_depth is not None and depth >= hp.max_depth)
        ):
            continue
        if features_per_split is not None and features_per_split < d:
            feats = np.sort(rng.choice(d, size=features_per_split, replace=False))
        else:
            feats = all_feats
        split = _best_split(X, y, idx, feats, n_classes, xlogx)
        if split is None:
            continue
        f, thr, _ = split
        mask = X[idx, f] <= thr
        feature[node] = f
        threshold[node] = thr
        li, ri = idx[mask], idx[~mask]
        left[node] = new_node(li)
        right[node] = new_node(ri)
        # right pushed first so the left subtree is numbered first
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return Tree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=np.float64),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(counts, dtype=np.int64).reshape(-1, n_classes),
    )


class DecisionTreeModel(TrainedModel):
    variant = "decision_tree"

    def __init__(self, tree: Tree, class_set, feature_dimension, hyperparameters):
        super().__init__(class_set, feature_dimension, hyperparameters)
        self.tree = tree

    def _proba(self, X):
        return self.tree.leaf_distribution(X)

    def params_dict(self) -> dict:
        return {"tree": self.tree.to_dict()}

    @classmethod
    def from_params(cls, params, class_set, d, hp):
        return cls(Tree.from_dict(params["tree"], d, len(class_set)), class_set, d, hp)


class RandomForestModel(TrainedModel):
    variant = "random_forest"

    def __init__(self, trees: list[Tree], class_set, feature_dimension, hyperparameters):
        super().__init__(class_set, feature_dimension, hyperparameters)
        self.trees = trees

    def votes(self, X: np.ndarray) -> np.ndarray:
        votes = np.zeros((X.shape[0], len(self.class_set)))
        rows = np.arange(X.shape[0])
        for tree in self.trees:
            # argmax keeps the first class on ties
            choice = np.argmax(tree.counts[tree.apply(X)], axis=1)
            votes[rows, choice] += 1
        return votes

    def _proba(self, X):
        return self.votes(X) / len(self.trees)

    def params_dict(self) -> dict:
        return {"trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_params(cls, params, class_set, d, hp):
        trees = [Tree.from_dict(t, d, len(class_set)) for t in params["trees"]]
        if not trees:
            raise ValueError("forest has no trees")
        return cls(trees, class_set, d, hp)


def train_decision_tree(data: LabeledMatrix, hp: Hyperparameters = Hyperparameters()) -> DecisionTreeModel:
    tree = grow_tree(data.X, data.y, data.n_classes, hp)
    return DecisionTreeModel(tree, data.class_set, data.n_features, hp)


def tree_seed(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def train_random_forest(data: LabeledMatrix, hp: Hyperparameters = Hyperparameters()) -> RandomForestModel:
    """Bagged trees with per-split feature subsampling.

    Tree ``i`` draws its bootstrap sample and feature subsets from a generator
    seeded with ``(hp.seed, i)``, so any tree can be rebuilt on its own.
    """
    n, d = data.X.shape
    fps = min(d, hp.features_per_split or default_features_per_split(d))
    trees = []
    for i in range(hp.n_trees):
        rng = tree_seed(hp.seed, i)
        rows = rng.integers(0, n, size=n) if hp.bootstrap else np.arange(n)
        trees.append(grow_tree(data.X, data.y, data.n_classes, hp, rows, fps, rng))
    return RandomForestModel(trees, data.class_set, d, hp)
