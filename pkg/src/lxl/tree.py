"""CART decision trees (Gini) and a bootstrap random forest built on them.

One tree implementation serves two consumers: the latent surrogate tree (which
needs explicit root-to-leaf paths for rule extraction) and the 2D atlas random
forest (bootstrap + per-node random feature subsets + majority vote).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class TreeNode:
    label: int
    support: int
    counts: np.ndarray
    feature: int = -1          # -1 marks a leaf
    threshold: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    @property
    def is_leaf(self):
        return self.feature < 0


def _gini(counts):
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts / total
    return 1.0 - float((p * p).sum())


def _best_split(x, y, n_classes, feature_idx, min_leaf):
    """Best (feature, threshold, score) over the given features, or None."""
    n = len(y)
    best = None
    for f in feature_idx:
        order = np.argsort(x[:, f], kind="stable")
        xs = x[order, f]
        ys = y[order]
        left = np.zeros(n_classes)
        right = np.bincount(ys, minlength=n_classes).astype(float)
        for i in range(n - 1):
            left[ys[i]] += 1
            right[ys[i]] -= 1
            if xs[i] == xs[i + 1]:
                continue
            nl, nr = i + 1, n - i - 1
            if nl < min_leaf or nr < min_leaf:
                continue
            score = (nl * _gini(left) + nr * _gini(right)) / n
            if best is None or score < best[2] - 1e-12:
                thr = 0.5 * (xs[i] + xs[i + 1])
                best = (f, float(thr), score)
    return best


class DecisionTree:
    """Binary axis-aligned CART classifier."""

    def __init__(self, max_depth=8, min_leaf=5, feature_subset=None, rng=None):
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.feature_subset = feature_subset  # None: all features at every node
        self.rng = rng
        self.root = None
        self.n_classes = 0
        self.n_features = 0

    def fit(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        self.n_classes = int(y.max()) + 1
        self.n_features = x.shape[1]
        self.root = self._grow(x, y, depth=0)
        return self

    def _grow(self, x, y, depth):
        counts = np.bincount(y, minlength=self.n_classes).astype(float)
        node = TreeNode(label=int(np.argmax(counts)), support=len(y), counts=counts)
        if depth >= self.max_depth or len(np.unique(y)) == 1 or len(y) < 2 * self.min_leaf:
            return node
        if self.feature_subset is None:
            feats = np.arange(self.n_features)
        else:
            k = min(self.feature_subset, self.n_features)
            feats = np.sort(self.rng.choice(self.n_features, size=k, replace=False))
        best = _best_split(x, y, self.n_classes, feats, self.min_leaf)
        if best is None:
            return node
        f, thr, _ = best
        mask = x[:, f] <= thr
        node.feature = f
        node.threshold = thr
        node.left = self._grow(x[mask], y[mask], depth + 1)
        node.right = self._grow(x[~mask], y[~mask], depth + 1)
        return node

    def predict(self, x):
        x = np.asarray(x, dtype=np.float64)
        out = np.empty(len(x), dtype=np.int64)
        for i, row in enumerate(x):
            node = self.root
            while not node.is_leaf:
                node = node.left if row[node.feature] <= node.threshold else node.right
            out[i] = node.label
        return out

    def leaf_paths(self):
        """All (premise, leaf) pairs; premise is a list of (feature, op, threshold)."""
        paths = []

        def walk(node, premise):
            if node.is_leaf:
                paths.append((premise, node))
                return
            walk(node.left, premise + [(node.feature, "<=", node.threshold)])
            walk(node.right, premise + [(node.feature, ">", node.threshold)])

        walk(self.root, [])
        return paths

    def path_for(self, row):
        """Root-to-leaf premise for one sample."""
        row = np.asarray(row, dtype=np.float64)
        node = self.root
        premise = []
        while not node.is_leaf:
            if row[node.feature] <= node.threshold:
                premise.append((node.feature, "<=", node.threshold))
                node = node.left
            else:
                premise.append((node.feature, ">", node.threshold))
                node = node.right
        return premise, node

    @property
    def depth(self):
        def d(node):
            return 0 if node.is_leaf else 1 + max(d(node.left), d(node.right))
        return d(self.root)


@dataclass
class RandomForest:
    n_trees: int
    seed: int
    max_depth: int = 12
    min_leaf: int = 1
    trees: list = field(default_factory=list)

    def fit(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if len(np.unique(y)) < 2:
            raise ValueError("random forest requires at least two classes")
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        n, n_features = x.shape
        subset = max(1, int(np.sqrt(n_features)))
        seeds = np.random.SeedSequence(self.seed).spawn(self.n_trees)
        self.trees = []
        self.n_classes = int(y.max()) + 1
        for ss in seeds:
            rng = np.random.default_rng(ss)
            idx = rng.integers(0, n, size=n)  # bootstrap sample
            tree = DecisionTree(max_depth=self.max_depth, min_leaf=self.min_leaf,
                                feature_subset=subset, rng=rng)
            tree.fit(x[idx], y[idx])
            self.trees.append(tree)
        return self

    def predict(self, x):
        votes = np.zeros((len(x), self.n_classes), dtype=np.int64)
        for tree in self.trees:
            preds = tree.predict(x)
            votes[np.arange(len(x)), preds] += 1
        return np.argmax(votes, axis=1)  # ties resolve to the lowest label
