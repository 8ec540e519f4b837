"""From-scratch tree learners and a linear baseline over histogram vectors.

The decision tree is CART with Gini-impurity splits; the forest bags trees
over bootstrap resamples with per-split feature subsampling.  The linear
model is logistic regression trained by full-batch gradient descent.  All
learners operate on float feature matrices with integer labels (0 =
goodware, 1 = malware) and share one scoring convention: score in [0, 1] is
the malware probability-like output, and the predicted label is malware
exactly when score >= 0.5 (ties go to malware — the fail-safe direction for
a detector).

Determinism: given identical inputs, params, and seed, training produces a
bit-identical model.  Split ties are broken toward the lowest feature index,
then the lowest threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

LEAF = -1


@dataclass(frozen=True)
class TreeParams:
    max_depth: int | None = None
    min_samples_leaf: int = 1
    feature_subsample: int | None = None  # None = consider all features
    seed: int = 0

    def __post_init__(self) -> None:
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.feature_subsample is not None and self.feature_subsample < 1:
            raise ValueError("feature_subsample must be >= 1")


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    bootstrap: bool = True
    feature_subsample: int | None = None  # None = ceil(sqrt(d))
    max_depth: int | None = None
    min_samples_leaf: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")


@dataclass(frozen=True)
class LinearParams:
    learning_rate: float = 0.5
    epochs: int = 500
    l2: float = 1e-4
    seed: int = 0


@dataclass(eq=False)
class DecisionTree:
    """Flat-array CART tree.

    Node i is internal when ``feature[i] != LEAF``; then samples with
    ``x[feature[i]] <= threshold[i]`` go to ``left[i]``, the rest to
    ``right[i]``.  ``class_counts[i]`` holds the [goodware, malware] training
    counts that reached node i (kept for every node: leaves need them for
    scoring and rule extraction, internal nodes for Gini importance).
    """

    feature: np.ndarray  # int64, LEAF for leaves
    threshold: np.ndarray  # float64, nan for leaves
    left: np.ndarray  # int64 child index, LEAF for leaves
    right: np.ndarray
    class_counts: np.ndarray  # float64 (n_nodes, 2)
    n_features: int
    params: TreeParams

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    def leaf_for(self, x: np.ndarray) -> int:
        node = 0
        while self.feature[node] != LEAF:
            if x[self.feature[node]] <= self.threshold[node]:
                node = int(self.left[node])
            else:
                node = int(self.right[node])
        return node

    def score_one(self, x: np.ndarray) -> float:
        """Malware fraction of the reached leaf (0.5 on an empty tie)."""
        counts = self.class_counts[self.leaf_for(np.asarray(x, dtype=np.float64))]
        total = counts.sum()
        return float(counts[1] / total) if total else 0.5

    def predict_scores(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected (n, {self.n_features}) input, got {X.shape}")
        return np.array([self.score_one(row) for row in X])


def _gini_from_counts(n1: np.ndarray, n: np.ndarray) -> np.ndarray:
    """Gini impurity of binary-label groups given malware counts and sizes."""
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(n > 0, n1 / n, 0.0)
    return 1.0 - p**2 - (1.0 - p) ** 2


def _best_split(
    X: np.ndarray,
    y: np.ndarray,
    feature_ids: np.ndarray,
    min_samples_leaf: int,
) -> tuple[int, float, float] | None:
    """Best (feature, threshold, gini_decrease) over candidate features.

    Candidates are midpoints between consecutive distinct sorted values.
    Returns None when no split yields two children of >= min_samples_leaf.
    Ties in decrease resolve to the lowest feature index, then the lowest
    threshold (features are scanned in ascending order and thresholds
    ascending within a feature, with strict > to replace the incumbent).
    """
    n = y.shape[0]
    total1 = float(y.sum())
    parent_gini = float(_gini_from_counts(np.array(total1), np.array(float(n))))
    best: tuple[int, float, float] | None = None
    for f in np.sort(feature_ids):
        col = X[:, f]
        order = np.argsort(col, kind="stable")
        v = col[order]
        cum1 = np.cumsum(y[order])
        i = np.arange(1, n)  # left side takes sorted rows [0, i)
        valid = v[1:] > v[:-1]
        if min_samples_leaf > 1:
            valid &= (i >= min_samples_leaf) & (n - i >= min_samples_leaf)
        if not valid.any():
            continue
        n_left = i.astype(np.float64)
        n_right = float(n) - n_left
        n1_left = cum1[:-1].astype(np.float64)
        n1_right = total1 - n1_left
        child = (
            n_left * _gini_from_counts(n1_left, n_left)
            + n_right * _gini_from_counts(n1_right, n_right)
        ) / float(n)
        decrease = np.where(valid, parent_gini - child, -np.inf)
        j = int(np.argmax(decrease))  # first max -> lowest threshold
        if decrease[j] == -np.inf:
            continue
        if best is None or decrease[j] > best[2]:
            threshold = float((v[j] + v[j + 1]) / 2.0)
            best = (int(f), threshold, float(decrease[j]))
    return best


def train_decision_tree(
    samples: np.ndarray, labels: np.ndarray, params: TreeParams | None = None
) -> DecisionTree:
    """Grow a CART tree by greedy best-Gini-decrease splitting.

    Growth stops at label purity, max_depth, or when no candidate split
    leaves min_samples_leaf on both sides.  Impure nodes split even at zero
    Gini decrease when a valid candidate exists (XOR-style structure needs
    the zero-gain first cut); every split strictly shrinks both children,
    so growth terminates.
    """
    params = params or TreeParams()
    X = np.asarray(samples, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if X.ndim != 2:
        raise ValueError("samples must be a 2-D matrix")
    if X.shape[0] != y.shape[0]:
        raise ValueError("samples and labels length mismatch")
    if X.shape[0] == 0:
        raise ValueError("cannot train on an empty dataset")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 (goodware) or 1 (malware)")
    d = X.shape[1]
    k = params.feature_subsample
    if k is not None and k > d:
        k = d
    rng = np.random.default_rng(np.random.SeedSequence(params.seed))

    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    counts: list[tuple[float, float]] = []

    def new_node(idx: np.ndarray) -> int:
        node = len(feature)
        feature.append(LEAF)
        threshold.append(math.nan)
        left.append(LEAF)
        right.append(LEAF)
        n1 = float(y[idx].sum())
        counts.append((float(idx.size) - n1, n1))
        return node

    def grow(idx: np.ndarray, depth: int) -> int:
        node = new_node(idx)
        ysub = y[idx]
        if (ysub == ysub[0]).all() or (
            params.max_depth is not None and depth >= params.max_depth
        ):
            return node
        if idx.size < 2 * params.min_samples_leaf:
            return node
        if k is None:
            candidates = np.arange(d)
        else:
            candidates = rng.choice(d, size=k, replace=False)
        split = _best_split(X[idx], ysub, candidates, params.min_samples_leaf)
        if split is None:
            return node
        f, thr, _ = split
        go_left = X[idx, f] <= thr
        feature[node] = f
        threshold[node] = thr
        left[node] = grow(idx[go_left], depth + 1)
        right[node] = grow(idx[~go_left], depth + 1)
        return node

    grow(np.arange(X.shape[0]), 0)
    return DecisionTree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        class_counts=np.array(counts, dtype=np.float64),
        n_features=d,
        params=params,
    )


@dataclass(eq=False)
class RandomForest:
    trees: list[DecisionTree]
    n_features: int
    params: ForestParams

    def predict_scores(self, X: np.ndarray) -> np.ndarray:
        """Fraction of trees voting malware, per sample."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected (n, {self.n_features}) input, got {X.shape}")
        votes = np.zeros(X.shape[0])
        for tree in self.trees:
            votes += tree.predict_scores(X) >= 0.5
        return votes / len(self.trees)


def train_random_forest(
    samples: np.ndarray, labels: np.ndarray, params: ForestParams | None = None
) -> RandomForest:
    params = params or ForestParams()
    X = np.asarray(samples, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[0] == 0:
        raise ValueError("samples must be a non-empty 2-D matrix matching labels")
    d = X.shape[1]
    k = params.feature_subsample
    if k is None:
        k = max(1, math.ceil(math.sqrt(d)))
    trees = []
    for t in range(params.n_trees):
        # independent, reproducible stream per tree
        tree_seed_seq = np.random.SeedSequence([params.seed, t])
        tree_rng = np.random.default_rng(tree_seed_seq)
        if params.bootstrap:
            idx = tree_rng.integers(0, X.shape[0], size=X.shape[0])
            Xb, yb = X[idx], y[idx]
        else:
            Xb, yb = X, y
        tree_params = TreeParams(
            max_depth=params.max_depth,
            min_samples_leaf=params.min_samples_leaf,
            feature_subsample=min(k, d),
            seed=int(tree_rng.integers(0, 2**31 - 1)),
        )
        trees.append(train_decision_tree(Xb, yb, tree_params))
    return RandomForest(trees=trees, n_features=d, params=params)


@dataclass(eq=False)
class LinearModel:
    weights: np.ndarray
    bias: float
    params: LinearParams

    @property
    def n_features(self) -> int:
        return self.weights.shape[0]

    def predict_scores(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected (n, {self.n_features}) input, got {X.shape}")
        return _sigmoid(X @ self.weights + self.bias)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logistic_loss_and_grad(
    weights: np.ndarray,
    bias: float,
    X: np.ndarray,
    y: np.ndarray,
    l2: float,
) -> tuple[float, np.ndarray, float]:
    """Mean logistic loss with L2 penalty on the weights, plus gradients."""
    n = X.shape[0]
    z = X @ weights + bias
    # log(1 + exp(z)) - y*z, computed stably
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z)) + l2 * float(weights @ weights)
    p = _sigmoid(z)
    residual = p - y
    grad_w = X.T @ residual / n + 2.0 * l2 * weights
    grad_b = float(residual.mean())
    return loss, grad_w, grad_b


def train_linear(
    samples: np.ndarray, labels: np.ndarray, params: LinearParams | None = None
) -> LinearModel:
    """Logistic regression by full-batch gradient descent."""
    params = params or LinearParams()
    X = np.asarray(samples, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[0] == 0:
        raise ValueError("samples must be a non-empty 2-D matrix matching labels")
    rng = np.random.default_rng(np.random.SeedSequence(params.seed))
    w = rng.normal(0.0, 0.01, size=X.shape[1])
    b = 0.0
    for _ in range(params.epochs):
        _, gw, gb = logistic_loss_and_grad(w, b, X, y, params.l2)
        w = w - params.learning_rate * gw
        b = b - params.learning_rate * gb
    if not (np.isfinite(w).all() and math.isfinite(b)):
        raise ValueError("linear training diverged; lower the learning rate")
    return LinearModel(weights=w, bias=b, params=params)


def predict(model, sample: np.ndarray) -> tuple[int, float]:
    """Shared single-sample prediction: (label_int, score), tie -> malware."""
    x = np.asarray(sample, dtype=np.float64)
    score = float(model.predict_scores(x.reshape(1, -1))[0])
    return (1 if score >= 0.5 else 0), score


def predict_labels(model, X: np.ndarray) -> np.ndarray:
    return (model.predict_scores(X) >= 0.5).astype(np.int64)


def tree_importance(tree: DecisionTree) -> np.ndarray:
    """Unnormalized per-feature impurity decrease, weighted by node fraction."""
    imp = np.zeros(tree.n_features)
    totals = tree.class_counts.sum(axis=1)
    root_total = totals[0]
    if root_total == 0:
        return imp
    node_gini = _gini_from_counts(tree.class_counts[:, 1], totals)
    for node in range(tree.n_nodes):
        f = tree.feature[node]
        if f == LEAF:
            continue
        l, r = int(tree.left[node]), int(tree.right[node])
        imp[f] += (
            totals[node] * node_gini[node]
            - totals[l] * node_gini[l]
            - totals[r] * node_gini[r]
        ) / root_total
    return imp


def gini_importance(model: RandomForest | DecisionTree) -> np.ndarray:
    """Mean impurity decrease per feature, normalized to sum to 1.

    A model with no internal node anywhere yields an all-zero vector
    (nothing to normalize).  Constant features are never split on and
    therefore always score zero.
    """
    trees = model.trees if isinstance(model, RandomForest) else [model]
    imp = np.zeros(trees[0].n_features)
    for tree in trees:
        imp += tree_importance(tree)
    imp /= len(trees)
    total = imp.sum()
    if total > 0:
        imp = imp / total
    return imp
