"""Honest posterior-estimating forests.

Each tree's axis-aligned split structure is learned on one half of a
bootstrap sample (greedy Gini) and its leaf class-posterior vectors are
estimated on the other half with add-one smoothing, so no point used to shape
the partition contributes to any probability estimate. Forest predictions
average the leaf posteriors over trees.

Trees are stored as flat arrays (feature index, threshold, child pointers,
posterior rows) rather than linked nodes; ``feature == -1`` marks a leaf.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import LabeledDataset, RngSeed

__all__ = [
    "Tree",
    "UncertaintyForest",
    "fit_forest",
    "refit_leaf_posteriors",
    "forest_to_dict",
    "forest_from_dict",
    "save_forest",
    "load_forest",
    "forests_identical",
]

FOREST_FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class Tree:
    """One honest tree in flat-array form."""

    feature: np.ndarray  # int32; -1 at leaves
    threshold: np.ndarray  # float64; NaN at leaves
    left: np.ndarray  # int32; -1 at leaves
    right: np.ndarray  # int32; -1 at leaves
    posterior: np.ndarray  # (n_nodes, k); rows meaningful at leaves only
    support: np.ndarray  # int64 estimation-point count; leaves only

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index for every row of X."""
        idx = np.zeros(X.shape[0], dtype=np.int32)
        while True:
            feat = self.feature[idx]
            rows = np.flatnonzero(feat >= 0)
            if rows.size == 0:
                return idx
            nodes = idx[rows]
            go_left = X[rows, feat[rows]] <= self.threshold[nodes]
            idx[rows] = np.where(go_left, self.left[nodes], self.right[nodes])


@dataclass(frozen=True, eq=False)
class UncertaintyForest:
    """Ensemble of honest trees estimating the class-posterior vector."""

    trees: tuple[Tree, ...]
    n_trees: int
    max_depth: int
    k: int
    feature_dim: int
    # populated only when fit_forest(record_splits=True); maps into the
    # canonically ordered copy of the training data
    split_records: tuple[tuple[np.ndarray, np.ndarray], ...] | None = None
    canonical_order: np.ndarray | None = None

    def _check_input(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.feature_dim:
            raise ValueError(f"expected points with {self.feature_dim} features")
        if not np.all(np.isfinite(X)):
            raise ValueError("points contain non-finite values")
        return X

    def predict_posterior_batch(self, X) -> np.ndarray:
        X = self._check_input(X)
        out = np.zeros((X.shape[0], self.k))
        for tree in self.trees:
            out += tree.posterior[tree.apply(X)]
        return out / self.n_trees

    def predict_posterior(self, x) -> np.ndarray:
        return self.predict_posterior_batch(np.asarray(x, dtype=np.float64)[None, :])[0]

    def predict_class_batch(self, X) -> np.ndarray:
        # argmax breaks ties toward the lowest label id
        return np.argmax(self.predict_posterior_batch(X), axis=1)

    def predict_class(self, x) -> int:
        return int(np.argmax(self.predict_posterior(x)))


def _grow_tree(X: np.ndarray, y: np.ndarray, k: int, max_depth: int) -> tuple[list, list, list, list, list]:
    """Greedy Gini tree on the structure half; returns flat node lists.

    Leaves keep the row indices routed to them so callers can attach
    estimation-half statistics afterwards.
    """
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    leaf_rows: list[np.ndarray | None] = []

    onehot = np.zeros((X.shape[0], k))
    onehot[np.arange(X.shape[0]), y] = 1.0

    def make_node(rows: np.ndarray, depth: int) -> int:
        node = len(feature)
        feature.append(-1)
        threshold.append(float("nan"))
        left.append(-1)
        right.append(-1)
        leaf_rows.append(None)

        m = rows.size
        labels = y[rows]
        if m < 2 or depth >= max_depth or np.all(labels == labels[0]):
            leaf_rows[node] = rows
            return node

        best_score = np.inf
        best_feat = -1
        best_thr = 0.0
        best_split = None
        for f in range(X.shape[1]):
            order = rows[np.argsort(X[rows, f], kind="stable")]
            xs = X[order, f]
            valid = xs[:-1] < xs[1:]
            if not valid.any():
                continue
            cum = np.cumsum(onehot[order], axis=0)
            total = cum[-1]
            n_left = np.arange(1, m, dtype=np.float64)
            n_right = m - n_left
            left_sq = (cum[:-1] ** 2).sum(axis=1)
            right_sq = ((total - cum[:-1]) ** 2).sum(axis=1)
            # n_l * gini_l + n_r * gini_r, dropping the constant factor 1/m
            score = (n_left - left_sq / n_left) + (n_right - right_sq / n_right)
            score[~valid] = np.inf
            pos = int(np.argmin(score))
            if score[pos] < best_score:
                best_score = float(score[pos])
                best_feat = f
                best_thr = float(0.5 * (xs[pos] + xs[pos + 1]))
                best_split = (order, pos + 1)
        if best_feat < 0:
            # every feature is constant on this node
            leaf_rows[node] = rows
            return node

        order, cut = best_split
        feature[node] = best_feat
        threshold[node] = best_thr
        left[node] = make_node(order[:cut], depth + 1)
        right[node] = make_node(order[cut:], depth + 1)
        return node

    make_node(np.arange(X.shape[0]), 0)
    return feature, threshold, left, right, leaf_rows


def _leaf_posteriors(tree: Tree, X_est: np.ndarray, y_est: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Add-one smoothed class frequencies of estimation points per leaf.

    An empty leaf receives (0 + 1) / (0 + k), i.e. the uniform posterior.
    """
    counts = np.zeros((tree.n_nodes, k))
    if X_est.shape[0]:
        leaves = tree.apply(X_est)
        np.add.at(counts, (leaves, y_est), 1.0)
    support = counts.sum(axis=1)
    posterior = np.zeros_like(counts)
    is_leaf = tree.feature < 0
    posterior[is_leaf] = (counts[is_leaf] + 1.0) / (support[is_leaf] + k)[:, None]
    return posterior, support.astype(np.int64)


def fit_forest(
    ds: LabeledDataset,
    n_trees: int,
    max_depth: int,
    seed: RngSeed,
    record_splits: bool = False,
) -> UncertaintyForest:
    """Fit an honest forest on a labeled dataset.

    Rows are put into a canonical order (lexicographic by features, then
    label) before any sampling, so the fitted forest is identical for any
    permutation of the input rows under the same seed. Each tree bootstraps
    n rows on its own substream and splits the draw into a structure half
    and an estimation half.
    """
    if n_trees < 1 or max_depth < 1:
        raise ValueError("need n_trees >= 1 and max_depth >= 1")
    n = ds.n
    if n < 4:
        raise ValueError("need at least 4 training rows")

    keys = tuple([ds.labels] + [ds.features[:, f] for f in range(ds.d - 1, -1, -1)])
    order = np.lexsort(keys)
    X = ds.features[order]
    y = ds.labels[order]

    trees = []
    records = []
    half = n // 2
    for t in range(n_trees):
        rng = seed.child("tree", t).generator()
        boot = rng.integers(0, n, size=n)
        structure = boot[:half]
        estimation = boot[half:]
        feat, thr, lft, rgt, _ = _grow_tree(X[structure], y[structure], ds.k, max_depth)
        tree = Tree(
            feature=np.asarray(feat, dtype=np.int32),
            threshold=np.asarray(thr, dtype=np.float64),
            left=np.asarray(lft, dtype=np.int32),
            right=np.asarray(rgt, dtype=np.int32),
            posterior=np.zeros((len(feat), ds.k)),
            support=np.zeros(len(feat), dtype=np.int64),
        )
        posterior, support = _leaf_posteriors(tree, X[estimation], y[estimation], ds.k)
        trees.append(
            Tree(
                feature=tree.feature,
                threshold=tree.threshold,
                left=tree.left,
                right=tree.right,
                posterior=posterior,
                support=support,
            )
        )
        if record_splits:
            records.append((structure.copy(), estimation.copy()))

    return UncertaintyForest(
        trees=tuple(trees),
        n_trees=n_trees,
        max_depth=max_depth,
        k=ds.k,
        feature_dim=ds.d,
        split_records=tuple(records) if record_splits else None,
        canonical_order=order if record_splits else None,
    )


def refit_leaf_posteriors(forest: UncertaintyForest, features, labels) -> UncertaintyForest:
    """Re-estimate every leaf posterior from new data, keeping the partitions.

    The split structure is untouched; leaf votes become add-one smoothed
    class frequencies of the provided points (empty leaves become uniform).
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if X.ndim != 2 or X.shape[1] != forest.feature_dim or X.shape[0] != y.shape[0]:
        raise ValueError("features/labels do not match the forest")
    if y.size and (y.min() < 0 or y.max() >= forest.k):
        raise ValueError(f"labels must lie in [0, {forest.k})")
    new_trees = []
    for tree in forest.trees:
        posterior, support = _leaf_posteriors(tree, X, y, forest.k)
        new_trees.append(
            Tree(
                feature=tree.feature,
                threshold=tree.threshold,
                left=tree.left,
                right=tree.right,
                posterior=posterior,
                support=support,
            )
        )
    return UncertaintyForest(
        trees=tuple(new_trees),
        n_trees=forest.n_trees,
        max_depth=forest.max_depth,
        k=forest.k,
        feature_dim=forest.feature_dim,
    )


def forest_to_dict(forest: UncertaintyForest) -> dict:
    """JSON-ready dump; float values survive bit-exactly via repr round-trip."""
    return {
        "format": "uncertainty-forest",
        "version": FOREST_FORMAT_VERSION,
        "n_trees": forest.n_trees,
        "max_depth": forest.max_depth,
        "k": forest.k,
        "feature_dim": forest.feature_dim,
        "trees": [
            {
                "feature": tree.feature.tolist(),
                "threshold": tree.threshold.tolist(),
                "left": tree.left.tolist(),
                "right": tree.right.tolist(),
                "posterior": tree.posterior.tolist(),
                "support": tree.support.tolist(),
            }
            for tree in forest.trees
        ],
    }


def forest_from_dict(payload: dict) -> UncertaintyForest:
    if payload.get("format") != "uncertainty-forest":
        raise ValueError("not an uncertainty-forest dump")
    if payload.get("version") != FOREST_FORMAT_VERSION:
        raise ValueError(f"unsupported forest format version {payload.get('version')!r}")
    trees = tuple(
        Tree(
            feature=np.asarray(t["feature"], dtype=np.int32),
            threshold=np.asarray(t["threshold"], dtype=np.float64),
            left=np.asarray(t["left"], dtype=np.int32),
            right=np.asarray(t["right"], dtype=np.int32),
            posterior=np.asarray(t["posterior"], dtype=np.float64),
            support=np.asarray(t["support"], dtype=np.int64),
        )
        for t in payload["trees"]
    )
    return UncertaintyForest(
        trees=trees,
        n_trees=payload["n_trees"],
        max_depth=payload["max_depth"],
        k=payload["k"],
        feature_dim=payload["feature_dim"],
    )


def save_forest(forest: UncertaintyForest, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(forest_to_dict(forest), fh)


def load_forest(path) -> UncertaintyForest:
    with open(path, encoding="utf-8") as fh:
        return forest_from_dict(json.load(fh))


def forests_identical(a: UncertaintyForest, b: UncertaintyForest) -> bool:
    """Exact structural and numerical equality (used by round-trip checks)."""
    if (a.n_trees, a.max_depth, a.k, a.feature_dim) != (b.n_trees, b.max_depth, b.k, b.feature_dim):
        return False
    if len(a.trees) != len(b.trees):
        return False
    for ta, tb in zip(a.trees, b.trees):
        same = (
            np.array_equal(ta.feature, tb.feature)
            and np.array_equal(ta.threshold, tb.threshold, equal_nan=True)
            and np.array_equal(ta.left, tb.left)
            and np.array_equal(ta.right, tb.right)
            and np.array_equal(ta.posterior, tb.posterior)
            and np.array_equal(ta.support, tb.support)
        )
        if not same:
            return False
    return True
