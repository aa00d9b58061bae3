"""Hierarchy induction pipelines and the chain-rule hierarchical classifier.

Two pipelines induce a two-level hierarchy from data: clustering the
class-conditional means (after an optional PCA of the pattern matrix) and
clustering a spectral embedding of the pairwise task-similarity matrix. Both
feed a Gaussian mixture whose component count is either fixed or selected by
BIC. A random size-matched permutation of any hierarchy serves as a control.

The hierarchical classifier multiplies a coarse-level posterior by the
within-coarse fine posterior, one honest forest per node of the two-level
tree; the leaf vector is a product of two simplex vectors over a partition
and therefore sums to one.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .core import Hierarchy, LabeledDataset, RngSeed
from .forest import (
    Tree,
    UncertaintyForest,
    fit_forest,
    forest_from_dict,
    forest_to_dict,
    forests_identical,
)
from .numcluster import gmm_fit, gmm_select_c, pca_fit, pca_transform, spectral_embed
from .tasksim import SimilarityMatrix, pairwise_similarity_matrix

__all__ = [
    "InductionConfig",
    "induce_cond_mean",
    "induce_task_sim",
    "hierarchy_from_similarity",
    "random_matched",
    "HierarchicalClassifier",
    "fit_hierarchical",
    "fit_flat",
    "save_model",
    "load_model",
    "models_identical",
]

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1

INDUCTION_METHODS = ("cond_mean", "task_sim", "random_matched", "truth")


@dataclass(frozen=True)
class InductionConfig:
    """Knobs of the induction pipelines.

    ``coarse_k`` is either a fixed coarse-label count or the string "bic",
    which selects the count minimizing BIC over ``bic_range`` (default
    2 .. min(k - 1, 20)).
    """

    method: str = "cond_mean"
    pca_dim: int = 128
    embed_dim: int = 16
    coarse_k: int | str = "bic"
    n_refs: int = 10
    covariance_mode: str = "tied"
    restarts: int = 10
    bic_range: tuple[int, int] | None = None
    seed: RngSeed = field(default_factory=lambda: RngSeed(0))

    def __post_init__(self):
        if self.method not in INDUCTION_METHODS:
            raise ValueError(f"unknown induction method {self.method!r}")
        if self.pca_dim < 1 or self.embed_dim < 1:
            raise ValueError("projection dimensions must be positive")
        if self.n_refs < 1:
            raise ValueError("n_refs must be >= 1")
        if isinstance(self.coarse_k, str) and self.coarse_k != "bic":
            raise ValueError("coarse_k must be an integer or 'bic'")


def _default_bic_range(k: int) -> tuple[int, int]:
    if k == 1:
        return (1, 1)
    return (2, max(2, min(k - 1, 20)))


def _cluster_points(
    points: np.ndarray, cfg: InductionConfig, seed: RngSeed, diagnostics: dict | None = None
) -> Hierarchy:
    k = points.shape[0]
    if cfg.coarse_k == "bic":
        lo, hi = cfg.bic_range if cfg.bic_range is not None else _default_bic_range(k)
        hi = min(hi, k)
        lo = min(lo, hi)
        selection = gmm_select_c(
            points, (lo, hi), mode=cfg.covariance_mode, restarts=cfg.restarts, seed=seed
        )
        if diagnostics is not None:
            diagnostics["bic_table"] = selection.bic_table
            diagnostics["selected_c"] = selection.c
        return Hierarchy.from_assignments(selection.labels)
    c = int(cfg.coarse_k)
    if not 1 <= c <= k:
        raise ValueError(f"coarse_k={c} must lie in [1, {k}]")
    if c == k:
        # one leaf per coarse label; nothing to estimate
        return Hierarchy(parent_of=np.arange(k), c=k)
    _, labels = gmm_fit(points, c, mode=cfg.covariance_mode, restarts=cfg.restarts, seed=seed)
    return Hierarchy.from_assignments(labels)


def induce_cond_mean(ds: LabeledDataset, cfg: InductionConfig, diagnostics: dict | None = None) -> Hierarchy:
    """Cluster the class-conditional means of the (optionally PCA-projected) patterns.

    The projection is fit on the full pattern matrix and skipped when the
    data already has at most ``pca_dim`` dimensions; class means are computed
    in the projected space and clustered by a Gaussian mixture.
    """
    ds.require_full()
    X = ds.features
    if ds.d > cfg.pca_dim:
        r = min(cfg.pca_dim, ds.n - 1, ds.d)
        model = pca_fit(X, r)
        X = pca_transform(model, X)
    means = np.stack([X[ds.labels == i].mean(axis=0) for i in range(ds.k)])
    return _cluster_points(means, cfg, cfg.seed.child("gmm"), diagnostics)


def induce_task_sim(ds: LabeledDataset, cfg: InductionConfig, diagnostics: dict | None = None) -> Hierarchy:
    """Embed the processed pairwise task-similarity matrix and cluster it."""
    ds.require_full()
    sim = pairwise_similarity_matrix(ds, cfg.n_refs, cfg.seed.child("tasksim"))
    return hierarchy_from_similarity(sim, cfg, diagnostics)


def hierarchy_from_similarity(
    sim: SimilarityMatrix, cfg: InductionConfig, diagnostics: dict | None = None
) -> Hierarchy:
    """Spectral-embed a processed similarity matrix and cluster the embedding."""
    k = sim.k
    r = cfg.embed_dim
    if r > k:
        logger.warning("embedding dimension %d exceeds class count; capped to %d", r, k)
        r = k
    embedding = spectral_embed(sim.values, r)
    if diagnostics is not None:
        diagnostics["eigenvalues"] = embedding.eigenvalues
    return _cluster_points(embedding.coords, cfg, cfg.seed.child("gmm"), diagnostics)


def random_matched(h: Hierarchy, seed: RngSeed) -> Hierarchy:
    """Uniformly random leaf permutation of a hierarchy; cluster sizes unchanged."""
    perm = seed.generator().permutation(h.k)
    return Hierarchy(parent_of=h.parent_of[perm], c=h.c)


# ---------------------------------------------------------------------------
# Chain-rule classifier


@dataclass(frozen=True, eq=False)
class HierarchicalClassifier:
    """Coarse forest plus one fine forest per coarse label.

    ``children[j]`` lists the global leaf ids under coarse label j in
    ascending order; position within that list is the fine forest's local
    class id.
    """

    hierarchy: Hierarchy
    coarse_forest: UncertaintyForest
    fine_forests: tuple[UncertaintyForest, ...]
    children: tuple[np.ndarray, ...]
    label_names: tuple[str, ...] | None = None

    @property
    def k(self) -> int:
        return self.hierarchy.k

    @property
    def feature_dim(self) -> int:
        return self.coarse_forest.feature_dim

    def tree_counts(self) -> dict[str, int]:
        fine_total = sum(f.n_trees for f in self.fine_forests)
        return {
            "coarse_trees": self.coarse_forest.n_trees,
            "fine_trees_total": fine_total,
            "total_trees": self.coarse_forest.n_trees + fine_total,
        }

    def predict_leaf_posterior_batch(self, X) -> np.ndarray:
        """Per-leaf probability: coarse posterior times within-coarse fine posterior."""
        coarse = self.coarse_forest.predict_posterior_batch(X)
        out = np.empty((coarse.shape[0], self.k))
        for j, kids in enumerate(self.children):
            fine = self.fine_forests[j].predict_posterior_batch(X)
            out[:, kids] = coarse[:, j : j + 1] * fine
        return out

    def predict_leaf_posterior(self, x) -> np.ndarray:
        return self.predict_leaf_posterior_batch(np.asarray(x, dtype=np.float64)[None, :])[0]

    def predict_class_batch(self, X) -> np.ndarray:
        return np.argmax(self.predict_leaf_posterior_batch(X), axis=1)

    def predict_class(self, x) -> int:
        return int(np.argmax(self.predict_leaf_posterior(x)))


def _trivial_forest(n_trees: int, max_depth: int, feature_dim: int) -> UncertaintyForest:
    """Forest over a single class: every tree is one leaf with posterior [1]."""
    leaf = Tree(
        feature=np.array([-1], dtype=np.int32),
        threshold=np.array([np.nan]),
        left=np.array([-1], dtype=np.int32),
        right=np.array([-1], dtype=np.int32),
        posterior=np.ones((1, 1)),
        support=np.zeros(1, dtype=np.int64),
    )
    return UncertaintyForest(
        trees=(leaf,) * n_trees,
        n_trees=n_trees,
        max_depth=max_depth,
        k=1,
        feature_dim=feature_dim,
    )


def fit_hierarchical(
    ds: LabeledDataset,
    h: Hierarchy,
    coarse_trees: int,
    fine_trees: int,
    max_depth: int,
    seed: RngSeed,
) -> HierarchicalClassifier:
    """Train the coarse forest and one local fine forest per coarse label.

    Fine forests see only their own coarse label's rows, with leaf labels
    re-encoded to local ids. A coarse label with a single leaf gets a trivial
    fine forest whose posterior is exactly [1]. Substreams are
    ``seed.child("coarse")`` and ``seed.child("fine", j)``, so degenerate
    hierarchies reproduce flat fits made from the matching child seed.
    """
    if h.k != ds.k:
        raise ValueError("hierarchy and dataset disagree on the number of leaf labels")
    coarse_labels = h.parent_of[ds.labels]
    counts = np.bincount(coarse_labels, minlength=h.c)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise ValueError(f"empty coarse class: no training rows under coarse label {int(empty[0])}")

    coarse_ds = LabeledDataset(features=ds.features, labels=coarse_labels, k=h.c)
    coarse_forest = fit_forest(coarse_ds, coarse_trees, max_depth, seed.child("coarse"))

    children = tuple(h.children(j) for j in range(h.c))
    fine_forests = []
    for j, kids in enumerate(children):
        if kids.size == 1:
            fine_forests.append(_trivial_forest(fine_trees, max_depth, ds.d))
            continue
        local = np.full(ds.k, -1, dtype=np.int64)
        local[kids] = np.arange(kids.size)
        rows = coarse_labels == j
        fine_ds = LabeledDataset(features=ds.features[rows], labels=local[ds.labels[rows]], k=kids.size)
        fine_forests.append(fit_forest(fine_ds, fine_trees, max_depth, seed.child("fine", j)))

    return HierarchicalClassifier(
        hierarchy=h,
        coarse_forest=coarse_forest,
        fine_forests=tuple(fine_forests),
        children=children,
        label_names=ds.label_names,
    )


def fit_flat(ds: LabeledDataset, n_trees: int, max_depth: int, seed: RngSeed) -> UncertaintyForest:
    """Flat baseline: one honest forest over all leaf labels."""
    return fit_forest(ds, n_trees, max_depth, seed)


# ---------------------------------------------------------------------------
# Model persistence


def save_model(model, path, label_names: tuple[str, ...] | None = None) -> None:
    """Serialize a flat forest or hierarchical classifier to JSON (bit-exact)."""
    if isinstance(model, UncertaintyForest):
        payload = {
            "format": "hierlearn-model",
            "version": MODEL_FORMAT_VERSION,
            "kind": "flat",
            "label_names": list(label_names) if label_names else None,
            "forest": forest_to_dict(model),
        }
    elif isinstance(model, HierarchicalClassifier):
        payload = {
            "format": "hierlearn-model",
            "version": MODEL_FORMAT_VERSION,
            "kind": "hierarchical",
            "label_names": list(label_names or model.label_names or []) or None,
            "hierarchy": {"parent_of": model.hierarchy.parent_of.tolist(), "c": model.hierarchy.c},
            "coarse_forest": forest_to_dict(model.coarse_forest),
            "fine_forests": [forest_to_dict(f) for f in model.fine_forests],
        }
    else:
        raise TypeError(f"cannot serialize model of type {type(model)!r}")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_model(path):
    """Load a model written by :func:`save_model`.

    Returns (model, label_names); the model is an UncertaintyForest or a
    HierarchicalClassifier depending on the stored kind.
    """
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != "hierlearn-model":
        raise ValueError("not a hierlearn model file")
    if payload.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {payload.get('version')!r}")
    names = tuple(payload["label_names"]) if payload.get("label_names") else None
    if payload["kind"] == "flat":
        return forest_from_dict(payload["forest"]), names
    if payload["kind"] == "hierarchical":
        hierarchy = Hierarchy(parent_of=np.asarray(payload["hierarchy"]["parent_of"]), c=payload["hierarchy"]["c"])
        model = HierarchicalClassifier(
            hierarchy=hierarchy,
            coarse_forest=forest_from_dict(payload["coarse_forest"]),
            fine_forests=tuple(forest_from_dict(f) for f in payload["fine_forests"]),
            children=tuple(hierarchy.children(j) for j in range(hierarchy.c)),
            label_names=names,
        )
        return model, names
    raise ValueError(f"unknown model kind {payload['kind']!r}")


def models_identical(a, b) -> bool:
    """Exact equality check across both model kinds."""
    if isinstance(a, UncertaintyForest) and isinstance(b, UncertaintyForest):
        return forests_identical(a, b)
    if isinstance(a, HierarchicalClassifier) and isinstance(b, HierarchicalClassifier):
        if a.hierarchy.c != b.hierarchy.c or not np.array_equal(a.hierarchy.parent_of, b.hierarchy.parent_of):
            return False
        if not forests_identical(a.coarse_forest, b.coarse_forest):
            return False
        if len(a.fine_forests) != len(b.fine_forests):
            return False
        return all(forests_identical(fa, fb) for fa, fb in zip(a.fine_forests, b.fine_forests))
    return False
