"""Pairwise similarity between class-conditional sample sets via transfer accuracy.

The similarity between two classes is measured against a third reference
class: both are turned into balanced binary tasks (class vs reference), a
partition is learned on one task, its leaf votes are re-estimated on the
other, and the transferred rule's held-out accuracy on the second task is the
directed similarity. Symmetrizing over the two directions and averaging over
several sampled references gives the matrix entry.

Data is never shared across roles: the source class contributes only
partition-learning points, the target class is split into vote and
evaluation halves, and the reference class is split three ways so each task
sees its own reference points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import LabeledDataset, RngSeed, class_conditional_split
from .forest import fit_forest, refit_leaf_posteriors

__all__ = [
    "SimilarityMatrix",
    "task_similarity_directed",
    "symmetrized_similarity",
    "pairwise_similarity_matrix",
    "process_matrix",
]

DEFAULT_TREES = 10
DEFAULT_DEPTH = 10


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    """Processed k x k symmetric matrix of pairwise similarities in [0, 1]."""

    values: np.ndarray
    n_refs: int

    def __post_init__(self):
        S = np.asarray(self.values, dtype=np.float64)
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise ValueError("similarity matrix must be square")
        if np.abs(S - S.T).max(initial=0.0) > 1e-12:
            raise ValueError("similarity matrix must be symmetric")
        if S.min() < 0.0 or S.max() > 1.0:
            raise ValueError("similarity entries must lie in [0, 1]")
        if not np.allclose(np.diag(S), 1.0, atol=1e-12):
            raise ValueError("similarity diagonal must be 1")
        object.__setattr__(self, "values", S)

    @property
    def k(self) -> int:
        return self.values.shape[0]


def _shuffled_parts(samples: np.ndarray, n_parts: int, rng: np.random.Generator) -> list[np.ndarray]:
    idx = rng.permutation(samples.shape[0])
    return [samples[part] for part in np.array_split(idx, n_parts)]


def _balanced_task(side0: np.ndarray, side1: np.ndarray, rng: np.random.Generator) -> LabeledDataset:
    """Binary task with 0.5 mixing: the larger side is subsampled to the smaller."""
    size = min(side0.shape[0], side1.shape[0])
    if size < 1:
        raise ValueError("sample set too small to split three ways")

    def pick(side: np.ndarray) -> np.ndarray:
        if side.shape[0] > size:
            return side[rng.permutation(side.shape[0])[:size]]
        return side

    a, b = pick(side0), pick(side1)
    features = np.concatenate([a, b], axis=0)
    labels = np.concatenate([np.zeros(size, dtype=np.int64), np.ones(size, dtype=np.int64)])
    return LabeledDataset(features=features, labels=labels, k=2)


def task_similarity_directed(
    source: np.ndarray,
    target: np.ndarray,
    reference: np.ndarray,
    seed: RngSeed,
    n_trees: int = DEFAULT_TREES,
    max_depth: int = DEFAULT_DEPTH,
) -> float:
    """Transfer accuracy from the source-vs-reference task to the target-vs-reference task.

    A forest partition is learned on a balanced task built from half of the
    source class, its leaf votes are re-estimated on the target's vote half,
    and the returned value is the rule's accuracy on the target's held-out
    half. Chance level is 0.5; the output lies in [0, 1].
    """
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)

    src_structure = _shuffled_parts(source, 2, seed.child("split-src").generator())[0]
    tgt_votes, tgt_eval = _shuffled_parts(target, 2, seed.child("split-tgt").generator())
    ref_structure, ref_votes, ref_eval = _shuffled_parts(reference, 3, seed.child("split-ref").generator())

    try:
        structure_task = _balanced_task(src_structure, ref_structure, seed.child("bal-structure").generator())
        if structure_task.n < 4:
            raise ValueError("sample set too small to split three ways")
        vote_task = _balanced_task(tgt_votes, ref_votes, seed.child("bal-votes").generator())
        eval_task = _balanced_task(tgt_eval, ref_eval, seed.child("bal-eval").generator())
    except ValueError as exc:
        raise ValueError(f"sample set too small to split three ways: {exc}") from None

    partition = fit_forest(structure_task, n_trees, max_depth, seed.child("forest"))
    transferred = refit_leaf_posteriors(partition, vote_task.features, vote_task.labels)
    predictions = transferred.predict_class_batch(eval_task.features)
    return float(np.mean(predictions == eval_task.labels))


def symmetrized_similarity(
    a: np.ndarray,
    b: np.ndarray,
    refs: Sequence[np.ndarray],
    seed: RngSeed,
    n_trees: int = DEFAULT_TREES,
    max_depth: int = DEFAULT_DEPTH,
) -> float:
    """Mean over references of the two-direction average transfer accuracy.

    Both directions of a reference reuse the same substream, so the value is
    invariant under swapping the two classes and duplicate references
    contribute identical terms.
    """
    if not len(refs):
        raise ValueError("need at least one reference sample set")
    values = []
    for ref in refs:
        forward = task_similarity_directed(a, b, ref, seed, n_trees, max_depth)
        backward = task_similarity_directed(b, a, ref, seed, n_trees, max_depth)
        values.append(0.5 * (forward + backward))
    return float(np.mean(values))


def pairwise_similarity_matrix(
    ds: LabeledDataset,
    n_refs: int,
    seed: RngSeed,
    n_trees: int = DEFAULT_TREES,
    max_depth: int = DEFAULT_DEPTH,
) -> SimilarityMatrix:
    """Similarity matrix over all class pairs, processed to [0, 1].

    For each unordered pair, reference classes are drawn uniformly from the
    remaining classes (without replacement when possible) on a substream
    keyed by the pair, so the matrix does not depend on computation order.
    """
    if ds.k < 3:
        raise ValueError("need at least 3 classes (one must serve as reference)")
    if n_refs < 1:
        raise ValueError("need at least one reference draw")
    groups = class_conditional_split(ds)
    k = ds.k
    raw = np.ones((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            pair_seed = seed.child("pair", i, j)
            rng = pair_seed.generator()
            pool = np.array([c for c in range(k) if c != i and c != j])
            replace = pool.size < n_refs
            picks = rng.choice(pool.size, size=n_refs, replace=replace)
            refs = [groups[int(pool[p])] for p in picks]
            value = symmetrized_similarity(groups[i], groups[j], refs, pair_seed.child("sim"), n_trees, max_depth)
            raw[i, j] = raw[j, i] = value
    return process_matrix(raw, n_refs=n_refs)


def process_matrix(raw, n_refs: int = 0) -> SimilarityMatrix:
    """Affine min-max rescale of the off-diagonal to [0, 1]; diagonal fixed to 1.

    A constant off-diagonal (no spread to rescale) maps to 0.5 everywhere.
    """
    S = np.asarray(raw, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError("similarity matrix must be square")
    if not np.all(np.isfinite(S)):
        raise ValueError("similarity matrix contains non-finite values")
    if np.abs(S - S.T).max(initial=0.0) > 1e-8:
        raise ValueError("similarity matrix must be symmetric")
    k = S.shape[0]
    off_mask = ~np.eye(k, dtype=bool)
    values = np.ones((k, k))
    if k > 1:
        off = S[off_mask]
        lo, hi = off.min(), off.max()
        if hi > lo:
            values[off_mask] = (S[off_mask] - lo) / (hi - lo)
        else:
            values[off_mask] = 0.5
    return SimilarityMatrix(values=values, n_refs=n_refs)
